#include "uood/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>

#include <json.hpp>

#include "uood/error.hpp"

namespace uood {

namespace {

void require_nonempty(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw ValidationError("metric needs non-empty ID and OOD score lists");
}

void require_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) throw ValidationError("non-finite score");
}

struct Tagged {
  double score;
  bool is_id;
};

std::vector<Tagged> merged_descending(std::span<const double> id, std::span<const double> ood) {
  std::vector<Tagged> all;
  all.reserve(id.size() + ood.size());
  for (double s : id) all.push_back({s, true});
  for (double s : ood) all.push_back({s, false});
  std::sort(all.begin(), all.end(), [](const Tagged& a, const Tagged& b) { return a.score > b.score; });
  return all;
}

}  // namespace

double auroc(std::span<const double> id, std::span<const double> ood) {
  require_nonempty(id, ood);
  require_finite(id);
  require_finite(ood);
  auto all = merged_descending(id, ood);
  std::reverse(all.begin(), all.end());  // ascending
  // Midranks (1-based) summed over the ID class; all quantities are exact half-integers.
  double rank_sum = 0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    std::size_t n_id_in_group = 0;
    while (j < all.size() && all[j].score == all[i].score) n_id_in_group += all[j++].is_id;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    rank_sum += midrank * static_cast<double>(n_id_in_group);
    i = j;
  }
  const double n1 = static_cast<double>(id.size());
  const double n0 = static_cast<double>(ood.size());
  const double u = rank_sum - n1 * (n1 + 1) / 2;
  return u / (n1 * n0);
}

double auprc(std::span<const double> id, std::span<const double> ood) {
  require_nonempty(id, ood);
  require_finite(id);
  require_finite(ood);
  const auto all = merged_descending(id, ood);
  const double n_pos = static_cast<double>(id.size());
  double tp = 0, fp = 0, prev_recall = 0, area = 0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) {
      (all[j].is_id ? tp : fp) += 1;
      ++j;
    }
    const double recall = tp / n_pos;
    const double precision = tp / (tp + fp);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return area;
}

double threshold_at_tpr(std::span<const double> id, double target_tpr) {
  if (id.empty()) throw ValidationError("threshold_at_tpr needs non-empty ID scores");
  if (!(target_tpr > 0 && target_tpr <= 1)) throw ValidationError("target_tpr must lie in (0, 1]");
  require_finite(id);
  std::vector<double> sorted(id.begin(), id.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const double n = static_cast<double>(sorted.size());
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    if (static_cast<double>(j) / n >= target_tpr) return sorted[i];
    i = j;
  }
  return sorted.back();
}

double fpr_at_tpr(std::span<const double> id, std::span<const double> ood, double target_tpr) {
  require_nonempty(id, ood);
  require_finite(ood);
  const double tau = threshold_at_tpr(id, target_tpr);
  const auto accepted = std::count_if(ood.begin(), ood.end(), [tau](double s) { return s >= tau; });
  return static_cast<double>(accepted) / static_cast<double>(ood.size());
}

double gap(std::span<const double> id, std::span<const double> ood) {
  require_nonempty(id, ood);
  const auto mean = [](std::span<const double> v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  return mean(id) - mean(ood);
}

std::vector<double> gather(const ScoreColumn& col, std::span<const std::string> ids) {
  std::vector<double> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = col.values.find(id);
    if (it == col.values.end()) throw ValidationError("column '" + col.name + "' has no score for '" + id + "'");
    out.push_back(it->second);
  }
  return out;
}

double advantage(const ScoreColumn& score, const ScoreColumn& likelihood, std::span<const std::string> id_ids,
                 std::span<const std::string> ood_ids) {
  if (&score == &likelihood) return 0.0;
  const double g_s = gap(gather(score, id_ids), gather(score, ood_ids));
  const double g_l = gap(gather(likelihood, id_ids), gather(likelihood, ood_ids));
  return g_s - g_l;
}

double advantage(const ScoreColumn& score, const ScoreColumn& likelihood, const Dataset& ds,
                 const std::string& ood_name) {
  std::vector<std::string> id_ids, ood_ids;
  for (const auto* r : ds.select(Split::id_test())) id_ids.push_back(r->sample_id);
  for (const auto* r : ds.select(Split::ood(ood_name))) ood_ids.push_back(r->sample_id);
  return advantage(score, likelihood, id_ids, ood_ids);
}

std::map<std::string, Label> classify(const ScoreColumn& scores, double lambda) {
  std::map<std::string, Label> out;
  for (const auto& [id, s] : scores.values) out.emplace(id, s > lambda ? Label::Id : Label::Ood);
  return out;
}

const MetricRow& EvalReport::row(const std::string& name) const {
  for (const auto& r : rows)
    if (r.score == name) return r;
  throw ValidationError("report has no row for score '" + name + "'");
}

EvalReport evaluate_columns(const std::vector<ScoreColumn>& columns, const ScoreColumn& baseline,
                            std::span<const std::string> id_ids, std::span<const std::string> ood_ids,
                            const std::string& ood_split) {
  EvalReport rep;
  rep.ood_split = ood_split;
  rep.baseline = baseline.name;
  rep.n_id = id_ids.size();
  rep.n_ood = ood_ids.size();
  const auto base_id = gather(baseline, id_ids);
  const auto base_ood = gather(baseline, ood_ids);
  const double base_gap = gap(base_id, base_ood);
  for (const auto& col : columns) {
    const auto s_id = gather(col, id_ids);
    const auto s_ood = gather(col, ood_ids);
    MetricRow row;
    row.score = col.name;
    row.auroc = auroc(s_id, s_ood);
    row.auprc = auprc(s_id, s_ood);
    row.fpr80 = fpr_at_tpr(s_id, s_ood, 0.8);
    row.gap = gap(s_id, s_ood);
    // The baseline's own advantage is exactly zero, not a rounding residue.
    row.advantage = col.name == baseline.name ? 0.0 : row.gap - base_gap;
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

void write_report(const EvalReport& rep, std::ostream& out) {
  using nlohmann::json;
  out << json{{"report", "eval"}, {"ood_split", rep.ood_split}, {"baseline", rep.baseline},
              {"n_id", rep.n_id}, {"n_ood", rep.n_ood}}
             .dump()
      << '\n';
  for (const auto& r : rep.rows)
    out << json{{"score", r.score}, {"auroc", r.auroc}, {"auprc", r.auprc}, {"fpr80", r.fpr80},
                {"gap", r.gap}, {"advantage", r.advantage}}
               .dump()
        << '\n';
}

std::vector<EvalReport> read_reports(std::istream& in) {
  using nlohmann::json;
  std::vector<EvalReport> reps;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      if (j.contains("report")) {
        EvalReport rep;
        rep.ood_split = j.at("ood_split").get<std::string>();
        rep.baseline = j.at("baseline").get<std::string>();
        rep.n_id = j.at("n_id").get<std::size_t>();
        rep.n_ood = j.at("n_ood").get<std::size_t>();
        reps.push_back(std::move(rep));
      } else {
        if (reps.empty()) throw ParseError("score row before report header", line_no);
        reps.back().rows.push_back({j.at("score").get<std::string>(), j.at("auroc").get<double>(),
                                    j.at("auprc").get<double>(), j.at("fpr80").get<double>(),
                                    j.at("gap").get<double>(), j.at("advantage").get<double>()});
      }
    } catch (const json::exception& e) {
      throw ParseError(std::string("bad report line: ") + e.what(), line_no);
    }
  }
  return reps;
}

void print_report_table(const EvalReport& rep, std::ostream& out) {
  const auto flags = out.flags();
  const auto prec = out.precision();
  out << "OOD split: " << rep.ood_split << "  (n_id=" << rep.n_id << ", n_ood=" << rep.n_ood
      << ", baseline=" << rep.baseline << ")\n";
  out << std::left << std::setw(14) << "score" << std::right << std::setw(11) << "AUROC" << std::setw(11)
      << "AUPRC" << std::setw(11) << "FPR80" << std::setw(13) << "gap" << std::setw(13) << "advantage" << '\n';
  out << std::setprecision(4);
  for (const auto& r : rep.rows)
    out << std::left << std::setw(14) << r.score << std::right << std::setw(11) << r.auroc << std::setw(11)
        << r.auprc << std::setw(11) << r.fpr80 << std::setw(13) << r.gap << std::setw(13) << r.advantage << '\n';
  out.flags(flags);
  out.precision(prec);
}

}  // namespace uood
