#include "uood/scores.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "uood/error.hpp"

namespace uood {

std::string ScoreSpec::name() const {
  switch (kind) {
    case ScoreKind::Likelihood: return "likelihood";
    case ScoreKind::Php: return "php";
    case ScoreKind::Dec: return "dec";
    case ScoreKind::Resultant: return "resultant";
    case ScoreKind::Ic: return "ic";
    case ScoreKind::Waic: return "waic";
    case ScoreKind::Llr: return "llr:" + std::to_string(layer);
    case ScoreKind::Lra: return "lra";
  }
  return {};
}

ScoreSpec ScoreSpec::parse(const std::string& s) {
  if (s == "likelihood") return {ScoreKind::Likelihood};
  if (s == "php") return {ScoreKind::Php};
  if (s == "dec") return {ScoreKind::Dec};
  if (s == "resultant") return {ScoreKind::Resultant};
  if (s == "ic") return {ScoreKind::Ic};
  if (s == "waic") return {ScoreKind::Waic};
  if (s == "lra") return {ScoreKind::Lra};
  if (s.starts_with("llr:")) {
    try {
      std::size_t used = 0;
      const int k = std::stoi(s.substr(4), &used);
      if (used == s.size() - 4) return {ScoreKind::Llr, k};
    } catch (const std::exception&) {
    }
  }
  throw ValidationError("unknown score '" + s + "'");
}

std::vector<ScoreSpec> ScoreSpec::parse_list(const std::string& s) {
  std::vector<ScoreSpec> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(parse(item));
  if (out.empty()) throw ValidationError("empty score list");
  return out;
}

std::set<Requirement> ScoreSpec::requirements() const {
  using K = Requirement::Kind;
  switch (kind) {
    case ScoreKind::Dec:
    case ScoreKind::Resultant: return {{K::Dec}};
    case ScoreKind::Ic: return {{K::Ic}};
    case ScoreKind::Waic: return {{K::Waic}};
    case ScoreKind::Llr: return {{K::Llr, layer}};
    case ScoreKind::Lra: return {{K::Lra}};
    default: return {};
  }
}

double likelihood_score(const SampleRecord& rec) { return rec.recon_loglik - rec.kl_prior; }

double resultant_score(const SampleRecord& rec, const DensityModel& model, double c, const DecScale& scale,
                       const PhpConfig& cfg) {
  return php_score(rec, model, cfg) + c * scale.scale;
}

double ic_score(const SampleRecord& rec) {
  if (!rec.bits) throw ValidationError("record " + rec.sample_id + " has no bits (needed by ic)");
  return likelihood_score(rec) + *rec.bits;
}

double waic_score(const SampleRecord& rec) {
  if (!rec.ens_logliks || rec.ens_logliks->size() < 2)
    throw ValidationError("record " + rec.sample_id + " needs >= 2 ens_logliks (needed by waic)");
  const auto& v = *rec.ens_logliks;
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double var = 0;
  for (double x : v) var += (x - mean) * (x - mean);
  return mean - var / n;
}

double llr_score(const SampleRecord& rec, int k) {
  if (rec.layer_terms)
    for (const auto& t : *rec.layer_terms)
      if (t.k == k) return likelihood_score(rec) - (t.recon_k - t.kl_gt_k);
  throw ValidationError("record " + rec.sample_id + " has no layer_terms entry for k=" + std::to_string(k));
}

double lra_score(const SampleRecord& rec) {
  if (!rec.bg_loglik) throw ValidationError("record " + rec.sample_id + " has no bg_loglik (needed by lra)");
  return likelihood_score(rec) - *rec.bg_loglik;
}

const ScoreColumn& ScoreTable::column(const std::string& name) const {
  for (const auto& c : columns)
    if (c.name == name) return c;
  throw ValidationError("score table has no column '" + name + "'");
}

std::vector<std::string> ScoreTable::ids_in(const Split& split) const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < sample_ids.size(); ++i)
    if (splits[i] == split) out.push_back(sample_ids[i]);
  return out;
}

std::vector<std::string> ScoreTable::ood_names() const {
  std::vector<std::string> names;
  for (const auto& s : splits)
    if (s.kind == SplitKind::Ood) names.push_back(s.ood_name);
  std::sort(names.begin(), names.end());
  names.erase(std::unique(names.begin(), names.end()), names.end());
  return names;
}

namespace {

bool uses_php(ScoreKind k) { return k == ScoreKind::Php || k == ScoreKind::Resultant; }
bool uses_dec(ScoreKind k) { return k == ScoreKind::Dec || k == ScoreKind::Resultant; }

std::vector<ScoreSpec> with_baseline(std::vector<ScoreSpec> specs) {
  if (std::find(specs.begin(), specs.end(), ScoreSpec{ScoreKind::Likelihood}) == specs.end())
    specs.insert(specs.begin(), ScoreSpec{ScoreKind::Likelihood});
  return specs;
}

std::vector<const SampleRecord*> scored_records(const Dataset& ds, bool include_train) {
  std::vector<const SampleRecord*> recs;
  for (const auto& r : ds.records)
    if (include_train || r.split.kind != SplitKind::IdTrain) recs.push_back(&r);
  std::sort(recs.begin(), recs.end(),
            [](const SampleRecord* a, const SampleRecord* b) { return a->sample_id < b->sample_id; });
  return recs;
}

std::vector<double> score_row(const Dataset& ds, const SampleRecord& rec, const std::vector<ScoreSpec>& specs,
                              const ScoreArtifacts& art, bool need_php, bool need_c) {
  // PHP and C are computed once so Resultant = PHP + C*scale holds bitwise.
  const double php = need_php ? php_score(rec, *art.density, art.php) : 0.0;
  const double c = need_c ? record_complexity(ds, rec, *art.dec, art.complexity) : 0.0;
  std::vector<double> row;
  row.reserve(specs.size());
  for (const auto& s : specs) {
    switch (s.kind) {
      case ScoreKind::Likelihood: row.push_back(likelihood_score(rec)); break;
      case ScoreKind::Php: row.push_back(php); break;
      case ScoreKind::Dec: row.push_back(dec_score(rec, c, art.dec->scale)); break;
      case ScoreKind::Resultant: row.push_back(php + c * art.dec->scale.scale); break;
      case ScoreKind::Ic: row.push_back(ic_score(rec)); break;
      case ScoreKind::Waic: row.push_back(waic_score(rec)); break;
      case ScoreKind::Llr: row.push_back(llr_score(rec, s.layer)); break;
      case ScoreKind::Lra: row.push_back(lra_score(rec)); break;
    }
  }
  return row;
}

template <class RowLoop>
ScoreTable compute_scores_impl(const Dataset& ds, const std::vector<ScoreSpec>& specs_in, const ScoreArtifacts& art,
                               bool include_train, RowLoop loop) {
  const auto specs = with_baseline(specs_in);
  check_dependencies(ds, specs, art, include_train);
  const auto recs = scored_records(ds, include_train);
  const bool need_php = std::any_of(specs.begin(), specs.end(), [](const ScoreSpec& s) { return uses_php(s.kind); });
  const bool need_c = std::any_of(specs.begin(), specs.end(), [](const ScoreSpec& s) { return uses_dec(s.kind); });

  std::vector<std::vector<double>> rows(recs.size());
  loop(recs.size(), [&](std::size_t i) { rows[i] = score_row(ds, *recs[i], specs, art, need_php, need_c); });

  ScoreTable t;
  for (const auto& s : specs) t.columns.push_back({s.name(), {}});
  for (std::size_t i = 0; i < recs.size(); ++i) {
    t.sample_ids.push_back(recs[i]->sample_id);
    t.splits.push_back(recs[i]->split);
    for (std::size_t c = 0; c < specs.size(); ++c) t.columns[c].values.emplace(recs[i]->sample_id, rows[i][c]);
  }
  return t;
}

}  // namespace

void check_dependencies(const Dataset& ds, const std::vector<ScoreSpec>& specs, const ScoreArtifacts& art,
                        bool include_train) {
  std::set<Requirement> needs;
  for (const auto& s : specs) {
    if (uses_php(s.kind) && !art.density)
      throw ValidationError("score '" + s.name() + "' needs a fitted density (--density)");
    if (uses_dec(s.kind) && !art.dec)
      throw ValidationError("score '" + s.name() + "' needs a DEC calibration (--profile)");
    const auto r = s.requirements();
    needs.insert(r.begin(), r.end());
  }
  Dataset scored;
  for (const auto* r : scored_records(ds, include_train)) scored.records.push_back(*r);
  if (art.dec) {
    // DEC's field need depends on the calibrated source, not just on presence of either field.
    for (const auto& r : scored.records) {
      const bool has = art.dec->source == ComplexitySource::Bits ? r.bits.has_value() : r.tensor_path.has_value();
      if (!has && std::any_of(specs.begin(), specs.end(), [](const ScoreSpec& s) { return uses_dec(s.kind); }))
        throw ValidationError("record " + r.sample_id + " lacks " +
                              (art.dec->source == ComplexitySource::Bits ? "bits" : "tensor_path") +
                              " needed by the DEC calibration");
    }
  }
  const auto rep = validate_dataset(scored, needs);
  if (!rep.ok()) {
    std::string msg = "missing fields:";
    for (const auto& [name, ids] : rep.missing) {
      msg += " " + name + " [";
      for (std::size_t i = 0; i < ids.size() && i < 5; ++i) msg += (i ? ", " : "") + ids[i];
      if (ids.size() > 5) msg += ", ... (" + std::to_string(ids.size()) + " total)";
      msg += "]";
    }
    throw ValidationError(msg);
  }
}

ScoreTable compute_scores_serial(const Dataset& ds, const std::vector<ScoreSpec>& specs, const ScoreArtifacts& art,
                                 bool include_train) {
  return compute_scores_impl(ds, specs, art, include_train, [](std::size_t n, const auto& body) {
    for (std::size_t i = 0; i < n; ++i) body(i);
  });
}

ScoreTable compute_scores_parallel(const Dataset& ds, const std::vector<ScoreSpec>& specs,
                                   const ScoreArtifacts& art, bool include_train) {
  return compute_scores_impl(ds, specs, art, include_train, [](std::size_t n, const auto& body) {
    std::exception_ptr failure;
    const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic, 16)
    for (std::ptrdiff_t i = 0; i < count; ++i) {
      try {
        body(static_cast<std::size_t>(i));
      } catch (...) {
#pragma omp critical(uood_score_failure)
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
  });
}

EvalReport evaluate(const ScoreTable& table, const std::string& ood_split, const std::string& baseline) {
  const Split split = Split::parse(ood_split);
  if (split.kind != SplitKind::Ood) throw ValidationError("--ood must name an ood:<name> split");
  const auto id_ids = table.ids_in(Split::id_test());
  const auto ood_ids = table.ids_in(split);
  if (id_ids.empty()) throw ValidationError("score table has no id_test rows");
  if (ood_ids.empty()) throw ValidationError("score table has no rows for " + ood_split);
  return evaluate_columns(table.columns, table.column(baseline), id_ids, ood_ids, ood_split);
}

std::vector<EvalReport> evaluate_all(const Dataset& ds, const std::vector<ScoreSpec>& specs,
                                     const ScoreArtifacts& art) {
  const auto table = compute_scores_parallel(ds, specs, art);
  std::vector<EvalReport> out;
  for (const auto& name : table.ood_names()) {
    auto rep = evaluate(table, "ood:" + name);
    // Report only the requested scores (the baseline column is implicit).
    std::erase_if(rep.rows, [&](const MetricRow& r) {
      return std::none_of(specs.begin(), specs.end(), [&](const ScoreSpec& s) { return s.name() == r.score; });
    });
    out.push_back(std::move(rep));
  }
  return out;
}

void write_score_table(const ScoreTable& t, std::ostream& out) {
  using nlohmann::ordered_json;
  for (std::size_t i = 0; i < t.sample_ids.size(); ++i) {
    ordered_json j;
    j["sample_id"] = t.sample_ids[i];
    j["split"] = t.splits[i].str();
    for (const auto& c : t.columns) j[c.name] = c.values.at(t.sample_ids[i]);
    out << j.dump() << '\n';
  }
}

ScoreTable read_score_table(std::istream& in) {
  using nlohmann::ordered_json;
  ScoreTable t;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = ordered_json::parse(line);
      const auto id = j.at("sample_id").get<std::string>();
      t.sample_ids.push_back(id);
      t.splits.push_back(Split::parse(j.at("split").get<std::string>()));
      std::size_t c = 0;
      for (const auto& [key, value] : j.items()) {
        if (key == "sample_id" || key == "split") continue;
        if (t.sample_ids.size() == 1) t.columns.push_back({key, {}});
        if (c >= t.columns.size() || t.columns[c].name != key)
          throw ParseError("score columns differ from the first row", line_no);
        if (!t.columns[c].values.emplace(id, value.get<double>()).second)
          throw ParseError("duplicate sample_id '" + id + "'", line_no);
        ++c;
      }
      if (c != t.columns.size()) throw ParseError("score columns differ from the first row", line_no);
    } catch (const ordered_json::exception& e) {
      throw ParseError(std::string("bad score line: ") + e.what(), line_no);
    }
  }
  return t;
}

DecCalibration calibrate_dec(const Dataset& ds, const DensityModel& density, const PhpConfig& php,
                             ComplexitySource source, const CalibrationOptions& opt, const ComplexityOptions& copt) {
  const auto train = ds.select(Split::id_train());
  if (train.empty()) throw ValidationError("calibrate_dec: dataset has no id_train records");
  DecCalibration cal;
  cal.source = source;
  std::vector<double> c_train(train.size());
  if (source == ComplexitySource::Bits) {
    double sum = 0;
    for (const auto* r : train) {
      if (!r->bits) throw ValidationError("record " + r->sample_id + " has no bits");
      sum += *r->bits;
    }
    cal.bits_id = sum / static_cast<double>(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) c_train[i] = bits_complexity(*train[i]->bits, *cal.bits_id);
  } else {
    std::vector<Tensor> images;
    images.reserve(train.size());
    for (const auto* r : train) images.push_back(ds.load_tensor_of(*r));
    cal.profile = calibrate_profile(images, opt);
    std::vector<const Tensor*> ptrs;
    for (const auto& img : images) ptrs.push_back(&img);
    c_train = complexity_parallel(ptrs, *cal.profile, copt);
  }
  const auto php_train = php_scores_parallel(train, density, php);
  cal.scale = dec_scale(php_train, c_train);
  return cal;
}

}  // namespace uood
