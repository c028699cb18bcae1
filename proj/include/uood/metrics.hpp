#pragma once

#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "uood/manifest.hpp"

namespace uood {

/// Scores keyed by sample_id. Higher means more in-distribution.
struct ScoreColumn {
  std::string name;
  std::map<std::string, double> values;
};

// ID is the positive class throughout. All functions reject empty inputs.

/// Mann-Whitney AUROC, half credit for ties, via sort-and-rank.
double auroc(std::span<const double> id_scores, std::span<const double> ood_scores);

/// Average precision over the descending threshold step curve: sum (R_k - R_{k-1}) * P_k.
double auprc(std::span<const double> id_scores, std::span<const double> ood_scores);

/// Largest observed ID score tau with #{id >= tau}/|ID| >= target_tpr.
double threshold_at_tpr(std::span<const double> id_scores, double target_tpr);

/// #{ood >= tau}/|OOD| at tau = threshold_at_tpr(id_scores, target_tpr). No interpolation.
double fpr_at_tpr(std::span<const double> id_scores, std::span<const double> ood_scores, double target_tpr = 0.8);

/// mean(id) - mean(ood)
double gap(std::span<const double> id_scores, std::span<const double> ood_scores);

/// Scores of `col` for the given sample_ids, in order. Throws if any id is missing.
std::vector<double> gather(const ScoreColumn& col, std::span<const std::string> ids);

/// gap(score) - gap(likelihood), both over the same id/ood sample sets.
double advantage(const ScoreColumn& score, const ScoreColumn& likelihood, std::span<const std::string> id_ids,
                 std::span<const std::string> ood_ids);
/// Same, using `ds` to select id_test and the named OOD split.
double advantage(const ScoreColumn& score, const ScoreColumn& likelihood, const Dataset& ds,
                 const std::string& ood_name);

enum class Label { Id, Ood };

/// ID iff score > lambda; the boundary goes to OOD.
std::map<std::string, Label> classify(const ScoreColumn& scores, double lambda);

struct MetricRow {
  std::string score;
  double auroc = 0;
  double auprc = 0;
  double fpr80 = 0;
  double gap = 0;
  double advantage = 0;
};

struct EvalReport {
  std::string ood_split;  // e.g. "ood:svhn"
  std::string baseline = "likelihood";
  std::size_t n_id = 0;
  std::size_t n_ood = 0;
  std::vector<MetricRow> rows;

  const MetricRow& row(const std::string& name) const;
};

/// Metrics over precomputed id/ood score vectors for every column in `columns`.
EvalReport evaluate_columns(const std::vector<ScoreColumn>& columns, const ScoreColumn& baseline,
                            std::span<const std::string> id_ids, std::span<const std::string> ood_ids,
                            const std::string& ood_split);

/// One JSON object per line: a header line, then one line per score row.
void write_report(const EvalReport& rep, std::ostream& out);
std::vector<EvalReport> read_reports(std::istream& in);
/// Human-readable table, 4 significant digits.
void print_report_table(const EvalReport& rep, std::ostream& out);

}  // namespace uood
