#pragma once

#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "uood/dec.hpp"
#include "uood/density.hpp"
#include "uood/manifest.hpp"
#include "uood/metrics.hpp"
#include "uood/php.hpp"

namespace uood {

enum class ScoreKind { Likelihood, Php, Dec, Resultant, Ic, Waic, Llr, Lra };

struct ScoreSpec {
  ScoreKind kind = ScoreKind::Likelihood;
  int layer = 0;  // llr only

  /// "likelihood", "php", "dec", "resultant", "ic", "waic", "llr:<k>", "lra"
  std::string name() const;
  static ScoreSpec parse(const std::string& s);
  /// Comma-separated list.
  static std::vector<ScoreSpec> parse_list(const std::string& s);
  std::set<Requirement> requirements() const;

  bool operator==(const ScoreSpec&) const = default;
};

double likelihood_score(const SampleRecord& rec);
/// php_score + c * scale, drawing the same per-record MC stream as php_score.
double resultant_score(const SampleRecord& rec, const DensityModel& model, double c, const DecScale& scale,
                       const PhpConfig& cfg);
double ic_score(const SampleRecord& rec);
/// Ensemble mean minus population (1/N) variance.
double waic_score(const SampleRecord& rec);
double llr_score(const SampleRecord& rec, int k);
double lra_score(const SampleRecord& rec);

/// Fitted artifacts that scores draw on; all read-only during scoring.
struct ScoreArtifacts {
  std::optional<DensityModel> density;
  std::optional<DecCalibration> dec;
  PhpConfig php;
  ComplexityOptions complexity;
};

/// Scores for a set of records, one column per spec. Rows sorted by sample_id.
struct ScoreTable {
  std::vector<std::string> sample_ids;
  std::vector<Split> splits;
  std::vector<ScoreColumn> columns;

  const ScoreColumn& column(const std::string& name) const;
  std::vector<std::string> ids_in(const Split& split) const;
  std::vector<std::string> ood_names() const;
};

/// Throws ValidationError naming the missing artifact or the records lacking fields.
void check_dependencies(const Dataset& ds, const std::vector<ScoreSpec>& specs, const ScoreArtifacts& art,
                        bool include_train = false);

/// Scores id_test and every OOD split (id_train too when include_train). The likelihood
/// column is always present because advantages are measured against it.
ScoreTable compute_scores_serial(const Dataset& ds, const std::vector<ScoreSpec>& specs, const ScoreArtifacts& art,
                                 bool include_train = false);
ScoreTable compute_scores_parallel(const Dataset& ds, const std::vector<ScoreSpec>& specs,
                                   const ScoreArtifacts& art, bool include_train = false);

/// Metrics for id_test vs one OOD split; rows follow the table's column order.
EvalReport evaluate(const ScoreTable& table, const std::string& ood_split, const std::string& baseline = "likelihood");

/// Score then evaluate every OOD split present in `ds`.
std::vector<EvalReport> evaluate_all(const Dataset& ds, const std::vector<ScoreSpec>& specs,
                                     const ScoreArtifacts& art);

void write_score_table(const ScoreTable& table, std::ostream& out);
ScoreTable read_score_table(std::istream& in);

/// DEC scale from id_train: PHP under `density` and C(x) under the complexity source.
DecCalibration calibrate_dec(const Dataset& ds, const DensityModel& density, const PhpConfig& php,
                             ComplexitySource source, const CalibrationOptions& opt,
                             const ComplexityOptions& copt = {});

}  // namespace uood
