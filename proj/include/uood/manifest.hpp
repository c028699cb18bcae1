#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "uood/tensor.hpp"

namespace uood {

enum class SplitKind { IdTrain, IdTest, Ood };

struct Split {
  SplitKind kind = SplitKind::IdTest;
  std::string ood_name;  // only for Ood

  static Split id_train() { return {SplitKind::IdTrain, {}}; }
  static Split id_test() { return {SplitKind::IdTest, {}}; }
  static Split ood(std::string name) { return {SplitKind::Ood, std::move(name)}; }

  /// "id_train" | "id_test" | "ood:<name>"
  std::string str() const;
  static Split parse(const std::string& s);

  bool operator==(const Split&) const = default;
};

/// Per-layer terms of a hierarchical model: log p(x, k) = recon_k - kl_gt_k.
struct LayerTerm {
  int k = 0;
  double recon_k = 0;
  double kl_gt_k = 0;
  bool operator==(const LayerTerm&) const = default;
};

/// Per-sample terms produced by a generative model backend.
struct SampleRecord {
  std::string sample_id;
  Split split;
  double recon_loglik = 0;  // E_q[log p(x|z)], nats
  double kl_prior = 0;      // KL(q(z|x) || p(z)), nats
  std::vector<double> mu;
  std::vector<double> logvar;
  std::optional<double> bits;
  std::optional<double> bg_loglik;
  std::optional<std::vector<double>> ens_logliks;
  std::optional<std::vector<LayerTerm>> layer_terms;
  std::optional<std::string> tensor_path;

  bool operator==(const SampleRecord&) const = default;
};

struct Dataset {
  std::vector<SampleRecord> records;
  std::size_t latent_dim = 0;
  std::filesystem::path root;         // tensor_path values resolve against this
  std::vector<std::string> warnings;  // e.g. negative kl_prior

  std::vector<const SampleRecord*> select(const Split& split) const;
  /// Distinct OOD split names, sorted.
  std::vector<std::string> ood_names() const;
  Tensor load_tensor_of(const SampleRecord& rec) const;
};

SampleRecord parse_record(const std::string& line, std::size_t line_no = 0);
std::string format_record(const SampleRecord& rec);

Dataset parse_manifest(std::istream& in, std::filesystem::path root = {});
Dataset parse_manifest(const std::filesystem::path& path);
void write_manifest(const Dataset& ds, std::ostream& out);
void write_manifest(const Dataset& ds, const std::filesystem::path& path);

/// Field requirements checked by validate_dataset. `llr` carries the layer index.
struct Requirement {
  enum class Kind { Dec, Ic, Waic, Llr, Lra } kind;
  int layer = 0;
  std::string name() const;
  auto operator<=>(const Requirement&) const = default;
};

struct ValidationReport {
  /// requirement name -> sample_ids lacking the fields it needs
  std::map<std::string, std::vector<std::string>> missing;
  bool ok() const;
};

ValidationReport validate_dataset(const Dataset& ds, const std::set<Requirement>& needs);

}  // namespace uood
