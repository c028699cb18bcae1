#include "uood/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_set>

#include <json.hpp>

#include "uood/error.hpp"

namespace uood {

using nlohmann::json;

std::string Split::str() const {
  switch (kind) {
    case SplitKind::IdTrain: return "id_train";
    case SplitKind::IdTest: return "id_test";
    case SplitKind::Ood: return "ood:" + ood_name;
  }
  return {};
}

Split Split::parse(const std::string& s) {
  if (s == "id_train") return id_train();
  if (s == "id_test") return id_test();
  if (s.starts_with("ood:") && s.size() > 4) return ood(s.substr(4));
  throw ParseError("bad split '" + s + "' (expected id_train, id_test or ood:<name>)");
}

std::vector<const SampleRecord*> Dataset::select(const Split& split) const {
  std::vector<const SampleRecord*> out;
  for (const auto& r : records)
    if (r.split == split) out.push_back(&r);
  return out;
}

std::vector<std::string> Dataset::ood_names() const {
  std::vector<std::string> names;
  for (const auto& r : records)
    if (r.split.kind == SplitKind::Ood) names.push_back(r.split.ood_name);
  std::sort(names.begin(), names.end());
  names.erase(std::unique(names.begin(), names.end()), names.end());
  return names;
}

Tensor Dataset::load_tensor_of(const SampleRecord& rec) const {
  if (!rec.tensor_path) throw ValidationError("record " + rec.sample_id + " has no tensor_path");
  std::filesystem::path p(*rec.tensor_path);
  return load_tensor(p.is_absolute() ? p : root / p);
}

namespace {

double number(const json& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_number()) throw ParseError(std::string("field '") + key + "' must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw ParseError(std::string("field '") + key + "' is not finite");
  return d;
}

std::vector<double> number_array(const json& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_array()) throw ParseError(std::string("field '") + key + "' must be an array");
  std::vector<double> out;
  out.reserve(v.size());
  for (const auto& e : v) {
    if (!e.is_number()) throw ParseError(std::string("field '") + key + "' must contain only numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

}  // namespace

SampleRecord parse_record(const std::string& line, std::size_t line_no) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed record: ") + e.what(), line_no);
  }
  if (!j.is_object()) throw ParseError("record must be an object", line_no);
  try {
    SampleRecord r;
    for (const char* key : {"sample_id", "split", "recon_loglik", "kl_prior", "mu", "logvar"})
      if (!j.contains(key)) throw ParseError(std::string("missing required field '") + key + "'");
    r.sample_id = j.at("sample_id").get<std::string>();
    r.split = Split::parse(j.at("split").get<std::string>());
    r.recon_loglik = number(j, "recon_loglik");
    r.kl_prior = number(j, "kl_prior");
    r.mu = number_array(j, "mu");
    r.logvar = number_array(j, "logvar");
    if (r.mu.empty() || r.mu.size() != r.logvar.size())
      throw ParseError("mu and logvar must be non-empty and of equal length");
    if (j.contains("bits")) r.bits = number(j, "bits");
    if (j.contains("bg_loglik")) r.bg_loglik = number(j, "bg_loglik");
    if (j.contains("ens_logliks")) r.ens_logliks = number_array(j, "ens_logliks");
    if (j.contains("layer_terms")) {
      std::vector<LayerTerm> terms;
      for (const auto& t : j.at("layer_terms"))
        terms.push_back({t.at("k").get<int>(), number(t, "recon_k"), number(t, "kl_gt_k")});
      r.layer_terms = std::move(terms);
    }
    if (j.contains("tensor_path")) r.tensor_path = j.at("tensor_path").get<std::string>();
    return r;
  } catch (const ParseError& e) {
    if (e.line() || !line_no) throw;
    throw ParseError(e.what(), line_no);
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad field: ") + e.what(), line_no);
  }
}

std::string format_record(const SampleRecord& r) {
  json j;
  j["sample_id"] = r.sample_id;
  j["split"] = r.split.str();
  j["recon_loglik"] = r.recon_loglik;
  j["kl_prior"] = r.kl_prior;
  j["mu"] = r.mu;
  j["logvar"] = r.logvar;
  if (r.bits) j["bits"] = *r.bits;
  if (r.bg_loglik) j["bg_loglik"] = *r.bg_loglik;
  if (r.ens_logliks) j["ens_logliks"] = *r.ens_logliks;
  if (r.layer_terms) {
    json terms = json::array();
    for (const auto& t : *r.layer_terms) terms.push_back({{"k", t.k}, {"recon_k", t.recon_k}, {"kl_gt_k", t.kl_gt_k}});
    j["layer_terms"] = std::move(terms);
  }
  if (r.tensor_path) j["tensor_path"] = *r.tensor_path;
  return j.dump();
}

Dataset parse_manifest(std::istream& in, std::filesystem::path root) {
  Dataset ds;
  ds.root = std::move(root);
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    SampleRecord rec = parse_record(line, line_no);
    if (ds.records.empty()) {
      ds.latent_dim = rec.mu.size();
    } else if (rec.mu.size() != ds.latent_dim) {
      throw ParseError("inconsistent latent dim for sample_id '" + rec.sample_id + "': " +
                           std::to_string(rec.mu.size()) + " vs " + std::to_string(ds.latent_dim),
                       line_no);
    }
    if (!seen.insert(rec.sample_id).second)
      throw ParseError("duplicate sample_id '" + rec.sample_id + "'", line_no);
    if (rec.kl_prior < 0)
      ds.warnings.push_back("line " + std::to_string(line_no) + ": negative kl_prior for '" + rec.sample_id + "'");
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

Dataset parse_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open manifest " + path.string());
  return parse_manifest(in, path.parent_path());
}

void write_manifest(const Dataset& ds, std::ostream& out) {
  for (const auto& r : ds.records) out << format_record(r) << '\n';
}

void write_manifest(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write manifest " + path.string());
  write_manifest(ds, out);
}

std::string Requirement::name() const {
  switch (kind) {
    case Kind::Dec: return "dec";
    case Kind::Ic: return "ic";
    case Kind::Waic: return "waic";
    case Kind::Llr: return "llr:" + std::to_string(layer);
    case Kind::Lra: return "lra";
  }
  return {};
}

bool ValidationReport::ok() const {
  return std::all_of(missing.begin(), missing.end(), [](const auto& kv) { return kv.second.empty(); });
}

namespace {

bool satisfies(const SampleRecord& r, const Requirement& req) {
  switch (req.kind) {
    case Requirement::Kind::Dec: return r.bits.has_value() || r.tensor_path.has_value();
    case Requirement::Kind::Ic: return r.bits.has_value();
    case Requirement::Kind::Waic: return r.ens_logliks && r.ens_logliks->size() >= 2;
    case Requirement::Kind::Lra: return r.bg_loglik.has_value();
    case Requirement::Kind::Llr:
      return r.layer_terms && std::any_of(r.layer_terms->begin(), r.layer_terms->end(),
                                          [&](const LayerTerm& t) { return t.k == req.layer; });
  }
  return false;
}

}  // namespace

ValidationReport validate_dataset(const Dataset& ds, const std::set<Requirement>& needs) {
  ValidationReport rep;
  for (const auto& req : needs) {
    auto& ids = rep.missing[req.name()];
    for (const auto& r : ds.records)
      if (!satisfies(r, req)) ids.push_back(r.sample_id);
    if (ids.empty()) rep.missing.erase(req.name());
  }
  return rep;
}

}  // namespace uood
