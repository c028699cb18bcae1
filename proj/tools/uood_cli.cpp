// uood: pipeline front end. Stages talk only through files.
// Exit codes: 0 ok, 1 usage error, 2 data or validation error.

#include <omp.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "uood/dec.hpp"
#include "uood/density.hpp"
#include "uood/error.hpp"
#include "uood/manifest.hpp"
#include "uood/metrics.hpp"
#include "uood/php.hpp"
#include "uood/rng.hpp"
#include "uood/ppca.hpp"
#include "uood/scores.hpp"
#include "uood/toy_vae.hpp"

namespace fs = std::filesystem;
using namespace uood;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path);
  return in;
}

/// Inputs and outputs must be different files.
void require_distinct(const std::vector<std::string>& inputs, const std::vector<std::string>& outputs) {
  for (const auto& o : outputs) {
    if (o.empty()) continue;
    for (const auto& i : inputs) {
      if (i.empty()) continue;
      std::error_code ec;
      if (o == i || (fs::exists(o) && fs::exists(i) && fs::equivalent(o, i, ec)))
        throw UsageError("output " + o + " would overwrite input " + i);
    }
  }
}

ppca::MixtureSpec named_spec(const std::string& name) {
  if (name == "paper-multimodal") return ppca::MixtureSpec::multi_modal();
  if (name == "single-modal") return ppca::MixtureSpec::single_modal();
  if (name == "void") return ppca::MixtureSpec::gaussian(Vec::Zero(2), 0.1 * Mat::Identity(2, 2));
  throw UsageError("unknown --spec '" + name + "'");
}

const std::vector<std::string> kSpecNames = {"paper-multimodal", "single-modal", "void"};

Mat read_points_file(const std::string& path) {
  auto in = open_in(path);
  try {
    return toy::read_points(in);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

struct Common {
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_seed(CLI::App* cmd, Common& c, bool required) {
  auto* opt = cmd->add_option("--seed", c.seed, "RNG seed (u64); all stochastic outputs are reproducible from it");
  if (required) opt->required();
}

// -------------------------------------------------------------------------- subcommands

struct GenToy : Common {
  std::string spec = "paper-multimodal";
  std::size_t n = 5000;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("gen-toy", "Sample 2-D toy points, n per mixture component");
    cmd->add_option("--spec", spec, "Mixture preset")->check(CLI::IsMember(kSpecNames));
    cmd->add_option("--n", n, "Points per component")->check(CLI::PositiveNumber);
    add_seed(cmd, *this, true);
    cmd->add_option("--out", out, "Output points file (two reals per line)")->required();
    cmd->callback([this] { run(); });
  }
  void run() const {
    const Mat x = ppca::gen_mixture(named_spec(spec), n, *seed);
    auto f = open_out(out);
    toy::write_points(x, f);
  }
};

struct Ppca : Common {
  std::string spec = "paper-multimodal";
  std::string points;
  double lo = -6, hi = 6;
  std::size_t grid = 61;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("ppca", "Closed-form linear VAE: fit, aggregated posterior and grid ELBO values");
    cmd->add_option("--spec", spec, "Data mixture preset (population moments)")->check(CLI::IsMember(kSpecNames));
    cmd->add_option("--points", points, "Fit on sample moments of this points file instead of the population");
    cmd->add_option("--lo", lo, "Grid lower bound (both axes)");
    cmd->add_option("--hi", hi, "Grid upper bound (both axes)");
    cmd->add_option("--grid", grid, "Grid points per axis")->check(CLI::Range(2, 2001));
    cmd->add_option("--out", out, "Output TSV (default stdout)");
    cmd->callback([this] { run(); });
  }
  void run() const {
    if (!(hi > lo)) throw UsageError("--hi must exceed --lo");
    require_distinct({points}, {out});
    const auto data = named_spec(spec);
    ppca::PpcaSolution sol;
    ppca::MixtureSpec moments = data;
    if (points.empty()) {
      sol = ppca::solve(data.second_moment(), 1);
    } else {
      const Mat x = read_points_file(points);
      sol = ppca::solve(ppca::sample_second_moment(x), 1);
      const Vec m = x.colwise().mean().transpose();
      const Mat c = x.rowwise() - m.transpose();
      moments = ppca::MixtureSpec::gaussian(m, c.transpose() * c / static_cast<double>(x.rows()));
    }
    const auto qz = ppca::aggregated_posterior(sol, moments);
    const auto rows = ppca::evaluate_grid_parallel(sol, qz, lo, hi, grid);

    std::ofstream file;
    if (!out.empty()) file = open_out(out);
    std::ostream& os = out.empty() ? std::cout : file;
    os.precision(17);
    os << "# sigma2=" << sol.sigma2 << " E=" << sol.E(0, 0) << "," << sol.E(1, 0) << " A=" << sol.A(0, 0) << ","
       << sol.A(0, 1) << " C=" << sol.C(0, 0) << "\n# q(z):";
    for (std::size_t k = 0; k < qz.weights.size(); ++k)
      os << " " << qz.weights[k] << "*N(" << qz.means[k](0) << "," << qz.covariances[k](0, 0) << ")";
    os << "\nx1\tx2\tlog_marginal\telbo_prior\telbo_qz\n";
    for (const auto& r : rows)
      os << r.x1 << '\t' << r.x2 << '\t' << r.marginal << '\t' << r.elbo_prior << '\t' << r.elbo_qz << '\n';
  }
};

struct TrainToy : Common {
  std::string points, test_points, params_out;
  std::vector<std::string> ood;
  double lr = 1e-5;
  std::size_t epochs = 200, batch = 100, latent = 2;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("train-toy", "Train the toy VAE and encode points into a manifest");
    cmd->add_option("--points", points, "Training points (become id_train)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--test", test_points, "Points encoded as id_test")->check(CLI::ExistingFile);
    cmd->add_option("--ood", ood, "OOD points as <name>=<file>, encoded as ood:<name> (repeatable)");
    cmd->add_option("--lr", lr, "Adam learning rate")->check(CLI::NonNegativeNumber);
    cmd->add_option("--epochs", epochs, "Training epochs");
    cmd->add_option("--batch-size", batch, "Minibatch size")->check(CLI::PositiveNumber);
    cmd->add_option("--latent-dim", latent, "Latent dimension")->check(CLI::PositiveNumber);
    add_seed(cmd, *this, true);
    cmd->add_option("--params-out", params_out, "Trained parameter file")->required();
    cmd->add_option("--out", out, "Encoded manifest")->required();
    cmd->callback([this] { run(); });
  }
  void run() const {
    std::vector<std::pair<std::string, std::string>> ood_files;
    std::vector<std::string> inputs{points, test_points};
    for (const auto& spec : ood) {
      const auto eq = spec.find('=');
      if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size())
        throw UsageError("--ood expects <name>=<file>, got '" + spec + "'");
      ood_files.emplace_back(spec.substr(0, eq), spec.substr(eq + 1));
      inputs.push_back(ood_files.back().second);
    }
    require_distinct(inputs, {out, params_out});
    if (out == params_out) throw UsageError("--out and --params-out must differ");

    const Mat train_x = read_points_file(points);
    const toy::TrainConfig cfg{.lr = lr, .epochs = epochs, .batch_size = batch, .seed = derive_seed(*seed, 1)};
    const auto result = toy::train(toy::init(derive_seed(*seed, 0), latent), train_x, cfg);
    for (std::size_t e = 0; e < result.epoch_elbo.size(); e += std::max<std::size_t>(1, epochs / 10))
      std::cerr << "epoch " << e << " mean ELBO " << result.epoch_elbo[e] << '\n';
    if (!result.epoch_elbo.empty()) std::cerr << "final mean ELBO " << result.epoch_elbo.back() << '\n';

    const std::uint64_t enc_seed = derive_seed(*seed, 2);
    Dataset ds;
    toy::append_encoded(ds, result.params, train_x, Split::id_train(), "train", enc_seed);
    if (!test_points.empty())
      toy::append_encoded(ds, result.params, read_points_file(test_points), Split::id_test(), "test", enc_seed);
    for (const auto& [name, file] : ood_files)
      toy::append_encoded(ds, result.params, read_points_file(file), Split::ood(name), "ood-" + name, enc_seed);

    auto pf = open_out(params_out);
    toy::save_params(result.params, pf);
    write_manifest(ds, fs::path(out));
  }
};

struct FitDensity : Common {
  std::string manifest, family = "gmm";
  std::size_t k = 2;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("fit-density", "Fit q_id(z) to one posterior draw per id_train record");
    cmd->add_option("--manifest", manifest, "Input manifest")->required()->check(CLI::ExistingFile);
    cmd->add_option("--family", family, "Density family")->check(CLI::IsMember({"full", "gmm"}));
    cmd->add_option("--k", k, "Mixture components (gmm)")->check(CLI::PositiveNumber);
    add_seed(cmd, *this, true);
    cmd->add_option("--out", out, "Output density file")->required();
    cmd->callback([this] { run(); });
  }
  void run() const {
    require_distinct({manifest}, {out});
    const Dataset ds = parse_manifest(fs::path(manifest));
    for (const auto& w : ds.warnings) std::cerr << "warning: " << w << '\n';
    const auto model =
        fit_id_prior(ds, family == "gmm" ? DensityFamily::Gmm : DensityFamily::FullGaussian, k, *seed);
    save_density(model, out);
    std::cerr << "fitted " << (model.is_gmm() ? "gmm" : "full gaussian") << " on " << model.fit_meta.n_points
              << " draws, mean log-likelihood " << model.fit_meta.final_loglik << '\n';
  }
};

struct CalibrateDec : Common {
  std::string manifest, density, source = "svd";
  double tau = 1e-4;
  std::optional<std::size_t> n_id;
  std::size_t max_images = 512, n_mc = 128;
  bool no_binsearch = false;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("calibrate-dec", "Calibrate the DEC compressor profile and scale on id_train");
    cmd->add_option("--manifest", manifest, "Input manifest")->required()->check(CLI::ExistingFile);
    cmd->add_option("--density", density, "Fitted density (for the PHP term of the scale)")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--source", source, "Complexity source")->check(CLI::IsMember({"svd", "bits"}));
    cmd->add_option("--tau", tau, "Plateau tolerance on the mean error curve")->check(CLI::NonNegativeNumber);
    cmd->add_option("--n-id", n_id, "Override n_id (default floor(n_id_max/2), min 1)");
    cmd->add_option("--max-images", max_images, "Calibration subsample cap")->check(CLI::PositiveNumber);
    cmd->add_option("--n-mc", n_mc, "Monte Carlo draws for PHP")->check(CLI::PositiveNumber);
    cmd->add_flag("--no-binsearch", no_binsearch, "Use the linear rank scan");
    add_seed(cmd, *this, true);
    cmd->add_option("--out", out, "Output calibration file")->required();
    cmd->callback([this] { run(); });
  }
  void run() const {
    require_distinct({manifest, density}, {out});
    const Dataset ds = parse_manifest(fs::path(manifest));
    const auto model = load_density(density);
    const CalibrationOptions opt{.tau = tau, .max_images = max_images, .seed = derive_seed(*seed, 0), .n_id = n_id};
    const auto cal = calibrate_dec(ds, model, {n_mc, derive_seed(*seed, 1)},
                                   source == "bits" ? ComplexitySource::Bits : ComplexitySource::Svd, opt,
                                   {.binary_search = !no_binsearch});
    if (cal.scale.negative)
      std::cerr << "warning: mean id_train PHP is positive; DEC scale " << cal.scale.scale << " applied as-is\n";
    if (cal.profile)
      std::cerr << "n_id_max " << cal.profile->n_id_max << ", n_id " << cal.profile->n_id << ", epsilon "
                << cal.profile->epsilon << '\n';
    std::cerr << "scale " << cal.scale.scale << " (mean PHP " << cal.scale.mean_php_id << ", mean C "
              << cal.scale.mean_c_id << ")\n";
    save_calibration(cal, out);
  }
};

struct Score : Common {
  std::string manifest, scores = "likelihood", density, profile;
  std::size_t n_mc = 128;
  bool no_binsearch = false, include_train = false;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("score", "Score id_test and OOD records; writes one row per sample");
    cmd->add_option("--manifest", manifest, "Input manifest")->required()->check(CLI::ExistingFile);
    cmd->add_option("--score", scores,
                    "Comma-separated scores: likelihood, php, dec, resultant, ic, waic, llr:<k>, lra")
        ->check([](const std::string& s) {
          try {
            ScoreSpec::parse_list(s);
            return std::string();
          } catch (const std::exception& e) {
            return std::string(e.what());
          }
        });
    cmd->add_option("--density", density, "Fitted density (php, resultant)")->check(CLI::ExistingFile);
    cmd->add_option("--profile", profile, "DEC calibration (dec, resultant)")->check(CLI::ExistingFile);
    cmd->add_option("--n-mc", n_mc, "Monte Carlo draws per record for PHP")->check(CLI::PositiveNumber);
    cmd->add_flag("--no-binsearch", no_binsearch, "Use the linear rank scan for C(x)");
    cmd->add_flag("--include-train", include_train, "Also score id_train records");
    add_seed(cmd, *this, false);
    cmd->add_option("--out", out, "Output score file")->required();
    cmd->callback([this] { run(); });
  }
  void run() const {
    const auto specs = ScoreSpec::parse_list(scores);
    const bool stochastic = std::any_of(specs.begin(), specs.end(), [](const ScoreSpec& s) {
      return s.kind == ScoreKind::Php || s.kind == ScoreKind::Resultant;
    });
    if (stochastic && !seed) throw UsageError("--seed is required when scoring php or resultant");
    require_distinct({manifest, density, profile}, {out});
    const Dataset ds = parse_manifest(fs::path(manifest));
    for (const auto& w : ds.warnings) std::cerr << "warning: " << w << '\n';
    ScoreArtifacts art;
    if (!density.empty()) art.density = load_density(density);
    if (!profile.empty()) art.dec = load_calibration(profile);
    art.php = {n_mc, seed.value_or(0)};
    art.complexity.binary_search = !no_binsearch;
    const auto table = compute_scores_parallel(ds, specs, art, include_train);
    auto f = open_out(out);
    write_score_table(table, f);
  }
};

struct Eval : Common {
  std::string scores, ood, baseline = "likelihood";

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("eval", "Metrics and advantages of every score column");
    cmd->add_option("--scores", scores, "Score file written by `score`")->required()->check(CLI::ExistingFile);
    cmd->add_option("--ood", ood, "OOD split, e.g. ood:void (default: every OOD split)");
    cmd->add_option("--baseline", baseline, "Column advantages are measured against");
    cmd->add_option("--out", out, "Report file (default: table on stdout only)");
    cmd->callback([this] { run(); });
  }
  void run() const {
    require_distinct({scores}, {out});
    auto in = open_in(scores);
    const auto table = read_score_table(in);
    std::vector<std::string> splits;
    if (!ood.empty()) {
      splits.push_back(ood.starts_with("ood:") ? ood : "ood:" + ood);
    } else {
      for (const auto& n : table.ood_names()) splits.push_back("ood:" + n);
    }
    if (splits.empty()) throw ValidationError("score file has no OOD rows");
    std::ofstream file;
    if (!out.empty()) file = open_out(out);
    for (const auto& s : splits) {
      const auto rep = evaluate(table, s, baseline);
      print_report_table(rep, std::cout);
      if (file.is_open()) write_report(rep, file);
    }
  }
};

struct Report : Common {
  std::string in;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("report", "Render report files as tables");
    cmd->add_option("--in", in, "Report file written by `eval --out`")->required()->check(CLI::ExistingFile);
    cmd->callback([this] { run(); });
  }
  void run() const {
    auto f = open_in(in);
    for (const auto& rep : read_reports(f)) print_report_table(rep, std::cout);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unsupervised OOD detection with generative-model scores"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  GenToy gen_toy;
  Ppca ppca_cmd;
  TrainToy train_toy;
  FitDensity fit_density;
  CalibrateDec calibrate;
  Score score;
  Eval eval;
  Report report;
  gen_toy.add(app);
  ppca_cmd.add(app);
  train_toy.add(app);
  fit_density.add(app);
  calibrate.add(app);
  score.add(app);
  eval.add(app);
  report.add(app);
  int threads = omp_get_num_procs();
  for (auto* cmd : app.get_subcommands({})) {
    cmd->add_option("--threads", threads, "Worker threads for parallel kernels")->check(CLI::PositiveNumber);
    cmd->parse_complete_callback([&threads] { omp_set_num_threads(threads); });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const uood::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
