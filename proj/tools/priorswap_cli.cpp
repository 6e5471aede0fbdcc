// priorswap: command-line front end for the experiment harness.
//
//   priorswap <command> --config exp.cfg [--seed N] [--out DIR] [--set key=value ...]
//
// Failures exit nonzero with one JSON line on stderr: {"error": kind, "message": ...}.

#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "priorswap/harness.hpp"

using namespace priorswap;
namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
};

ExperimentConfig load(const Options& o) {
  Config c = o.config.empty() ? Config{} : Config::load(o.config);
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw InvalidInput("--set expects key=value, got '" + kv + "'");
    c.set(Config::trim(kv.substr(0, eq)), Config::trim(kv.substr(eq + 1)), "--set");
  }
  if (o.seed) c.set("seed", std::to_string(*o.seed), "--seed");
  if (!o.out.empty()) c.set("output.dir", o.out, "--out");
  ExperimentConfig e = ExperimentConfig::from(c);
  fs::create_directories(e.out_dir);
  return e;
}

void report(const std::string& what, const fs::path& p) { std::cout << what << ": " << p.string() << '\n'; }

void gen_data(const ExperimentConfig& cfg) {
  const fs::path p = fs::path(cfg.out_dir) / "data.csv";
  write_dataset_csv(p.string(), build_model(cfg));
  report("data", p);
}

void infer_false(const ExperimentConfig& cfg) {
  const LikelihoodModel model = build_model(cfg);
  const SamplerSettings s = detail::false_sampler_settings(cfg, model, cfg.T_f, derive_seed(cfg.seed, 3));
  const SampleSet samples = sample_false_posterior(model, cfg.false_prior, s);
  const fs::path sp = fs::path(cfg.out_dir) / "false_samples.csv";
  write_sample_set_csv(sp.string(), samples);
  report("false posterior samples", sp);
  const Eigen::Index k = std::min<Eigen::Index>(cfg.k, samples.samples.rows());
  const FitResult fit = fit_parametric_alpha(samples.samples, k, model_family(model), cfg.false_prior,
                                             static_cast<double>(model_size(model)), cfg.fit);
  if (!fit.warning.empty()) std::cerr << "warning: " << fit.warning << '\n';
  const fs::path ap = fs::path(cfg.out_dir) / "alpha.csv";
  write_alpha_csv(ap.string(), fit.alpha);
  report("pseudo-points", ap);
}

void swap(const ExperimentConfig& cfg, const Config& raw) {
  if (cfg.targets.empty()) throw InvalidInput("target_priors is empty");
  std::optional<ParametricAlpha> alpha;
  Vector start = Vector::Zero(cfg.d);
  if (raw.has("swap.alpha")) {
    alpha = read_alpha_csv(raw.str("swap.alpha"), cfg.false_prior);
    if (alpha->dimension() != cfg.d) throw InvalidInput("swap.alpha dimension does not match model.d");
  } else {
    ExperimentConfig fit_cfg = cfg;
    fit_cfg.methods = {"prior-swap-parametric"};
    const detail::SharedSetup setup = detail::prepare_setup(fit_cfg);
    alpha = *setup.alpha;
    start = setup.reference;
  }
  fs::create_directories(fs::path(cfg.out_dir) / "chains");
  for (std::size_t i = 0; i < cfg.targets.size(); ++i) {
    const SwapTarget t = detail::swap_for(*alpha, cfg.targets[i], cfg.false_prior);
    Vector init = start;
    if (const auto* h = std::get_if<HierarchicalNormalGammaPrior>(&cfg.targets[i])) {
      init.conservativeResize(cfg.d + 1);
      init[cfg.d] = std::log(h->shape);
    }
    const Chain c = run_tuned_chain(t.target, detail::sampler_settings(cfg, cfg.T, derive_seed(cfg.seed, 100 + i, 2)), init);
    const fs::path p = fs::path(cfg.out_dir) / "chains" / (prior_file_label(cfg, i) + "__prior-swap-parametric.csv");
    write_chain_csv(p.string(), c);
    report("chain (" + c.config + ")", p);
  }
}

void estimate(const ExperimentConfig& cfg) {
  const RunRecord rec = run_experiment(cfg);
  write_run_artifacts(cfg, rec);
  if (!rec.fit_warning.empty()) std::cerr << "warning: " << rec.fit_warning << '\n';
  for (const auto& r : rec.results) {
    std::cout << prior_file_label(cfg, r.prior_index) << " " << r.method << ": ";
    if (!r.failure.empty()) std::cout << "FAILED (" << r.failure_kind << ") " << r.failure << '\n';
    else std::cout << "posterior_error=" << r.curve.back().posterior_error << " ess=" << r.curve.back().ess << '\n';
  }
  report("artifacts", cfg.out_dir);
}

void benchmark(const ExperimentConfig& cfg) {
  const auto rows = benchmark_timing(cfg, cfg.benchmark_n);
  const fs::path p = fs::path(cfg.out_dir) / "benchmark.csv";
  write_benchmark_csv(p.string(), rows);
  for (const auto& r : rows) std::cout << "n=" << r.n << " " << r.method << ": " << r.per_iteration_ns << " ns/iter\n";
  report("benchmark", p);
}

void oracle(const ExperimentConfig& cfg) {
  if (cfg.targets.empty()) throw InvalidInput("target_priors is empty");
  const LikelihoodModel model = build_model(cfg);
  Vector init = Vector::Zero(cfg.d);
  if (conjugate_available(model, cfg.false_prior))
    init = conjugate_linear_posterior(model, std::get<NormalPrior>(cfg.false_prior)).mean();
  std::vector<GroundTruthRecord> gt;
  for (std::size_t i = 0; i < cfg.targets.size(); ++i) gt.push_back(compute_ground_truth(cfg, model, cfg.targets[i], i, init));
  const fs::path p = fs::path(cfg.out_dir) / "ground_truth.csv";
  write_ground_truth_csv(p.string(), cfg, gt);
  report("ground truth", p);
}

void marginals_cmd(const Config& raw, const std::string& out_dir) {
  std::vector<std::pair<std::string, Matrix>> chains;
  for (const auto& item : split(raw.str("marginals.inputs"), ';')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw InvalidInput("marginals.inputs expects label=path, got '" + item + "'");
    const CsvTable t = read_csv(Config::trim(item.substr(eq + 1)));
    Eigen::Index d = 0;
    while (d < static_cast<Eigen::Index>(t.header.size()) && t.header[static_cast<std::size_t>(d)].starts_with("theta_")) ++d;
    const Eigen::Index drop = t.data.rows() / 4;
    chains.emplace_back(Config::trim(item.substr(0, eq)), t.data.leftCols(d).bottomRows(t.data.rows() - drop));
  }
  if (chains.empty()) throw InvalidInput("marginals.inputs is empty");
  const Vector grid = Vector::LinSpaced(static_cast<Eigen::Index>(raw.u64("marginals.points")), raw.num("marginals.lower"),
                                        raw.num("marginals.upper"));
  const fs::path p = fs::path(out_dir) / "marginals.csv";
  write_marginals_csv(p.string(), marginals(chains, static_cast<Eigen::Index>(raw.u64("marginals.dim")), grid));
  report("marginals", p);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prior swapping: reuse a false posterior to infer under new priors"};
  app.require_subcommand(1);
  Options o;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"gen-data", "generate a synthetic dataset (data.csv)"},
      {"infer-false", "sample the false posterior and fit pseudo-points (false_samples.csv, alpha.csv)"},
      {"swap", "sample the prior swap density for each target prior (chains/)"},
      {"estimate", "run the full method comparison (estimates, curves, chains, ground truth)"},
      {"benchmark", "per-iteration cost of direct MCMC vs. prior swapping across data sizes"},
      {"oracle", "ground-truth posterior means for each target prior"},
      {"marginals", "1-d kernel density marginals of saved chains"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", o.config, "key = value config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "override the master seed");
    sub->add_option("--out", o.out, "override output.dir");
    sub->add_option("--set", o.overrides, "override a config key (key=value), repeatable");
  }
  CLI11_PARSE(app, argc, argv);

  try {
    const std::string cmd = app.get_subcommands().front()->get_name();
    const ExperimentConfig cfg = load(o);
    Config raw = o.config.empty() ? Config{} : Config::load(o.config);
    for (const auto& kv : o.overrides) {
      const auto eq = kv.find('=');
      raw.set(Config::trim(kv.substr(0, eq)), Config::trim(kv.substr(eq + 1)), "--set");
    }
    if (cmd == "gen-data") gen_data(cfg);
    else if (cmd == "infer-false") infer_false(cfg);
    else if (cmd == "swap") swap(cfg, raw);
    else if (cmd == "estimate") estimate(cfg);
    else if (cmd == "benchmark") benchmark(cfg);
    else if (cmd == "oracle") oracle(cfg);
    else marginals_cmd(raw, cfg.out_dir);
  } catch (const Error& e) {
    std::cerr << nlohmann::json{{"error", e.kind()}, {"message", e.what()}}.dump() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", "internal"}, {"message", e.what()}}.dump() << '\n';
    return 1;
  }
  return 0;
}
