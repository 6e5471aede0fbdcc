#ifndef PRIORSWAP_HARNESS_HPP
#define PRIORSWAP_HARNESS_HPP

// Config-driven experiment pipeline. One run compares several methods on one
// dataset and a list of target priors, against a single ground truth per
// target prior, and writes plot-ready CSV.

#include "priorswap/estimators.hpp"
#include "priorswap/io.hpp"

#include <atomic>
#include <filesystem>
#include <mutex>
#include <set>
#include <thread>

namespace priorswap {

// ---------------------------------------------------------------------------
// Flat key = value configuration

struct ConfigKey {
  const char* key;
  const char* fallback;  // "" means no default
  const char* help;
};

// Every accepted key. Anything else in a config file is an error.
inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"seed", "", "master seed (required); every stream is derived from it"},
      {"output.dir", "out", "directory for CSV artifacts"},
      {"model.tag", "linear", "linear | logistic | normal_mean"},
      {"model.n", "1000", "synthetic data size"},
      {"model.d", "5", "parameter dimension"},
      {"model.seed", "", "data seed (default: derived from seed)"},
      {"model.data", "", "CSV dataset to load instead of generating one"},
      {"model.noise_variance", "1", "Gaussian noise variance of the linear model"},
      {"model.truth", "", "comma-separated true parameter (default: repeating 1,-1,0,0,0.5)"},
      {"model.forced_sum", "", "normal_mean only: comma-separated exact observation sum"},
      {"false_prior", "normal(mean=0,variance=1)", "false prior pi_f"},
      {"target_priors", "", "';'-separated target priors pi (required for swaps)"},
      {"methods", "prior-swap-exact", "comma-separated method list"},
      {"T", "10000", "retained samples per method (chain length T / (1 - burn_in))"},
      {"T_f", "10000", "false-posterior samples for fitting"},
      {"k", "0", "pseudo-points (0: min(10, T_f))"},
      {"bandwidth", "0", "semiparametric bandwidth (0: constant * T_f^(-1/(4+d)))"},
      {"bandwidth.constant", "1", "bandwidth rate constant"},
      {"sampler.kind", "mh", "mh | hmc (hmc with leapfrog 1 is Langevin)"},
      {"sampler.mh.stddev", "0", "MH proposal stddev (0: tune)"},
      {"sampler.hmc.step", "0", "HMC step size (0: tune)"},
      {"sampler.hmc.leapfrog", "10", "HMC leapfrog steps"},
      {"sampler.burn_in", "0.25", "burn-in fraction"},
      {"fit.restarts", "5", "score-matching restarts"},
      {"fit.max_iterations", "500", "gradient-descent iterations per restart"},
      {"swap.alpha", "", "pseudo-point CSV from infer-false reused by the swap command (default: fit anew)"},
      {"ground_truth.kind", "auto", "auto | quadrature | chain (auto: quadrature for d <= 2)"},
      {"ground_truth.steps", "1000000", "long-chain length"},
      {"checkpoints.first", "100", "first checkpoint sample count; later ones double"},
      {"workers", "1", "parallel method slots"},
      {"benchmark.n_grid", "1000,10000,100000", "data sizes timed by the benchmark"},
      {"benchmark.iterations", "2000", "sampler iterations per timing"},
      {"marginals.inputs", "", "';'-separated label=chain.csv pairs"},
      {"marginals.dim", "0", "coordinate of the marginal"},
      {"marginals.lower", "-3", "grid lower end"},
      {"marginals.upper", "3", "grid upper end"},
      {"marginals.points", "201", "grid size"},
  };
  return keys;
}

class Config {
public:
  static Config parse(std::istream& in, const std::string& origin = "<config>") {
    Config c;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw InvalidInput(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
      c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)), origin + ":" + std::to_string(lineno));
    }
    return c;
  }

  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open config '" + path + "'");
    return parse(in, path);
  }

  void set(const std::string& key, const std::string& value, const std::string& where = "override") {
    bool known = false;
    for (const auto& k : config_keys()) known = known || key == k.key;
    if (!known) throw InvalidInput(where + ": unknown config key '" + key + "'");
    values_[key] = value;
  }

  bool has(const std::string& key) const {
    const auto it = values_.find(key);
    return it != values_.end() && !it->second.empty();
  }

  std::string str(const std::string& key) const {
    if (auto it = values_.find(key); it != values_.end()) return it->second;
    for (const auto& k : config_keys())
      if (key == k.key) return k.fallback;
    throw InvalidInput("unknown config key '" + key + "'");
  }

  double num(const std::string& key) const {
    try {
      return parse_double(str(key));
    } catch (const InvalidInput&) {
      throw InvalidInput("config key '" + key + "' is not a number: '" + str(key) + "'");
    }
  }

  std::uint64_t u64(const std::string& key) const {
    const std::string s = str(key);
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
      throw InvalidInput("config key '" + key + "' is not a non-negative integer: '" + s + "'");
    return v;
  }

  std::vector<double> list(const std::string& key) const {
    std::vector<double> out;
    if (!has(key)) return out;
    for (const auto& part : split(str(key), ',')) out.push_back(parse_double(part));
    return out;
  }

  static std::string trim(std::string s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
    std::size_t i = 0;
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    return s.substr(i);
  }

private:
  std::map<std::string, std::string> values_;
};

// ---------------------------------------------------------------------------
// Prior syntax:  name(key=value, ...)

inline PriorSpec parse_prior(const std::string& text, Eigen::Index d) {
  const std::string t = Config::trim(text);
  const auto open = t.find('(');
  const std::string name = Config::trim(t.substr(0, open));
  std::map<std::string, double> args;
  if (open != std::string::npos) {
    if (t.back() != ')') throw InvalidInput("prior '" + t + "': missing ')'");
    const std::string inner = t.substr(open + 1, t.size() - open - 2);
    if (!Config::trim(inner).empty())
      for (const auto& item : split(inner, ',')) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw InvalidInput("prior '" + t + "': expected key=value, got '" + item + "'");
        args[Config::trim(item.substr(0, eq))] = parse_double(item.substr(eq + 1));
      }
  }
  auto take = [&](const std::string& key, double fallback) {
    auto it = args.find(key);
    if (it == args.end()) return fallback;
    const double v = it->second;
    args.erase(it);
    return v;
  };
  PriorSpec out = NormalPrior::isotropic(1, 0.0, 1.0);
  if (name == "normal") {
    const double mean = take("mean", 0.0), var = take("variance", 1.0);
    out = NormalPrior::isotropic(d, mean, var);
  } else if (name == "laplace") {
    const double loc = take("loc", 0.0), scale = take("scale", 1.0);
    out = LaplacePrior::iid(d, loc, scale);
  } else if (name == "student_t") {
    const double loc = take("loc", 0.0), scale = take("scale", 1.0), dof = take("dof", 3.0);
    out = StudentTPrior::iid(d, loc, scale, dof);
  } else if (name == "very_sparse") {
    out = VerySparsePrior(d, take("scale", 1.0));
  } else if (name == "hierarchical") {
    out = HierarchicalNormalGammaPrior(d, take("shape", 1.0));
  } else {
    throw InvalidInput("unknown prior family '" + name + "'");
  }
  if (!args.empty()) throw InvalidInput("prior '" + t + "': unknown parameter '" + args.begin()->first + "'");
  return out;
}

/// File-name-safe label for a prior string.
inline std::string prior_slug(const std::string& text) {
  std::string s;
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c))) s += c;
    else if (!s.empty() && s.back() != '_') s += '_';
  }
  while (!s.empty() && s.back() == '_') s.pop_back();
  return s;
}

// ---------------------------------------------------------------------------
// Experiment configuration

inline const std::vector<std::string>& method_names() {
  static const std::vector<std::string> names = {"naive-is",     "prior-swap-exact",          "prior-swap-parametric",
                                                 "prior-swap-is", "prior-swap-semiparametric", "direct-mcmc"};
  return names;
}

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "out";

  ModelTag tag = ModelTag::LinearRegression;
  Eigen::Index n = 1000, d = 5;
  std::uint64_t data_seed = 0;
  std::string data_path;
  double noise_variance = 1.0;
  Vector truth;
  std::optional<Vector> forced_sum;

  std::string false_prior_text;
  PriorSpec false_prior = NormalPrior::isotropic(1, 0.0, 1.0);
  std::vector<std::string> target_texts;
  std::vector<PriorSpec> targets;
  std::vector<std::string> methods;

  std::size_t T = 10000, T_f = 10000;
  Eigen::Index k = 10;
  double bandwidth = 0.0, bandwidth_constant = 1.0;
  SamplerSettings::Kind kind = SamplerSettings::Kind::Mh;
  double mh_stddev = 0.0, hmc_step = 0.0;
  int leapfrog = 10;
  double burn_in = 0.25;
  FitOptions fit;
  std::string ground_truth_kind = "auto";
  std::size_t ground_truth_steps = 1000000;
  std::size_t first_checkpoint = 100;
  unsigned workers = 1;

  std::vector<Eigen::Index> benchmark_n;
  std::size_t benchmark_iterations = 2000;

  static ExperimentConfig from(const Config& c);
};

/// Deterministic stream seed from the master seed and a tag.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ a) ^ (b * 0x632be59bd9b4e019ULL));
}

inline Vector default_truth(Eigen::Index d) {
  static const double pattern[] = {1.0, -1.0, 0.0, 0.0, 0.5};
  Vector t(d);
  for (Eigen::Index i = 0; i < d; ++i) t[i] = pattern[i % 5];
  return t;
}

inline ExperimentConfig ExperimentConfig::from(const Config& c) {
  ExperimentConfig e;
  if (!c.has("seed")) throw InvalidInput("config key 'seed' is required");
  e.seed = c.u64("seed");
  e.out_dir = c.str("output.dir");
  e.tag = parse_model_tag(c.str("model.tag"));
  e.n = static_cast<Eigen::Index>(c.u64("model.n"));
  e.d = static_cast<Eigen::Index>(c.u64("model.d"));
  if (e.d < 1) throw InvalidInput("model.d must be >= 1");
  e.data_seed = c.has("model.seed") ? c.u64("model.seed") : derive_seed(e.seed, 1);
  e.data_path = c.str("model.data");
  if (!e.data_path.empty() && !std::filesystem::exists(e.data_path))
    throw InvalidInput("model.data '" + e.data_path + "' does not exist");
  e.noise_variance = c.num("model.noise_variance");
  const auto truth = c.list("model.truth");
  e.truth = truth.empty() ? default_truth(e.d) : Eigen::Map<const Vector>(truth.data(), static_cast<Eigen::Index>(truth.size()));
  if (e.truth.size() != e.d) throw InvalidInput("model.truth must have model.d entries");
  if (const auto fs = c.list("model.forced_sum"); !fs.empty())
    e.forced_sum = Eigen::Map<const Vector>(fs.data(), static_cast<Eigen::Index>(fs.size()));

  e.false_prior_text = c.str("false_prior");
  e.false_prior = parse_prior(e.false_prior_text, e.d);
  if (is_hierarchical(e.false_prior)) throw InvalidInput("false_prior cannot be hierarchical");
  for (const auto& t : split(c.str("target_priors"), ';')) {
    if (Config::trim(t).empty()) continue;
    e.target_texts.push_back(Config::trim(t));
    e.targets.push_back(parse_prior(t, e.d));
  }
  for (const auto& m : split(c.str("methods"), ',')) {
    if (m.empty()) continue;
    if (std::find(method_names().begin(), method_names().end(), m) == method_names().end())
      throw InvalidInput("unknown method '" + m + "'");
    e.methods.push_back(m);
  }
  if (e.methods.empty()) throw InvalidInput("at least one method is required");

  e.T = c.u64("T");
  e.T_f = c.u64("T_f");
  if (e.T < 1 || e.T_f < 1) throw InvalidInput("T and T_f must be >= 1");
  const auto k = static_cast<Eigen::Index>(c.u64("k"));
  e.k = k > 0 ? k : std::min<Eigen::Index>(10, static_cast<Eigen::Index>(e.T_f));
  e.bandwidth = c.num("bandwidth");
  e.bandwidth_constant = c.num("bandwidth.constant");
  const std::string kind = c.str("sampler.kind");
  if (kind == "mh") e.kind = SamplerSettings::Kind::Mh;
  else if (kind == "hmc") e.kind = SamplerSettings::Kind::Hmc;
  else throw InvalidInput("sampler.kind must be mh or hmc");
  e.mh_stddev = c.num("sampler.mh.stddev");
  e.hmc_step = c.num("sampler.hmc.step");
  e.leapfrog = static_cast<int>(c.u64("sampler.hmc.leapfrog"));
  e.burn_in = c.num("sampler.burn_in");
  if (!(e.burn_in >= 0 && e.burn_in < 1)) throw InvalidInput("sampler.burn_in must be in [0, 1)");
  e.fit.restarts = static_cast<int>(c.u64("fit.restarts"));
  e.fit.max_iterations = static_cast<int>(c.u64("fit.max_iterations"));
  e.fit.seed = derive_seed(e.seed, 2);
  e.ground_truth_kind = c.str("ground_truth.kind");
  if (e.ground_truth_kind != "auto" && e.ground_truth_kind != "quadrature" && e.ground_truth_kind != "chain")
    throw InvalidInput("ground_truth.kind must be auto, quadrature or chain");
  e.ground_truth_steps = c.u64("ground_truth.steps");
  e.first_checkpoint = std::max<std::size_t>(1, c.u64("checkpoints.first"));
  e.workers = static_cast<unsigned>(std::max<std::uint64_t>(1, c.u64("workers")));
  for (double v : c.list("benchmark.n_grid")) e.benchmark_n.push_back(static_cast<Eigen::Index>(v));
  e.benchmark_iterations = c.u64("benchmark.iterations");
  return e;
}

inline LikelihoodModel build_model(const ExperimentConfig& cfg) {
  if (!cfg.data_path.empty()) {
    LikelihoodModel m = read_dataset_csv(cfg.data_path, cfg.tag, cfg.noise_variance);
    if (model_dimension(m) != cfg.d)
      throw InvalidInput("dataset dimension " + std::to_string(model_dimension(m)) + " does not match model.d");
    return m;
  }
  SyntheticOptions opts;
  opts.noise_variance = cfg.noise_variance;
  opts.forced_sum = cfg.forced_sum;
  return generate_synthetic(cfg.tag, cfg.n, cfg.d, cfg.truth, cfg.data_seed, opts);
}

inline bool conjugate_available(const LikelihoodModel& model, const PriorSpec& false_prior) {
  return std::holds_alternative<NormalPrior>(false_prior) && model_tag(model) != ModelTag::LogisticRegression;
}

// ---------------------------------------------------------------------------
// Ground truth

struct GroundTruthRecord {
  Vector mean;
  double standard_error = 0.0;  // largest per-coordinate standard error (0 for quadrature)
  std::string source;
};

/// log pi(theta) + log L(theta), with hierarchical priors marginalized over
/// the precision in closed form.
inline std::function<double(const Vector&)> theta_log_posterior(const LikelihoodModel& model, const PriorSpec& prior) {
  return [&model, &prior](const Vector& theta) {
    const double p = detail::target_prior_log_density(prior, theta);
    if (p == kNegInf) return kNegInf;
    return p + likelihood_log_density(model, theta).value;
  };
}

inline GroundTruthRecord quadrature_ground_truth(const LikelihoodModel& model, const PriorSpec& prior,
                                                 std::uint64_t seed) {
  const Eigen::Index d = model_dimension(model);
  if (d > 2) throw InvalidInput("quadrature ground truth needs d <= 2");
  TargetDensity target;
  target.dimension = d;
  target.log_density = theta_log_posterior(model, prior);
  // A pilot chain locates the posterior and its scale; the box grows until
  // the boundary mass is negligible.
  const MhTuning pilot = tune_mh(target, Vector::Zero(d), seed);
  const Chain probe = mh_sample(target, {pilot.stddev, 4000, pilot.state, seed + 1});
  const ChainSummary s = chain_summary(probe, 0.25);
  Vector half = (15.0 * s.variance.array().sqrt()).max(1e-3).matrix();
  for (int attempt = 0;; ++attempt) {
    try {
      const QuadratureResult q = quadrature_oracle(target.log_density, identity_test_function(), s.mean - half, s.mean + half);
      return {q.expectation, 0.0, "quadrature"};
    } catch (const BoundsTooTight&) {
      if (attempt >= 8) throw;
      half *= 2.0;
    }
  }
}

inline GroundTruthRecord chain_ground_truth(const LikelihoodModel& model, const PriorSpec& prior, std::size_t steps,
                                            const ExperimentConfig& cfg, std::uint64_t seed, const Vector& init) {
  GroundTruthConfig g;
  g.steps = steps;
  g.burn_in = cfg.burn_in;
  g.kind = cfg.kind;
  g.leapfrog_steps = cfg.leapfrog;
  g.seed = seed;
  Vector start = init;
  if (const auto* h = std::get_if<HierarchicalNormalGammaPrior>(&prior)) {
    start.conservativeResize(init.size() + 1);
    start[init.size()] = std::log(h->shape);
  }
  g.init = start;
  const GroundTruth gt = long_chain_ground_truth(model, prior, g);
  const Eigen::Index d = model_dimension(model);
  return {gt.mean.head(d), gt.standard_error.head(d).maxCoeff(), "chain(" + gt.settings + ")"};
}

// ---------------------------------------------------------------------------
// Run records

struct CurvePoint {
  std::size_t T = 0;
  std::int64_t wall_ns = 0;
  double posterior_error = 0.0;
  double ess = 0.0;
};

struct MethodResult {
  std::size_t prior_index = 0;
  std::string method;
  std::vector<CurvePoint> curve;
  Vector estimate;
  double acceptance = 0.0;
  std::size_t divergences = 0;
  std::string failure_kind;  // empty on success
  std::string failure;
  Chain chain;               // raw draws, including burn-in
  Vector log_weights;        // per draw, IS methods only
};

struct RunRecord {
  std::vector<GroundTruthRecord> ground_truth;  // one per target prior
  std::vector<MethodResult> results;
  std::string false_posterior;                  // how p_f was represented
  std::string fit_warning;
};

/// Checkpoint sample counts: first, 2 first, 4 first, ... and the full length.
inline std::vector<std::size_t> checkpoint_schedule(std::size_t first, std::size_t total) {
  std::vector<std::size_t> out;
  for (std::size_t t = std::max<std::size_t>(1, first); t < total; t *= 2) out.push_back(t);
  if (total > 0) out.push_back(total);
  return out;
}

namespace detail {

struct SharedSetup {
  LikelihoodModel model;
  std::optional<ExactGaussianPosterior> exact;
  std::optional<SampleSet> false_samples;
  std::int64_t false_sample_ns = 0;
  std::optional<ParametricAlpha> alpha;
  std::int64_t fit_ns = 0;
  std::string fit_warning;
  std::optional<SemiparametricRep> rep;
  std::int64_t rep_ns = 0;
  Vector reference;  // a central point of the false posterior, used to start chains
};

inline SamplerSettings sampler_settings(const ExperimentConfig& cfg, std::size_t retained, std::uint64_t seed) {
  SamplerSettings s;
  s.kind = cfg.kind;
  s.samples = retained;
  s.burn_in = cfg.burn_in;
  s.mh_stddev = cfg.mh_stddev;
  s.hmc_step = cfg.hmc_step;
  s.leapfrog_steps = cfg.leapfrog;
  s.seed = seed;
  return s;
}

/// Exact draws whenever the false posterior is conjugate; the configured
/// sampler otherwise.
inline SamplerSettings false_sampler_settings(const ExperimentConfig& cfg, const LikelihoodModel& model,
                                              std::size_t samples, std::uint64_t seed) {
  SamplerSettings s = sampler_settings(cfg, samples, seed);
  if (conjugate_available(model, cfg.false_prior)) s.kind = SamplerSettings::Kind::Exact;
  return s;
}

inline Vector chain_start(const SharedSetup& setup, const PriorSpec& target) {
  Vector init = setup.reference;
  if (const auto* h = std::get_if<HierarchicalNormalGammaPrior>(&target)) {
    init.conservativeResize(init.size() + 1);
    init[init.size() - 1] = std::log(h->shape);
  }
  return init;
}

/// Tuning plus the chain; tuning time is counted as setup.
inline Chain timed_chain(const TargetDensity& target, const SamplerSettings& s, const Vector& init,
                         std::int64_t& setup_ns) {
  const auto start = Clock::now();
  Chain c = run_tuned_chain(target, s, init);
  const std::int64_t total = elapsed_ns(start);
  const std::int64_t sampling = c.wall_ns.empty() ? 0 : c.wall_ns.back();
  setup_ns += std::max<std::int64_t>(0, total - sampling);
  return c;
}

template <class Density>
SwapTarget swap_for(const Density& fp, const PriorSpec& target, const PriorSpec& false_prior) {
  if (const auto* h = std::get_if<HierarchicalNormalGammaPrior>(&target))
    return make_hierarchical_swap(fp, h->shape, false_prior);
  return make_prior_swap(fp, target, false_prior);
}

inline void run_method(const ExperimentConfig& cfg, const SharedSetup& setup, const PriorSpec& target,
                       const Vector& truth, std::uint64_t seed, MethodResult& out) {
  const Eigen::Index d = model_dimension(setup.model);
  const TestFunction h = head_test_function(d);
  const std::string& m = out.method;
  std::int64_t setup_ns = 0;
  Chain chain;
  std::function<double(const Vector&)> log_weight;  // empty: plain chain mean

  if (m == "naive-is") {
    // The false posterior draws play the role of the chain.
    const SamplerSettings s = false_sampler_settings(cfg, setup.model, total_steps_for(cfg.T, cfg.burn_in), seed);
    const auto start = Clock::now();
    SampleSet draws = sample_false_posterior(setup.model, cfg.false_prior, s);
    const std::int64_t total = elapsed_ns(start);
    chain.samples = std::move(draws.samples);
    chain.wall_ns = std::move(draws.wall_ns);
    chain.accepted.assign(static_cast<std::size_t>(chain.samples.rows()), 1);
    setup_ns = std::max<std::int64_t>(0, total - (chain.wall_ns.empty() ? 0 : chain.wall_ns.back()));
    chain.seed = seed;
    const PriorSpec& pf = cfg.false_prior;
    log_weight = [&target, &pf](const Vector& theta) {
      const double den = prior_log_density(pf, theta).value;
      if (den == kNegInf) throw SupportMismatch("false prior is zero at " + format_vector(theta));
      return detail::target_prior_log_density(target, theta) - den;
    };
  } else if (m == "direct-mcmc") {
    const TargetDensity t = posterior_target(setup.model, target);
    chain = timed_chain(t, sampler_settings(cfg, cfg.T, seed), chain_start(setup, target), setup_ns);
  } else if (m == "prior-swap-exact") {
    if (!setup.exact) throw InvalidInput("prior-swap-exact needs a conjugate model with a Normal false prior");
    const SwapTarget s = swap_for(*setup.exact, target, cfg.false_prior);
    chain = timed_chain(s.target, sampler_settings(cfg, cfg.T, seed), chain_start(setup, target), setup_ns);
  } else {
    // Parametric family based methods.
    if (!setup.alpha) throw NumericError("pseudo-point fit is unavailable");
    setup_ns = setup.false_sample_ns + setup.fit_ns;
    const SwapTarget s = swap_for(*setup.alpha, target, cfg.false_prior);
    chain = timed_chain(s.target, sampler_settings(cfg, cfg.T, seed), chain_start(setup, target), setup_ns);
    if (m == "prior-swap-is") {
      const ParametricAlpha& alpha = *setup.alpha;
      const LikelihoodModel& model = setup.model;
      const PriorSpec& pf = cfg.false_prior;
      log_weight = [&alpha, &model, &pf, d](const Vector& z) {
        const Vector theta = z.head(d);
        return prior_log_density(pf, theta).value + likelihood_log_density(model, theta).value -
               alpha.log_density(theta).value;
      };
    } else if (m == "prior-swap-semiparametric") {
      if (!setup.rep) throw NumericError("semiparametric estimate is unavailable");
      setup_ns += setup.rep_ns;
      const SemiparametricRep& rep = *setup.rep;
      log_weight = [&rep, d](const Vector& z) { return rep.log_correction(z.head(d)).value; };
    }
  }

  const auto T = static_cast<std::size_t>(chain.samples.rows());
  if (T == 0) throw InvalidInput("empty chain");
  if (log_weight) out.log_weights.resize(static_cast<Eigen::Index>(T));
  std::size_t weighted = 0;
  std::int64_t correction_ns = 0, last_wall = 0;
  for (std::size_t t : checkpoint_schedule(cfg.first_checkpoint, T)) {
    if (log_weight) {
      const auto start = Clock::now();
      for (; weighted < t; ++weighted)
        out.log_weights[static_cast<Eigen::Index>(weighted)] =
            log_weight(chain.samples.row(static_cast<Eigen::Index>(weighted)).transpose());
      correction_ns += elapsed_ns(start);
    }
    const auto drop = static_cast<Eigen::Index>(std::floor(cfg.burn_in * static_cast<double>(t)));
    const Eigen::Index kept = static_cast<Eigen::Index>(t) - drop;
    const Matrix rows = chain.samples.middleRows(drop, kept);
    CurvePoint p;
    p.T = t;
    if (log_weight) {
      const WeightedEstimate e = estimate_from_log_weights(rows, out.log_weights.segment(drop, kept), h, m);
      out.estimate = e.estimate;
      p.ess = e.ess;
    } else {
      out.estimate = rows.leftCols(d).colwise().mean().transpose();
      p.ess = static_cast<double>(kept);
    }
    p.posterior_error = posterior_error(out.estimate, truth);
    p.wall_ns = std::max(last_wall, setup_ns + chain.wall_ns[t - 1] + correction_ns);
    last_wall = p.wall_ns;
    out.curve.push_back(p);
  }
  out.acceptance = chain.acceptance_rate();
  out.divergences = chain.divergences;
  out.chain = std::move(chain);
}

inline SharedSetup prepare_setup(const ExperimentConfig& cfg) {
  SharedSetup s{build_model(cfg), {}, {}, 0, {}, 0, {}, {}, 0, Vector::Zero(cfg.d)};
  if (prior_dimension(cfg.false_prior) != model_dimension(s.model))
    throw InvalidInput("false prior dimension does not match the model");
  if (conjugate_available(s.model, cfg.false_prior)) {
    s.exact = conjugate_linear_posterior(s.model, std::get<NormalPrior>(cfg.false_prior));
    s.reference = s.exact->mean();
  }
  const bool parametric = std::any_of(cfg.methods.begin(), cfg.methods.end(), [](const std::string& m) {
    return m == "prior-swap-parametric" || m == "prior-swap-is" || m == "prior-swap-semiparametric";
  });
  if (parametric) {
    const auto start = Clock::now();
    s.false_samples = sample_false_posterior(s.model, cfg.false_prior,
                                             false_sampler_settings(cfg, s.model, cfg.T_f, derive_seed(cfg.seed, 3)));
    s.false_sample_ns = elapsed_ns(start);
    if (!s.exact) s.reference = s.false_samples->samples.colwise().mean().transpose();
    const auto fit_start = Clock::now();
    const Eigen::Index k = std::min<Eigen::Index>(cfg.k, s.false_samples->samples.rows());
    FitResult fit = fit_parametric_alpha(s.false_samples->samples, k, model_family(s.model), cfg.false_prior,
                                         static_cast<double>(model_size(s.model)), cfg.fit);
    s.fit_ns = elapsed_ns(fit_start);
    s.fit_warning = fit.warning;
    s.alpha = std::move(fit.alpha);
    if (std::find(cfg.methods.begin(), cfg.methods.end(), "prior-swap-semiparametric") != cfg.methods.end()) {
      const auto rep_start = Clock::now();
      const double b = cfg.bandwidth > 0 ? cfg.bandwidth
                                         : select_bandwidth(cfg.T_f, cfg.d, cfg.bandwidth_constant);
      s.rep.emplace(s.false_samples->samples, b, *s.alpha);
      s.rep_ns = elapsed_ns(rep_start);
    }
  }
  return s;
}

}  // namespace detail

inline GroundTruthRecord compute_ground_truth(const ExperimentConfig& cfg, const LikelihoodModel& model,
                                              const PriorSpec& prior, std::size_t index, const Vector& init) {
  const std::uint64_t seed = derive_seed(cfg.seed, 4, index);
  const bool quadrature = cfg.ground_truth_kind == "quadrature" || (cfg.ground_truth_kind == "auto" && cfg.d <= 2);
  if (quadrature) return quadrature_ground_truth(model, prior, seed);
  return chain_ground_truth(model, prior, cfg.ground_truth_steps, cfg, seed, init);
}

/// Runs every (target prior, method) pair. Stage errors are recorded per
/// method; the other methods continue.
inline RunRecord run_experiment(const ExperimentConfig& cfg) {
  if (cfg.targets.empty()) throw InvalidInput("target_priors is empty");
  const detail::SharedSetup setup = detail::prepare_setup(cfg);
  RunRecord rec;
  rec.fit_warning = setup.fit_warning;
  rec.false_posterior = setup.exact ? "exact-gaussian" : "sampled";
  if (setup.alpha) rec.false_posterior += "+parametric(k=" + std::to_string(setup.alpha->k()) + ")";
  for (std::size_t i = 0; i < cfg.targets.size(); ++i)
    rec.ground_truth.push_back(compute_ground_truth(cfg, setup.model, cfg.targets[i], i, setup.reference));

  for (std::size_t i = 0; i < cfg.targets.size(); ++i)
    for (const auto& m : cfg.methods) {
      MethodResult r;
      r.prior_index = i;
      r.method = m;
      rec.results.push_back(std::move(r));
    }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t j; (j = next.fetch_add(1)) < rec.results.size();) {
      MethodResult& r = rec.results[j];
      const auto method_index = static_cast<std::uint64_t>(
          std::find(method_names().begin(), method_names().end(), r.method) - method_names().begin());
      try {
        detail::run_method(cfg, setup, cfg.targets[r.prior_index], rec.ground_truth[r.prior_index].mean,
                           derive_seed(cfg.seed, 100 + r.prior_index, method_index), r);
      } catch (const Error& e) {
        r.failure_kind = e.kind();
        r.failure = e.what();
      } catch (const std::exception& e) {
        r.failure_kind = "internal";
        r.failure = e.what();
      }
    }
  };
  const unsigned slots = std::max(1u, std::min<unsigned>(cfg.workers, static_cast<unsigned>(rec.results.size())));
  if (slots == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < slots; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return rec;
}

// ---------------------------------------------------------------------------
// CSV artifacts

inline std::string prior_file_label(const ExperimentConfig& cfg, std::size_t i) {
  return std::to_string(i) + "_" + prior_slug(cfg.target_texts[i]);
}

inline void write_ground_truth_csv(const std::string& path, const ExperimentConfig& cfg,
                                   const std::vector<GroundTruthRecord>& gt) {
  auto out = open_for_write(path);
  std::vector<std::string> header = {"prior", "source", "standard_error"};
  for (const auto& c : theta_header(cfg.d, "mu_")) header.push_back(c);
  write_row(out, header);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    std::string source = gt[i].source;
    std::replace(source.begin(), source.end(), ',', ';');
    std::vector<std::string> row = {prior_file_label(cfg, i), source,
                                    format_double(gt[i].standard_error)};
    for (Eigen::Index c = 0; c < gt[i].mean.size(); ++c) row.push_back(format_double(gt[i].mean[c]));
    write_row(out, row);
  }
}

/// Writes ground_truth.csv, estimates_<prior>.csv, curves.csv, failures.csv
/// and chains/<prior>__<method>.csv under the output directory.
inline void write_run_artifacts(const ExperimentConfig& cfg, const RunRecord& rec) {
  namespace fs = std::filesystem;
  const fs::path dir(cfg.out_dir);
  fs::create_directories(dir / "chains");
  write_ground_truth_csv((dir / "ground_truth.csv").string(), cfg, rec.ground_truth);

  auto curves = open_for_write((dir / "curves.csv").string());
  write_row(curves, {"prior", "method", "T", "wall_ns", "posterior_error", "ess"});
  auto failures = open_for_write((dir / "failures.csv").string());
  write_row(failures, {"prior", "method", "kind", "message"});
  for (std::size_t i = 0; i < cfg.targets.size(); ++i) {
    std::vector<EstimateRecord> records;
    for (const auto& r : rec.results) {
      if (r.prior_index != i) continue;
      const std::string label = prior_file_label(cfg, i);
      if (!r.failure_kind.empty()) {
        std::string msg = r.failure;
        std::replace(msg.begin(), msg.end(), ',', ';');
        write_row(failures, {label, r.method, r.failure_kind, msg});
        continue;
      }
      for (const auto& p : r.curve)
        write_row(curves, {label, r.method, std::to_string(p.T), std::to_string(p.wall_ns),
                           format_double(p.posterior_error), format_double(p.ess)});
      const CurvePoint& last = r.curve.back();
      const bool uses_tf = r.method != "naive-is" && r.method != "direct-mcmc" && r.method != "prior-swap-exact";
      records.push_back({r.method, cfg.target_texts[i], last.T, uses_tf ? cfg.T_f : 0, last.wall_ns,
                         last.posterior_error, last.ess});
      write_chain_csv((dir / "chains" / (label + "__" + r.method + ".csv")).string(), r.chain,
                      r.log_weights.size() ? &r.log_weights : nullptr);
    }
    write_estimate_records((dir / ("estimates_" + prior_file_label(cfg, i) + ".csv")).string(), records);
  }
}

// ---------------------------------------------------------------------------
// Timing benchmark

struct BenchmarkRow {
  Eigen::Index n = 0;
  std::string method;
  double per_iteration_ns = 0.0;
  std::size_t iterations = 0;
  double checksum = 0.0;  // sum of all draws; deterministic given the seed
};

/// Per-iteration MH cost of the direct posterior vs. the prior swap target
/// for each data size. The swap target uses k pseudo-points (the first k
/// observations): its cost depends on k and d only, not on their values.
inline std::vector<BenchmarkRow> benchmark_timing(const ExperimentConfig& cfg, const std::vector<Eigen::Index>& n_grid,
                                                  int repeats = 3) {
  std::vector<BenchmarkRow> rows;
  const PriorSpec& target = cfg.targets.empty() ? cfg.false_prior : cfg.targets.front();
  for (Eigen::Index n : n_grid) {
    SyntheticOptions opts;
    opts.noise_variance = cfg.noise_variance;
    const LikelihoodModel model = generate_synthetic(cfg.tag, n, cfg.d, cfg.truth, derive_seed(cfg.seed, 5, static_cast<std::uint64_t>(n)), opts);
    const Eigen::Index k = std::min<Eigen::Index>(std::max<Eigen::Index>(cfg.k, 1), std::max<Eigen::Index>(n, 1));
    Matrix pts(k, model_family(model).data_dimension());
    pts.setZero();
    for (Eigen::Index j = 0; j < std::min(k, n); ++j) pts.row(j) = data_point(model, j).transpose();
    const ParametricAlpha alpha(pts, static_cast<double>(n), cfg.false_prior, model_family(model));
    const SwapTarget swap = detail::swap_for(alpha, target, cfg.false_prior);
    const TargetDensity direct = posterior_target(model, target);
    for (const auto& [name, t] : {std::pair<std::string, const TargetDensity*>{"direct-mcmc", &direct},
                                  std::pair<std::string, const TargetDensity*>{"prior-swap", &swap.target}}) {
      Vector init = Vector::Zero(t->dimension);
      if (t->dimension > cfg.d) init[cfg.d] = 0.0;
      BenchmarkRow row;
      row.n = n;
      row.method = name;
      row.iterations = cfg.benchmark_iterations;
      row.per_iteration_ns = std::numeric_limits<double>::infinity();
      for (int r = 0; r < repeats; ++r) {
        const Chain c = mh_sample(*t, {Vector::Constant(1, 1e-3), cfg.benchmark_iterations, init, derive_seed(cfg.seed, 6)});
        const double ns = c.wall_ns.empty() ? 0.0 : static_cast<double>(c.wall_ns.back());
        row.per_iteration_ns = std::min(row.per_iteration_ns, ns / static_cast<double>(std::max<std::size_t>(1, cfg.benchmark_iterations)));
        row.checksum = c.samples.sum();
      }
      rows.push_back(row);
    }
  }
  return rows;
}

inline void write_benchmark_csv(const std::string& path, const std::vector<BenchmarkRow>& rows) {
  auto out = open_for_write(path);
  write_row(out, {"n", "method", "per_iteration_ns", "iterations", "checksum"});
  for (const auto& r : rows)
    write_row(out, {std::to_string(r.n), r.method, format_double(r.per_iteration_ns), std::to_string(r.iterations),
                    format_double(r.checksum)});
}

// ---------------------------------------------------------------------------
// Kernel density marginals

struct MarginalTable {
  Vector grid;
  std::vector<std::string> labels;
  Matrix density;  // grid points x inputs
};

/// Gaussian KDE of one coordinate per chain on a shared grid. Bandwidth is
/// Silverman's rule, floored at the grid spacing so a constant chain still
/// renders as a resolvable spike.
inline MarginalTable marginals(const std::vector<std::pair<std::string, Matrix>>& chains, Eigen::Index dim,
                               const Vector& grid) {
  if (grid.size() < 2) throw InvalidInput("marginal grid needs at least two points");
  const double spacing = (grid[grid.size() - 1] - grid[0]) / static_cast<double>(grid.size() - 1);
  if (!(spacing > 0)) throw InvalidInput("marginal grid must be increasing");
  MarginalTable out{grid, {}, Matrix::Zero(grid.size(), static_cast<Eigen::Index>(chains.size()))};
  for (std::size_t c = 0; c < chains.size(); ++c) {
    const auto& [label, samples] = chains[c];
    if (samples.rows() == 0) throw InvalidInput("chain '" + label + "' is empty");
    if (dim < 0 || dim >= samples.cols()) throw InvalidInput("marginal dimension out of range for '" + label + "'");
    out.labels.push_back(label);
    const Vector x = samples.col(dim);
    const double n = static_cast<double>(x.size());
    const double mean = x.mean();
    const double sd = x.size() > 1 ? std::sqrt((x.array() - mean).square().sum() / (n - 1)) : 0.0;
    const double h = std::max(1.06 * sd * std::pow(n, -0.2), spacing);
    const double norm = 1.0 / (n * h * std::sqrt(2.0 * std::numbers::pi));
    for (Eigen::Index g = 0; g < grid.size(); ++g) {
      double s = 0;
      for (Eigen::Index t = 0; t < x.size(); ++t) {
        const double u = (grid[g] - x[t]) / h;
        s += std::exp(-0.5 * u * u);
      }
      out.density(g, static_cast<Eigen::Index>(c)) = s * norm;
    }
  }
  return out;
}

inline void write_marginals_csv(const std::string& path, const MarginalTable& m) {
  auto out = open_for_write(path);
  std::vector<std::string> header = {"grid"};
  for (const auto& l : m.labels) header.push_back(l);
  write_row(out, header);
  for (Eigen::Index g = 0; g < m.grid.size(); ++g) {
    std::vector<std::string> row = {format_double(m.grid[g])};
    for (Eigen::Index c = 0; c < m.density.cols(); ++c) row.push_back(format_double(m.density(g, c)));
    write_row(out, row);
  }
}

}  // namespace priorswap

#endif  // PRIORSWAP_HARNESS_HPP
