#pragma once

// Command implementations behind the rts executable: manifest parsing, model
// construction, and result files.

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include "rts/annealing.hpp"
#include "rts/config.hpp"
#include "rts/core.hpp"
#include "rts/estimators.hpp"
#include "rts/gaussian.hpp"
#include "rts/rbm.hpp"
#include "rts/rbm_io.hpp"
#include "rts/tempering.hpp"
#include "rts/toy.hpp"
#include "rts/tracker.hpp"

namespace rts::app {

using Json = nlohmann::ordered_json;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<unsigned> threads;
};

struct LadderSpec {
  std::size_t k = 100;
  Spacing spacing = Spacing::kUniform;
  bool exp_prior = false;
  double lambda = 0.0;

  TemperatureLadder build() const { return build(k); }
  TemperatureLadder build(std::size_t kk) const {
    const auto betas = TemperatureLadder::make_betas(kk, spacing);
    return {betas, exp_prior ? TemperatureLadder::exponential_log_prior(betas, lambda)
                             : TemperatureLadder::uniform_log_prior(kk)};
  }
};

enum class ModelKind { kRbm, kGmm, kToy };

struct ModelSpec {
  ModelKind kind = ModelKind::kRbm;
  // rbm
  bool from_file = false;
  std::string params_path;
  std::size_t visible = 784;
  std::size_t hidden = 10;
  std::uint64_t model_seed = 7;
  double scale = 0.2;
  bool uniform_base = false;
  std::string data_path;
  std::size_t data_rows = 2000;
  double threshold = 0.5;
  // gmm
  std::size_t dim = 10;
  double separation = 5.0;
  double component_variance = 0.5;
  double prior_variance = 30.0;
  bool adaptive = true;
  double stepsize = 0.0;
  // toy
  std::string toy_kind = "two_state";
  double toy_z = 100.0;
  std::size_t toy_states = 4;
};

struct RunSpec {
  std::vector<Method> methods{Method::kRts};
  std::size_t chains = 100;
  std::size_t sweeps = 1000;
  std::size_t init_iters = 10;
  std::size_t init_sweeps = 50;
  std::size_t thin = 1;
  std::size_t ais_chains = 0;  // 0: same as chains
  std::size_t ais_temps = 0;   // 0: same as sweeps (matched cost)
  std::size_t mbar_batch_sweeps = 10;
  std::uint64_t seed = 1;
  unsigned threads = default_threads();
  std::string out = "out";
};

struct SweepSpec {
  std::vector<std::size_t> ks{20, 50, 100, 200};
  std::size_t bootstrap = 200;
  std::size_t resample = 10000;
  std::vector<Method> methods{Method::kRts, Method::kTs, Method::kTiTrap, Method::kTiRb};
};

struct HmcSpec {
  std::size_t pilot = 50;
  std::size_t warmup = 20;
  std::size_t batches = 40;
  std::size_t batch_size = 50;
  double eps_init = 1.0;
  std::size_t verify = 5000;
};

struct TrainSpec {
  std::string data;  // IDX path; empty selects synthetic prototypes
  std::string val_data;
  std::size_t rows = 2500;
  double val_fraction = 0.2;
  std::size_t visible = 180;
  std::size_t prototypes = 8;
  double flip = 0.1;
  std::size_t hidden = 50;
  std::string params;  // optional starting parameters
  TrainConfig cfg;
};

struct ExperimentConfig {
  ModelSpec model;
  LadderSpec ladder;
  RunSpec run;
  SweepSpec sweep;
  HmcSpec hmc;
  TrainSpec train;
};

namespace detail {

inline Method method_from(const Config& c, const std::string& s, const std::string& k, const std::string& v) {
  std::string up = v;
  for (auto& ch : up) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  if (up == "TI") up = "TI_RIEMANN";
  if (up == "MIXED") up = "MIXED_MLE";
  const auto m = parse_method(up);
  if (!m) throw ConfigError(c.line_of(s, k), s, k, "unknown method '" + v + "'");
  return *m;
}

inline std::vector<Method> methods_from(const Config& c, const std::string& s, const std::string& k,
                                        const std::vector<Method>& def) {
  if (!c.has(s, k)) return def;
  std::vector<Method> out;
  for (const auto& v : c.get_list(s, k, {})) out.push_back(method_from(c, s, k, v));
  if (out.empty()) throw ConfigError(c.line_of(s, k), s, k, "at least one method is required");
  return out;
}

inline std::size_t positive(const Config& c, const std::string& s, const std::string& k, std::size_t def) {
  const auto v = c.get_count(s, k, def);
  if (v == 0) throw ConfigError(c.line_of(s, k), s, k, "must be positive");
  return v;
}

inline double positive_real(const Config& c, const std::string& s, const std::string& k, double def) {
  const double v = c.get_double(s, k, def);
  if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(c.line_of(s, k), s, k, "must be a positive number");
  return v;
}

inline std::string choice(const Config& c, const std::string& s, const std::string& k, const std::string& def,
                          const std::vector<std::string>& allowed) {
  const std::string v = Config::lower(c.get_string(s, k, def));
  for (const auto& a : allowed)
    if (v == a) return v;
  std::string msg = "expected one of";
  for (const auto& a : allowed) msg += " " + a;
  throw ConfigError(c.line_of(s, k), s, k, msg + ", got '" + v + "'");
}

inline void require_file(const Config& c, const std::string& s, const std::string& k, const std::string& path) {
  if (!std::filesystem::exists(path))
    throw ConfigError(c.line_of(s, k), s, k, "file does not exist: " + path);
}

}  // namespace detail

inline ExperimentConfig parse_experiment(const Config& c, const Overrides& ov = {}) {
  c.check_allowed({
      {"model",
       {"type", "source", "params", "visible", "hidden", "seed", "scale", "base", "data", "data_rows", "threshold",
        "dim", "separation", "component_variance", "prior_variance", "stepsize", "kind", "z", "states"}},
      {"ladder", {"K", "spacing", "prior", "lambda"}},
      {"run",
       {"methods", "chains", "sweeps", "init_iters", "init_sweeps", "thin", "ais_chains", "ais_temps",
        "mbar_batch_sweeps", "seed", "threads", "out"}},
      {"sweep", {"ks", "bootstrap", "resample", "methods"}},
      {"hmc", {"pilot", "warmup", "batches", "batch_size", "eps_init", "verify"}},
      {"train",
       {"data", "val_data", "rows", "val_fraction", "visible", "prototypes", "flip", "hidden", "params", "chains",
        "sweeps_per_update", "K", "lambda", "alpha", "lr", "momentum", "epochs", "batch", "cd1_epochs", "cd1_lr",
        "init_iters", "init_sweeps", "checkpoint_every"}},
  });
  ExperimentConfig e;
  auto& m = e.model;
  const std::string type = detail::choice(c, "model", "type", "rbm", {"rbm", "gmm", "toy"});
  m.kind = type == "rbm" ? ModelKind::kRbm : type == "gmm" ? ModelKind::kGmm : ModelKind::kToy;
  if (m.kind == ModelKind::kRbm) {
    m.from_file = detail::choice(c, "model", "source", "random", {"random", "file"}) == "file";
    if (m.from_file) {
      m.params_path = c.require_string("model", "params");
      detail::require_file(c, "model", "params", m.params_path);
    } else {
      m.visible = detail::positive(c, "model", "visible", m.visible);
      m.hidden = detail::positive(c, "model", "hidden", m.hidden);
      m.model_seed = c.get_u64("model", "seed", m.model_seed);
      m.scale = c.get_double("model", "scale", m.scale);
      if (!(m.scale >= 0.0) || !std::isfinite(m.scale))
        throw ConfigError(c.line_of("model", "scale"), "model", "scale", "must be a non-negative number");
    }
    m.uniform_base = detail::choice(c, "model", "base", "data", {"data", "uniform"}) == "uniform";
    m.data_path = c.get_string("model", "data", "");
    if (!m.data_path.empty()) detail::require_file(c, "model", "data", m.data_path);
    m.data_rows = detail::positive(c, "model", "data_rows", m.data_rows);
    m.threshold = c.get_double("model", "threshold", m.threshold);
    if (!(m.threshold >= 0.0 && m.threshold < 1.0))
      throw ConfigError(c.line_of("model", "threshold"), "model", "threshold", "must be in [0, 1)");
  } else if (m.kind == ModelKind::kGmm) {
    m.dim = detail::positive(c, "model", "dim", m.dim);
    m.separation = c.get_double("model", "separation", m.separation);
    m.component_variance = detail::positive_real(c, "model", "component_variance", m.component_variance);
    m.prior_variance = detail::positive_real(c, "model", "prior_variance", m.prior_variance);
    const std::string st = c.get_string("model", "stepsize", "adaptive");
    if (Config::lower(st) == "adaptive") {
      m.adaptive = true;
    } else {
      m.adaptive = false;
      m.stepsize = detail::positive_real(c, "model", "stepsize", 0.0);
    }
  } else {
    m.toy_kind = detail::choice(c, "model", "kind", "two_state", {"two_state", "flat"});
    m.toy_z = c.get_double("model", "z", m.toy_z);
    if (m.toy_kind == "two_state" && !(m.toy_z > 1.0))
      throw ConfigError(c.line_of("model", "z"), "model", "z", "must exceed 1");
    m.toy_states = detail::positive(c, "model", "states", m.toy_states);
  }

  const auto k = c.get_int("ladder", "K", 100);
  if (k < 2) throw ConfigError(c.line_of("ladder", "K"), "ladder", "K", "K ≥ 2 required, got " + std::to_string(k));
  e.ladder.k = static_cast<std::size_t>(k);
  e.ladder.spacing =
      detail::choice(c, "ladder", "spacing", "uniform", {"uniform", "geometric"}) == "uniform" ? Spacing::kUniform
                                                                                             : Spacing::kGeometric;
  e.ladder.exp_prior = detail::choice(c, "ladder", "prior", "uniform", {"uniform", "exp"}) == "exp";
  e.ladder.lambda = c.get_double("ladder", "lambda", e.ladder.exp_prior ? 2.0 : 0.0);

  auto& r = e.run;
  r.methods = detail::methods_from(c, "run", "methods", r.methods);
  r.chains = detail::positive(c, "run", "chains", r.chains);
  r.sweeps = detail::positive(c, "run", "sweeps", r.sweeps);
  r.init_iters = c.get_count("run", "init_iters", r.init_iters);
  r.init_sweeps = detail::positive(c, "run", "init_sweeps", r.init_sweeps);
  r.thin = detail::positive(c, "run", "thin", r.thin);
  r.ais_chains = c.get_count("run", "ais_chains", 0);
  r.ais_temps = c.get_count("run", "ais_temps", 0);
  if (r.ais_chains == 0) r.ais_chains = r.chains;
  if (r.ais_temps == 0) r.ais_temps = std::max<std::size_t>(2, r.sweeps);
  r.mbar_batch_sweeps = detail::positive(c, "run", "mbar_batch_sweeps", r.mbar_batch_sweeps);
  r.seed = c.get_u64("run", "seed", r.seed);
  const auto th = c.get_count("run", "threads", 0);
  r.threads = th == 0 ? default_threads() : static_cast<unsigned>(th);
  r.out = c.get_string("run", "out", r.out);

  auto& s = e.sweep;
  s.ks = c.get_count_list("sweep", "ks", s.ks);
  for (auto kk : s.ks)
    if (kk < 2) throw ConfigError(c.line_of("sweep", "ks"), "sweep", "ks", "every K must be >= 2");
  s.bootstrap = detail::positive(c, "sweep", "bootstrap", s.bootstrap);
  s.resample = detail::positive(c, "sweep", "resample", s.resample);
  s.methods = detail::methods_from(c, "sweep", "methods", s.methods);
  for (Method mm : s.methods)
    if (mm != Method::kRts && mm != Method::kTs && mm != Method::kTiRiemann && mm != Method::kTiTrap &&
        mm != Method::kTiRb)
      throw ConfigError(c.line_of("sweep", "methods"), "sweep", "methods",
                        "bootstrap supports RTS, TS, TI_RIEMANN, TI_TRAP and TI_RB only");

  auto& h = e.hmc;
  h.pilot = detail::positive(c, "hmc", "pilot", h.pilot);
  h.warmup = c.get_count("hmc", "warmup", h.warmup);
  h.batches = detail::positive(c, "hmc", "batches", h.batches);
  h.batch_size = detail::positive(c, "hmc", "batch_size", h.batch_size);
  h.eps_init = detail::positive_real(c, "hmc", "eps_init", h.eps_init);
  h.verify = c.get_count("hmc", "verify", h.verify);

  auto& t = e.train;
  t.data = c.get_string("train", "data", "");
  if (!t.data.empty()) detail::require_file(c, "train", "data", t.data);
  t.val_data = c.get_string("train", "val_data", "");
  if (!t.val_data.empty()) detail::require_file(c, "train", "val_data", t.val_data);
  t.rows = detail::positive(c, "train", "rows", t.rows);
  t.val_fraction = c.get_double("train", "val_fraction", t.val_fraction);
  if (!(t.val_fraction >= 0.0 && t.val_fraction < 1.0))
    throw ConfigError(c.line_of("train", "val_fraction"), "train", "val_fraction", "must be in [0, 1)");
  t.visible = detail::positive(c, "train", "visible", t.visible);
  t.prototypes = detail::positive(c, "train", "prototypes", t.prototypes);
  t.flip = c.get_double("train", "flip", t.flip);
  t.hidden = detail::positive(c, "train", "hidden", t.hidden);
  t.params = c.get_string("train", "params", "");
  if (!t.params.empty()) detail::require_file(c, "train", "params", t.params);
  auto& tc = t.cfg;
  tc.n_chains = detail::positive(c, "train", "chains", tc.n_chains);
  tc.sweeps_per_update = detail::positive(c, "train", "sweeps_per_update", tc.sweeps_per_update);
  const auto tk = c.get_int("train", "K", static_cast<std::int64_t>(tc.k));
  if (tk < 2) throw ConfigError(c.line_of("train", "K"), "train", "K", "K >= 2 required");
  tc.k = static_cast<std::size_t>(tk);
  tc.prior_exponent = c.get_double("train", "lambda", tc.prior_exponent);
  tc.alpha = c.get_double("train", "alpha", tc.alpha);
  if (!(tc.alpha > 0.0 && tc.alpha <= 1.0))
    throw ConfigError(c.line_of("train", "alpha"), "train", "alpha", "must be in (0, 1]");
  tc.learning_rate = c.get_double("train", "lr", tc.learning_rate);
  tc.momentum = c.get_double("train", "momentum", tc.momentum);
  tc.epochs = detail::positive(c, "train", "epochs", tc.epochs);
  tc.batch_size = detail::positive(c, "train", "batch", tc.batch_size);
  tc.cd1_pretrain_epochs = c.get_count("train", "cd1_epochs", tc.cd1_pretrain_epochs);
  tc.cd1_learning_rate = c.get_double("train", "cd1_lr", tc.cd1_learning_rate);
  tc.init_iters = c.get_count("train", "init_iters", tc.init_iters);
  tc.init_sweeps = detail::positive(c, "train", "init_sweeps", tc.init_sweeps);
  tc.checkpoint_every = c.get_count("train", "checkpoint_every", 0);

  if (ov.seed) r.seed = *ov.seed;
  if (ov.out) r.out = *ov.out;
  if (ov.threads) r.threads = *ov.threads == 0 ? default_threads() : *ov.threads;
  tc.threads = r.threads;
  if (tc.checkpoint_every > 0) tc.checkpoint_dir = std::filesystem::path(r.out) / "checkpoints";
  try {
    tc.validate();
  } catch (const std::invalid_argument& ex) {
    throw ConfigError(c.line_of("train", ""), "train", "", ex.what());
  }
  return e;
}

// ---------------------------------------------------------------- output

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

inline std::ofstream open_out(const std::filesystem::path& dir, const std::string& name) {
  std::filesystem::create_directories(dir);
  std::ofstream os(dir / name);
  if (!os) throw std::runtime_error("cannot write " + (dir / name).string());
  return os;
}

inline Json estimate_json(const LogZEstimate& e, const std::vector<double>& betas, std::optional<double> truth) {
  Json j;
  j["method"] = std::string(method_name(e.method));
  j["betas"] = betas;
  j["log_z"] = e.log_z;
  j["log_z_final"] = e.log_z_final();
  j["n_samples"] = e.n_samples;
  j["warning"] = e.warning;
  if (e.bias_est) j["bias"] = *e.bias_est;
  if (e.var_est) j["variance"] = *e.var_est;
  if (truth) j["error"] = e.log_z_final() - *truth;
  return j;
}

// ---------------------------------------------------------------- models

struct RbmSetup {
  RbmParams params;
  BaseBernoulli base;
  std::optional<double> truth;
  Dataset data;
};

// Oracle enumeration is run automatically up to this many units on the
// smaller side; the oracle command accepts up to 25.
inline constexpr std::size_t kAutoOracleBits = 20;

inline RbmSetup build_rbm(const ModelSpec& m) {
  RbmParams p = m.from_file ? load_rbm(m.params_path) : RbmParams::random(m.visible, m.hidden, m.model_seed, m.scale);
  Dataset data;
  if (!m.data_path.empty()) {
    data = binarize(load_idx(m.data_path), m.threshold);
    if (static_cast<std::size_t>(data.cols()) != p.num_visible())
      throw std::runtime_error("data width " + std::to_string(data.cols()) + " does not match " +
                               std::to_string(p.num_visible()) + " visible units");
  } else if (!m.uniform_base) {
    if (p.num_hidden() > RbmExactSampler::kMaxHidden)
      throw std::runtime_error("base = data without a data file needs at most 20 hidden units");
    Rng rng = make_rng(m.model_seed, Stream::kData);
    data = RbmExactSampler(p).sample_visible(m.data_rows, rng);
  }
  BaseBernoulli base = m.uniform_base ? BaseBernoulli::uniform(p.num_visible()) : base_from_data(data);
  std::optional<double> truth;
  if (std::min(p.num_visible(), p.num_hidden()) <= kAutoOracleBits) truth = rbm_exact_log_z(p);
  return {std::move(p), std::move(base), truth, std::move(data)};
}

inline GmmTarget build_gmm_target(const ModelSpec& m) {
  return GmmTarget::two_mode(m.dim, m.separation, m.component_variance, m.prior_variance);
}

inline AdaptiveHmcOptions hmc_options(const HmcSpec& h) {
  AdaptiveHmcOptions ao;
  ao.endpoint.batches = h.batches;
  ao.endpoint.batch_size = h.batch_size;
  ao.endpoint.eps_init = h.eps_init;
  ao.pilot.proposals_per_bin = h.pilot;
  ao.pilot.warmup_per_bin = h.warmup;
  return ao;
}

inline DiscreteModel build_toy(const ModelSpec& m) {
  if (m.toy_kind == "flat") {
    // f equals the normalized base, so every log Z_k is exactly zero.
    std::vector<double> lp(m.toy_states, -std::log(static_cast<double>(m.toy_states)));
    return DiscreteModel(lp, lp);
  }
  return DiscreteModel::two_state(m.toy_z);
}

inline Json model_json(const ModelSpec& m) {
  Json j;
  switch (m.kind) {
    case ModelKind::kRbm:
      j["type"] = "rbm";
      if (m.from_file) {
        j["params"] = m.params_path;
      } else {
        j["visible"] = m.visible;
        j["hidden"] = m.hidden;
        j["seed"] = m.model_seed;
        j["scale"] = m.scale;
      }
      j["base"] = m.uniform_base ? "uniform" : "data";
      break;
    case ModelKind::kGmm:
      j["type"] = "gmm";
      j["dim"] = m.dim;
      j["separation"] = m.separation;
      j["component_variance"] = m.component_variance;
      j["prior_variance"] = m.prior_variance;
      if (m.adaptive) j["stepsize"] = "adaptive";
      else j["stepsize"] = m.stepsize;
      break;
    case ModelKind::kToy:
      j["type"] = "toy";
      j["kind"] = m.toy_kind;
      if (m.toy_kind == "two_state") j["z"] = m.toy_z;
      else j["states"] = m.toy_states;
      break;
  }
  return j;
}

// Calls fn(model, truth, target_sampler) with the configured model. The
// sampler draws exact target states, or is empty when none is available.
template <class Fn>
void with_model(const ExperimentConfig& e, const TemperatureLadder& ladder, std::ostream& log, Fn&& fn) {
  const auto& m = e.model;
  if (m.kind == ModelKind::kRbm) {
    auto setup = build_rbm(m);
    RbmModel model(setup.params, setup.base);
    std::function<std::vector<RbmState>(std::size_t, Rng&)> sampler;
    if (setup.params.num_hidden() <= RbmExactSampler::kMaxHidden) {
      auto exact = std::make_shared<RbmExactSampler>(setup.params);
      sampler = [exact](std::size_t n, Rng& rng) {
        std::vector<RbmState> out;
        for (std::size_t i = 0; i < n; ++i) out.push_back(exact->sample(rng));
        return out;
      };
    }
    fn(model, setup.truth, sampler, &setup.params);
  } else if (m.kind == ModelKind::kGmm) {
    const auto target = build_gmm_target(m);
    std::optional<StepSizeSchedule> steps;
    if (m.adaptive) {
      const auto ao = hmc_options(e.hmc);
      auto a = tune_adaptive_hmc(target, ladder.betas(), e.run.seed, ao);
      log << "adaptive HMC: eps_min " << a.endpoints.eps_min << ", eps_max " << a.endpoints.eps_max << '\n';
      steps = a.schedule;
    } else {
      steps = StepSizeSchedule::fixed(m.stepsize);
    }
    GmmModel model(target, *steps);
    std::function<std::vector<Eigen::VectorXd>(std::size_t, Rng&)> sampler =
        [target](std::size_t n, Rng& rng) {
          std::vector<double> w(target.weights);
          double sw = 0.0;
          for (double x : w) sw += x;
          for (double& x : w) x /= sw;
          std::vector<Eigen::VectorXd> out;
          const double sd = std::sqrt(target.component_scale);
          for (std::size_t i = 0; i < n; ++i) {
            Eigen::VectorXd x = target.means[sample_index(w, rng)];
            for (Eigen::Index d = 0; d < x.size(); ++d) x(d) += sd * standard_normal(rng);
            out.push_back(std::move(x));
          }
          return out;
        };
    fn(model, std::optional<double>(gmm_analytic_log_z(target)), sampler, static_cast<const RbmParams*>(nullptr));
  } else {
    const auto model = build_toy(m);
    std::function<std::vector<std::size_t>(std::size_t, Rng&)> sampler = [model](std::size_t n, Rng& rng) {
      std::vector<std::size_t> out;
      for (std::size_t i = 0; i < n; ++i) out.push_back(model.sample_target(rng));
      return out;
    };
    fn(model, std::optional<double>(model.log_z(1.0)), sampler, static_cast<const RbmParams*>(nullptr));
  }
}

// ---------------------------------------------------------------- estimate

inline bool needs(const std::vector<Method>& ms, Method m) {
  return std::find(ms.begin(), ms.end(), m) != ms.end();
}

template <TemperedModel M>
Json run_estimate(const M& model, const ExperimentConfig& e, TemperatureLadder& ladder, std::optional<double> truth,
                  const std::function<std::vector<typename M::State>(std::size_t, Rng&)>& sampler,
                  const std::filesystem::path& out, std::ostream& log) {
  const auto& r = e.run;
  const bool want_mixed = needs(r.methods, Method::kMixedMle);
  const bool want_log = want_mixed || needs(r.methods, Method::kMbar);
  SampleLog samples(ladder.size(), want_mixed);

  InitOptions io;
  io.max_iters = r.init_iters;
  io.sweeps_per_iter = r.init_sweeps;
  io.threads = r.threads;
  io.log = want_mixed ? &samples : nullptr;
  io.thin = r.thin;
  InitReport init;
  auto chains = make_chains(model, ladder, r.chains, r.seed, Stream::kInit);
  if (r.init_iters > 0) init = init_iterations(model, ladder, chains, io);
  log << "init: " << init.iterations_used << " iterations, max |r - c| = " << init.max_abs_gap
      << (init.converged ? " (converged)" : " (not converged)") << '\n';

  std::optional<std::vector<ChainState<typename M::State>>> stoch_chains;
  if (needs(r.methods, Method::kMbarStoch)) stoch_chains = chains;

  RunOptions ro;
  ro.threads = r.threads;
  ro.log = want_log ? &samples : nullptr;
  ro.thin = r.thin;
  std::vector<RaoBlackwellStats> per_chain;
  ro.per_chain = &per_chain;
  const auto stats = run_chains(model, ladder, chains, r.sweeps, ro);

  Json ests = Json::array();
  for (Method m : r.methods) {
    LogZEstimate est;
    std::vector<double> betas = ladder.betas();
    switch (m) {
      case Method::kRts:
        est = rts(ladder, stats);
        if (per_chain.size() >= 2) {
          const auto bv = rts_bias_variance(stats, per_chain);
          est.bias_est = bv.bias;
          est.var_est = bv.variance;
        }
        break;
      case Method::kTs: est = ts_counts(ladder, stats); break;
      case Method::kTiRiemann: est = ti(ladder, stats, TiRule::kRiemann); break;
      case Method::kTiTrap: est = ti(ladder, stats, TiRule::kTrapezoid); break;
      case Method::kTiRb: est = ti_rb(ladder, stats); break;
      case Method::kMbar: {
        // MBAR pools only the fixed-Zhat main run.
        SampleLog main_only(ladder.size(), false);
        main_only.add_snapshot(ladder.log_zhat());
        for (const auto& rec : samples.records())
          if (rec.zhat_version == samples.snapshots().size() - 1) main_only.add(rec.delta, rec.beta_index, 0);
        est = mbar(main_only, ladder);
        break;
      }
      case Method::kMbarStoch: {
        const std::size_t batches = std::max<std::size_t>(1, r.sweeps / r.mbar_batch_sweeps);
        est = run_stochastic_mbar(model, ladder, *stoch_chains, batches, r.mbar_batch_sweeps, ro);
        break;
      }
      case Method::kMixedMle: est = mixed_zhat_mle(samples, ladder); break;
      case Method::kSd: est = stationary_estimate(ladder, stats, StationaryMode::kSd); break;
      case Method::kRsd: est = stationary_estimate(ladder, stats, StationaryMode::kRsd); break;
      case Method::kAis: {
        AnnealOptions ao;
        ao.threads = r.threads;
        const auto run = ais(model, r.ais_temps, r.ais_chains, r.seed, ao);
        est = anneal_estimate(run);
        betas = run.betas;
        break;
      }
      case Method::kRaise: {
        if (!sampler) throw std::runtime_error("RAISE needs exact target samples; this model has no exact sampler");
        Rng rng = make_rng(r.seed, Stream::kReverse, r.ais_chains);
        const auto starts = sampler(r.ais_chains, rng);
        AnnealOptions ao;
        ao.threads = r.threads;
        const auto run = raise(model, r.ais_temps, std::span<const typename M::State>(starts), r.seed, ao);
        est = anneal_estimate(run);
        betas = run.betas;
        break;
      }
    }
    log << method_name(m) << ": log Z = " << std::setprecision(10) << est.log_z_final();
    if (truth) log << " (error " << est.log_z_final() - *truth << ")";
    log << '\n';
    ests.push_back(estimate_json(est, betas, truth));
  }

  {
    auto os = open_out(out, "stats.csv");
    write_stats_csv(os, ladder, stats);
  }
  {
    auto os = open_out(out, "transitions.csv");
    write_transitions_csv(os, empirical_transition_matrix(stats));
  }
  if (r.init_iters > 0) {
    auto os = open_out(out, "init.csv");
    write_init_trajectory_csv(os, ladder, init);
  }

  Json j;
  j["K"] = ladder.size();
  j["betas"] = ladder.betas();
  j["log_r"] = ladder.log_r();
  j["log_zhat"] = ladder.log_zhat();
  j["truth"] = truth ? Json(*truth) : Json(nullptr);
  j["init"] = {{"iterations", init.iterations_used},
               {"converged", init.converged},
               {"max_abs_gap", init.max_abs_gap},
               {"threshold", init.threshold}};
  j["budget"] = {{"chains", r.chains},
                 {"sweeps", r.sweeps},
                 {"init_iters", r.init_iters},
                 {"init_sweeps", r.init_sweeps},
                 {"ais_chains", r.ais_chains},
                 {"ais_temps", r.ais_temps}};
  j["estimates"] = std::move(ests);
  return j;
}

inline int cmd_estimate(const ExperimentConfig& e, std::ostream& log) {
  const std::filesystem::path out = e.run.out;
  auto ladder = e.ladder.build();
  Json result;
  with_model(e, ladder, log, [&](const auto& model, std::optional<double> truth, const auto& sampler,
                                 const RbmParams* params) {
    if (params) {
      std::filesystem::create_directories(out);
      save_rbm(out / "params.rbm", *params);
    }
    result = run_estimate(model, e, ladder, truth, sampler, out, log);
  });
  Json j;
  j["format"] = "rts-estimates";
  j["version"] = 1;
  j["timestamp"] = utc_timestamp();
  j["command"] = "estimate";
  j["seed"] = e.run.seed;
  j["model"] = model_json(e.model);
  for (auto& [k, v] : result.items()) j[k] = v;
  auto os = open_out(out, "estimates.json");
  os << j.dump(2) << '\n';
  log << "wrote " << (out / "estimates.json").string() << '\n';
  return 0;
}

// ---------------------------------------------------------------- oracle

inline int cmd_oracle(const std::string& params_path, std::ostream& out) {
  const auto p = load_rbm(params_path);
  const double lz = rbm_exact_log_z(p);
  std::ostringstream os;
  os << std::setprecision(15) << lz;
  out << os.str() << '\n';
  return 0;
}

// ---------------------------------------------------------------- sweep-k

// Builds Rao-Blackwell statistics from a resample of logged records.
inline RaoBlackwellStats stats_from_records(const TemperatureLadder& ladder, const SampleLog& samples,
                                            std::span<const std::size_t> idx) {
  const std::size_t k = ladder.size();
  RaoBlackwellStats st(k);
  std::vector<double> lq(k), q(k);
  for (auto i : idx) {
    const auto& rec = samples.records()[i];
    log_beta_conditional(ladder, rec.delta, lq);
    for (std::size_t j = 0; j < k; ++j) q[j] = std::exp(lq[j]);
    st.add(rec.beta_index, rec.beta_index, rec.delta, lq, q);
  }
  return st;
}

inline LogZEstimate estimate_from_stats(Method m, const TemperatureLadder& ladder, const RaoBlackwellStats& st) {
  switch (m) {
    case Method::kRts: return rts(ladder, st);
    case Method::kTs: return ts_counts(ladder, st);
    case Method::kTiRiemann: return ti(ladder, st, TiRule::kRiemann);
    case Method::kTiTrap: return ti(ladder, st, TiRule::kTrapezoid);
    case Method::kTiRb: return ti_rb(ladder, st);
    default: throw std::invalid_argument("method not available from statistics alone");
  }
}

inline int cmd_sweep_k(const ExperimentConfig& e, std::ostream& log) {
  const std::filesystem::path out = e.run.out;
  auto os = open_out(out, "sweep.csv");
  os.precision(17);
  os << "K,method,rmse,mean,bias,sd,n_boot,resample,truth,truth_source\n";
  for (std::size_t ki = 0; ki < e.sweep.ks.size(); ++ki) {
    const std::size_t kk = e.sweep.ks[ki];
    auto ladder = e.ladder.build(kk);
    with_model(e, ladder, log, [&](const auto& model, std::optional<double> truth, const auto&, const RbmParams*) {
      InitOptions io;
      io.max_iters = e.run.init_iters;
      io.sweeps_per_iter = e.run.init_sweeps;
      io.threads = e.run.threads;
      auto chains = make_chains(model, ladder, e.run.chains, e.run.seed, Stream::kInit);
      if (e.run.init_iters > 0) init_iterations(model, ladder, chains, io);
      SampleLog samples(kk, false);
      RunOptions ro;
      ro.threads = e.run.threads;
      ro.log = &samples;
      ro.thin = e.run.thin;
      const auto full = run_chains(model, ladder, chains, e.run.sweeps, ro);
      std::string source = "oracle";
      if (!truth) {
        truth = rts(ladder, full).log_z_final();
        source = "rts_full";
      }
      Rng rng = make_rng(e.run.seed, Stream::kBootstrap, kk);
      const std::size_t n = samples.size();
      std::vector<std::vector<double>> draws(e.sweep.methods.size());
      std::vector<std::size_t> idx(e.sweep.resample);
      for (std::size_t b = 0; b < e.sweep.bootstrap; ++b) {
        for (auto& i : idx) i = std::min(n - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)));
        const auto st = stats_from_records(ladder, samples, idx);
        for (std::size_t mi = 0; mi < e.sweep.methods.size(); ++mi)
          draws[mi].push_back(estimate_from_stats(e.sweep.methods[mi], ladder, st).log_z_final());
      }
      for (std::size_t mi = 0; mi < e.sweep.methods.size(); ++mi) {
        const double mu = mean(draws[mi]);
        double mse = 0.0;
        for (double d : draws[mi]) mse += (d - *truth) * (d - *truth);
        mse /= static_cast<double>(draws[mi].size());
        const double sd = draws[mi].size() > 1 ? std::sqrt(sample_variance(draws[mi])) : 0.0;
        os << kk << ',' << method_name(e.sweep.methods[mi]) << ',' << std::sqrt(mse) << ',' << mu << ','
           << mu - *truth << ',' << sd << ',' << e.sweep.bootstrap << ',' << e.sweep.resample << ',' << *truth
           << ',' << source << '\n';
        log << "K=" << kk << ' ' << method_name(e.sweep.methods[mi]) << " RMSE " << std::sqrt(mse) << '\n';
      }
    });
  }
  log << "wrote " << (out / "sweep.csv").string() << '\n';
  return 0;
}

// ---------------------------------------------------------------- hmc-tune

inline int cmd_hmc_tune(const ExperimentConfig& e, std::ostream& log) {
  if (e.model.kind != ModelKind::kGmm) throw std::runtime_error("hmc-tune needs [model] type = gmm");
  const std::filesystem::path out = e.run.out;
  const auto target = build_gmm_target(e.model);
  const auto ladder = e.ladder.build();
  const auto ao = hmc_options(e.hmc);
  const auto a = tune_adaptive_hmc(target, ladder.betas(), e.run.seed, ao);
  {
    auto os = open_out(out, "hmc.csv");
    write_hmc_table_csv(os, ladder.betas(), a);
  }
  log << "eps_min " << a.endpoints.eps_min << " (beta = 1), eps_max " << a.endpoints.eps_max << " (beta = 0)"
      << (a.endpoints.swapped ? " [swapped]" : "") << '\n';
  if (e.hmc.verify > 0) {
    const double acc1 = measure_acceptance(target, 1.0, a.endpoints.eps_min, 200, e.hmc.verify, e.run.seed);
    const double acc0 = measure_acceptance(target, 0.0, a.endpoints.eps_max, 200, e.hmc.verify, e.run.seed);
    log << "endpoint acceptance: beta=1 " << acc1 << ", beta=0 " << acc0 << '\n';
  }
  log << "fit " << (a.accept_model.converged ? "converged" : "did not converge") << " in "
      << a.accept_model.iterations << " iterations\n";
  log << "wrote " << (out / "hmc.csv").string() << '\n';
  return 0;
}

// ---------------------------------------------------------------- train

inline int cmd_train(const ExperimentConfig& e, std::ostream& log) {
  const std::filesystem::path out = e.run.out;
  const auto& t = e.train;
  Dataset train, val;
  if (!t.data.empty()) {
    train = binarize(load_idx(t.data));
    if (!t.val_data.empty()) val = binarize(load_idx(t.val_data));
  } else {
    const auto all = prototype_dataset(t.rows, t.visible, t.prototypes, t.flip, e.run.seed);
    const auto n_val = static_cast<Eigen::Index>(std::floor(t.val_fraction * static_cast<double>(t.rows)));
    train = all.topRows(all.rows() - n_val);
    val = all.bottomRows(n_val);
  }
  std::optional<RbmParams> start;
  if (!t.params.empty()) start = load_rbm(t.params);
  const auto& cfg = t.cfg;
  if (cfg.checkpoint_every > 0) std::filesystem::create_directories(cfg.checkpoint_dir);
  try {
    auto res = train_with_tracking(cfg, train, val, t.hidden, e.run.seed, std::move(start));
    {
      auto os = open_out(out, "trace.csv");
      write_trace_csv(os, res.trace);
    }
    save_rbm(out / "final.rbm", res.params);
    const auto& last = res.trace.records.back();
    log << "updates " << res.trace.records.size() << ", final log Zhat_K " << last.log_zhat_k << ", train LL "
        << last.train_ll << ", val LL " << last.val_ll << '\n';
    if (res.trace.skipped_updates) log << "skipped Zhat updates: " << res.trace.skipped_updates << '\n';
    if (res.trace.gradient_fallbacks) log << "gradient fallbacks: " << res.trace.gradient_fallbacks << '\n';
  } catch (const TrainingDiverged& ex) {
    auto os = open_out(out, "trace.csv");
    write_trace_csv(os, ex.trace());
    throw;
  }
  log << "wrote " << (out / "trace.csv").string() << '\n';
  return 0;
}

}  // namespace rts::app
