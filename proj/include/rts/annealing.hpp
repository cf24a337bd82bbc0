#pragma once

// Annealed importance sampling baselines: forward AIS from the base to the
// target and reverse AIS (RAISE) from target samples back to the base.

#include <cmath>
#include <cstdint>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

#include "rts/core.hpp"
#include "rts/estimators.hpp"
#include "rts/numeric.hpp"
#include "rts/parallel.hpp"
#include "rts/random.hpp"

namespace rts {

enum class AnnealDirection { kForward, kReverse };

struct AnnealRun {
  std::vector<double> log_weights;
  AnnealDirection direction = AnnealDirection::kForward;
  std::size_t n_temps = 0;
  std::size_t sweeps_per_temp = 1;
  std::vector<double> betas;
  // level_log_weights[k][c]: chain c's log weight accumulated up to level k.
  // Forward: an estimate of log(Z_k / Z_1). Reverse: of log(Z_k / Z_K).
  std::vector<std::vector<double>> level_log_weights;

  std::size_t n_chains() const { return log_weights.size(); }
  std::uint64_t total_sweeps() const {
    return static_cast<std::uint64_t>(n_chains()) * (n_temps - 1) * sweeps_per_temp;
  }
};

struct AnnealOptions {
  std::size_t sweeps_per_temp = 1;
  unsigned threads = default_threads();
};

namespace detail {

inline void check_anneal(std::size_t n_temps, std::size_t sweeps_per_temp) {
  if (n_temps < 2) throw std::invalid_argument("annealing needs at least two temperatures");
  if (sweeps_per_temp == 0) throw std::invalid_argument("sweeps_per_temp must be positive");
}

}  // namespace detail

// Forward AIS on a uniform beta grid. Delta is evaluated at the state before
// each transition: log w = sum_k (b_k - b_{k-1}) Delta(x_{k-1}).
template <TemperedModel M>
AnnealRun ais(const M& model, std::size_t n_temps, std::size_t n_chains, std::uint64_t seed,
              const AnnealOptions& opt = {}) {
  detail::check_anneal(n_temps, opt.sweeps_per_temp);
  if (n_chains == 0) throw std::invalid_argument("AIS needs at least one chain");
  AnnealRun run;
  run.direction = AnnealDirection::kForward;
  run.n_temps = n_temps;
  run.sweeps_per_temp = opt.sweeps_per_temp;
  run.betas = TemperatureLadder::make_betas(n_temps, Spacing::kUniform);
  run.log_weights.assign(n_chains, 0.0);
  run.level_log_weights.assign(n_temps, std::vector<double>(n_chains, 0.0));
  parallel_for(n_chains, opt.threads, [&](std::size_t c) {
    Rng rng = make_rng(seed, Stream::kAnneal, c);
    auto x = model.sample_p1(rng);
    double delta = model.delta(x);
    double lw = 0.0;
    for (std::size_t k = 1; k < n_temps; ++k) {
      lw += (run.betas[k] - run.betas[k - 1]) * delta;
      run.level_log_weights[k][c] = lw;
      for (std::size_t s = 0; s < opt.sweeps_per_temp; ++s)
        delta = model.transition(x, run.betas[k], rng);
    }
    if (!std::isfinite(lw)) throw std::domain_error("AIS produced a non-finite weight");
    run.log_weights[c] = lw;
  });
  return run;
}

// Reverse AIS from caller-supplied target samples down to the base. Weights
// estimate log(Z_1 / Z_K); the resulting log Z_K estimate is biased upward.
template <TemperedModel M>
AnnealRun raise(const M& model, std::size_t n_temps,
                std::span<const typename M::State> start_states, std::uint64_t seed,
                const AnnealOptions& opt = {}) {
  detail::check_anneal(n_temps, opt.sweeps_per_temp);
  if (start_states.empty()) throw std::invalid_argument("RAISE requires target start states");
  const std::size_t n_chains = start_states.size();
  AnnealRun run;
  run.direction = AnnealDirection::kReverse;
  run.n_temps = n_temps;
  run.sweeps_per_temp = opt.sweeps_per_temp;
  run.betas = TemperatureLadder::make_betas(n_temps, Spacing::kUniform);
  run.log_weights.assign(n_chains, 0.0);
  run.level_log_weights.assign(n_temps, std::vector<double>(n_chains, 0.0));
  parallel_for(n_chains, opt.threads, [&](std::size_t c) {
    Rng rng = make_rng(seed, Stream::kReverse, c);
    auto x = start_states[c];
    double delta = model.delta(x);
    double lw = 0.0;
    for (std::size_t k = n_temps - 1; k-- > 0;) {
      lw += (run.betas[k] - run.betas[k + 1]) * delta;
      run.level_log_weights[k][c] = lw;
      for (std::size_t s = 0; s < opt.sweeps_per_temp; ++s)
        delta = model.transition(x, run.betas[k], rng);
    }
    if (!std::isfinite(lw)) throw std::domain_error("RAISE produced a non-finite weight");
    run.log_weights[c] = lw;
  });
  return run;
}

struct AnnealAggregate {
  double log_z = 0.0;
  double ess = 0.0;
};

// Log-mean-exp of the weights (negated for reverse runs) and the effective
// sample size (sum w)^2 / sum w^2.
inline AnnealAggregate anneal_aggregate(const AnnealRun& run) {
  if (run.log_weights.empty()) throw std::invalid_argument("annealing run has no weights");
  const double lme = log_mean_exp(run.log_weights);
  const double lse1 = log_sum_exp(run.log_weights);
  std::vector<double> twice(run.log_weights.size());
  for (std::size_t i = 0; i < twice.size(); ++i) twice[i] = 2.0 * run.log_weights[i];
  const double ess = std::exp(2.0 * lse1 - log_sum_exp(twice));
  return {run.direction == AnnealDirection::kForward ? lme : -lme, ess};
}

// Per-level log Z estimates on the annealing grid.
inline LogZEstimate anneal_estimate(const AnnealRun& run) {
  std::vector<double> lz(run.n_temps);
  if (run.direction == AnnealDirection::kForward) {
    for (std::size_t k = 0; k < run.n_temps; ++k) lz[k] = log_mean_exp(run.level_log_weights[k]);
  } else {
    const double top = -log_mean_exp(run.level_log_weights[0]);
    for (std::size_t k = 0; k < run.n_temps; ++k)
      lz[k] = top + log_mean_exp(run.level_log_weights[k]);
  }
  auto est = detail::finish(run.direction == AnnealDirection::kForward ? Method::kAis : Method::kRaise,
                            std::move(lz), run.total_sweeps());
  return est;
}

inline void write_anneal_weights_csv(std::ostream& os, const AnnealRun& run) {
  os.precision(17);
  os << "chain,direction,log_weight\n";
  for (std::size_t c = 0; c < run.log_weights.size(); ++c)
    os << c << ',' << (run.direction == AnnealDirection::kForward ? "forward" : "reverse") << ','
       << run.log_weights[c] << '\n';
}

}  // namespace rts
