#pragma once

// Simulated-tempering chains over a TemperatureLadder. Each sweep moves x at
// the current inverse temperature, then redraws the temperature index from
// q(beta | x) and accumulates the Rao-Blackwellized statistics.

#include <cmath>
#include <cstdint>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

#include "rts/core.hpp"
#include "rts/estimators.hpp"
#include "rts/parallel.hpp"
#include "rts/random.hpp"
#include "rts/stats.hpp"

namespace rts {

template <class State>
struct ChainState {
  State x;
  std::size_t beta_index = 0;
  Rng rng;
  std::uint64_t stream_id = 0;
};

namespace detail {

struct SweepScratch {
  explicit SweepScratch(std::size_t k) : log_q(k), probs(k) {}
  std::vector<double> log_q;
  std::vector<double> probs;
};

template <TemperedModel M>
double sweep(const M& model, const TemperatureLadder& ladder, ChainState<typename M::State>& s,
             RaoBlackwellStats& stats, SweepScratch& scratch) {
  const std::size_t from = s.beta_index;
  const double delta = model.transition(s.x, ladder.beta(from), s.rng);
  if (!std::isfinite(delta)) throw std::domain_error("model produced a non-finite Delta");
  log_beta_conditional(ladder, delta, scratch.log_q);
  for (std::size_t k = 0; k < scratch.probs.size(); ++k) scratch.probs[k] = std::exp(scratch.log_q[k]);
  const std::size_t to = sample_index(scratch.probs, s.rng);
  stats.add(from, to, delta, scratch.log_q, scratch.probs);
  s.beta_index = to;
  return delta;
}

inline std::size_t uniform_index(Rng& rng, std::size_t k) {
  const auto i = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(k));
  return i < k ? i : k - 1;
}

}  // namespace detail

// One x-transition at the current beta followed by one beta draw.
template <TemperedModel M>
void gibbs_sweep(const M& model, const TemperatureLadder& ladder, ChainState<typename M::State>& s,
                 RaoBlackwellStats& stats) {
  if (s.beta_index >= ladder.size()) throw std::out_of_range("chain beta index out of range");
  if (stats.num_temps() != ladder.size()) throw std::invalid_argument("stats do not match ladder");
  detail::SweepScratch scratch(ladder.size());
  detail::sweep(model, ladder, s, stats, scratch);
}

// Chains start from exact base draws at a uniformly random temperature.
template <TemperedModel M>
std::vector<ChainState<typename M::State>> make_chains(const M& model,
                                                       const TemperatureLadder& ladder,
                                                       std::size_t n_chains, std::uint64_t seed,
                                                       Stream stream = Stream::kMain) {
  std::vector<ChainState<typename M::State>> chains;
  chains.reserve(n_chains);
  for (std::size_t c = 0; c < n_chains; ++c) {
    Rng rng = make_rng(seed, stream, c);
    auto x = model.sample_p1(rng);
    const std::size_t b = detail::uniform_index(rng, ladder.size());
    chains.push_back({std::move(x), b, std::move(rng), c});
  }
  return chains;
}

struct RunOptions {
  unsigned threads = default_threads();
  // When set, every `thin`-th sweep of each chain is appended here.
  SampleLog* log = nullptr;
  std::size_t thin = 1;
  // When set, receives one statistics object per chain (replicates).
  std::vector<RaoBlackwellStats>* per_chain = nullptr;
};

// Advances every chain by n_sweeps and returns the pooled statistics. Chains
// are merged in index order, so the result is bit-identical for any thread
// count.
template <TemperedModel M>
RaoBlackwellStats run_chains(const M& model, const TemperatureLadder& ladder,
                             std::vector<ChainState<typename M::State>>& chains,
                             std::size_t n_sweeps, const RunOptions& opt = {}) {
  if (chains.empty()) throw std::invalid_argument("run_chains needs at least one chain");
  if (n_sweeps == 0) throw std::invalid_argument("run_chains needs at least one sweep");
  const std::size_t k = ladder.size();
  const bool with_cond = opt.log && opt.log->has_conditionals();
  const std::size_t thin = opt.thin == 0 ? 1 : opt.thin;
  std::vector<RaoBlackwellStats> stats(chains.size(), RaoBlackwellStats(k));
  std::vector<SampleLog> logs;
  std::size_t version = 0;
  if (opt.log) {
    version = opt.log->add_snapshot(ladder.log_zhat());
    logs.assign(chains.size(), SampleLog(k, with_cond));
  }
  parallel_for(chains.size(), opt.threads, [&](std::size_t c) {
    auto& s = chains[c];
    if (s.beta_index >= k) throw std::out_of_range("chain beta index out of range");
    detail::SweepScratch scratch(k);
    for (std::size_t t = 0; t < n_sweeps; ++t) {
      const std::size_t from = s.beta_index;
      const double delta = detail::sweep(model, ladder, s, stats[c], scratch);
      if (opt.log && (t + 1) % thin == 0)
        logs[c].add(delta, from, version, with_cond ? std::span<const double>(scratch.probs)
                                                    : std::span<const double>());
    }
  });
  RaoBlackwellStats pooled(k);
  for (std::size_t c = 0; c < chains.size(); ++c) {
    pooled.merge(stats[c]);
    if (opt.log)
      for (std::size_t i = 0; i < logs[c].size(); ++i)
        opt.log->add(logs[c].records()[i].delta, logs[c].records()[i].beta_index, version,
                     with_cond ? logs[c].conditional(i) : std::span<const double>());
  }
  if (opt.per_chain) *opt.per_chain = std::move(stats);
  return pooled;
}

template <class State>
struct ChainRun {
  RaoBlackwellStats pooled;
  std::vector<ChainState<State>> chains;
};

template <TemperedModel M>
ChainRun<typename M::State> run_chains(const M& model, const TemperatureLadder& ladder,
                                       std::size_t n_chains, std::size_t n_sweeps,
                                       std::uint64_t seed, const RunOptions& opt = {}) {
  if (n_chains == 0) throw std::invalid_argument("run_chains needs at least one chain");
  auto chains = make_chains(model, ladder, n_chains, seed);
  auto pooled = run_chains(model, ladder, chains, n_sweeps, opt);
  return {std::move(pooled), std::move(chains)};
}

struct InitOptions {
  std::size_t max_iters = 10;
  std::size_t sweeps_per_iter = 50;
  // Zero selects the default 0.1 / K.
  double threshold = 0.0;
  unsigned threads = default_threads();
  SampleLog* log = nullptr;
  std::size_t thin = 1;
};

struct InitReport {
  std::size_t iterations_used = 0;
  double max_abs_gap = 0.0;
  bool converged = false;
  double threshold = 0.0;
  // Per iteration: the log Zhat the chains ran under, the resulting c_hat,
  // the raw visit counts and the gap max_k |r_k - c_k|.
  std::vector<std::vector<double>> zhat_trajectory;
  std::vector<std::vector<double>> c_hat_trajectory;
  std::vector<std::vector<std::uint64_t>> count_trajectory;
  std::vector<double> gap_trajectory;
};

inline double max_prior_gap(const TemperatureLadder& ladder, const RaoBlackwellStats& stats) {
  const auto c = stats.c_hat();
  const auto r = ladder.prior();
  return max_abs_diff(r, c);
}

// Alternates short runs with RTS updates of log Zhat until the Rao-Blackwell
// marginal matches the prior. Chains keep their x between iterations and
// restart from fresh uniform temperatures. On success the ladder is left at
// the Zhat that passed the check.
template <TemperedModel M>
InitReport init_iterations(const M& model, TemperatureLadder& ladder,
                           std::vector<ChainState<typename M::State>>& chains,
                           const InitOptions& opt = {}) {
  const double threshold = opt.threshold > 0.0 ? opt.threshold : 0.1 / static_cast<double>(ladder.size());
  InitReport report;
  report.threshold = threshold;
  RunOptions run_opt;
  run_opt.threads = opt.threads;
  run_opt.log = opt.log;
  run_opt.thin = opt.thin;
  for (std::size_t it = 0; it < opt.max_iters; ++it) {
    for (auto& s : chains) s.beta_index = detail::uniform_index(s.rng, ladder.size());
    const auto stats = run_chains(model, ladder, chains, opt.sweeps_per_iter, run_opt);
    const double gap = max_prior_gap(ladder, stats);
    report.zhat_trajectory.push_back(ladder.log_zhat());
    report.c_hat_trajectory.push_back(stats.c_hat());
    report.count_trajectory.push_back(stats.raw_counts());
    report.gap_trajectory.push_back(gap);
    report.iterations_used = it + 1;
    report.max_abs_gap = gap;
    if (gap < threshold) {
      report.converged = true;
      break;
    }
    ladder.set_log_zhat(rts(ladder, stats).log_z);
  }
  return report;
}

template <TemperedModel M>
struct InitRun {
  InitReport report;
  std::vector<ChainState<typename M::State>> chains;
};

template <TemperedModel M>
InitRun<M> init_iterations(const M& model, TemperatureLadder& ladder, std::size_t n_chains,
                           std::uint64_t seed, const InitOptions& opt = {}) {
  auto chains = make_chains(model, ladder, n_chains, seed, Stream::kInit);
  auto report = init_iterations(model, ladder, chains, opt);
  return {std::move(report), std::move(chains)};
}

// Online stochastic MBAR: chains run under the current Zhat and every batch
// of sweeps moves it by gamma_t (c_k / r_k - c_1 / r_1). The final Zhat is
// the estimate. Works on copies; the caller's ladder and chains are untouched.
template <TemperedModel M>
LogZEstimate run_stochastic_mbar(const M& model, const TemperatureLadder& ladder,
                                 std::vector<ChainState<typename M::State>> chains, std::size_t n_batches,
                                 std::size_t sweeps_per_batch, const RunOptions& opt = {},
                                 const StepSchedule& gamma = harmonic_schedule()) {
  if (n_batches == 0) throw std::invalid_argument("stochastic MBAR needs at least one batch");
  TemperatureLadder work = ladder;
  RunOptions ro;
  ro.threads = opt.threads;
  std::uint64_t n = 0;
  for (std::size_t t = 0; t < n_batches; ++t) {
    const auto stats = run_chains(model, work, chains, sweeps_per_batch, ro);
    work.set_log_zhat(mbar_stochastic_step(work, stats, gamma(t + 1)));
    n += stats.n_samples();
  }
  return detail::finish(Method::kMbarStoch, work.log_zhat(), n);
}

struct TransitionMatrix {
  std::size_t k = 0;
  std::vector<double> p;  // row-major
  std::vector<bool> unvisited;
  bool has_unvisited() const {
    for (bool u : unvisited)
      if (u) return true;
    return false;
  }
  double operator()(std::size_t i, std::size_t j) const { return p[i * k + j]; }
};

// Row-normalized sampled beta transitions. Rows never visited are emitted
// as uniform and flagged; no smoothing is applied.
inline TransitionMatrix empirical_transition_matrix(const RaoBlackwellStats& stats) {
  const std::size_t k = stats.num_temps();
  TransitionMatrix m{k, std::vector<double>(k * k), std::vector<bool>(k, false)};
  for (std::size_t i = 0; i < k; ++i) {
    std::uint64_t row = 0;
    for (std::size_t j = 0; j < k; ++j) row += stats.transition_count(i, j);
    for (std::size_t j = 0; j < k; ++j)
      m.p[i * k + j] = row == 0 ? 1.0 / static_cast<double>(k)
                                : static_cast<double>(stats.transition_count(i, j)) /
                                      static_cast<double>(row);
    m.unvisited[i] = row == 0;
  }
  return m;
}

inline void write_stats_csv(std::ostream& os, const TemperatureLadder& ladder,
                            const RaoBlackwellStats& stats) {
  const auto c = stats.c_hat();
  const auto r = ladder.prior();
  os.precision(17);
  os << "k,beta,r,c_hat,raw_count,log_zhat\n";
  for (std::size_t k = 0; k < ladder.size(); ++k)
    os << k << ',' << ladder.beta(k) << ',' << r[k] << ',' << c[k] << ','
       << stats.raw_counts()[k] << ',' << ladder.log_zhat()[k] << '\n';
}

inline void write_init_trajectory_csv(std::ostream& os, const TemperatureLadder& ladder,
                                      const InitReport& report) {
  const auto r = ladder.prior();
  os.precision(17);
  os << "iteration,k,beta,r,c_hat,raw_count,log_zhat\n";
  for (std::size_t it = 0; it < report.zhat_trajectory.size(); ++it)
    for (std::size_t k = 0; k < ladder.size(); ++k)
      os << it << ',' << k << ',' << ladder.beta(k) << ',' << r[k] << ','
         << report.c_hat_trajectory[it][k] << ',' << report.count_trajectory[it][k] << ','
         << report.zhat_trajectory[it][k] << '\n';
}

inline void write_transitions_csv(std::ostream& os, const TransitionMatrix& m) {
  os.precision(17);
  os << "from,to,p,unvisited\n";
  for (std::size_t i = 0; i < m.k; ++i)
    for (std::size_t j = 0; j < m.k; ++j)
      os << i << ',' << j << ',' << m(i, j) << ',' << (m.unvisited[i] ? 1 : 0) << '\n';
}

}  // namespace rts
