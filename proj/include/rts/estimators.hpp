#pragma once

// Estimators that turn tempered-sampling statistics into log partition
// function estimates for every rung of the ladder.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rts/core.hpp"
#include "rts/numeric.hpp"
#include "rts/stats.hpp"

namespace rts {

enum class Method {
  kRts,
  kTs,
  kTiRiemann,
  kTiTrap,
  kTiRb,
  kMbar,
  kMbarStoch,
  kMixedMle,
  kSd,
  kRsd,
  kAis,
  kRaise,
};

inline constexpr std::string_view method_name(Method m) {
  switch (m) {
    case Method::kRts: return "RTS";
    case Method::kTs: return "TS";
    case Method::kTiRiemann: return "TI_RIEMANN";
    case Method::kTiTrap: return "TI_TRAP";
    case Method::kTiRb: return "TI_RB";
    case Method::kMbar: return "MBAR";
    case Method::kMbarStoch: return "MBAR_STOCH";
    case Method::kMixedMle: return "MIXED_MLE";
    case Method::kSd: return "SD";
    case Method::kRsd: return "RSD";
    case Method::kAis: return "AIS";
    case Method::kRaise: return "RAISE";
  }
  return "?";
}

inline const std::vector<Method>& all_methods() {
  static const std::vector<Method> all{
      Method::kRts,  Method::kTs,        Method::kTiRiemann, Method::kTiTrap,
      Method::kTiRb, Method::kMbar,      Method::kMbarStoch, Method::kMixedMle,
      Method::kSd,   Method::kRsd,       Method::kAis,       Method::kRaise};
  return all;
}

inline std::optional<Method> parse_method(std::string_view s) {
  for (Method m : all_methods())
    if (method_name(m) == s) return m;
  return std::nullopt;
}

struct LogZEstimate {
  Method method = Method::kRts;
  std::vector<double> log_z;
  std::optional<std::vector<double>> bias_est;
  std::optional<std::vector<double>> var_est;
  std::uint64_t n_samples = 0;
  // Set when an iterative solver stopped before meeting its tolerance.
  bool warning = false;

  double log_z_final() const { return log_z.back(); }
};

namespace detail {

inline LogZEstimate finish(Method method, std::vector<double> log_z, std::uint64_t n) {
  const double anchor = log_z[0];
  for (std::size_t k = 0; k < log_z.size(); ++k) {
    log_z[k] -= anchor;
    if (!std::isfinite(log_z[k])) {
      std::ostringstream os;
      os << method_name(method) << ": non-finite log Z at index " << k;
      throw std::runtime_error(os.str());
    }
  }
  log_z[0] = 0.0;
  return {method, std::move(log_z), std::nullopt, std::nullopt, n, false};
}

inline void check_size(const TemperatureLadder& ladder, std::size_t k) {
  if (ladder.size() != k) throw std::invalid_argument("statistics do not match ladder size");
}

}  // namespace detail

// log Z_k = log Zhat_k + log r_1 - log r_k + log c_k - log c_1, from any
// estimate of the temperature marginal given in log space.
inline LogZEstimate rts_from_log_c(const TemperatureLadder& ladder, std::span<const double> log_c,
                                   Method method = Method::kRts, std::uint64_t n = 0) {
  detail::check_size(ladder, log_c.size());
  if (!(log_c[0] > kNegInf))
    throw std::runtime_error("base temperature never weighted; ladder or Zhat badly initialized");
  const auto& lr = ladder.log_r();
  const auto& lz = ladder.log_zhat();
  std::vector<double> out(log_c.size());
  for (std::size_t k = 0; k < out.size(); ++k)
    out[k] = lz[k] + lr[0] - lr[k] + log_c[k] - log_c[0];
  return detail::finish(method, std::move(out), n);
}

inline LogZEstimate rts(const TemperatureLadder& ladder, const RaoBlackwellStats& stats) {
  detail::check_size(ladder, stats.num_temps());
  return rts_from_log_c(ladder, stats.log_c_hat(), Method::kRts, stats.n_samples());
}

struct BiasVariance {
  std::vector<double> bias;
  std::vector<double> variance;
};

// Delta-method bias and variance of log Z^RTS. The c_hat moments are taken
// across independent replicate chains, so `variance` describes an estimate
// built from one replicate's worth of samples.
inline BiasVariance rts_bias_variance(const RaoBlackwellStats& stats,
                                      std::span<const RaoBlackwellStats> replicates) {
  const std::size_t n_rep = replicates.size();
  if (n_rep < 2) throw std::invalid_argument("bias/variance needs at least two replicates");
  const std::size_t k = stats.num_temps();
  std::vector<std::vector<double>> c(n_rep);
  for (std::size_t r = 0; r < n_rep; ++r) {
    if (replicates[r].num_temps() != k) throw std::invalid_argument("replicate size mismatch");
    c[r] = replicates[r].c_hat();
  }
  std::vector<double> mu(k, 0.0);
  for (const auto& v : c)
    for (std::size_t i = 0; i < k; ++i) mu[i] += v[i] / static_cast<double>(n_rep);
  std::vector<double> var(k, 0.0), cov1(k, 0.0);
  for (const auto& v : c)
    for (std::size_t i = 0; i < k; ++i) {
      var[i] += (v[i] - mu[i]) * (v[i] - mu[i]);
      cov1[i] += (v[0] - mu[0]) * (v[i] - mu[i]);
    }
  for (std::size_t i = 0; i < k; ++i) {
    var[i] /= static_cast<double>(n_rep - 1);
    cov1[i] /= static_cast<double>(n_rep - 1);
  }
  const auto ch = stats.c_hat();
  BiasVariance out{std::vector<double>(k, 0.0), std::vector<double>(k, 0.0)};
  const double a = var[0] / (ch[0] * ch[0]);
  for (std::size_t i = 1; i < k; ++i) {
    const double b = var[i] / (ch[i] * ch[i]);
    out.bias[i] = 0.5 * (a - b);
    out.variance[i] = a + b - 2.0 * cov1[i] / (ch[i] * ch[0]);
  }
  return out;
}

// Non-Rao-Blackwellized comparison: the same ratio built from smoothed visit
// counts, c_k proportional to smoothing + n_k.
inline LogZEstimate ts_counts(const TemperatureLadder& ladder, const RaoBlackwellStats& stats,
                              double smoothing = 0.1) {
  detail::check_size(ladder, stats.num_temps());
  if (smoothing < 0) throw std::invalid_argument("smoothing must be non-negative");
  std::vector<double> lc(stats.num_temps());
  for (std::size_t k = 0; k < lc.size(); ++k)
    lc[k] = std::log(smoothing + static_cast<double>(stats.raw_counts()[k]));
  return rts_from_log_c(ladder, lc, Method::kTs, stats.n_samples());
}

enum class TiRule { kRiemann, kTrapezoid };

// Fills NaN entries by linear interpolation in beta between the nearest
// defined neighbours, extending edge values flat.
inline std::vector<double> impute_linear(std::span<const double> betas,
                                         std::vector<double> values) {
  const std::size_t k = values.size();
  std::vector<std::size_t> known;
  for (std::size_t i = 0; i < k; ++i)
    if (std::isfinite(values[i])) known.push_back(i);
  if (known.empty()) throw std::runtime_error("all temperature bins are empty");
  std::size_t pos = 0;
  for (std::size_t i = 0; i < k; ++i) {
    if (std::isfinite(values[i])) continue;
    while (pos < known.size() && known[pos] < i) ++pos;
    if (pos == 0) {
      values[i] = values[known.front()];
    } else if (pos == known.size()) {
      values[i] = values[known.back()];
    } else {
      const std::size_t lo = known[pos - 1], hi = known[pos];
      const double t = (betas[i] - betas[lo]) / (betas[hi] - betas[lo]);
      values[i] = (1.0 - t) * values[lo] + t * values[hi];
    }
  }
  return values;
}

// Cumulative integral of d log Z / d beta over the ladder.
inline std::vector<double> integrate_gradient(std::span<const double> betas,
                                              std::span<const double> grad, TiRule rule) {
  std::vector<double> out(betas.size(), 0.0);
  for (std::size_t k = 1; k < betas.size(); ++k) {
    const double h = betas[k] - betas[k - 1];
    const double step = rule == TiRule::kTrapezoid ? 0.5 * h * (grad[k] + grad[k - 1]) : h * grad[k];
    out[k] = out[k - 1] + step;
  }
  return out;
}

// Thermodynamic integration from within-bin means of Delta.
inline LogZEstimate ti(const TemperatureLadder& ladder, const RaoBlackwellStats& stats,
                       TiRule rule = TiRule::kTrapezoid) {
  detail::check_size(ladder, stats.num_temps());
  std::vector<double> g(stats.num_temps(), std::nan(""));
  for (std::size_t k = 0; k < g.size(); ++k)
    if (stats.raw_counts()[k] > 0)
      g[k] = stats.delta_binned()[k] / static_cast<double>(stats.raw_counts()[k]);
  g = impute_linear(ladder.betas(), std::move(g));
  return detail::finish(rule == TiRule::kTrapezoid ? Method::kTiTrap : Method::kTiRiemann,
                        integrate_gradient(ladder.betas(), g, rule), stats.n_samples());
}

// Rao-Blackwellized gradient: every sample contributes to every bin with
// weight q(beta_k | x).
inline std::vector<double> ti_rb_gradient(const TemperatureLadder& ladder,
                                          const RaoBlackwellStats& stats) {
  std::vector<double> g(stats.num_temps());
  for (std::size_t k = 0; k < g.size(); ++k) g[k] = stats.weighted_delta_mean(k);
  return impute_linear(ladder.betas(), std::move(g));
}

inline LogZEstimate ti_rb(const TemperatureLadder& ladder, const RaoBlackwellStats& stats) {
  detail::check_size(ladder, stats.num_temps());
  return detail::finish(Method::kTiRb,
                        integrate_gradient(ladder.betas(), ti_rb_gradient(ladder, stats),
                                           TiRule::kTrapezoid),
                        stats.n_samples());
}

struct MbarOptions {
  std::size_t max_iters = 10000;
  double tol = 1e-8;
  // Replaces the empirical bin fractions n_k/N when set (any positive vector;
  // normalized internally).
  std::optional<std::vector<double>> weights;
};

namespace detail {

inline std::vector<double> mbar_log_weights(const SampleLog& samples,
                                            const std::optional<std::vector<double>>& override) {
  const std::size_t k = samples.num_temps();
  std::vector<double> w(k);
  if (override) {
    if (override->size() != k) throw std::invalid_argument("MBAR weight vector size mismatch");
    for (std::size_t i = 0; i < k; ++i) w[i] = (*override)[i];
  } else {
    const auto n = samples.counts();
    for (std::size_t i = 0; i < k; ++i) w[i] = static_cast<double>(n[i]);
  }
  if (!(w[0] > 0.0)) throw std::runtime_error("MBAR: no samples at the base temperature (n_1 = 0)");
  double total = 0.0;
  for (double v : w) {
    if (v < 0.0) throw std::invalid_argument("MBAR weights must be non-negative");
    total += v;
  }
  for (double& v : w) v = v > 0.0 ? std::log(v / total) : kNegInf;
  return w;
}

// log D_i = log sum_j w_j exp(-f_j + beta_j Delta_i) over weighted bins.
inline std::vector<double> mbar_log_denominators(const SampleLog& samples,
                                                 std::span<const double> betas,
                                                 std::span<const double> log_w,
                                                 std::span<const double> f) {
  const std::size_t k = betas.size();
  std::vector<double> out(samples.size()), tmp(k);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double d = samples.records()[i].delta;
    for (std::size_t j = 0; j < k; ++j) tmp[j] = log_w[j] - f[j] + betas[j] * d;
    out[i] = log_sum_exp(tmp);
  }
  return out;
}

// log sum_i exp(a_i) with a_i = beta_k Delta_i - log D_i, compensated.
inline double mbar_bin_lse(const SampleLog& samples, double beta, std::span<const double> log_d) {
  double m = kNegInf;
  for (std::size_t i = 0; i < log_d.size(); ++i)
    m = std::max(m, beta * samples.records()[i].delta - log_d[i]);
  CompensatedSum s;
  for (std::size_t i = 0; i < log_d.size(); ++i)
    s.add(std::exp(beta * samples.records()[i].delta - log_d[i] - m));
  return m + std::log(s.value());
}

}  // namespace detail

// Gradient of the MBAR log-likelihood with respect to log Z_k.
inline std::vector<double> mbar_gradient(const SampleLog& samples, const TemperatureLadder& ladder,
                                         std::span<const double> log_z,
                                         const std::optional<std::vector<double>>& weights = {}) {
  const auto lw = detail::mbar_log_weights(samples, weights);
  const auto log_d = detail::mbar_log_denominators(samples, ladder.betas(), lw, log_z);
  const double log_n = std::log(static_cast<double>(samples.size()));
  std::vector<double> g(ladder.size());
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (lw[k] == kNegInf) continue;
    const double lse = detail::mbar_bin_lse(samples, ladder.beta(k), log_d);
    g[k] = std::exp(lw[k]) - std::exp(lw[k] - log_z[k] + lse - log_n);
  }
  return g;
}

// Maximizes the MBAR likelihood by self-consistent iteration.
inline LogZEstimate mbar(const SampleLog& samples, const TemperatureLadder& ladder,
                         const MbarOptions& opt = {}) {
  detail::check_size(ladder, samples.num_temps());
  if (samples.size() == 0) throw std::runtime_error("MBAR: empty sample log");
  const auto lw = detail::mbar_log_weights(samples, opt.weights);
  const std::size_t k = ladder.size();
  const double log_n = std::log(static_cast<double>(samples.size()));
  std::vector<double> f = ladder.log_zhat(), next(k);
  bool converged = false;
  for (std::size_t it = 0; it < opt.max_iters; ++it) {
    const auto log_d = detail::mbar_log_denominators(samples, ladder.betas(), lw, f);
    for (std::size_t j = 0; j < k; ++j)
      next[j] = detail::mbar_bin_lse(samples, ladder.beta(j), log_d) - log_n;
    const double anchor = next[0];
    for (double& v : next) v -= anchor;
    const double change = max_abs_diff(next, f);
    f.swap(next);
    if (change < opt.tol) {
      converged = true;
      break;
    }
  }
  auto est = detail::finish(Method::kMbar, std::move(f), samples.size());
  est.warning = !converged;
  return est;
}

// One stochastic-approximation step on log Zhat from a batch of c_hat:
// log Zhat_k += gamma (c_k / r_k - c_1 / r_1).
inline std::vector<double> mbar_stochastic_step(const TemperatureLadder& ladder,
                                                const RaoBlackwellStats& batch, double gamma) {
  detail::check_size(ladder, batch.num_temps());
  const auto c = batch.c_hat();
  const auto r = ladder.prior();
  std::vector<double> lz = ladder.log_zhat();
  for (std::size_t k = 0; k < lz.size(); ++k) lz[k] += gamma * (c[k] / r[k] - c[0] / r[0]);
  return lz;
}

using StepSchedule = std::function<double(std::size_t)>;

inline StepSchedule harmonic_schedule() {
  return [](std::size_t t) { return 1.0 / static_cast<double>(t); };
}

// Applies the stochastic update over a stream of batches (t = 1, 2, ...).
inline LogZEstimate mbar_stochastic(const TemperatureLadder& ladder,
                                    std::span<const RaoBlackwellStats> batches,
                                    const StepSchedule& gamma = harmonic_schedule()) {
  TemperatureLadder work = ladder;
  std::uint64_t n = 0;
  for (std::size_t t = 0; t < batches.size(); ++t) {
    work.set_log_zhat(mbar_stochastic_step(work, batches[t], gamma(t + 1)));
    n += batches[t].n_samples();
  }
  return detail::finish(Method::kMbarStoch, work.log_zhat(), n);
}

struct MixedOptions {
  std::size_t max_iters = 100000;
  double tol = 1e-8;
};

// Rao-Blackwellized likelihood for samples whose conditionals were computed
// under different Zhat snapshots. Maximized over log Z (log Z_1 = 0) by
// diagonally preconditioned gradient ascent with Armijo backtracking.
inline LogZEstimate mixed_zhat_mle(const SampleLog& samples, const TemperatureLadder& ladder,
                                   const MixedOptions& opt = {}) {
  detail::check_size(ladder, samples.num_temps());
  if (!samples.has_conditionals()) throw std::invalid_argument("mixed-Zhat MLE needs conditionals");
  if (samples.size() == 0) throw std::runtime_error("mixed-Zhat MLE: empty sample log");
  const std::size_t k = ladder.size();
  const std::size_t n_snap = samples.snapshots().size();
  const double n = static_cast<double>(samples.size());

  std::vector<CompensatedSum> qsum(k);
  std::vector<double> snap_frac(n_snap, 0.0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto c = samples.conditional(i);
    for (std::size_t j = 0; j < k; ++j) qsum[j].add(c[j]);
    snap_frac[samples.records()[i].zhat_version] += 1.0;
  }
  std::vector<double> q(k);
  for (std::size_t j = 0; j < k; ++j) q[j] = qsum[j].value() / n;
  for (double& v : snap_frac) v /= n;
  const auto& lr = ladder.log_r();

  // Model marginal P_k(u) = sum_s frac_s pi_sk(u) and the objective.
  std::vector<double> tmp(k), pi(k);
  auto evaluate = [&](const std::vector<double>& u, std::vector<double>* marg) {
    double obj = 0.0;
    for (std::size_t j = 1; j < k; ++j) obj += u[j] * q[j];
    if (marg) std::fill(marg->begin(), marg->end(), 0.0);
    for (std::size_t s = 0; s < n_snap; ++s) {
      if (snap_frac[s] == 0.0) continue;
      const auto& lz = samples.snapshots()[s];
      for (std::size_t j = 0; j < k; ++j) tmp[j] = lr[j] + u[j] - lz[j];
      const double lse = normalize_log_weights(tmp, pi);
      obj -= snap_frac[s] * lse;
      if (marg)
        for (std::size_t j = 0; j < k; ++j) (*marg)[j] += snap_frac[s] * pi[j];
    }
    return obj;
  };

  // Start from the closed form under the mean snapshot.
  std::vector<double> u(k, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    double mean_lz = 0.0;
    for (std::size_t s = 0; s < n_snap; ++s) mean_lz += snap_frac[s] * samples.snapshots()[s][j];
    u[j] = mean_lz + lr[0] - lr[j] + std::log(q[j]) - std::log(q[0]);
  }
  for (std::size_t j = 1; j < k; ++j) u[j] -= u[0];
  u[0] = 0.0;
  for (double v : u)
    if (!std::isfinite(v)) throw std::runtime_error("mixed-Zhat MLE: bin with zero weight");

  std::vector<double> marg(k), grad(k), dir(k), trial(k);
  double obj = evaluate(u, &marg);
  bool converged = false;
  for (std::size_t it = 0; it < opt.max_iters; ++it) {
    double gmax = 0.0, slope = 0.0;
    for (std::size_t j = 1; j < k; ++j) {
      grad[j] = q[j] - marg[j];
      gmax = std::max(gmax, std::abs(grad[j]));
      dir[j] = grad[j] / std::max(marg[j], 1e-300);
      slope += grad[j] * dir[j];
    }
    if (gmax < opt.tol) {
      converged = true;
      break;
    }
    double step = 1.0, trial_obj = obj;
    bool accepted = false;
    for (int h = 0; h < 60; ++h, step *= 0.5) {
      for (std::size_t j = 1; j < k; ++j) trial[j] = u[j] + step * dir[j];
      trial[0] = 0.0;
      trial_obj = evaluate(trial, nullptr);
      if (trial_obj >= obj + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;  // no ascent possible at double precision
    u = trial;
    obj = evaluate(u, &marg);
  }
  auto est = detail::finish(Method::kMixedMle, std::move(u), samples.size());
  est.warning = !converged;
  return est;
}

enum class StationaryMode { kSd, kRsd };

// Left eigenvector of a row-stochastic matrix (row-major K x K) for
// eigenvalue 1, normalized to sum to one. The linear solve is followed by
// power-iteration polishing; throws if the residual stays above 1e-12.
inline std::vector<double> stationary_distribution(std::span<const double> p, std::size_t k) {
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> pm(
      p.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  Eigen::MatrixXd a = pm.transpose() - Eigen::MatrixXd::Identity(k, k);
  a.row(static_cast<Eigen::Index>(k) - 1).setOnes();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(k);
  rhs(static_cast<Eigen::Index>(k) - 1) = 1.0;
  Eigen::VectorXd pi = a.fullPivLu().solve(rhs);
  double residual = 1.0;
  for (int it = 0; it < 1000; ++it) {
    Eigen::VectorXd next = pm.transpose() * pi;
    next /= next.sum();
    residual = (next - pi).cwiseAbs().maxCoeff();
    pi = next;
    if (residual < 1e-12) break;
  }
  if (!(residual < 1e-12)) throw std::runtime_error("stationary distribution did not converge");
  return {pi.data(), pi.data() + k};
}

inline LogZEstimate stationary_estimate(const TemperatureLadder& ladder,
                                        const RaoBlackwellStats& stats, StationaryMode mode) {
  const std::size_t k = stats.num_temps();
  detail::check_size(ladder, k);
  std::vector<double> p(k * k);
  for (std::size_t i = 0; i < k * k; ++i)
    p[i] = mode == StationaryMode::kSd ? static_cast<double>(stats.transition_counts()[i])
                                       : stats.rb_transitions()[i];

  // Irreducibility: every bin must reach bin 0 and be reached from it.
  auto reach = [&](bool forward) {
    std::vector<char> seen(k, 0);
    std::vector<std::size_t> stack{0};
    seen[0] = 1;
    while (!stack.empty()) {
      const std::size_t j = stack.back();
      stack.pop_back();
      for (std::size_t i = 0; i < k; ++i) {
        const double w = forward ? p[j * k + i] : p[i * k + j];
        if (w > 0.0 && !seen[i]) {
          seen[i] = 1;
          stack.push_back(i);
        }
      }
    }
    return seen;
  };
  const auto fwd = reach(true), bwd = reach(false);
  std::vector<std::size_t> bad;
  for (std::size_t i = 0; i < k; ++i)
    if (!fwd[i] || !bwd[i]) bad.push_back(i);
  if (!bad.empty()) {
    std::ostringstream os;
    os << "reducible transition matrix; unreachable indices:";
    for (auto i : bad) os << ' ' << i;
    throw std::runtime_error(os.str());
  }
  for (std::size_t j = 0; j < k; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) s += p[j * k + i];
    for (std::size_t i = 0; i < k; ++i) p[j * k + i] /= s;
  }
  const auto pi = stationary_distribution(p, k);
  std::vector<double> lc(k);
  for (std::size_t i = 0; i < k; ++i) lc[i] = pi[i] > 0.0 ? std::log(pi[i]) : kNegInf;
  return rts_from_log_c(ladder, lc, mode == StationaryMode::kSd ? Method::kSd : Method::kRsd,
                        stats.n_samples());
}

}  // namespace rts
