#pragma once

// Gaussian-mixture target with an analytic partition function, sampled by
// HMC whose step size depends on beta through a per-temperature logistic
// acceptance model.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rts/core.hpp"
#include "rts/numeric.hpp"
#include "rts/random.hpp"

namespace rts {

struct GmmTarget {
  std::vector<Eigen::VectorXd> means;
  double component_scale = 1.0;  // sigma^2
  std::vector<double> weights;
  double prior_scale = 1.0;  // s^2

  std::size_t dim() const { return means.empty() ? 0 : static_cast<std::size_t>(means[0].size()); }

  void validate() const {
    if (means.empty() || means.size() != weights.size())
      throw std::invalid_argument("GMM needs one weight per mean");
    for (const auto& m : means)
      if (m.size() != means[0].size() || m.size() == 0 || !m.allFinite())
        throw std::invalid_argument("GMM means must be finite and of equal dimension");
    if (!(component_scale > 0.0) || !(prior_scale > 0.0))
      throw std::invalid_argument("GMM variances must be positive");
    for (double w : weights)
      if (!(w > 0.0) || !std::isfinite(w)) throw std::invalid_argument("GMM weights must be positive");
  }

  // Two unit-weight components with variance 0.5, 5 apart along the first
  // axis, and a N(0, 30 I) base.
  static GmmTarget two_mode(std::size_t d = 10, double separation = 5.0, double sigma2 = 0.5,
                            double s2 = 30.0) {
    GmmTarget t;
    Eigen::VectorXd a = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
    Eigen::VectorXd b = a;
    a(0) = -0.5 * separation;
    b(0) = 0.5 * separation;
    t.means = {a, b};
    t.weights = {1.0, 1.0};
    t.component_scale = sigma2;
    t.prior_scale = s2;
    t.validate();
    return t;
  }
};

// log Z = log(sum_m w_m) + (d/2) log(2 pi sigma^2).
inline double gmm_analytic_log_z(const GmmTarget& t) {
  t.validate();
  double sw = 0.0;
  for (double w : t.weights) sw += w;
  return std::log(sw) + 0.5 * static_cast<double>(t.dim()) * std::log(2.0 * std::numbers::pi * t.component_scale);
}

inline double gmm_log_f(const GmmTarget& t, const Eigen::VectorXd& x) {
  double terms[16];
  std::vector<double> big;
  std::span<double> lw;
  if (t.means.size() <= 16) {
    lw = std::span<double>(terms, t.means.size());
  } else {
    big.resize(t.means.size());
    lw = big;
  }
  for (std::size_t m = 0; m < t.means.size(); ++m)
    lw[m] = std::log(t.weights[m]) - (x - t.means[m]).squaredNorm() / (2.0 * t.component_scale);
  return log_sum_exp(lw);
}

inline double gmm_log_p1(const GmmTarget& t, const Eigen::VectorXd& x) {
  const double d = static_cast<double>(x.size());
  return -x.squaredNorm() / (2.0 * t.prior_scale) - 0.5 * d * std::log(2.0 * std::numbers::pi * t.prior_scale);
}

// Gradient of beta log f + (1 - beta) log p1.
inline Eigen::VectorXd gmm_grad_log_q(const GmmTarget& t, const Eigen::VectorXd& x, double beta) {
  std::vector<double> lw(t.means.size()), r(t.means.size());
  for (std::size_t m = 0; m < t.means.size(); ++m)
    lw[m] = std::log(t.weights[m]) - (x - t.means[m]).squaredNorm() / (2.0 * t.component_scale);
  normalize_log_weights(lw, r);
  Eigen::VectorXd gf = Eigen::VectorXd::Zero(x.size());
  for (std::size_t m = 0; m < t.means.size(); ++m) gf += r[m] * (t.means[m] - x);
  gf /= t.component_scale;
  return beta * gf - (1.0 - beta) / t.prior_scale * x;
}

inline double gmm_log_q(const GmmTarget& t, const Eigen::VectorXd& x, double beta) {
  return beta * gmm_log_f(t, x) + (1.0 - beta) * gmm_log_p1(t, x);
}

inline constexpr std::size_t kLeapfrogSteps = 10;
inline constexpr double kTargetAccept = 0.651;

// Half kick, then alternating drift and full kicks, then a final half kick.
template <class Grad>
void leapfrog(const Grad& grad, Eigen::VectorXd& x, Eigen::VectorXd& p, double eps, std::size_t n_steps) {
  if (!(eps > 0.0)) throw std::invalid_argument("leapfrog step size must be positive");
  p += 0.5 * eps * grad(x);
  for (std::size_t s = 0; s < n_steps; ++s) {
    x += eps * p;
    if (s + 1 < n_steps) p += eps * grad(x);
  }
  p += 0.5 * eps * grad(x);
}

// One HMC proposal on the tempered density. Returns whether it was accepted.
inline bool hmc_step(const GmmTarget& t, Eigen::VectorXd& x, double beta, double eps, Rng& rng,
                     std::size_t n_steps = kLeapfrogSteps) {
  Eigen::VectorXd p(x.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = standard_normal(rng);
  const double h0 = -gmm_log_q(t, x, beta) + 0.5 * p.squaredNorm();
  Eigen::VectorXd xn = x;
  leapfrog([&](const Eigen::VectorXd& y) { return gmm_grad_log_q(t, y, beta); }, xn, p, eps, n_steps);
  const double h1 = -gmm_log_q(t, xn, beta) + 0.5 * p.squaredNorm();
  const double log_u = std::log(uniform01(rng));
  if (!std::isfinite(h0) || !std::isfinite(h1) || !(log_u < h0 - h1)) return false;
  x = std::move(xn);
  return true;
}

// Step size as a piecewise-linear function of beta through the given knots.
class StepSizeSchedule {
 public:
  StepSizeSchedule(std::vector<double> betas, std::vector<double> eps) : betas_(std::move(betas)), eps_(std::move(eps)) {
    if (betas_.empty() || betas_.size() != eps_.size())
      throw std::invalid_argument("step schedule needs one step size per knot");
    for (std::size_t i = 0; i < eps_.size(); ++i)
      if (!(eps_[i] > 0.0) || (i > 0 && !(betas_[i] > betas_[i - 1])))
        throw std::invalid_argument("step schedule needs positive steps at increasing betas");
  }
  static StepSizeSchedule fixed(double eps) { return StepSizeSchedule({0.0}, {eps}); }

  double operator()(double beta) const {
    if (betas_.size() == 1 || beta <= betas_.front()) return eps_.front();
    if (beta >= betas_.back()) return eps_.back();
    const auto it = std::upper_bound(betas_.begin(), betas_.end(), beta);
    const auto i = static_cast<std::size_t>(it - betas_.begin());
    const double a = (beta - betas_[i - 1]) / (betas_[i] - betas_[i - 1]);
    return (1.0 - a) * eps_[i - 1] + a * eps_[i];
  }
  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& eps() const { return eps_; }

 private:
  std::vector<double> betas_;
  std::vector<double> eps_;
};

class GmmModel {
 public:
  using State = Eigen::VectorXd;

  GmmModel(GmmTarget target, StepSizeSchedule steps, std::size_t n_steps = kLeapfrogSteps)
      : target_(std::move(target)), steps_(std::move(steps)), n_steps_(n_steps) {
    target_.validate();
    if (n_steps_ == 0) throw std::invalid_argument("HMC needs at least one leapfrog step");
  }

  const GmmTarget& target() const { return target_; }
  const StepSizeSchedule& steps() const { return steps_; }

  double log_f(const State& x) const { return gmm_log_f(target_, x); }
  double log_p1(const State& x) const { return gmm_log_p1(target_, x); }
  double delta(const State& x) const { return log_f(x) - log_p1(x); }

  double transition(State& x, double beta, Rng& rng) const {
    hmc_step(target_, x, beta, steps_(beta), rng, n_steps_);
    return delta(x);
  }

  State sample_p1(Rng& rng) const {
    const double s = std::sqrt(target_.prior_scale);
    State x(static_cast<Eigen::Index>(target_.dim()));
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = s * standard_normal(rng);
    return x;
  }

 private:
  GmmTarget target_;
  StepSizeSchedule steps_;
  std::size_t n_steps_;
};

static_assert(TemperedModel<GmmModel>);

struct AcceptRecord {
  std::size_t beta_index = 0;
  double eps = 0.0;
  bool accepted = false;
};

struct HmcAcceptModel {
  std::vector<double> w0;
  std::vector<double> w1;
  double eps_min = 0.0;
  double eps_max = 0.0;
  double target_accept = kTargetAccept;
  std::vector<bool> degenerate;
  bool converged = false;
  std::size_t iterations = 0;

  std::size_t size() const { return w0.size(); }
  double accept_prob(std::size_t j, double eps) const { return sigmoid(w0[j] + w1[j] * eps); }
};

struct AcceptFitOptions {
  // Box on the logit acceptance at both step-size endpoints.
  double logit_bound = 10.0;
  double tol = 1e-6;
  std::size_t max_iters = 200000;
};

namespace detail {

// Pool-adjacent-violators fit of a non-increasing sequence, then clipped.
inline void project_nonincreasing(std::vector<double>& y, double bound) {
  std::vector<double> val;
  std::vector<std::size_t> len;
  for (double v : y) {
    val.push_back(v);
    len.push_back(1);
    while (val.size() > 1 && val[val.size() - 2] < val.back()) {
      const std::size_t n = len[len.size() - 2] + len.back();
      const double m = (val[val.size() - 2] * static_cast<double>(len[len.size() - 2]) +
                        val.back() * static_cast<double>(len.back())) /
                       static_cast<double>(n);
      val.pop_back();
      len.pop_back();
      val.back() = m;
      len.back() = n;
    }
  }
  std::size_t i = 0;
  for (std::size_t b = 0; b < val.size(); ++b)
    for (std::size_t r = 0; r < len[b]; ++r) y[i++] = std::clamp(val[b], -bound, bound);
}

// Euclidean projection of the endpoint logits (a at eps_min, c at eps_max)
// onto {a, c non-increasing in j, |a|, |c| <= bound, c <= a} by Dykstra's
// method over the monotone box and the pairwise slope halfspaces.
inline void project_endpoint_logits(std::vector<double>& a, std::vector<double>& c, double bound) {
  const std::size_t n = a.size();
  std::vector<double> pa(n, 0.0), pc(n, 0.0), qa(n, 0.0), qc(n, 0.0), ya(n), yc(n);
  for (std::size_t cycle = 0; cycle < 10000; ++cycle) {
    for (std::size_t j = 0; j < n; ++j) {
      ya[j] = a[j] + pa[j];
      yc[j] = c[j] + pc[j];
    }
    std::vector<double> ma = ya, mc = yc;
    project_nonincreasing(ma, bound);
    project_nonincreasing(mc, bound);
    for (std::size_t j = 0; j < n; ++j) {
      pa[j] = ya[j] - ma[j];
      pc[j] = yc[j] - mc[j];
    }
    double change = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double za = ma[j] + qa[j], zc = mc[j] + qc[j];
      double na = za, nc = zc;
      if (zc > za) na = nc = 0.5 * (za + zc);
      qa[j] = za - na;
      qc[j] = zc - nc;
      change = std::max({change, std::abs(na - a[j]), std::abs(nc - c[j])});
      a[j] = na;
      c[j] = nc;
    }
    if (change < 1e-14) break;
  }
}

}  // namespace detail

// Constrained per-temperature logistic regression of acceptance on eps,
// maximizing the average log-likelihood by accelerated projected gradient.
// The logit is parameterized by its values at eps_min and eps_max, where the
// slope and monotonicity constraints become order constraints.
inline HmcAcceptModel fit_accept_model(std::span<const AcceptRecord> records, std::size_t n_bins,
                                       double eps_min, double eps_max, const AcceptFitOptions& opt = {}) {
  if (n_bins == 0) throw std::invalid_argument("acceptance model needs at least one bin");
  if (!(eps_min > 0.0) || !(eps_min < eps_max))
    throw std::invalid_argument("acceptance model needs 0 < eps_min < eps_max");
  std::vector<std::size_t> count(n_bins, 0), accepts(n_bins, 0);
  for (const auto& r : records) {
    if (r.beta_index >= n_bins) throw std::out_of_range("acceptance record bin out of range");
    ++count[r.beta_index];
    accepts[r.beta_index] += r.accepted ? 1 : 0;
  }
  HmcAcceptModel model;
  model.eps_min = eps_min;
  model.eps_max = eps_max;
  model.degenerate.assign(n_bins, false);
  for (std::size_t j = 0; j < n_bins; ++j) {
    if (count[j] == 0) throw std::invalid_argument("acceptance bin " + std::to_string(j) + " has no records");
    model.degenerate[j] = accepts[j] == 0 || accepts[j] == count[j];
  }
  const double n_total = static_cast<double>(records.size());
  const double span = eps_max - eps_min;
  double lip = 0.0;
  for (std::size_t j = 0; j < n_bins; ++j) lip = std::max(lip, 0.25 * static_cast<double>(count[j]) / n_total);
  const double step = 1.0 / lip;

  std::vector<double> a(n_bins, 0.0), c(n_bins, 0.0), ya = a, yc = c, ga(n_bins), gc(n_bins);
  double mom = 1.0;
  for (std::size_t it = 0; it < opt.max_iters; ++it) {
    std::fill(ga.begin(), ga.end(), 0.0);
    std::fill(gc.begin(), gc.end(), 0.0);
    for (const auto& r : records) {
      const std::size_t j = r.beta_index;
      const double s = (r.eps - eps_min) / span;
      const double resid = (r.accepted ? 1.0 : 0.0) - sigmoid((1.0 - s) * ya[j] + s * yc[j]);
      ga[j] += resid * (1.0 - s) / n_total;
      gc[j] += resid * s / n_total;
    }
    std::vector<double> na(n_bins), nc(n_bins);
    for (std::size_t j = 0; j < n_bins; ++j) {
      na[j] = ya[j] + step * ga[j];
      nc[j] = yc[j] + step * gc[j];
    }
    detail::project_endpoint_logits(na, nc, opt.logit_bound);
    double gm = 0.0, dir = 0.0;
    for (std::size_t j = 0; j < n_bins; ++j) {
      gm += (na[j] - ya[j]) * (na[j] - ya[j]) + (nc[j] - yc[j]) * (nc[j] - yc[j]);
      dir += (na[j] - a[j]) * (ya[j] - na[j]) + (nc[j] - c[j]) * (yc[j] - nc[j]);
    }
    gm = std::sqrt(gm) / step;
    model.iterations = it + 1;
    // Restart momentum when the step moves against the previous direction.
    const double next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * mom * mom));
    const double bm = dir > 0.0 ? 0.0 : (mom - 1.0) / next;
    mom = dir > 0.0 ? 1.0 : next;
    for (std::size_t j = 0; j < n_bins; ++j) {
      ya[j] = na[j] + bm * (na[j] - a[j]);
      yc[j] = nc[j] + bm * (nc[j] - c[j]);
    }
    a = std::move(na);
    c = std::move(nc);
    if (gm < opt.tol) {
      model.converged = true;
      break;
    }
  }
  model.w0.resize(n_bins);
  model.w1.resize(n_bins);
  for (std::size_t j = 0; j < n_bins; ++j) {
    model.w1[j] = std::abs(c[j] - a[j]) < 1e-12 ? 0.0 : (c[j] - a[j]) / span;
    model.w0[j] = a[j] - model.w1[j] * eps_min;
  }
  return model;
}

// Step size reaching the target acceptance, projected into [eps_min, eps_max].
// A flat bin takes eps_max when it accepts above target and eps_min otherwise.
inline double eps_opt(const HmcAcceptModel& m, std::size_t j) {
  if (j >= m.size()) throw std::out_of_range("acceptance model bin out of range");
  const double lt = logit(m.target_accept);
  if (m.w1[j] == 0.0) return m.w0[j] >= lt ? m.eps_max : m.eps_min;
  const double e = (lt - m.w0[j]) / m.w1[j];
  return std::clamp(e, m.eps_min, m.eps_max);
}

struct EndpointTuning {
  double eps_min = 0.0;
  double eps_max = 0.0;
  double final_accept_min = 0.0;  // last batch at beta = 1
  double final_accept_max = 0.0;  // last batch at beta = 0
  bool swapped = false;
};

struct EndpointTuneOptions {
  std::size_t batches = 40;
  std::size_t batch_size = 50;
  double gain = 0.5;
  double eps_init = 1.0;
  double target_accept = kTargetAccept;
  // Double or halve eps_init, one batch per trial, until the acceptance
  // crosses the target, before starting the decaying-gain updates.
  bool bracket = true;
  std::size_t max_bracket = 30;
  std::size_t bisect = 6;
};

namespace detail {

inline double robbins_monro_eps(const GmmTarget& t, double beta, Rng& rng, const EndpointTuneOptions& opt,
                                double& last_rate) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(t.dim()));
  const double s = std::sqrt(t.prior_scale);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = s * standard_normal(rng);
  auto batch_rate = [&](double eps) {
    std::size_t acc = 0;
    for (std::size_t i = 0; i < opt.batch_size; ++i) acc += hmc_step(t, x, beta, eps, rng) ? 1 : 0;
    return static_cast<double>(acc) / static_cast<double>(opt.batch_size);
  };
  double log_eps = std::log(opt.eps_init);
  if (opt.bracket) {
    const bool above = batch_rate(std::exp(log_eps)) > opt.target_accept;
    const double dir = above ? kLog2 : -kLog2;
    for (std::size_t i = 0; i < opt.max_bracket; ++i) {
      const double next = log_eps + dir;
      if ((batch_rate(std::exp(next)) > opt.target_accept) != above) {
        // bisect the crossing in log eps
        double good = log_eps, bad = next;
        for (std::size_t b = 0; b < opt.bisect; ++b) {
          const double mid = 0.5 * (good + bad);
          ((batch_rate(std::exp(mid)) > opt.target_accept) == above ? good : bad) = mid;
        }
        log_eps = 0.5 * (good + bad);
        break;
      }
      log_eps = next;
    }
  }
  for (std::size_t b = 1; b <= opt.batches; ++b) {
    last_rate = batch_rate(std::exp(log_eps));
    log_eps += opt.gain / static_cast<double>(b) * (last_rate - opt.target_accept);
  }
  return std::exp(log_eps);
}

}  // namespace detail

// eps_max from a chain at beta = 0, eps_min from a chain at beta = 1.
inline EndpointTuning tune_endpoint_stepsizes(const GmmTarget& t, std::uint64_t seed,
                                              const EndpointTuneOptions& opt = {}) {
  t.validate();
  EndpointTuning out;
  Rng r0 = make_rng(seed, Stream::kTune, 0);
  Rng r1 = make_rng(seed, Stream::kTune, 1);
  out.eps_max = detail::robbins_monro_eps(t, 0.0, r0, opt, out.final_accept_max);
  out.eps_min = detail::robbins_monro_eps(t, 1.0, r1, opt, out.final_accept_min);
  if (out.eps_min > out.eps_max) {
    std::swap(out.eps_min, out.eps_max);
    out.swapped = true;
  }
  return out;
}

// Long fixed-beta run measuring the acceptance rate of a given step size.
inline double measure_acceptance(const GmmTarget& t, double beta, double eps, std::size_t n_burn,
                                 std::size_t n, std::uint64_t seed) {
  Rng rng = make_rng(seed, Stream::kTune, 2);
  Eigen::VectorXd x(static_cast<Eigen::Index>(t.dim()));
  const double s = std::sqrt(t.prior_scale);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = s * standard_normal(rng);
  for (std::size_t i = 0; i < n_burn; ++i) hmc_step(t, x, beta, eps, rng);
  std::size_t acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += hmc_step(t, x, beta, eps, rng) ? 1 : 0;
  return static_cast<double>(acc) / static_cast<double>(n);
}

struct PilotOptions {
  std::size_t proposals_per_bin = 50;
  std::size_t warmup_per_bin = 20;
};

// Fixed-beta pilot chains with step sizes drawn uniformly in [eps_min, eps_max].
inline std::vector<AcceptRecord> run_pilot(const GmmTarget& t, std::span<const double> betas, double eps_min,
                                           double eps_max, std::uint64_t seed, const PilotOptions& opt = {}) {
  std::vector<AcceptRecord> out;
  out.reserve(betas.size() * opt.proposals_per_bin);
  const double mid = 0.5 * (eps_min + eps_max);
  for (std::size_t j = 0; j < betas.size(); ++j) {
    Rng rng = make_rng(seed, Stream::kPilot, j);
    Eigen::VectorXd x(static_cast<Eigen::Index>(t.dim()));
    const double s = std::sqrt(t.prior_scale);
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = s * standard_normal(rng);
    for (std::size_t i = 0; i < opt.warmup_per_bin; ++i) hmc_step(t, x, betas[j], mid, rng);
    for (std::size_t i = 0; i < opt.proposals_per_bin; ++i) {
      const double eps = eps_min + (eps_max - eps_min) * uniform01(rng);
      out.push_back({j, eps, hmc_step(t, x, betas[j], eps, rng)});
    }
  }
  return out;
}

struct AdaptiveHmc {
  EndpointTuning endpoints;
  HmcAcceptModel accept_model;
  std::vector<double> pilot_accept_rate;
  StepSizeSchedule schedule;
};

struct AdaptiveHmcOptions {
  EndpointTuneOptions endpoint;
  PilotOptions pilot;
  AcceptFitOptions fit;
};

// Endpoint tuning, pilot phase, constrained fit, then a frozen schedule.
inline AdaptiveHmc tune_adaptive_hmc(const GmmTarget& t, std::span<const double> betas, std::uint64_t seed,
                                     const AdaptiveHmcOptions& opt = {}) {
  auto ends = tune_endpoint_stepsizes(t, seed, opt.endpoint);
  if (!(ends.eps_min < ends.eps_max)) ends.eps_max = ends.eps_min * (1.0 + 1e-6);
  const auto records = run_pilot(t, betas, ends.eps_min, ends.eps_max, seed, opt.pilot);
  auto model = fit_accept_model(records, betas.size(), ends.eps_min, ends.eps_max, opt.fit);
  std::vector<double> rate(betas.size(), 0.0), n(betas.size(), 0.0), eps(betas.size());
  for (const auto& r : records) {
    rate[r.beta_index] += r.accepted ? 1.0 : 0.0;
    n[r.beta_index] += 1.0;
  }
  for (std::size_t j = 0; j < betas.size(); ++j) {
    rate[j] /= n[j];
    eps[j] = eps_opt(model, j);
  }
  StepSizeSchedule schedule(std::vector<double>(betas.begin(), betas.end()), eps);
  return {ends, std::move(model), std::move(rate), std::move(schedule)};
}

inline void write_hmc_table_csv(std::ostream& os, std::span<const double> betas, const AdaptiveHmc& a) {
  os.precision(17);
  os << "k,beta,eps_opt,pilot_accept_rate,w0,w1,degenerate\n";
  for (std::size_t j = 0; j < betas.size(); ++j)
    os << j << ',' << betas[j] << ',' << a.schedule.eps()[j] << ',' << a.pilot_accept_rate[j] << ','
       << a.accept_model.w0[j] << ',' << a.accept_model.w1[j] << ',' << (a.accept_model.degenerate[j] ? 1 : 0)
       << '\n';
}

}  // namespace rts
