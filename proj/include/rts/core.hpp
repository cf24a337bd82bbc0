#pragma once

// Tempered-distribution mathematics shared by every sampler and estimator:
// the inverse-temperature ladder, the model contract and the conditional and
// marginal laws of the temperature index.

#include <cmath>
#include <concepts>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rts/numeric.hpp"
#include "rts/random.hpp"

namespace rts {

enum class Spacing { kUniform, kGeometric };

// Inverse temperatures 0 = b_1 < ... < b_K = 1, a prior over them, and the
// running log partition estimates used to define the tempered joint.
class TemperatureLadder {
 public:
  TemperatureLadder(std::vector<double> betas, std::vector<double> log_r,
                    std::vector<double> log_zhat = {})
      : betas_(std::move(betas)), log_r_(std::move(log_r)) {
    const std::size_t k = betas_.size();
    if (k < 2) throw std::invalid_argument("ladder needs K >= 2 temperatures");
    if (betas_.front() != 0.0 || betas_.back() != 1.0)
      throw std::invalid_argument("ladder must start at beta=0 and end at beta=1");
    for (std::size_t i = 1; i < k; ++i)
      if (!(betas_[i] > betas_[i - 1]))
        throw std::invalid_argument("ladder betas must be strictly increasing");
    if (log_r_.size() != k) throw std::invalid_argument("prior size does not match ladder");
    const double lse = log_sum_exp(log_r_);
    if (!std::isfinite(lse)) throw std::invalid_argument("prior must have finite mass");
    // Renormalize so that exp(log_r) sums to one to machine precision.
    for (double& v : log_r_) {
      if (!std::isfinite(v)) throw std::invalid_argument("prior entries must be positive");
      v -= lse;
    }
    set_log_zhat(log_zhat.empty() ? std::vector<double>(k, 0.0) : std::move(log_zhat));
  }

  static TemperatureLadder uniform(std::size_t k) {
    return TemperatureLadder(make_betas(k, Spacing::kUniform), uniform_log_prior(k));
  }

  static std::vector<double> make_betas(std::size_t k, Spacing spacing, double beta_min = 1e-3) {
    if (k < 2) throw std::invalid_argument("ladder needs K >= 2 temperatures");
    std::vector<double> b(k);
    for (std::size_t i = 0; i < k; ++i) {
      if (spacing == Spacing::kUniform || k == 2) {
        b[i] = static_cast<double>(i) / static_cast<double>(k - 1);
      } else {
        // Geometric on (0, 1] for i >= 1 with b[1] = beta_min.
        b[i] = i == 0 ? 0.0
                      : std::pow(beta_min, static_cast<double>(k - 1 - i) /
                                               static_cast<double>(k - 2));
      }
    }
    b.front() = 0.0;
    b.back() = 1.0;
    return b;
  }

  static std::vector<double> uniform_log_prior(std::size_t k) {
    return std::vector<double>(k, -std::log(static_cast<double>(k)));
  }

  // r_k proportional to exp(lambda * beta_k).
  static std::vector<double> exponential_log_prior(std::span<const double> betas, double lambda) {
    std::vector<double> lr(betas.size());
    for (std::size_t i = 0; i < betas.size(); ++i) lr[i] = lambda * betas[i];
    const double lse = log_sum_exp(lr);
    for (double& v : lr) v -= lse;
    return lr;
  }

  std::size_t size() const { return betas_.size(); }
  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& log_r() const { return log_r_; }
  const std::vector<double>& log_zhat() const { return log_zhat_; }
  double beta(std::size_t k) const { return betas_[k]; }

  // Stores log Zhat anchored so that entry 0 is exactly zero.
  void set_log_zhat(std::vector<double> v) {
    if (v.size() != betas_.size()) throw std::invalid_argument("log_zhat size does not match ladder");
    const double anchor = v[0];
    for (double& x : v) {
      if (!std::isfinite(x)) throw std::invalid_argument("log_zhat entries must be finite");
      x -= anchor;
    }
    v[0] = 0.0;
    log_zhat_ = std::move(v);
  }

  std::vector<double> prior() const {
    std::vector<double> r(log_r_.size());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = std::exp(log_r_[i]);
    return r;
  }

 private:
  std::vector<double> betas_;
  std::vector<double> log_r_;
  std::vector<double> log_zhat_;
};

// A tempered model supplies the target log f, a normalized base log p1, their
// difference Delta = log f - log p1, an exact base sampler and a transition
// that leaves f^beta p1^(1-beta) invariant. The transition returns Delta of
// the state it moved to, which lets models reuse work from the move.
template <class M>
concept TemperedModel = requires(const M& m, typename M::State& x, const typename M::State& cx,
                                 double beta, Rng& rng) {
  typename M::State;
  { m.log_f(cx) } -> std::convertible_to<double>;
  { m.log_p1(cx) } -> std::convertible_to<double>;
  { m.delta(cx) } -> std::convertible_to<double>;
  { m.transition(x, beta, rng) } -> std::convertible_to<double>;
  { m.sample_p1(rng) } -> std::same_as<typename M::State>;
};

template <TemperedModel M>
double tempered_log_density(const M& model, const typename M::State& x, double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw std::domain_error("beta must lie in [0,1]");
  const double lf = model.log_f(x);
  const double lp = model.log_p1(x);
  if (!std::isfinite(lf) || !std::isfinite(lp))
    throw std::domain_error("invalid state: non-finite log density");
  return beta * (lf - lp) + lp;
}

struct BetaConditional {
  std::vector<double> probs;
};

// Unnormalized log q(beta_k | x) for every k.
inline void beta_logits(const TemperatureLadder& ladder, double delta_x, std::span<double> out) {
  const auto& b = ladder.betas();
  const auto& lr = ladder.log_r();
  const auto& lz = ladder.log_zhat();
  for (std::size_t k = 0; k < b.size(); ++k) out[k] = b[k] * delta_x + lr[k] - lz[k];
}

// Writes the normalized log conditional into out; returns nothing since the
// normalizer is not needed by callers.
inline void log_beta_conditional(const TemperatureLadder& ladder, double delta_x,
                                 std::span<double> out) {
  beta_logits(ladder, delta_x, out);
  const double lse = log_sum_exp(out);
  for (double& v : out) v -= lse;
}

inline BetaConditional beta_conditional(const TemperatureLadder& ladder, double delta_x) {
  BetaConditional c{std::vector<double>(ladder.size())};
  log_beta_conditional(ladder, delta_x, c.probs);
  for (double& v : c.probs) v = std::exp(v);
  return c;
}

// q(beta_k) proportional to r_k Z_k / Zhat_k.
inline std::vector<double> marginal_q_beta(const TemperatureLadder& ladder,
                                           std::span<const double> true_log_z) {
  const std::size_t k = ladder.size();
  if (true_log_z.size() != k) throw std::invalid_argument("true_log_z size does not match ladder");
  std::vector<double> lw(k), out(k);
  for (std::size_t i = 0; i < k; ++i)
    lw[i] = ladder.log_r()[i] + (true_log_z[i] - true_log_z[0]) - ladder.log_zhat()[i];
  normalize_log_weights(lw, out);
  return out;
}

// Inverse-CDF draw from a probability vector.
inline std::size_t sample_index(std::span<const double> probs, Rng& rng) {
  double u = uniform01(rng);
  for (std::size_t k = 0; k + 1 < probs.size(); ++k) {
    u -= probs[k];
    if (u < 0.0) return k;
  }
  return probs.size() - 1;
}

}  // namespace rts
