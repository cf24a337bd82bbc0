#pragma once

// Finite-state tempered model with exact Gibbs moves. Small enough to
// enumerate, which makes it the reference problem for estimator tests.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "rts/core.hpp"
#include "rts/numeric.hpp"

namespace rts {

class DiscreteModel {
 public:
  using State = std::size_t;

  // log_f is arbitrary; log_p1 is normalized on construction.
  DiscreteModel(std::vector<double> log_f, std::vector<double> log_p1)
      : log_f_(std::move(log_f)), log_p1_(std::move(log_p1)) {
    if (log_f_.empty() || log_f_.size() != log_p1_.size())
      throw std::invalid_argument("discrete model needs matching non-empty tables");
    const double lse = log_sum_exp(log_p1_);
    for (double& v : log_p1_) v -= lse;
    for (std::size_t i = 0; i < log_f_.size(); ++i)
      if (!std::isfinite(log_f_[i]) || !std::isfinite(log_p1_[i]))
        throw std::invalid_argument("discrete model tables must be finite");
  }

  // Two states, uniform base, f = (1, z - 1): log Z_K = log z.
  static DiscreteModel two_state(double z) {
    if (!(z > 1.0)) throw std::invalid_argument("two-state model needs Z > 1");
    return DiscreteModel({0.0, std::log(z - 1.0)}, {0.0, 0.0});
  }

  std::size_t num_states() const { return log_f_.size(); }
  double log_f(State x) const { return log_f_[x]; }
  double log_p1(State x) const { return log_p1_[x]; }
  double delta(State x) const { return log_f_[x] - log_p1_[x]; }

  // Exact draw from f^beta p1^(1-beta), independent of the current state.
  double transition(State& x, double beta, Rng& rng) const {
    std::vector<double> lw(log_f_.size()), p(log_f_.size());
    for (std::size_t i = 0; i < lw.size(); ++i) lw[i] = beta * log_f_[i] + (1.0 - beta) * log_p1_[i];
    normalize_log_weights(lw, p);
    x = sample_index(p, rng);
    return delta(x);
  }

  State sample_p1(Rng& rng) const {
    std::vector<double> p(log_p1_.size());
    normalize_log_weights(log_p1_, p);
    return sample_index(p, rng);
  }

  State sample_target(Rng& rng) const {
    State x = 0;
    transition(x, 1.0, rng);
    return x;
  }

  // log Z(beta) for the geometric path.
  double log_z(double beta) const {
    std::vector<double> lw(log_f_.size());
    for (std::size_t i = 0; i < lw.size(); ++i) lw[i] = beta * log_f_[i] + (1.0 - beta) * log_p1_[i];
    return log_sum_exp(lw);
  }

  std::vector<double> log_z(const TemperatureLadder& ladder) const {
    std::vector<double> out(ladder.size());
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = log_z(ladder.beta(k));
    return out;
  }

 private:
  std::vector<double> log_f_;
  std::vector<double> log_p1_;
};

static_assert(TemperedModel<DiscreteModel>);

}  // namespace rts
