#pragma once

// Sufficient statistics accumulated along tempered chains, and the optional
// per-sample log consumed by the likelihood-based estimators.

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "rts/numeric.hpp"

namespace rts {

// Rao-Blackwellized statistics of the temperature index.
//
// The conditional mass for each bin is held as exp(scale_k) * acc_k so that
// bins whose conditional probabilities are far below the double range (early
// initialization on large models) still carry a usable log c_hat. The
// Delta-weighted sums share the same scale, so their ratio needs no rescaling.
class RaoBlackwellStats {
 public:
  RaoBlackwellStats() = default;
  explicit RaoBlackwellStats(std::size_t k)
      : k_(k),
        scale_(k, kNegInf),
        acc_(k, 0.0),
        dw_(k, 0.0),
        raw_counts_(k, 0),
        delta_binned_(k, 0.0),
        transition_counts_(k * k, 0),
        rb_transitions_(k * k, 0.0) {}

  std::size_t num_temps() const { return k_; }
  std::uint64_t n_samples() const { return n_; }

  // Records one sweep: x was produced by a transition at bin `from`, has
  // energy difference `delta`, conditional log q(.|x) = log_q (normalized),
  // and the next index drawn from it is `to`.
  void add(std::size_t from, std::size_t to, double delta, std::span<const double> log_q,
           std::span<const double> probs) {
    for (std::size_t k = 0; k < k_; ++k) {
      const double lq = log_q[k];
      if (lq == kNegInf) continue;
      if (lq > scale_[k]) {
        const double shrink = std::exp(scale_[k] - lq);
        acc_[k] = acc_[k] * shrink + 1.0;
        dw_[k] = dw_[k] * shrink + delta;
        scale_[k] = lq;
      } else {
        const double w = std::exp(lq - scale_[k]);
        acc_[k] += w;
        dw_[k] += w * delta;
      }
    }
    ++raw_counts_[from];
    delta_binned_[from] += delta;
    ++transition_counts_[from * k_ + to];
    double* row = &rb_transitions_[from * k_];
    for (std::size_t k = 0; k < k_; ++k) row[k] += probs[k];
    ++n_;
  }

  // Convenience for callers holding plain probabilities.
  void add_probs(std::size_t from, std::size_t to, double delta, std::span<const double> probs) {
    std::vector<double> lq(probs.size());
    for (std::size_t k = 0; k < probs.size(); ++k) lq[k] = std::log(probs[k]);
    add(from, to, delta, lq, probs);
  }

  // Sample-count weighted merge; associative and commutative up to rounding.
  void merge(const RaoBlackwellStats& o) {
    if (o.k_ != k_) throw std::invalid_argument("cannot merge statistics of different ladders");
    for (std::size_t k = 0; k < k_; ++k) {
      if (o.acc_[k] == 0.0) continue;
      if (acc_[k] == 0.0) {
        scale_[k] = o.scale_[k];
        acc_[k] = o.acc_[k];
        dw_[k] = o.dw_[k];
        continue;
      }
      const double m = std::max(scale_[k], o.scale_[k]);
      const double a = std::exp(scale_[k] - m), b = std::exp(o.scale_[k] - m);
      acc_[k] = acc_[k] * a + o.acc_[k] * b;
      dw_[k] = dw_[k] * a + o.dw_[k] * b;
      scale_[k] = m;
    }
    for (std::size_t k = 0; k < k_; ++k) {
      raw_counts_[k] += o.raw_counts_[k];
      delta_binned_[k] += o.delta_binned_[k];
    }
    for (std::size_t i = 0; i < k_ * k_; ++i) {
      transition_counts_[i] += o.transition_counts_[i];
      rb_transitions_[i] += o.rb_transitions_[i];
    }
    n_ += o.n_;
  }

  // log of the running mean of q(beta_k | x); -inf when nothing has been added.
  double log_c_hat(std::size_t k) const {
    if (acc_[k] == 0.0) return kNegInf;
    return scale_[k] + std::log(acc_[k]) - std::log(static_cast<double>(n_));
  }

  std::vector<double> log_c_hat() const {
    std::vector<double> v(k_);
    for (std::size_t k = 0; k < k_; ++k) v[k] = log_c_hat(k);
    return v;
  }

  std::vector<double> c_hat() const {
    std::vector<double> v(k_);
    for (std::size_t k = 0; k < k_; ++k) v[k] = std::exp(log_c_hat(k));
    return v;
  }

  bool has_weight(std::size_t k) const { return acc_[k] > 0.0; }

  // sum_i q(beta_k|x_i) Delta_i / sum_i q(beta_k|x_i): the Rao-Blackwellized
  // estimate of E[Delta | beta_k]. NaN when the bin carries no weight.
  double weighted_delta_mean(std::size_t k) const {
    return acc_[k] > 0.0 ? dw_[k] / acc_[k] : std::nan("");
  }

  // sum_i q(beta_k|x_i) Delta_i in absolute scale (may underflow for
  // negligible bins; use weighted_delta_mean for estimation).
  std::vector<double> delta_weighted() const {
    std::vector<double> v(k_);
    for (std::size_t k = 0; k < k_; ++k) v[k] = acc_[k] == 0.0 ? 0.0 : dw_[k] * std::exp(scale_[k]);
    return v;
  }

  const std::vector<std::uint64_t>& raw_counts() const { return raw_counts_; }
  const std::vector<double>& delta_binned() const { return delta_binned_; }
  std::uint64_t transition_count(std::size_t from, std::size_t to) const {
    return transition_counts_[from * k_ + to];
  }
  const std::vector<std::uint64_t>& transition_counts() const { return transition_counts_; }
  const std::vector<double>& rb_transitions() const { return rb_transitions_; }

 private:
  std::size_t k_ = 0;
  std::vector<double> scale_;
  std::vector<double> acc_;
  std::vector<double> dw_;
  std::vector<std::uint64_t> raw_counts_;
  std::vector<double> delta_binned_;
  std::vector<std::uint64_t> transition_counts_;
  std::vector<double> rb_transitions_;
  std::uint64_t n_ = 0;
};

struct SampleRecord {
  double delta = 0.0;
  std::size_t beta_index = 0;
  std::size_t zhat_version = 0;
};

// Per-sample record of a tempered run: Delta, the bin the sample was drawn
// at, and optionally the full conditional computed under the ladder snapshot
// that was active at the time.
class SampleLog {
 public:
  SampleLog() = default;
  SampleLog(std::size_t k, bool with_conditionals) : k_(k), with_conditionals_(with_conditionals) {}

  std::size_t num_temps() const { return k_; }
  std::size_t size() const { return records_.size(); }
  bool has_conditionals() const { return with_conditionals_; }
  const std::vector<SampleRecord>& records() const { return records_; }
  const std::vector<std::vector<double>>& snapshots() const { return snapshots_; }

  // Registers a log Zhat snapshot; reuses the last one if identical.
  std::size_t add_snapshot(const std::vector<double>& log_zhat) {
    if (log_zhat.size() != k_) throw std::invalid_argument("snapshot size does not match log");
    if (!snapshots_.empty() && snapshots_.back() == log_zhat) return snapshots_.size() - 1;
    snapshots_.push_back(log_zhat);
    return snapshots_.size() - 1;
  }

  void add(double delta, std::size_t beta_index, std::size_t version,
           std::span<const double> conditional = {}) {
    if (beta_index >= k_) throw std::out_of_range("sample beta index out of range");
    records_.push_back({delta, beta_index, version});
    if (with_conditionals_) {
      if (conditional.size() != k_)
        throw std::invalid_argument("sample log requires a conditional per record");
      conditionals_.insert(conditionals_.end(), conditional.begin(), conditional.end());
    }
  }

  std::span<const double> conditional(std::size_t i) const {
    return {conditionals_.data() + i * k_, k_};
  }

  std::vector<std::uint64_t> counts() const {
    std::vector<std::uint64_t> n(k_, 0);
    for (const auto& r : records_) ++n[r.beta_index];
    return n;
  }

 private:
  std::size_t k_ = 0;
  bool with_conditionals_ = false;
  std::vector<SampleRecord> records_;
  std::vector<double> conditionals_;
  std::vector<std::vector<double>> snapshots_;
};

}  // namespace rts
