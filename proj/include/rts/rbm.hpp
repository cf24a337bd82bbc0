#pragma once

// Binary restricted Boltzmann machine as a tempered model over the joint
// (v, h), with exact small-instance enumeration and free energies.
//
//   log f(v, h) = v.c + v'W h + h.b
//   p1(v, h)    = prod_i Bernoulli(v_i; p_i) * 2^-J
//
// Tempering the joint keeps both block conditionals in closed form at every
// beta and makes Z_1 = 1 exactly.

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "rts/core.hpp"
#include "rts/numeric.hpp"
#include "rts/random.hpp"

namespace rts {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
// One binary observation per row.
using Dataset = RowMatrix;

struct RbmParams {
  RowMatrix w;        // M x J
  Eigen::VectorXd c;  // visible bias
  Eigen::VectorXd b;  // hidden bias

  RbmParams() = default;
  RbmParams(std::size_t m, std::size_t j)
      : w(RowMatrix::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(j))),
        c(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m))),
        b(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(j))) {}

  std::size_t num_visible() const { return static_cast<std::size_t>(w.rows()); }
  std::size_t num_hidden() const { return static_cast<std::size_t>(w.cols()); }

  void validate() const {
    if (c.size() != w.rows() || b.size() != w.cols())
      throw std::invalid_argument("RBM parameter dimensions are inconsistent");
    if (!w.allFinite() || !c.allFinite() || !b.allFinite())
      throw std::invalid_argument("RBM parameters must be finite");
  }

  // W ~ N(0, scale^2), c and b ~ N(0, 1).
  static RbmParams random(std::size_t m, std::size_t j, std::uint64_t seed, double scale) {
    Rng rng = make_rng(seed, Stream::kModel);
    RbmParams p(m, j);
    for (Eigen::Index i = 0; i < p.w.rows(); ++i)
      for (Eigen::Index k = 0; k < p.w.cols(); ++k) p.w(i, k) = scale * standard_normal(rng);
    for (Eigen::Index i = 0; i < p.c.size(); ++i) p.c(i) = standard_normal(rng);
    for (Eigen::Index k = 0; k < p.b.size(); ++k) p.b(k) = standard_normal(rng);
    return p;
  }
};

// Product-of-Bernoulli base over the visible units.
class BaseBernoulli {
 public:
  static constexpr double kClip = 1e-4;

  explicit BaseBernoulli(Eigen::VectorXd p) : p_(std::move(p)) {
    for (Eigen::Index i = 0; i < p_.size(); ++i) {
      if (!std::isfinite(p_(i))) throw std::invalid_argument("base probabilities must be finite");
      p_(i) = std::clamp(p_(i), kClip, 1.0 - kClip);
    }
  }

  static BaseBernoulli uniform(std::size_t m) {
    return BaseBernoulli(Eigen::VectorXd::Constant(static_cast<Eigen::Index>(m), 0.5));
  }

  std::size_t size() const { return static_cast<std::size_t>(p_.size()); }
  const Eigen::VectorXd& p() const { return p_; }

 private:
  Eigen::VectorXd p_;
};

// Column means of a binary dataset, clipped away from 0 and 1.
inline BaseBernoulli base_from_data(const Dataset& data) {
  if (data.rows() == 0) throw std::invalid_argument("cannot build a base from an empty dataset");
  return BaseBernoulli(data.colwise().mean().transpose());
}

// Noisy copies of random binary prototypes: each row picks a prototype
// uniformly and flips every bit independently with probability `flip`.
inline Dataset prototype_dataset(std::size_t n, std::size_t m, std::size_t n_proto, double flip,
                                 std::uint64_t seed) {
  if (n_proto == 0 || m == 0) throw std::invalid_argument("prototype dataset needs prototypes and width");
  if (!(flip >= 0.0 && flip <= 0.5)) throw std::invalid_argument("flip probability must be in [0, 0.5]");
  Rng rng = make_rng(seed, Stream::kData);
  std::vector<std::vector<char>> protos(n_proto, std::vector<char>(m));
  for (auto& p : protos)
    for (auto& bit : p) bit = bernoulli(rng, 0.5) ? 1 : 0;
  Dataset d(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
  for (std::size_t r = 0; r < n; ++r) {
    const auto& p = protos[std::min(n_proto - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n_proto)))];
    for (std::size_t i = 0; i < m; ++i)
      d(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i)) = (p[i] != 0) != bernoulli(rng, flip) ? 1.0 : 0.0;
  }
  return d;
}

struct RbmState {
  Eigen::VectorXd v;
  Eigen::VectorXd h;
};

class RbmModel {
 public:
  using State = RbmState;

  RbmModel(RbmParams params, BaseBernoulli base) : params_(std::move(params)), base_(std::move(base)) {
    params_.validate();
    if (base_.size() != params_.num_visible())
      throw std::invalid_argument("base size does not match the visible layer");
    const auto& p = base_.p();
    logit_p_ = (p.array() / (1.0 - p.array())).log().matrix();
    sum_log_1mp_ = (1.0 - p.array()).log().sum();
    hidden_log2_ = static_cast<double>(params_.num_hidden()) * kLog2;
  }

  const RbmParams& params() const { return params_; }
  const BaseBernoulli& base() const { return base_; }
  std::size_t num_visible() const { return params_.num_visible(); }
  std::size_t num_hidden() const { return params_.num_hidden(); }

  double log_f(const State& x) const {
    return x.v.dot(params_.c) + x.v.dot(params_.w * x.h) + x.h.dot(params_.b);
  }

  double log_p1(const State& x) const { return sum_log_1mp_ + x.v.dot(logit_p_) - hidden_log2_; }

  double delta(const State& x) const {
    const Eigen::VectorXd pre_v = params_.c + params_.w * x.h;
    return x.v.dot(pre_v - logit_p_) + x.h.dot(params_.b) - sum_log_1mp_ + hidden_log2_;
  }

  // One block-Gibbs sweep on f^beta p1^(1-beta): h | v, then v | h.
  double transition(State& x, double beta, Rng& rng) const {
    const Eigen::VectorXd pre_h = params_.b + params_.w.transpose() * x.v;
    for (Eigen::Index j = 0; j < pre_h.size(); ++j)
      x.h(j) = bernoulli(rng, sigmoid(beta * pre_h(j))) ? 1.0 : 0.0;
    const Eigen::VectorXd pre_v = params_.c + params_.w * x.h;
    const double base_w = 1.0 - beta;
    double vdot = 0.0;
    for (Eigen::Index i = 0; i < pre_v.size(); ++i) {
      const double a = beta * pre_v(i) + base_w * logit_p_(i);
      const bool on = bernoulli(rng, sigmoid(a));
      x.v(i) = on ? 1.0 : 0.0;
      if (on) vdot += pre_v(i) - logit_p_(i);
    }
    return vdot + x.h.dot(params_.b) - sum_log_1mp_ + hidden_log2_;
  }

  State sample_p1(Rng& rng) const {
    State x{Eigen::VectorXd(params_.c.size()), Eigen::VectorXd(params_.b.size())};
    for (Eigen::Index i = 0; i < x.v.size(); ++i) x.v(i) = bernoulli(rng, base_.p()(i)) ? 1.0 : 0.0;
    for (Eigen::Index j = 0; j < x.h.size(); ++j) x.h(j) = bernoulli(rng, 0.5) ? 1.0 : 0.0;
    return x;
  }

  // Hidden expectations at beta = 1 for a visible vector.
  Eigen::VectorXd hidden_probs(const Eigen::VectorXd& v) const {
    Eigen::VectorXd pre = params_.b + params_.w.transpose() * v;
    for (Eigen::Index j = 0; j < pre.size(); ++j) pre(j) = sigmoid(pre(j));
    return pre;
  }

 private:
  RbmParams params_;
  BaseBernoulli base_;
  Eigen::VectorXd logit_p_;
  double sum_log_1mp_ = 0.0;
  double hidden_log2_ = 0.0;
};

static_assert(TemperedModel<RbmModel>);

class EnumerationInfeasible : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kMaxEnumerationBits = 25;

namespace detail {

// log sum over s in {0,1}^n of exp(bias.s + sum_i softplus(offset_i + (A s)_i)),
// where A is (rows x n). Gray-code order keeps each step O(rows).
inline double enumerate_softplus_sum(const Eigen::VectorXd& bias, const Eigen::VectorXd& offset,
                                     const Eigen::MatrixXd& a) {
  const auto n = static_cast<std::size_t>(bias.size());
  if (n > kMaxEnumerationBits) throw EnumerationInfeasible("enumeration infeasible");
  const std::uint64_t total = std::uint64_t{1} << n;
  Eigen::VectorXd pre = offset;
  std::vector<char> s(n, 0);
  double lin = 0.0;
  std::vector<double> terms;
  terms.reserve(4096);
  std::vector<double> partials;
  auto flush = [&] {
    partials.push_back(log_sum_exp(terms));
    terms.clear();
  };
  for (std::uint64_t g = 0; g < total; ++g) {
    if (g > 0) {
      const auto bit = static_cast<std::size_t>(std::countr_zero(g));
      const double sign = s[bit] ? -1.0 : 1.0;
      s[bit] ^= 1;
      pre += sign * a.col(static_cast<Eigen::Index>(bit));
      lin += sign * bias(static_cast<Eigen::Index>(bit));
      // Refresh to bound drift from the running sums.
      if ((g & 0xFFFF) == 0) {
        pre = offset;
        lin = 0.0;
        for (std::size_t j = 0; j < n; ++j)
          if (s[j]) {
            pre += a.col(static_cast<Eigen::Index>(j));
            lin += bias(static_cast<Eigen::Index>(j));
          }
      }
    }
    double t = lin;
    for (Eigen::Index i = 0; i < pre.size(); ++i) t += softplus(pre(i));
    terms.push_back(t);
    if (terms.size() == 4096) flush();
  }
  if (!terms.empty()) flush();
  return log_sum_exp(partials);
}

}  // namespace detail

// Exact log Z by summing out the hidden layer.
inline double rbm_exact_log_z_hidden(const RbmParams& p) {
  p.validate();
  return detail::enumerate_softplus_sum(p.b, p.c, Eigen::MatrixXd(p.w));
}

// Exact log Z by summing out the visible layer.
inline double rbm_exact_log_z_visible(const RbmParams& p) {
  p.validate();
  return detail::enumerate_softplus_sum(p.c, p.b, Eigen::MatrixXd(p.w.transpose()));
}

// Enumerates over the smaller layer.
inline double rbm_exact_log_z(const RbmParams& p) {
  if (std::min(p.num_visible(), p.num_hidden()) > kMaxEnumerationBits)
    throw EnumerationInfeasible("enumeration infeasible: both layers exceed " +
                                std::to_string(kMaxEnumerationBits) + " units");
  return p.num_hidden() <= p.num_visible() ? rbm_exact_log_z_hidden(p) : rbm_exact_log_z_visible(p);
}

// F(v) = v.c + sum_j softplus(b_j + (W'v)_j).
inline double rbm_free_energy(const RbmParams& p, const Eigen::VectorXd& v) {
  const Eigen::VectorXd pre = p.b + p.w.transpose() * v;
  double f = v.dot(p.c);
  for (Eigen::Index j = 0; j < pre.size(); ++j) f += softplus(pre(j));
  return f;
}

inline Eigen::VectorXd rbm_free_energies(const RbmParams& p, const Dataset& data) {
  const RowMatrix pre = (data * p.w).rowwise() + p.b.transpose();
  Eigen::VectorXd out = data * p.c;
  for (Eigen::Index r = 0; r < pre.rows(); ++r)
    for (Eigen::Index j = 0; j < pre.cols(); ++j) out(r) += softplus(pre(r, j));
  return out;
}

inline double data_log_likelihood(const RbmParams& p, double log_z, const Dataset& data) {
  if (data.rows() == 0) throw std::invalid_argument("empty dataset");
  if (static_cast<std::size_t>(data.cols()) != p.num_visible())
    throw std::invalid_argument("dataset width does not match the visible layer");
  return rbm_free_energies(p, data).mean() - log_z;
}

// Exact joint sampler at beta = 1 by enumerating the hidden layer. Used to
// start reverse annealing and to synthesize data from small models.
class RbmExactSampler {
 public:
  static constexpr std::size_t kMaxHidden = 20;

  explicit RbmExactSampler(RbmParams params) : params_(std::move(params)) {
    params_.validate();
    const std::size_t j = params_.num_hidden();
    if (j > kMaxHidden) throw EnumerationInfeasible("exact sampling needs at most 20 hidden units");
    const std::size_t n = std::size_t{1} << j;
    std::vector<double> lw(n);
    Eigen::VectorXd h(static_cast<Eigen::Index>(j));
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t k = 0; k < j; ++k) h(static_cast<Eigen::Index>(k)) = (s >> k) & 1u ? 1.0 : 0.0;
      const Eigen::VectorXd pre = params_.c + params_.w * h;
      double t = h.dot(params_.b);
      for (Eigen::Index i = 0; i < pre.size(); ++i) t += softplus(pre(i));
      lw[s] = t;
    }
    log_z_ = log_sum_exp(lw);
    cdf_.resize(n);
    double acc = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      acc += std::exp(lw[s] - log_z_);
      cdf_[s] = acc;
    }
  }

  double log_z() const { return log_z_; }

  RbmState sample(Rng& rng) const {
    const double u = uniform01(rng) * cdf_.back();
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    const auto s = static_cast<std::size_t>(std::min<std::ptrdiff_t>(
        it - cdf_.begin(), static_cast<std::ptrdiff_t>(cdf_.size()) - 1));
    RbmState x{Eigen::VectorXd(params_.c.size()), Eigen::VectorXd(params_.b.size())};
    for (Eigen::Index k = 0; k < x.h.size(); ++k) x.h(k) = (s >> k) & 1u ? 1.0 : 0.0;
    const Eigen::VectorXd pre = params_.c + params_.w * x.h;
    for (Eigen::Index i = 0; i < pre.size(); ++i) x.v(i) = bernoulli(rng, sigmoid(pre(i))) ? 1.0 : 0.0;
    return x;
  }

  Dataset sample_visible(std::size_t n, Rng& rng) const {
    Dataset d(static_cast<Eigen::Index>(n), params_.c.size());
    for (std::size_t r = 0; r < n; ++r) d.row(static_cast<Eigen::Index>(r)) = sample(rng).v.transpose();
    return d;
  }

 private:
  RbmParams params_;
  double log_z_ = 0.0;
  std::vector<double> cdf_;
};

}  // namespace rts
