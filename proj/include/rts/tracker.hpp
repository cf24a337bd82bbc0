#pragma once

// RBM training with persistent tempered chains and an online estimate of
// log Z tracked by damped RTS updates.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rts/core.hpp"
#include "rts/estimators.hpp"
#include "rts/numeric.hpp"
#include "rts/rbm.hpp"
#include "rts/rbm_io.hpp"
#include "rts/stats.hpp"
#include "rts/tempering.hpp"

namespace rts {

struct TrainConfig {
  std::size_t n_chains = 100;
  std::size_t sweeps_per_update = 25;
  std::size_t k = 100;
  double prior_exponent = 2.0;  // r_k proportional to exp(lambda beta_k)
  double alpha = 0.2;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t epochs = 1;
  std::size_t batch_size = 100;
  std::size_t cd1_pretrain_epochs = 1;
  double cd1_learning_rate = 0.05;
  std::size_t init_iters = 10;
  std::size_t init_sweeps = 50;
  std::size_t checkpoint_every = 0;
  std::filesystem::path checkpoint_dir;
  unsigned threads = default_threads();

  void validate() const {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must be in (0, 1]");
    if (sweeps_per_update == 0) throw std::invalid_argument("sweeps_per_update must be at least 1");
    if (n_chains == 0 || batch_size == 0) throw std::invalid_argument("chains and batch size must be positive");
    if (k < 2) throw std::invalid_argument("K must be at least 2");
    if (!(learning_rate >= 0.0) || !(cd1_learning_rate >= 0.0))
      throw std::invalid_argument("learning rates must be non-negative");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must be in [0, 1)");
    if (checkpoint_every > 0 && checkpoint_dir.empty())
      throw std::invalid_argument("checkpointing needs a directory");
  }
};

struct TrackRecord {
  std::size_t t = 0;
  double log_zhat_k = 0.0;
  double train_ll = 0.0;
  double val_ll = 0.0;
};

struct TrackTrace {
  std::vector<TrackRecord> records;
  std::size_t skipped_updates = 0;
  std::size_t gradient_fallbacks = 0;
};

inline void write_trace_csv(std::ostream& os, const TrackTrace& trace) {
  os.precision(17);
  os << "t,log_zhat_K,train_ll,val_ll\n";
  for (const auto& r : trace.records)
    os << r.t << ',' << r.log_zhat_k << ',' << r.train_ll << ',' << r.val_ll << '\n';
}

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, TrackTrace trace)
      : std::runtime_error(what), trace_(std::move(trace)) {}
  const TrackTrace& trace() const { return trace_; }

 private:
  TrackTrace trace_;
};

// log Zhat_k += alpha (log r_1 - log r_k + log c_k - log c_1) for every k.
// Returns false and leaves the ladder alone when the base bin has no weight.
inline bool smoothed_zhat_update(TemperatureLadder& ladder, const RaoBlackwellStats& stats, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must be in [0, 1]");
  if (stats.num_temps() != ladder.size()) throw std::invalid_argument("stats do not match ladder");
  if (!stats.has_weight(0)) return false;
  const auto lc = stats.log_c_hat();
  const auto& lr = ladder.log_r();
  std::vector<double> lz = ladder.log_zhat();
  for (std::size_t k = 0; k < lz.size(); ++k) {
    const double corr = lr[0] - lr[k] + lc[k] - lc[0];
    if (std::isfinite(corr)) lz[k] += alpha * corr;
  }
  ladder.set_log_zhat(lz);
  return true;
}

struct RbmGradient {
  RowMatrix w;
  Eigen::VectorXd c;
  Eigen::VectorXd b;
  bool fallback = false;
};

// Exact hidden expectations for a batch of visible rows.
inline RowMatrix hidden_expectations(const RbmParams& p, const Dataset& v) {
  RowMatrix pre = (v * p.w).rowwise() + p.b.transpose();
  return pre.unaryExpr([](double a) { return sigmoid(a); });
}

// Data term minus model term. The model term averages h | v expectations over
// the persistent chains, each weighted by its current q(beta_K | x).
inline RbmGradient pcd_gradient(const RbmModel& model, const TemperatureLadder& ladder,
                                std::span<const ChainState<RbmState>> chains, const Dataset& minibatch) {
  if (minibatch.rows() == 0) throw std::invalid_argument("empty minibatch");
  if (chains.empty()) throw std::invalid_argument("gradient needs at least one chain");
  const auto& p = model.params();
  const double nb = static_cast<double>(minibatch.rows());
  const RowMatrix ph = hidden_expectations(p, minibatch);
  RbmGradient g;
  g.w = minibatch.transpose() * ph / nb;
  g.c = minibatch.colwise().sum().transpose() / nb;
  g.b = ph.colwise().sum().transpose() / nb;

  const std::size_t kk = ladder.size();
  std::vector<double> log_q(kk), w(chains.size());
  for (std::size_t c = 0; c < chains.size(); ++c) {
    log_beta_conditional(ladder, model.delta(chains[c].x), log_q);
    w[c] = log_q[kk - 1];
  }
  std::vector<double> probs(chains.size());
  const double lse = normalize_log_weights(w, probs);
  if (!(std::exp(lse) >= 1e-12)) {
    g.fallback = true;
    std::size_t top = 0;
    for (std::size_t c = 0; c < chains.size(); ++c) top += chains[c].beta_index == kk - 1 ? 1 : 0;
    if (top == 0) throw std::runtime_error("no chain carries weight at beta = 1");
    for (std::size_t c = 0; c < chains.size(); ++c)
      probs[c] = chains[c].beta_index == kk - 1 ? 1.0 / static_cast<double>(top) : 0.0;
  }
  for (std::size_t c = 0; c < chains.size(); ++c) {
    if (probs[c] == 0.0) continue;
    const auto& v = chains[c].x.v;
    const Eigen::VectorXd h = model.hidden_probs(v);
    g.w.noalias() -= probs[c] * v * h.transpose();
    g.c -= probs[c] * v;
    g.b -= probs[c] * h;
  }
  return g;
}

// Contrastive divergence with one Gibbs step, plain SGD.
inline void cd1_epoch(RbmParams& p, const Dataset& data, std::size_t batch_size, double lr, Rng& rng) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(data.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    Dataset v0(static_cast<Eigen::Index>(end - start), data.cols());
    for (std::size_t r = start; r < end; ++r) v0.row(static_cast<Eigen::Index>(r - start)) = data.row(order[r]);
    const RowMatrix ph0 = hidden_expectations(p, v0);
    RowMatrix h0 = ph0.unaryExpr([&](double q) { return bernoulli(rng, q) ? 1.0 : 0.0; });
    RowMatrix pv1 = (h0 * p.w.transpose()).rowwise() + p.c.transpose();
    Dataset v1 = pv1.unaryExpr([&](double a) { return bernoulli(rng, sigmoid(a)) ? 1.0 : 0.0; });
    const RowMatrix ph1 = hidden_expectations(p, v1);
    const double nb = static_cast<double>(v0.rows());
    p.w += lr / nb * (v0.transpose() * ph0 - v1.transpose() * ph1);
    p.c += lr / nb * (v0.colwise().sum() - v1.colwise().sum()).transpose();
    p.b += lr / nb * (ph0.colwise().sum() - ph1.colwise().sum()).transpose();
  }
}

// Small random weights, visible biases at the base log-odds, zero hidden biases.
inline RbmParams initial_params(const BaseBernoulli& base, std::size_t hidden, Rng& rng) {
  RbmParams p(base.size(), hidden);
  for (Eigen::Index i = 0; i < p.w.rows(); ++i)
    for (Eigen::Index j = 0; j < p.w.cols(); ++j) p.w(i, j) = 0.01 * standard_normal(rng);
  for (Eigen::Index i = 0; i < p.c.size(); ++i) p.c(i) = logit(base.p()(i));
  return p;
}

struct TrainResult {
  RbmParams params;
  TrackTrace trace;
  TemperatureLadder ladder;
  InitReport init;
};

inline double mean_log_likelihood(const RbmParams& p, double log_z, const Dataset& data) {
  if (data.rows() == 0) return std::numeric_limits<double>::quiet_NaN();
  return data_log_likelihood(p, log_z, data);
}

// CD-1 pretraining, RTS initialization of Zhat, then alternating tempered
// sweeps, damped Zhat updates, likelihood records and momentum SGD steps.
// Pass `start` to skip random initialization (pretraining still applies).
inline TrainResult train_with_tracking(const TrainConfig& cfg, const Dataset& train, const Dataset& val,
                                       std::size_t hidden, std::uint64_t seed,
                                       std::optional<RbmParams> start = std::nullopt) {
  cfg.validate();
  if (train.rows() == 0) throw std::invalid_argument("empty training set");
  if (val.rows() > 0 && val.cols() != train.cols())
    throw std::invalid_argument("validation width does not match training width");
  const BaseBernoulli base = base_from_data(train);
  Rng rng = make_rng(seed, Stream::kTrain);
  RbmParams params = start ? std::move(*start) : initial_params(base, hidden, rng);
  if (params.num_visible() != static_cast<std::size_t>(train.cols()))
    throw std::invalid_argument("initial parameters do not match the data width");
  for (std::size_t e = 0; e < cfg.cd1_pretrain_epochs; ++e)
    cd1_epoch(params, train, cfg.batch_size, cfg.cd1_learning_rate, rng);

  const auto betas = TemperatureLadder::make_betas(cfg.k, Spacing::kUniform);
  TemperatureLadder ladder(betas, TemperatureLadder::exponential_log_prior(betas, cfg.prior_exponent));
  auto model = RbmModel(params, base);
  InitOptions io;
  io.max_iters = cfg.init_iters;
  io.sweeps_per_iter = cfg.init_sweeps;
  io.threads = cfg.threads;
  auto init = init_iterations(model, ladder, cfg.n_chains, seed, io);
  auto chains = std::move(init.chains);

  RowMatrix vel_w = RowMatrix::Zero(params.w.rows(), params.w.cols());
  Eigen::VectorXd vel_c = Eigen::VectorXd::Zero(params.c.size());
  Eigen::VectorXd vel_b = Eigen::VectorXd::Zero(params.b.size());
  TrackTrace trace;
  RunOptions ro;
  ro.threads = cfg.threads;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(train.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::size_t t = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start_row = 0; start_row < order.size(); start_row += cfg.batch_size, ++t) {
      const auto stats = run_chains(model, ladder, chains, cfg.sweeps_per_update, ro);
      if (!smoothed_zhat_update(ladder, stats, cfg.alpha)) ++trace.skipped_updates;
      const double lz = ladder.log_zhat().back();
      if (!(std::abs(lz) <= 1e6))
        throw TrainingDiverged("tracked log Z diverged at update " + std::to_string(t), trace);
      trace.records.push_back({t, lz, mean_log_likelihood(params, lz, train), mean_log_likelihood(params, lz, val)});

      const std::size_t end = std::min(order.size(), start_row + cfg.batch_size);
      Dataset batch(static_cast<Eigen::Index>(end - start_row), train.cols());
      for (std::size_t r = start_row; r < end; ++r)
        batch.row(static_cast<Eigen::Index>(r - start_row)) = train.row(order[r]);
      const auto g = pcd_gradient(model, ladder, chains, batch);
      if (g.fallback) ++trace.gradient_fallbacks;
      if (cfg.learning_rate > 0.0) {
        vel_w = cfg.momentum * vel_w + cfg.learning_rate * g.w;
        vel_c = cfg.momentum * vel_c + cfg.learning_rate * g.c;
        vel_b = cfg.momentum * vel_b + cfg.learning_rate * g.b;
        params.w += vel_w;
        params.c += vel_c;
        params.b += vel_b;
        model = RbmModel(params, base);
      }
      if (cfg.checkpoint_every > 0 && (t + 1) % cfg.checkpoint_every == 0)
        save_rbm(cfg.checkpoint_dir / ("checkpoint_" + std::to_string(t + 1) + ".rbm"), params);
    }
  }
  return {std::move(params), std::move(trace), std::move(ladder), std::move(init.report)};
}

}  // namespace rts
