#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "rts/estimators.hpp"
#include "rts/tempering.hpp"
#include "rts/toy.hpp"

using Catch::Approx;
using rts::TemperatureLadder;

namespace {

struct ZeroDelta {
  using State = int;
  double log_f(int) const { return 0.0; }
  double log_p1(int) const { return 0.0; }
  double delta(int) const { return 0.0; }
  double transition(int&, double, rts::Rng&) const { return 0.0; }
  int sample_p1(rts::Rng&) const { return 0; }
};

// Adds one sample at bin `from` with the ladder's conditional for `delta`.
void add_sample(rts::RaoBlackwellStats& st, const TemperatureLadder& l, std::size_t from, double delta) {
  std::vector<double> lq(l.size()), q(l.size());
  rts::log_beta_conditional(l, delta, lq);
  for (std::size_t k = 0; k < q.size(); ++k) q[k] = std::exp(lq[k]);
  st.add(from, from, delta, lq, q);
}

// Stats with c_hat equal to a given probability vector (one sample).
rts::RaoBlackwellStats stats_with_c(const std::vector<double>& c) {
  rts::RaoBlackwellStats st(c.size());
  st.add_probs(0, 0, 0.0, c);
  return st;
}

rts::DiscreteModel random_toy(std::size_t n, std::uint64_t seed, double spread) {
  auto rng = rts::make_rng(seed, rts::Stream::kModel);
  std::vector<double> lf(n), lp(n);
  for (std::size_t i = 0; i < n; ++i) {
    lf[i] = spread * (rts::uniform01(rng) - 0.5);
    lp[i] = rts::uniform01(rng) - 0.5;
  }
  return rts::DiscreteModel(lf, lp);
}

}  // namespace

TEST_CASE("rts fixed point: c_hat = r returns log_zhat") {
  auto l = TemperatureLadder::uniform(5);
  l.set_log_zhat({0.0, 0.5, 1.5, -2.0, 3.0});
  const auto est = rts::rts(l, stats_with_c(l.prior()));
  for (std::size_t k = 0; k < 5; ++k) CHECK(est.log_z[k] == Approx(l.log_zhat()[k]).margin(1e-14));
  CHECK(est.method == rts::Method::kRts);
}

TEST_CASE("rts K=2 example gives log 3") {
  const auto l = TemperatureLadder::uniform(2);
  const auto est = rts::rts(l, stats_with_c({0.25, 0.75}));
  CHECK(est.log_z[0] == 0.0);
  CHECK(est.log_z[1] == Approx(std::log(3.0)).epsilon(1e-14));
}

TEST_CASE("rts is equivariant to log_zhat shifts") {
  auto l = TemperatureLadder::uniform(6);
  const auto st = stats_with_c({0.1, 0.2, 0.15, 0.25, 0.2, 0.1});
  const auto base = rts::rts(l, st);
  const std::vector<double> v{0.0, 0.3, -1.2, 4.0, 0.01, 2.5};
  l.set_log_zhat(v);
  const auto shifted = rts::rts(l, st);
  for (std::size_t k = 0; k < 6; ++k) CHECK(shifted.log_z[k] - base.log_z[k] == Approx(v[k]).margin(1e-12));
}

TEST_CASE("rts solves the likelihood stationarity equations") {
  // c_k = r_k Z_k / Zhat_k / sum_j r_j Z_j / Zhat_j at the estimate.
  auto rng = rts::make_rng(5, rts::Stream::kMain);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t k = 8;
    const auto betas = TemperatureLadder::make_betas(k, rts::Spacing::kUniform);
    TemperatureLadder l(betas, TemperatureLadder::exponential_log_prior(betas, 3.0 * rts::uniform01(rng)));
    std::vector<double> lz(k);
    for (auto& z : lz) z = 10.0 * (rts::uniform01(rng) - 0.5);
    l.set_log_zhat(lz);
    std::vector<double> c(k);
    double s = 0.0;
    for (auto& x : c) s += (x = 0.05 + rts::uniform01(rng));
    for (auto& x : c) x /= s;
    const auto est = rts::rts(l, stats_with_c(c));
    const auto r = l.prior();
    std::vector<double> w(k);
    double tot = 0.0;
    for (std::size_t i = 0; i < k; ++i) tot += (w[i] = r[i] * std::exp(est.log_z[i] - l.log_zhat()[i]));
    for (std::size_t i = 0; i < k; ++i) CHECK(std::abs(w[i] / tot - c[i]) < 1e-10);
  }
}

TEST_CASE("rts converges on the two-state toy") {
  const auto m = rts::DiscreteModel::two_state(3.0);
  auto l = TemperatureLadder::uniform(2);
  l.set_log_zhat({0.0, 0.3});
  std::vector<double> reps;
  rts::RaoBlackwellStats pooled(2);
  for (std::size_t r = 0; r < 20; ++r) {
    auto chains = rts::make_chains(m, l, 1, 40 + r);
    const auto st = rts::run_chains(m, l, chains, 5000, {});
    reps.push_back(rts::rts(l, st).log_z[1]);
    pooled.merge(st);
  }
  const double est = rts::rts(l, pooled).log_z[1];
  CHECK(std::abs(est - std::log(3.0)) < 3.0 * oracle::std_error(reps));
}

TEST_CASE("bias and variance degenerate cases") {
  const auto st = stats_with_c({0.3, 0.3, 0.4});
  std::vector<rts::RaoBlackwellStats> same(3, st);
  const auto bv = rts::rts_bias_variance(st, same);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(bv.bias[k] == 0.0);
    CHECK(bv.variance[k] == Approx(0.0).margin(1e-20));
  }
  // Bins 0 and 1 fluctuate identically in absolute size and share c_hat.
  std::vector<rts::RaoBlackwellStats> reps{stats_with_c({0.35, 0.25, 0.4}), stats_with_c({0.25, 0.35, 0.4})};
  const auto bv2 = rts::rts_bias_variance(st, reps);
  CHECK(bv2.bias[1] == Approx(0.0).margin(1e-15));
  CHECK_THROWS(rts::rts_bias_variance(st, std::vector<rts::RaoBlackwellStats>{st}));
}

TEST_CASE("variance estimate matches replicate spread") {
  const auto m = rts::DiscreteModel::two_state(3.0);
  auto l = TemperatureLadder::uniform(2);
  l.set_log_zhat({0.0, 1.0});
  auto chains = rts::make_chains(m, l, 100, 77);
  rts::RunOptions ro;
  std::vector<rts::RaoBlackwellStats> per;
  ro.per_chain = &per;
  const auto pooled = rts::run_chains(m, l, chains, 400, ro);
  const auto bv = rts::rts_bias_variance(pooled, per);
  std::vector<double> lz;
  for (const auto& p : per) lz.push_back(rts::rts(l, p).log_z[1]);
  const double observed = oracle::variance(lz);
  CHECK(bv.variance[1] > 0.5 * observed);
  CHECK(bv.variance[1] < 2.0 * observed);
}

TEST_CASE("ts_counts examples") {
  const auto l = TemperatureLadder::uniform(2);
  rts::RaoBlackwellStats st(2);
  const std::vector<double> q{0.5, 0.5};
  st.add_probs(0, 0, 0.0, q);
  for (int i = 0; i < 3; ++i) st.add_probs(1, 1, 0.0, q);
  CHECK(rts::ts_counts(l, st, 0.0).log_z[1] == Approx(std::log(3.0)));
  rts::RaoBlackwellStats st2(2);
  for (int i = 0; i < 4; ++i) st2.add_probs(1, 1, 0.0, q);
  CHECK(rts::ts_counts(l, st2, 0.1).log_z[1] == Approx(std::log(41.0)));
  CHECK_THROWS(rts::ts_counts(l, st2, 0.0));
}

TEST_CASE("TS and RTS agree in the long run") {
  const auto m = rts::DiscreteModel::two_state(10.0);
  auto l = TemperatureLadder::uniform(5);
  l.set_log_zhat(m.log_z(l));
  auto chains = rts::make_chains(m, l, 10, 3);
  const auto short_run = rts::run_chains(m, l, chains, 100, {});
  const auto long_run = rts::run_chains(m, l, chains, 20000, {});
  const double d_short = std::abs(rts::ts_counts(l, short_run).log_z_final() - rts::rts(l, short_run).log_z_final());
  const double d_long = std::abs(rts::ts_counts(l, long_run).log_z_final() - rts::rts(l, long_run).log_z_final());
  CHECK(d_long < 0.05);
  CHECK(d_long < d_short + 0.01);
}

TEST_CASE("ti and ti_rb are exact for constant delta") {
  const auto l = TemperatureLadder::uniform(7);
  rts::RaoBlackwellStats st(7);
  for (std::size_t k = 0; k < 7; ++k)
    for (int i = 0; i < 3; ++i) add_sample(st, l, k, 2.5);
  CHECK(rts::ti(l, st, rts::TiRule::kTrapezoid).log_z_final() == Approx(2.5).epsilon(1e-14));
  CHECK(rts::ti(l, st, rts::TiRule::kRiemann).log_z_final() == Approx(2.5).epsilon(1e-14));
  const auto g = rts::ti_rb_gradient(l, st);
  for (double x : g) CHECK(x == Approx(2.5).epsilon(1e-14));
  CHECK(rts::ti_rb(l, st).log_z_final() == Approx(2.5).epsilon(1e-14));
}

TEST_CASE("quadrature identities for a linear gradient") {
  const std::size_t k = 11;
  const auto l = TemperatureLadder::uniform(k);
  rts::RaoBlackwellStats st(k);
  const double a = -1.0, b = 4.0;
  for (std::size_t i = 0; i < k; ++i) add_sample(st, l, i, a + b * l.beta(i));
  const double exact = a + 0.5 * b;
  CHECK(rts::ti(l, st, rts::TiRule::kTrapezoid).log_z_final() == Approx(exact).epsilon(1e-13));
  // Right-endpoint sums overshoot by h (g_K - g_1) / 2.
  const double h = 1.0 / static_cast<double>(k - 1);
  CHECK(rts::ti(l, st, rts::TiRule::kRiemann).log_z_final() == Approx(exact + 0.5 * h * b).epsilon(1e-13));
}

TEST_CASE("ti imputes empty bins linearly") {
  const std::vector<double> betas{0.0, 0.25, 0.5, 0.75, 1.0};
  const auto v = rts::impute_linear(betas, {NAN, 1.0, NAN, 3.0, NAN});
  CHECK(v == std::vector<double>{1.0, 1.0, 2.0, 3.0, 3.0});
  CHECK_THROWS(rts::impute_linear(betas, std::vector<double>(5, NAN)));
}

TEST_CASE("ti_rb with a single sample integrates its delta") {
  const auto l = TemperatureLadder::uniform(9);
  rts::RaoBlackwellStats st(9);
  add_sample(st, l, 3, -0.7);
  for (double g : rts::ti_rb_gradient(l, st)) CHECK(g == Approx(-0.7).epsilon(1e-14));
  CHECK(rts::ti_rb(l, st).log_z_final() == Approx(-0.7).epsilon(1e-14));
}

TEST_CASE("ti_rb equals trapezoid ti for point-mass conditionals") {
  const std::size_t k = 6;
  const auto l = TemperatureLadder::uniform(k);
  rts::RaoBlackwellStats st(k);
  auto rng = rts::make_rng(2, rts::Stream::kMain);
  for (std::size_t i = 0; i < k; ++i)
    for (int n = 0; n < 5; ++n) {
      std::vector<double> lq(k, rts::kNegInf), q(k, 0.0);
      lq[i] = 0.0;
      q[i] = 1.0;
      st.add(i, i, 3.0 * rts::uniform01(rng) + static_cast<double>(i), lq, q);
    }
  const auto a = rts::ti(l, st, rts::TiRule::kTrapezoid).log_z;
  const auto b = rts::ti_rb(l, st).log_z;
  for (std::size_t i = 0; i < k; ++i) CHECK(std::abs(a[i] - b[i]) < 1e-12);
}

TEST_CASE("ti_rb approaches rts as the ladder refines") {
  // Fixed deltas from a finite model, re-weighted under each ladder.
  const auto m = random_toy(12, 3, 8.0);
  auto rng = rts::make_rng(4, rts::Stream::kMain);
  std::vector<double> deltas;
  for (int i = 0; i < 4000; ++i) {
    std::size_t x = 0;
    m.transition(x, rts::uniform01(rng), rng);
    deltas.push_back(m.delta(x));
  }
  auto gaps = [&](std::size_t k) {
    auto l = TemperatureLadder::uniform(k);
    l.set_log_zhat(m.log_z(l));
    rts::RaoBlackwellStats st(k);
    for (double d : deltas) add_sample(st, l, 0, d);
    const double r = rts::rts(l, st).log_z_final();
    return std::pair{std::abs(rts::ti_rb(l, st).log_z_final() - r), std::abs(rts::ti(l, st).log_z_final() - r)};
  };
  const auto [rb50, ti50] = gaps(50);
  const auto [rb500, ti500] = gaps(500);
  (void)ti50;
  CHECK(rb500 < rb50);
  CHECK(rb500 < 0.25 * rb50);
  CHECK(rb500 < ti500);
}

TEST_CASE("mbar with zero deltas at one bin returns zeros") {
  const auto l = TemperatureLadder::uniform(4);
  rts::SampleLog log(4, false);
  log.add_snapshot(l.log_zhat());
  for (int i = 0; i < 20; ++i) log.add(0.0, 0, 0);
  const auto est = rts::mbar(log, l);
  for (double z : est.log_z) CHECK(z == Approx(0.0).margin(1e-12));
  CHECK(est.log_z[0] == 0.0);
}

TEST_CASE("mbar with expected counts reproduces rts") {
  auto rng = rts::make_rng(8, rts::Stream::kMain);
  for (int rep = 0; rep < 10; ++rep) {
    const std::size_t k = rep % 2 ? 2 : 7;
    auto l = TemperatureLadder::uniform(k);
    std::vector<double> lz(k);
    for (std::size_t i = 1; i < k; ++i) lz[i] = 4.0 * (rts::uniform01(rng) - 0.5);
    l.set_log_zhat(lz);
    rts::SampleLog log(k, false);
    log.add_snapshot(l.log_zhat());
    rts::RaoBlackwellStats st(k);
    for (int i = 0; i < 300; ++i) {
      const double d = 6.0 * (rts::uniform01(rng) - 0.3);
      const auto b = static_cast<std::size_t>(rts::uniform01(rng) * static_cast<double>(k));
      log.add(d, b, 0);
      add_sample(st, l, b, d);
    }
    rts::MbarOptions mo;
    mo.weights = st.c_hat();
    mo.tol = 1e-12;
    const auto a = rts::mbar(log, l, mo).log_z;
    const auto b = rts::rts(l, st).log_z;
    for (std::size_t i = 0; i < k; ++i) CHECK(std::abs(a[i] - b[i]) < 1e-8);
  }
}

TEST_CASE("mbar matches the toy truth and zeroes its gradient") {
  const auto m = rts::DiscreteModel::two_state(20.0);
  auto l = TemperatureLadder::uniform(6);
  l.set_log_zhat(m.log_z(l));
  std::vector<double> reps;
  rts::SampleLog all(6, false);
  for (std::size_t r = 0; r < 10; ++r) {
    auto chains = rts::make_chains(m, l, 1, 300 + r);
    rts::SampleLog log(6, false);
    rts::RunOptions ro;
    ro.log = &log;
    rts::run_chains(m, l, chains, 2000, ro);
    reps.push_back(rts::mbar(log, l).log_z_final());
    all.add_snapshot(l.log_zhat());
    for (const auto& rec : log.records()) all.add(rec.delta, rec.beta_index, 0);
  }
  const auto est = rts::mbar(all, l);
  CHECK(std::abs(est.log_z_final() - std::log(20.0)) < 3.0 * oracle::std_error(reps) + 1e-3);
  const auto g = rts::mbar_gradient(all, l, est.log_z);
  for (std::size_t k = 0; k < 6; ++k) CHECK(std::abs(g[k]) < 1e-7);
}

TEST_CASE("stochastic mbar step properties") {
  auto l = TemperatureLadder::uniform(4);
  l.set_log_zhat({0.0, 0.2, 0.5, 0.1});
  const auto fixed = rts::mbar_stochastic_step(l, stats_with_c(l.prior()), 1.0);
  for (std::size_t k = 0; k < 4; ++k) CHECK(fixed[k] == Approx(l.log_zhat()[k]).margin(1e-15));
  const auto still = rts::mbar_stochastic_step(l, stats_with_c({0.1, 0.2, 0.3, 0.4}), 0.0);
  CHECK(still == l.log_zhat());
  const std::vector<rts::RaoBlackwellStats> batches{stats_with_c({0.1, 0.2, 0.3, 0.4}), stats_with_c({0.4, 0.3, 0.2, 0.1})};
  const auto est = rts::mbar_stochastic(l, batches, [](std::size_t) { return 0.0; });
  for (std::size_t k = 0; k < 4; ++k) CHECK(est.log_z[k] == Approx(l.log_zhat()[k]).margin(1e-15));
}

TEST_CASE("stochastic mbar agrees with rts to first order") {
  auto rng = rts::make_rng(12, rts::Stream::kMain);
  auto l = TemperatureLadder::uniform(5);
  l.set_log_zhat({0.0, 1.0, -0.5, 2.0, 0.3});
  const auto r = l.prior();
  for (double scale : {1e-2, 1e-3}) {
    double worst = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
      std::vector<double> c(5);
      double s = 0.0;
      for (std::size_t k = 0; k < 5; ++k) s += (c[k] = r[k] * (1.0 + scale * (2.0 * rts::uniform01(rng) - 1.0)));
      for (auto& x : c) x /= s;
      double dev = 0.0;
      for (std::size_t k = 0; k < 5; ++k) dev = std::max(dev, std::abs(c[k] / r[k] - 1.0));
      const auto st = stats_with_c(c);
      const auto sto = rts::mbar_stochastic_step(l, st, 1.0);
      const auto exact = rts::rts(l, st).log_z;
      double diff = 0.0;
      for (std::size_t k = 0; k < 5; ++k) diff = std::max(diff, std::abs(sto[k] - exact[k]));
      worst = std::max(worst, diff / (dev * dev));
    }
    CHECK(worst < 2.0);
  }
}

TEST_CASE("online stochastic mbar tracks the toy truth") {
  const auto m = rts::DiscreteModel::two_state(30.0);
  auto l = TemperatureLadder::uniform(8);
  auto chains = rts::make_chains(m, l, 10, 2);
  const auto est = rts::run_stochastic_mbar(m, l, chains, 400, 20);
  CHECK(std::abs(est.log_z_final() - std::log(30.0)) < 0.15);
  CHECK(l.log_zhat() == std::vector<double>(8, 0.0));
}

TEST_CASE("mixed-snapshot MLE reduces to rts for one snapshot") {
  const auto m = rts::DiscreteModel::two_state(5.0);
  auto l = TemperatureLadder::uniform(5);
  l.set_log_zhat({0.0, 0.4, 0.2, 1.0, 1.3});
  auto chains = rts::make_chains(m, l, 3, 6);
  rts::SampleLog log(5, true);
  rts::RunOptions ro;
  ro.log = &log;
  const auto st = rts::run_chains(m, l, chains, 2000, ro);
  rts::MixedOptions mo;
  mo.tol = 1e-13;
  const auto a = rts::mixed_zhat_mle(log, l, mo).log_z;
  const auto b = rts::rts(l, st).log_z;
  for (std::size_t k = 0; k < 5; ++k) CHECK(std::abs(a[k] - b[k]) < 1e-8);
}

TEST_CASE("mixed-snapshot MLE with a single sample") {
  auto l = TemperatureLadder::uniform(3);
  l.set_log_zhat({0.0, 0.5, 1.0});
  rts::SampleLog log(3, true);
  log.add_snapshot(l.log_zhat());
  const auto c = rts::beta_conditional(l, 1.7).probs;
  log.add(1.7, 2, 0, c);
  rts::RaoBlackwellStats st(3);
  add_sample(st, l, 2, 1.7);
  const auto a = rts::mixed_zhat_mle(log, l).log_z;
  const auto b = rts::rts(l, st).log_z;
  for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(a[k] - b[k]) < 1e-8);
}

TEST_CASE("mixed-snapshot MLE on interleaved snapshots hits the truth") {
  const auto m = rts::DiscreteModel::two_state(8.0);
  auto l = TemperatureLadder::uniform(5);
  const auto truth = m.log_z(l);
  std::vector<double> reps;
  for (std::size_t r = 0; r < 10; ++r) {
    auto chains = rts::make_chains(m, l, 2, 500 + r);
    rts::SampleLog log(5, true);
    rts::RunOptions ro;
    ro.log = &log;
    auto work = l;
    for (int phase = 0; phase < 4; ++phase) {
      auto lz = truth;
      for (std::size_t k = 1; k < 5; ++k) lz[k] += phase % 2 ? 0.4 : -0.3;
      work.set_log_zhat(lz);
      rts::run_chains(m, work, chains, 500, ro);
    }
    CHECK(log.snapshots().size() == 4);
    reps.push_back(rts::mixed_zhat_mle(log, l).log_z_final());
  }
  CHECK(std::abs(oracle::mean(reps) - std::log(8.0)) < 3.0 * oracle::std_error(reps));
}

TEST_CASE("stationary distribution examples") {
  const std::vector<double> p{0.9, 0.1, 0.2, 0.8};
  const auto pi = rts::stationary_distribution(p, 2);
  CHECK(pi[0] == Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(pi[1] == Approx(1.0 / 3.0).epsilon(1e-12));
  const auto o = oracle::stationary(p, 2);
  CHECK(pi[0] == Approx(o[0]).epsilon(1e-10));

  auto l = TemperatureLadder::uniform(3);
  l.set_log_zhat({0.0, 0.7, 1.1});
  rts::RaoBlackwellStats st(3);
  const std::vector<double> q{1.0 / 3, 1.0 / 3, 1.0 / 3};
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) st.add_probs(i, j, 0.0, q);
  for (auto mode : {rts::StationaryMode::kSd, rts::StationaryMode::kRsd}) {
    const auto est = rts::stationary_estimate(l, st, mode);
    for (std::size_t k = 0; k < 3; ++k) CHECK(est.log_z[k] == Approx(l.log_zhat()[k]).margin(1e-10));
  }
}

TEST_CASE("reducible transition matrices are reported") {
  const auto l = TemperatureLadder::uniform(3);
  rts::RaoBlackwellStats st(3);
  const std::vector<double> q{1.0, 0.0, 0.0};
  st.add_probs(0, 0, 0.0, std::vector<double>{0.5, 0.5, 0.0});
  st.add_probs(1, 0, 0.0, std::vector<double>{0.5, 0.5, 0.0});
  st.add_probs(0, 1, 0.0, std::vector<double>{0.5, 0.5, 0.0});
  CHECK_THROWS_WITH(rts::stationary_estimate(l, st, rts::StationaryMode::kSd), Catch::Matchers::ContainsSubstring("2"));
}

TEST_CASE("RSD matches RTS for an exact Gibbs sampler") {
  const auto m = rts::DiscreteModel::two_state(6.0);
  auto l = TemperatureLadder::uniform(5);
  l.set_log_zhat({0.0, 0.3, 0.9, 1.1, 1.4});
  std::vector<double> diff;
  for (std::size_t r = 0; r < 10; ++r) {
    auto chains = rts::make_chains(m, l, 2, 900 + r);
    const auto st = rts::run_chains(m, l, chains, 3000, {});
    diff.push_back(rts::stationary_estimate(l, st, rts::StationaryMode::kRsd).log_z_final() -
                   rts::rts(l, st).log_z_final());
  }
  CHECK(std::abs(oracle::mean(diff)) < 3.0 * oracle::std_error(diff) + 1e-3);
}

TEST_CASE("every estimator anchors log_z[0] at zero") {
  const auto m = rts::DiscreteModel::two_state(4.0);
  auto l = TemperatureLadder::uniform(4);
  l.set_log_zhat({0.0, 0.4, 0.9, 1.2});
  auto chains = rts::make_chains(m, l, 4, 1);
  rts::SampleLog log(4, true);
  rts::RunOptions ro;
  ro.log = &log;
  const auto st = rts::run_chains(m, l, chains, 500, ro);
  const std::vector<rts::LogZEstimate> all{
      rts::rts(l, st), rts::ts_counts(l, st), rts::ti(l, st, rts::TiRule::kRiemann),
      rts::ti(l, st, rts::TiRule::kTrapezoid), rts::ti_rb(l, st), rts::mbar(log, l),
      rts::mbar_stochastic(l, std::vector<rts::RaoBlackwellStats>{st}), rts::mixed_zhat_mle(log, l),
      rts::stationary_estimate(l, st, rts::StationaryMode::kSd),
      rts::stationary_estimate(l, st, rts::StationaryMode::kRsd)};
  for (const auto& e : all) {
    CHECK(e.log_z[0] == 0.0);
    CHECK(e.log_z.size() == 4);
    for (double z : e.log_z) CHECK(std::isfinite(z));
  }
}

TEST_CASE("method names round-trip") {
  for (auto m : rts::all_methods()) CHECK(rts::parse_method(rts::method_name(m)) == m);
  CHECK_FALSE(rts::parse_method("nope").has_value());
}

TEST_CASE("rts rejects a base bin with no weight") {
  const auto l = TemperatureLadder::uniform(2);
  rts::RaoBlackwellStats st(2);
  CHECK_THROWS(rts::rts(l, st));
}
