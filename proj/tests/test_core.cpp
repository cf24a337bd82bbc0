#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "rts/core.hpp"
#include "rts/toy.hpp"

using Catch::Approx;
using rts::TemperatureLadder;

namespace {

// Delta = log 2 for every state.
struct ConstDelta {
  using State = int;
  double d = std::log(2.0);
  double log_f(int) const { return -1.0 + d; }
  double log_p1(int) const { return -1.0; }
  double delta(int) const { return d; }
  double transition(int& x, double, rts::Rng&) const { return delta(x); }
  int sample_p1(rts::Rng&) const { return 0; }
};

}  // namespace

TEST_CASE("ladder invariants") {
  const auto l = TemperatureLadder::uniform(100);
  CHECK(l.size() == 100);
  CHECK(l.betas().front() == 0.0);
  CHECK(l.betas().back() == 1.0);
  for (std::size_t k = 1; k < l.size(); ++k) CHECK(l.beta(k) > l.beta(k - 1));
  double s = 0.0;
  for (double r : l.prior()) s += r;
  CHECK(std::abs(s - 1.0) < 1e-12);
  CHECK(l.log_zhat()[0] == 0.0);

  const auto g = TemperatureLadder::make_betas(20, rts::Spacing::kGeometric);
  CHECK(g.front() == 0.0);
  CHECK(g.back() == 1.0);
  for (std::size_t k = 1; k < g.size(); ++k) CHECK(g[k] > g[k - 1]);

  const auto e = TemperatureLadder::exponential_log_prior(l.betas(), 2.0);
  double se = 0.0;
  for (double v : e) se += std::exp(v);
  CHECK(std::abs(se - 1.0) < 1e-12);
  CHECK(e.back() - e.front() == Approx(2.0));
}

TEST_CASE("ladder rejects bad input") {
  CHECK_THROWS(TemperatureLadder({0.0}, {0.0}));
  CHECK_THROWS(TemperatureLadder({0.0, 0.5}, {0.0, 0.0}));
  CHECK_THROWS(TemperatureLadder({0.0, 0.5, 0.5, 1.0}, std::vector<double>(4, 0.0)));
  CHECK_THROWS(TemperatureLadder({0.0, 1.0}, {0.0}));
  CHECK_THROWS(TemperatureLadder::make_betas(1, rts::Spacing::kUniform));
}

TEST_CASE("set_log_zhat anchors index 0") {
  auto l = TemperatureLadder::uniform(3);
  l.set_log_zhat({2.0, 3.0, 5.0});
  CHECK(l.log_zhat() == std::vector<double>{0.0, 1.0, 3.0});
}

TEST_CASE("tempered_log_density endpoints and linearity") {
  ConstDelta m;
  CHECK(rts::tempered_log_density(m, 0, 0.0) == m.log_p1(0));
  CHECK(rts::tempered_log_density(m, 0, 1.0) == Approx(m.log_f(0)));
  CHECK(rts::tempered_log_density(m, 0, 0.5) == Approx(m.log_p1(0) + 0.5 * std::log(2.0)));
  CHECK_THROWS(rts::tempered_log_density(m, 0, 1.5));
}

TEST_CASE("beta_conditional examples") {
  const auto l2 = TemperatureLadder::uniform(2);
  auto c = rts::beta_conditional(l2, 0.0).probs;
  CHECK(c[0] == Approx(0.5));
  CHECK(c[1] == Approx(0.5));
  c = rts::beta_conditional(l2, std::log(2.0)).probs;
  CHECK(c[0] == Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(c[1] == Approx(2.0 / 3.0).epsilon(1e-14));
  const auto l100 = TemperatureLadder::uniform(100);
  for (double p : rts::beta_conditional(l100, 0.0).probs) CHECK(p == Approx(0.01).epsilon(1e-13));
}

TEST_CASE("beta_conditional sums to one and matches a direct oracle") {
  auto l = TemperatureLadder::uniform(50);
  std::vector<double> lz(50);
  for (std::size_t k = 0; k < 50; ++k) lz[k] = 3.0 * l.beta(k) * l.beta(k);
  l.set_log_zhat(lz);
  std::vector<double> zhat(50), r = l.prior();
  for (std::size_t k = 0; k < 50; ++k) zhat[k] = std::exp(l.log_zhat()[k]);
  auto rng = rts::make_rng(1, rts::Stream::kMain);
  for (int i = 0; i < 1000; ++i) {
    const double d = 2e4 * (rts::uniform01(rng) - 0.5);
    const auto p = rts::beta_conditional(l, d).probs;
    double s = 0.0;
    for (double x : p) {
      CHECK(x >= 0.0);
      s += x;
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
    if (std::abs(d) < 50.0) {
      const auto o = oracle::beta_conditional(l.betas(), r, zhat, d);
      for (std::size_t k = 0; k < 50; ++k) CHECK(p[k] == Approx(o[k]).margin(1e-14).epsilon(1e-10));
    }
  }
}

TEST_CASE("shifting log_zhat leaves the conditional unchanged") {
  // Only differences between bins matter; the anchored ladder stores the
  // same vector either way.
  auto a = TemperatureLadder::uniform(5), b = TemperatureLadder::uniform(5);
  a.set_log_zhat({0.0, 0.25, -1.0, 2.0, 4.0});
  b.set_log_zhat({7.0, 7.25, 6.0, 9.0, 11.0});
  for (double d : {-30.0, 0.0, 1.5, 1e3}) CHECK(rts::beta_conditional(a, d).probs == rts::beta_conditional(b, d).probs);
}

TEST_CASE("marginal_q_beta examples") {
  const auto l2 = TemperatureLadder::uniform(2);
  const std::vector<double> z{0.0, std::log(3.0)};
  auto q = rts::marginal_q_beta(l2, z);
  CHECK(q[0] == Approx(0.25));
  CHECK(q[1] == Approx(0.75));

  auto l3 = TemperatureLadder::uniform(3);
  l3.set_log_zhat({0.0, 1.0, 2.5});
  q = rts::marginal_q_beta(l3, l3.log_zhat());
  for (double x : q) CHECK(x == Approx(1.0 / 3.0).epsilon(1e-15));

  auto le = TemperatureLadder(TemperatureLadder::make_betas(4, rts::Spacing::kUniform),
                              TemperatureLadder::exponential_log_prior(TemperatureLadder::make_betas(4, rts::Spacing::kUniform), 2.0));
  le.set_log_zhat({0.0, 0.2, 0.9, 1.1});
  q = rts::marginal_q_beta(le, le.log_zhat());
  const auto r = le.prior();
  for (std::size_t k = 0; k < 4; ++k) CHECK(q[k] == Approx(r[k]).epsilon(1e-14));
}

TEST_CASE("marginal_q_beta is the average conditional under q(x)") {
  // Two-state model, uniform base, f = (1, 2).
  const std::vector<double> f{1.0, 2.0}, p1{0.5, 0.5};
  auto l = TemperatureLadder::uniform(4);
  l.set_log_zhat({0.0, 0.1, 0.3, 0.2});
  const auto r = l.prior();
  std::vector<double> truth(4);
  for (std::size_t k = 0; k < 4; ++k) truth[k] = oracle::toy_log_z(f, p1, l.beta(k));
  // q(x) = sum_k r_k f_k(x) / Zhat_k, with f_k(x) = f^b p1^(1-b).
  std::vector<double> qx(2, 0.0);
  double norm = 0.0;
  for (std::size_t x = 0; x < 2; ++x) {
    for (std::size_t k = 0; k < 4; ++k)
      qx[x] += r[k] * std::pow(f[x], l.beta(k)) * std::pow(p1[x], 1.0 - l.beta(k)) / std::exp(l.log_zhat()[k]);
    norm += qx[x];
  }
  std::vector<double> avg(4, 0.0);
  for (std::size_t x = 0; x < 2; ++x) {
    const auto c = rts::beta_conditional(l, std::log(f[x] / p1[x])).probs;
    for (std::size_t k = 0; k < 4; ++k) avg[k] += qx[x] / norm * c[k];
  }
  const auto q = rts::marginal_q_beta(l, truth);
  for (std::size_t k = 0; k < 4; ++k) CHECK(q[k] == Approx(avg[k]).epsilon(1e-12));
}

TEST_CASE("sample_index follows the probabilities") {
  auto rng = rts::make_rng(2, rts::Stream::kMain);
  const std::vector<double> p{0.2, 0.5, 0.3};
  std::vector<double> n(3, 0.0);
  const int draws = 200000;
  for (int i = 0; i < draws; ++i) n[rts::sample_index(p, rng)] += 1.0;
  for (std::size_t k = 0; k < 3; ++k)
    CHECK(n[k] / draws == Approx(p[k]).margin(4.0 * std::sqrt(p[k] * (1 - p[k]) / draws)));
}

TEST_CASE("two-state toy log Z") {
  const auto m = rts::DiscreteModel::two_state(3.0);
  CHECK(m.log_z(1.0) == Approx(std::log(3.0)).epsilon(1e-14));
  CHECK(m.log_z(0.0) == Approx(0.0).margin(1e-15));
  CHECK(m.log_z(0.4) == Approx(oracle::toy_log_z({1.0, 2.0}, {0.5, 0.5}, 0.4)).epsilon(1e-14));
}
