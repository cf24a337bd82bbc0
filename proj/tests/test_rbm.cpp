#include <catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <vector>

#include "oracles.hpp"
#include "rts/rbm.hpp"

using Catch::Approx;

namespace {

rts::RbmState state_of(std::uint64_t s, std::size_t m, std::size_t j) {
  rts::RbmState x{Eigen::VectorXd(static_cast<Eigen::Index>(m)), Eigen::VectorXd(static_cast<Eigen::Index>(j))};
  const auto v = oracle::bits(s, m), h = oracle::bits(s >> m, j);
  for (std::size_t i = 0; i < m; ++i) x.v(static_cast<Eigen::Index>(i)) = v[i];
  for (std::size_t k = 0; k < j; ++k) x.h(static_cast<Eigen::Index>(k)) = h[k];
  return x;
}

std::uint64_t index_of(const rts::RbmState& x) {
  std::uint64_t s = 0;
  const auto m = static_cast<std::size_t>(x.v.size());
  for (Eigen::Index i = 0; i < x.v.size(); ++i) s |= static_cast<std::uint64_t>(x.v(i) > 0.5) << i;
  for (Eigen::Index k = 0; k < x.h.size(); ++k) s |= static_cast<std::uint64_t>(x.h(k) > 0.5) << (m + static_cast<std::size_t>(k));
  return s;
}

}  // namespace

TEST_CASE("zero RBM with uniform base") {
  const rts::RbmModel m(rts::RbmParams(4, 3), rts::BaseBernoulli::uniform(4));
  const auto x = state_of(0b1010101, 4, 3);
  CHECK(m.log_f(x) == 0.0);
  CHECK(m.log_p1(x) == Approx(-7.0 * std::log(2.0)).epsilon(1e-14));
  CHECK(m.delta(x) == Approx(7.0 * std::log(2.0)).epsilon(1e-14));
  CHECK(rts::rbm_exact_log_z(rts::RbmParams(4, 3)) == Approx(4.85203026391962).epsilon(1e-13));
}

TEST_CASE("log f, log p1 and delta agree with scalar loops on every state") {
  const auto p = rts::RbmParams::random(4, 3, 42, 1.0);
  Eigen::VectorXd base(4);
  base << 0.2, 0.5, 0.9, 0.35;
  const rts::RbmModel m(p, rts::BaseBernoulli(base));
  for (std::uint64_t s = 0; s < 128; ++s) {
    const auto x = state_of(s, 4, 3);
    const auto v = oracle::bits(s, 4), h = oracle::bits(s >> 4, 3);
    const double lf = oracle::rbm_log_f(p, v, h), lp = oracle::rbm_log_p1(base, v, 3);
    CHECK(m.log_f(x) == Approx(lf).margin(1e-12));
    CHECK(m.log_p1(x) == Approx(lp).margin(1e-12));
    CHECK(m.delta(x) == Approx(lf - lp).margin(1e-12));
  }
}

TEST_CASE("transition returns delta of the new state") {
  const auto p = rts::RbmParams::random(7, 4, 3, 1.0);
  const rts::RbmModel m(p, rts::BaseBernoulli::uniform(7));
  auto rng = rts::make_rng(1, rts::Stream::kMain);
  auto x = m.sample_p1(rng);
  for (double beta : {0.0, 0.3, 1.0, 0.7}) {
    const double d = m.transition(x, beta, rng);
    CHECK(d == Approx(m.delta(x)).margin(1e-12));
  }
}

TEST_CASE("beta = 0 sweeps sample the base") {
  Eigen::VectorXd base(3);
  base << 0.1, 0.5, 0.8;
  const rts::RbmModel m(rts::RbmParams::random(3, 2, 5, 2.0), rts::BaseBernoulli(base));
  auto rng = rts::make_rng(2, rts::Stream::kMain);
  auto x = m.sample_p1(rng);
  Eigen::VectorXd sv = Eigen::VectorXd::Zero(3), sh = Eigen::VectorXd::Zero(2);
  const int n = 40000;
  for (int i = 0; i < n; ++i) {
    m.transition(x, 0.0, rng);
    sv += x.v;
    sh += x.h;
  }
  for (Eigen::Index i = 0; i < 3; ++i) CHECK(std::abs(sv(i) / n - base(i)) < 0.01);
  for (Eigen::Index j = 0; j < 2; ++j) CHECK(std::abs(sh(j) / n - 0.5) < 0.01);
}

TEST_CASE("Gibbs sweeps leave the tempered joint invariant") {
  const auto p = rts::RbmParams::random(2, 2, 8, 1.5);
  Eigen::VectorXd base(2);
  base << 0.3, 0.6;
  const rts::RbmModel m(p, rts::BaseBernoulli(base));
  const auto target = oracle::rbm_tempered_probs(p, base, 0.5);
  auto rng = rts::make_rng(6, rts::Stream::kMain);
  auto x = m.sample_p1(rng);
  std::vector<double> freq(16, 0.0);
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    m.transition(x, 0.5, rng);
    freq[index_of(x)] += 1.0 / n;
  }
  // oracle orders states as sv + 4 sh, same as index_of
  for (std::size_t s = 0; s < 16; ++s) CHECK(std::abs(freq[s] - target[s]) < 0.006);
}

TEST_CASE("exact log Z examples and layer agreement") {
  CHECK(rts::rbm_exact_log_z(rts::RbmParams(5, 9)) == Approx(14.0 * std::log(2.0)).epsilon(1e-13));
  const auto small = rts::RbmParams::random(4, 3, 42, 1.0);
  CHECK(rts::rbm_exact_log_z(small) == Approx(oracle::rbm_log_z(small)).margin(1e-10));
  const auto p = rts::RbmParams::random(12, 9, 1, 0.7);
  CHECK(rts::rbm_exact_log_z_hidden(p) == Approx(rts::rbm_exact_log_z_visible(p)).margin(1e-9));
  // Long enumeration crosses the drift refresh.
  const auto wide = rts::RbmParams::random(18, 30, 4, 0.3);
  CHECK(rts::rbm_exact_log_z_visible(wide) == Approx(rts::rbm_exact_log_z(wide)).margin(1e-10));
  CHECK_THROWS_AS(rts::rbm_exact_log_z(rts::RbmParams(30, 30)), rts::EnumerationInfeasible);
}

TEST_CASE("free energy matches the hidden marginal and normalizes") {
  const auto p = rts::RbmParams::random(6, 4, 9, 1.0);
  const double lz = rts::rbm_exact_log_z(p);
  std::vector<double> lp;
  rts::Dataset all(64, 6);
  for (std::uint64_t s = 0; s < 64; ++s) {
    const auto v = oracle::bits(s, 6);
    Eigen::VectorXd ev(6);
    for (std::size_t i = 0; i < 6; ++i) ev(static_cast<Eigen::Index>(i)) = v[i];
    all.row(static_cast<Eigen::Index>(s)) = ev.transpose();
    const double f = rts::rbm_free_energy(p, ev);
    CHECK(f == Approx(oracle::rbm_log_marginal(p, v)).margin(1e-10));
    lp.push_back(f - lz);
  }
  double total = 0.0;
  for (double x : lp) total += std::exp(x);
  CHECK(std::abs(total - 1.0) < 1e-10);
  const auto fe = rts::rbm_free_energies(p, all);
  for (Eigen::Index r = 0; r < 64; ++r) CHECK(fe(r) == Approx(lp[static_cast<std::size_t>(r)] + lz).margin(1e-10));
  CHECK(rts::data_log_likelihood(p, lz, all) == Approx(oracle::mean(lp)).margin(1e-10));
  CHECK_THROWS(rts::data_log_likelihood(p, lz, rts::Dataset(3, 5)));
}

TEST_CASE("exact sampler matches the visible marginal") {
  const auto p = rts::RbmParams::random(3, 2, 13, 1.5);
  const rts::RbmExactSampler ex(p);
  CHECK(ex.log_z() == Approx(oracle::rbm_log_z(p)).margin(1e-10));
  auto rng = rts::make_rng(3, rts::Stream::kMain);
  std::vector<double> freq(8, 0.0);
  const int n = 100000;
  const auto d = ex.sample_visible(n, rng);
  for (Eigen::Index r = 0; r < d.rows(); ++r) {
    std::uint64_t s = 0;
    for (Eigen::Index i = 0; i < 3; ++i) s |= static_cast<std::uint64_t>(d(r, i) > 0.5) << i;
    freq[s] += 1.0 / n;
  }
  for (std::uint64_t s = 0; s < 8; ++s) {
    const double pv = std::exp(oracle::rbm_log_marginal(p, oracle::bits(s, 3)) - ex.log_z());
    CHECK(std::abs(freq[s] - pv) < 5.0 * std::sqrt(pv * (1 - pv) / n) + 1e-4);
  }
  CHECK_THROWS_AS(rts::RbmExactSampler(rts::RbmParams(5, 21)), rts::EnumerationInfeasible);
}

TEST_CASE("base distributions") {
  rts::Dataset d(4, 3);
  d << 0, 1, 1,
       0, 1, 0,
       0, 1, 1,
       0, 1, 0;
  const auto b = rts::base_from_data(d);
  CHECK(b.p()(0) == rts::BaseBernoulli::kClip);
  CHECK(b.p()(1) == 1.0 - rts::BaseBernoulli::kClip);
  CHECK(b.p()(2) == 0.5);
  CHECK_THROWS(rts::base_from_data(rts::Dataset(0, 3)));
  CHECK_THROWS(rts::RbmModel(rts::RbmParams(4, 2), rts::BaseBernoulli::uniform(3)));
}

TEST_CASE("prototype datasets") {
  const auto a = rts::prototype_dataset(200, 30, 4, 0.0, 3);
  const auto b = rts::prototype_dataset(200, 30, 4, 0.0, 3);
  CHECK(a == b);
  std::map<std::vector<double>, int> distinct;
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    std::vector<double> row(a.row(r).data(), a.row(r).data() + a.cols());
    for (double x : row) CHECK((x == 0.0 || x == 1.0));
    ++distinct[row];
  }
  CHECK(distinct.size() <= 4);
  CHECK_THROWS(rts::prototype_dataset(10, 5, 2, 0.7, 1));
}

TEST_CASE("hidden probabilities") {
  const auto p = rts::RbmParams::random(3, 2, 1, 1.0);
  const rts::RbmModel m(p, rts::BaseBernoulli::uniform(3));
  Eigen::VectorXd v(3);
  v << 1, 0, 1;
  const auto h = m.hidden_probs(v);
  for (Eigen::Index j = 0; j < 2; ++j) {
    const double pre = p.b(j) + p.w(0, j) + p.w(2, j);
    CHECK(h(j) == Approx(1.0 / (1.0 + std::exp(-pre))).epsilon(1e-14));
  }
}
