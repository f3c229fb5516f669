#include <cmath>
#include <random>

#include "doctest.h"
#include "iada/iada_loss.hpp"
#include "iada/oracle.hpp"
#include "iada/suites.hpp"
#include "support.hpp"

using namespace iada;

TEST_CASE("oracle config bounds") {
  oracle::OracleConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.mc_samples = 999;
  CHECK_THROWS(cfg.validate());
  cfg = {};
  cfg.fd_step = 1e-2;
  CHECK_THROWS(cfg.validate());
  cfg.fd_step = 1e-8;
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("explicit augmentation") {
  const Eigen::Vector3d h(0.5, -1.0, 2.0);
  const Eigen::Vector3d delta(0.1, 0.1, -0.1);
  SUBCASE("α = 0 returns the centre exactly") {
    const Eigen::MatrixXd draws = oracle::explicit_augment(h, delta, Eigen::Matrix3d::Identity(), 0.0, 50, 1);
    for (Eigen::Index r = 0; r < draws.rows(); ++r) CHECK(draws.row(r) == (h + delta).transpose());
  }
  SUBCASE("identity covariance: sample mean within 4σ/√n") {
    const long n = 100000;
    const Eigen::MatrixXd draws = oracle::explicit_augment(h, delta, Eigen::Matrix3d::Identity(), 1.0, n, 2);
    const Eigen::VectorXd mean = draws.colwise().mean().transpose();
    for (int k = 0; k < 3; ++k) CHECK(std::abs(mean(k) - (h + delta)(k)) < 4.0 / std::sqrt(static_cast<double>(n)));
  }
  SUBCASE("sample covariance approaches αΣ") {
    std::mt19937_64 rng(3);
    const Eigen::MatrixXd sigma = testing::random_psd(rng, 3, 2.0);
    auto frob = [&](long n) {
      const Eigen::MatrixXd d = oracle::explicit_augment(h, delta, sigma, 0.5, n, 4);
      const Eigen::MatrixXd c = d.rowwise() - d.colwise().mean();
      return (c.transpose() * c / static_cast<double>(n) - 0.5 * sigma).norm();
    };
    const double coarse = frob(1000);
    const double fine = frob(100000);
    CHECK(fine < coarse);
    CHECK(fine < 0.02 * (0.5 * sigma).norm() + 1e-3);
  }
  SUBCASE("rank-deficient Σ is sampled through the jitter") {
    Eigen::Matrix3d sigma = Eigen::Matrix3d::Zero();
    sigma(0, 0) = 1.0;
    CHECK_NOTHROW(oracle::explicit_augment(h, delta, sigma, 1.0, 10, 5));
  }
  SUBCASE("indefinite Σ is rejected") {
    Eigen::Matrix3d sigma = Eigen::Matrix3d::Identity();
    sigma(1, 1) = -1.0;
    CHECK_THROWS_AS(oracle::explicit_augment(h, delta, sigma, 1.0, 10, 5), std::domain_error);
  }
}

TEST_CASE("Monte-Carlo expected CE") {
  std::mt19937_64 rng(11);
  const Eigen::MatrixXd W = testing::uniform(rng, 3, 2);
  const Eigen::VectorXd b = testing::uniform(rng, 3, 1);
  const Eigen::VectorXd h = testing::uniform(rng, 2, 1);
  const Eigen::VectorXd delta = testing::uniform(rng, 2, 1, -0.3, 0.3);
  const Eigen::MatrixXd sigma = testing::random_psd(rng, 2);
  SUBCASE("α = 0 is the CE at h + δ") {
    const auto est = oracle::mc_expected_ce(W, b, h, delta, sigma, 0.0, 1, 5000, 1);
    CHECK(est.std_error == 0.0);
    CHECK(est.estimate == doctest::Approx(surrogate_term(W, b, h, delta, sigma, 0.0, 1)).epsilon(1e-14));
  }
  SUBCASE("one class has zero loss") {
    const auto est = oracle::mc_expected_ce(W.topRows(1), b.head(1), h, delta, sigma, 1.0, 0, 5000, 1);
    CHECK(est.estimate == 0.0);
  }
  SUBCASE("closed form bounds the expectation") {
    for (int k = 0; k < 20; ++k) {
      const Eigen::MatrixXd s = testing::random_psd(rng, 2, 2.0);
      const double alpha = testing::uniform(rng, 1, 1, 0.0, 1.0)(0, 0);
      const auto est = oracle::mc_expected_ce(W, b, h, delta, s, alpha, k % 3, 20000, k);
      CHECK(surrogate_term(W, b, h, delta, s, alpha, k % 3) >= est.estimate - 3.0 * est.std_error);
    }
  }
}

TEST_CASE("moment-generating function") {
  SUBCASE("t = 0") {
    const auto m = oracle::mgf_check(0.0, 1.3, 0.7, 1000, 1);
    CHECK(m.closed_form == 1.0);
    CHECK(m.mc_estimate == 1.0);
  }
  SUBCASE("σ² = 0") {
    const auto m = oracle::mgf_check(0.4, -0.6, 0.0, 100000, 1);
    CHECK(m.closed_form == doctest::Approx(std::exp(-0.24)).epsilon(1e-15));
    CHECK(m.mc_estimate == doctest::Approx(m.closed_form).epsilon(1e-14));
    CHECK(m.std_error == 0.0);
  }
  SUBCASE("t = 0.7, μ = −0.3, σ² = 2.1 at 1e6 draws") {
    const auto m = oracle::mgf_check(0.7, -0.3, 2.1, 1000000, 5);
    CHECK(m.closed_form == doctest::Approx(std::exp(0.7 * -0.3 + 0.5 * 2.1 * 0.49)).epsilon(1e-15));
    CHECK(std::abs(m.mc_estimate - m.closed_form) < 4.0 * m.std_error);
  }
  CHECK_THROWS(oracle::mgf_check(1.0, 0.0, -1.0, 10, 1));
}

TEST_CASE("finite augmentation convergence") {
  const Eigen::MatrixXd W = Eigen::MatrixXd::Identity(2, 2);
  const Eigen::VectorXd b = Eigen::VectorXd::Zero(2);
  const std::vector<Eigen::MatrixXd> sigma{Eigen::Matrix2d::Identity(), Eigen::Matrix2d::Identity()};
  const std::vector<oracle::AugmentedSample> samples{{Eigen::Vector2d(1.0, 0.0), Eigen::Vector2d::Zero(), 0},
                                                     {Eigen::Vector2d(0.0, 1.0), Eigen::Vector2d::Zero(), 1}};
  const Eigen::Vector2d priors(0.5, 0.5);
  SUBCASE("α = 0 with ℳ = 1 has no gap") {
    const double limit = oracle::weighted_expected_ce(W, b, samples, sigma, 0.0, priors, 10, 1);
    const std::vector<long> ms{1};
    const auto rows = oracle::finite_loss_convergence(W, b, samples, sigma, 0.0, priors, ms, limit, 1);
    CHECK(rows[0].gap == 0.0);
  }
  SUBCASE("rarer classes receive proportionally more draws") {
    CHECK(oracle::augmentation_count(100, 0.1) == 10 * oracle::augmentation_count(100, 1.0));
    CHECK(oracle::augmentation_count(1, 0.5) == 2);
    CHECK_THROWS(oracle::augmentation_count(10, 0.0));
  }
  SUBCASE("log-log slope of an exact power law") {
    const std::vector<double> m{10, 100, 1000};
    const std::vector<double> gap{1.0, 1.0 / std::sqrt(10.0), 0.1};
    CHECK(oracle::log_log_slope(m, gap) == doctest::Approx(-0.5).epsilon(1e-12));
  }
  SUBCASE("gap shrinks like 1/√ℳ across seeds") {
    const auto r = suites::convergence(10, 3);
    CHECK(r.measured == doctest::Approx(-0.5).epsilon(0.4));
  }
}

TEST_CASE("finite differences") {
  auto quad = [](const Eigen::VectorXd& v) { return 3.0 * v(0) * v(0) - v(0) * v(1) + 2.0 * v(1); };
  const Eigen::VectorXd g = oracle::fd_gradient(quad, Eigen::Vector2d(1.0, -2.0), 1e-3);
  CHECK(g(0) == doctest::Approx(8.0).epsilon(1e-9));
  CHECK(g(1) == doctest::Approx(1.0).epsilon(1e-9));
  auto sine = [](const Eigen::VectorXd& v) { return std::sin(v(0)); };
  CHECK(std::abs(oracle::fd_gradient(sine, Eigen::VectorXd::Zero(1), 1e-5)(0) - 1.0) < 1e-8);
  auto blowup = [](const Eigen::VectorXd& v) { return v(0) > 0 ? INFINITY : 0.0; };
  CHECK_THROWS_AS(oracle::fd_gradient(blowup, Eigen::VectorXd::Zero(1)), std::domain_error);
}

TEST_CASE("verification suites on reduced sizes") {
  CHECK(suites::reduction(20, 2).passed);
  CHECK(suites::gradient(10, 2).passed);
  CHECK(suites::hypergradient(3, 2).passed);
  CHECK(suites::pooling(5, 2).passed);
  CHECK(suites::jensen(100, 5000, 2).passed);
  SUBCASE("a sign fault in ρ breaks the bound") { CHECK_FALSE(suites::jensen(100, 5000, 2, -1.0).passed); }
  SUBCASE("verdicts do not depend on the seed") {
    for (std::uint64_t seed : {5u, 9u}) {
      CHECK(suites::jensen(50, 5000, seed).passed);
      CHECK_FALSE(suites::jensen(50, 5000, seed, -1.0).passed);
    }
  }
}
