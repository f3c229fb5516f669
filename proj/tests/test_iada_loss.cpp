#include <cmath>
#include <random>

#include "doctest.h"
#include "iada/classifier.hpp"
#include "iada/iada_loss.hpp"
#include "iada/oracle.hpp"
#include "support.hpp"

using namespace iada;

namespace {

struct Instance {
  Eigen::MatrixXd W;
  Eigen::RowVectorXd b;
  Eigen::MatrixXd h;
  Eigen::MatrixXd delta;
  std::vector<Eigen::MatrixXd> sigma;
  std::vector<int> y;
  Eigen::VectorXd priors;
};

Instance random_instance(std::mt19937_64& rng, int n, int classes, int dim) {
  Instance s;
  s.W = testing::uniform(rng, classes, dim);
  s.b = testing::uniform(rng, 1, classes);
  s.h = testing::uniform(rng, n, dim);
  s.delta = testing::uniform(rng, n, dim, -0.5, 0.5);
  for (int c = 0; c < classes; ++c) s.sigma.push_back(testing::random_psd(rng, dim));
  std::uniform_int_distribution<int> pick(0, classes - 1);
  for (int i = 0; i < n; ++i) s.y.push_back(pick(rng));
  s.priors = testing::uniform(rng, classes, 1, 0.1, 1.0);
  s.priors /= s.priors.sum();
  return s;
}

double plain_ce(const Eigen::MatrixXd& W, const Eigen::RowVectorXd& b, const Eigen::MatrixXd& h,
                const std::vector<int>& y) {
  const Eigen::MatrixXd z = (h * W.transpose()).rowwise() + b;
  return iada_loss(z, y);
}

}  // namespace

TEST_CASE("perturbation direction") {
  Eigen::MatrixXd g(1, 3);
  g << 0.3, -0.1, 0.0;
  const Eigen::MatrixXd d = compute_delta(g, Eigen::VectorXd::Constant(1, 0.5));
  CHECK(d(0, 0) == 0.5);
  CHECK(d(0, 1) == -0.5);
  CHECK(d(0, 2) == 0.0);
  CHECK(compute_delta(g, Eigen::VectorXd::Zero(1)).isZero(0.0));

  SUBCASE("small positive epsilon ascends the CE loss") {
    std::mt19937_64 rng(31);
    int checked = 0;
    for (int t = 0; t < 200; ++t) {
      const Instance s = random_instance(rng, 1, 4, 5);
      const Eigen::MatrixXd grad = ce_grad_wrt_features(s.W, s.b, s.h, s.y);
      if ((grad.array() == 0.0).any()) continue;
      const Eigen::MatrixXd step = compute_delta(grad, Eigen::VectorXd::Constant(1, 1e-3));
      CHECK(plain_ce(s.W, s.b, s.h + step, s.y) >= plain_ce(s.W, s.b, s.h, s.y));
      CHECK(plain_ce(s.W, s.b, s.h - step, s.y) <= plain_ce(s.W, s.b, s.h, s.y));
      ++checked;
    }
    CHECK(checked > 150);
  }
}

TEST_CASE("rho") {
  Eigen::MatrixXd W(2, 2);
  W << 1.0, 1.0, 0.0, 0.0;
  const Eigen::VectorXd r = rho(W, Eigen::Matrix2d::Identity(), 1);
  CHECK(r(1) == 0.0);
  CHECK(r(0) == doctest::Approx(1.0));

  std::mt19937_64 rng(5);
  for (int t = 0; t < 50; ++t) {
    const Eigen::MatrixXd w = testing::uniform(rng, 4, 6);
    const Eigen::MatrixXd s = testing::random_psd(rng, 6);
    const int y = t % 4;
    const Eigen::VectorXd got = rho(w, s, y);
    for (int j = 0; j < 4; ++j) {
      double acc = 0.0;
      for (int a = 0; a < 6; ++a)
        for (int b = 0; b < 6; ++b) acc += (w(j, a) - w(y, a)) * s(a, b) * (w(j, b) - w(y, b));
      CHECK(std::abs(got(j) - 0.5 * acc) <= 1e-12 * std::max(1.0, std::abs(acc)));
    }
  }
}

TEST_CASE("adjusted logits") {
  std::mt19937_64 rng(17);
  const Instance s = random_instance(rng, 6, 3, 4);

  SUBCASE("reduce to plain logits") {
    LossConfig cfg{0.0, 0.0};
    const Eigen::MatrixXd z = iada_logits(s.W, s.b, s.h, Eigen::MatrixXd::Zero(6, 4), s.sigma, s.y, s.priors, cfg);
    const Eigen::MatrixXd plain = (s.h * s.W.transpose()).rowwise() + s.b;
    CHECK((z.array() == plain.array()).all());
  }
  SUBCASE("balanced priors shift every logit equally") {
    LossConfig cfg{0.0, 1.0};
    const Eigen::VectorXd balanced = Eigen::VectorXd::Constant(3, 1.0 / 3.0);
    const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(6, 4);
    const Eigen::MatrixXd z = iada_logits(s.W, s.b, s.h, zero, s.sigma, s.y, balanced, cfg);
    const Eigen::MatrixXd plain = (s.h * s.W.transpose()).rowwise() + s.b;
    CHECK(((z - plain).array() - std::log(1.0 / 3.0)).abs().maxCoeff() < 1e-14);
    CHECK(iada_loss(z, s.y) == doctest::Approx(iada_loss(plain, s.y)).epsilon(1e-13));
  }
  SUBCASE("scalar evaluation") {
    LossConfig cfg{0.7, 0.6};
    const Eigen::MatrixXd z = iada_logits(s.W, s.b, s.h, s.delta, s.sigma, s.y, s.priors, cfg);
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 3; ++j) {
        const int y = s.y[i];
        double lin = s.b(j), quad = 0.0;
        for (int a = 0; a < 4; ++a) {
          lin += s.W(j, a) * (s.h(i, a) + s.delta(i, a));
          for (int c = 0; c < 4; ++c)
            quad += (s.W(j, a) - s.W(y, a)) * s.sigma[y](a, c) * (s.W(j, c) - s.W(y, c));
        }
        const double expected = lin + 0.7 * 0.5 * quad + 0.6 * std::log(s.priors(j));
        CHECK(z(i, j) == doctest::Approx(expected).epsilon(1e-12));
      }
  }
  SUBCASE("tape and plain agree") {
    LossConfig cfg{0.4, 1.0};
    ad::Tape t;
    std::vector<ad::Var> sig;
    for (const auto& m : s.sigma) sig.push_back(t.leaf(m));
    IadaBatch batch{t.constant(s.h), t.constant(s.delta), std::make_shared<const ad::Labels>(s.y), s.priors};
    const ad::Var z = iada_logits(t.leaf(s.W), t.leaf(s.b), batch, sig, cfg);
    CHECK((z.value() - iada_logits(s.W, s.b, s.h, s.delta, s.sigma, s.y, s.priors, cfg)).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("loss reductions") {
  CHECK(iada_loss(Eigen::MatrixXd::Constant(3, 10, 0.25), std::vector<int>{0, 4, 9}) ==
        doctest::Approx(std::log(10.0)).epsilon(1e-15));

  std::mt19937_64 rng(41);
  for (int t = 0; t < 100; ++t) {
    const auto shape = ClassifierShape{3, {6}, 4, 3};
    const auto params = init_classifier(shape, static_cast<std::uint64_t>(t));
    const Eigen::MatrixXd x = testing::uniform(rng, 8, 3);
    std::vector<int> y(8);
    for (int i = 0; i < 8; ++i) y[i] = (i * 7 + t) % 3;
    Eigen::VectorXd priors = testing::uniform(rng, 3, 1, 0.1, 1.0);
    priors /= priors.sum();
    const Eigen::MatrixXd h = extract_features(params, x);
    std::vector<Eigen::MatrixXd> sigma(3, Eigen::MatrixXd::Identity(4, 4));
    const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(8, 4);
    const Eigen::MatrixXd& W = params.head_weight();
    const Eigen::RowVectorXd b = params.head_bias();

    const double ce = plain_ce(W, b, h, y);
    const double reduced = iada_loss(iada_logits(W, b, h, zero, sigma, y, priors, LossConfig{0.0, 0.0}), y);
    CHECK(std::abs(reduced - ce) <= 1e-12);

    // logit adjustment baseline written out directly
    double la = 0.0;
    for (int i = 0; i < 8; ++i) {
      double norm = 0.0;
      for (int j = 0; j < 3; ++j) norm += priors(j) * std::exp(W.row(j).dot(h.row(i)) + b(j));
      la += -std::log(priors(y[i]) * std::exp(W.row(y[i]).dot(h.row(i)) + b(y[i])) / norm);
    }
    la /= 8.0;
    const double adjusted = iada_loss(iada_logits(W, b, h, zero, sigma, y, priors, LossConfig{0.0, 1.0}), y);
    CHECK(std::abs(adjusted - la) <= 1e-12);

    ad::Tape tape;
    const auto vars = bind(tape, params);
    const ad::Var hv = extract_features(vars, tape.constant(x));
    std::vector<ad::Var> sig;
    for (const auto& m : sigma) sig.push_back(tape.constant(m));
    IadaBatch batch{hv, tape.constant(zero), std::make_shared<const ad::Labels>(y), priors};
    const ad::Var obj = iada_objective(vars.head_weight(), vars.head_bias(), batch, sig, LossConfig{0.0, 0.0});
    CHECK(std::abs(obj.value()(0, 0) - ce) <= 1e-12);
  }
}

TEST_CASE("class-weighted bound") {
  std::mt19937_64 rng(23);
  const Instance s = random_instance(rng, 5, 4, 3);
  const Eigen::VectorXd balanced = Eigen::VectorXd::Constant(4, 0.25);

  const double alpha = 0.3;
  const double bound = surrogate_weighted_bound(s.W, s.b, s.h, s.delta, s.sigma, s.y, balanced, alpha);
  LossConfig cfg{alpha, 0.0};
  const double ce_on_z = iada_loss(iada_logits(s.W, s.b, s.h, s.delta, s.sigma, s.y, balanced, cfg), s.y);
  CHECK(bound == doctest::Approx(5 * 4 * ce_on_z).epsilon(1e-12));

  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(5, 3);
  double weighted_ce = 0.0;
  const Eigen::MatrixXd z = (s.h * s.W.transpose()).rowwise() + s.b;
  const Eigen::VectorXd lse = ad::logsumexp(z);
  for (int i = 0; i < 5; ++i) weighted_ce += (lse(i) - z(i, s.y[i])) / s.priors(s.y[i]);
  double previous = std::numeric_limits<double>::infinity();
  for (double a : {1e-1, 1e-3, 1e-6}) {
    const double gap = std::abs(surrogate_weighted_bound(s.W, s.b, s.h, zero, s.sigma, s.y, s.priors, a) - weighted_ce);
    CHECK(gap < previous);
    previous = gap;
  }
  CHECK(previous < 1e-5);

  // tape objective for the weighted variant is the batch mean of the bound
  ad::Tape t;
  std::vector<ad::Var> sig;
  for (const auto& m : s.sigma) sig.push_back(t.constant(m));
  IadaBatch batch{t.constant(s.h), t.constant(s.delta), std::make_shared<const ad::Labels>(s.y), s.priors};
  LossConfig weighted{alpha, 1.0, false, LossVariant::WeightedBound};
  const ad::Var obj = iada_objective(t.leaf(s.W), t.leaf(s.b), batch, sig, weighted);
  CHECK(obj.value()(0, 0) ==
        doctest::Approx(surrogate_weighted_bound(s.W, s.b, s.h, s.delta, s.sigma, s.y, s.priors, alpha) / 5).epsilon(1e-12));
}

TEST_CASE("surrogate dominates the Monte-Carlo expectation") {
  std::mt19937_64 rng(77);
  for (int t = 0; t < 20; ++t) {
    const Instance s = random_instance(rng, 1, 3, 4);
    const double alpha = 0.8;
    const double closed = surrogate_term(s.W, s.b.transpose(), s.h.row(0).transpose(), s.delta.row(0).transpose(),
                                         s.sigma[s.y[0]], alpha, s.y[0]);
    const auto mc = oracle::mc_expected_ce(s.W, s.b.transpose(), s.h.row(0).transpose(), s.delta.row(0).transpose(),
                                           s.sigma[s.y[0]], alpha, s.y[0], 20000, 100 + t);
    CHECK(closed >= mc.estimate - 3 * mc.std_error);
  }
}

TEST_CASE("regularizer diagnostics") {
  std::mt19937_64 rng(99);
  SUBCASE("vanishing terms") {
    Instance s = random_instance(rng, 7, 3, 4);
    const Eigen::MatrixXd q = ad::softmax((s.h * s.W.transpose()).rowwise() + s.b);
    const Eigen::MatrixXd r = rho_matrix(s.W, s.sigma, s.y);
    const auto zero_delta = regularizer_terms(q, r, s.W, Eigen::MatrixXd::Zero(7, 4), s.priors, s.y);
    CHECK(zero_delta.R == 0.0);
    const auto balanced = regularizer_terms(q, r, s.W, s.delta, Eigen::VectorXd::Constant(3, 1.0 / 3), s.y);
    CHECK(balanced.F == 0.0);
  }
  SUBCASE("scalar evaluation") {
    Instance s = random_instance(rng, 4, 3, 2);
    const Eigen::MatrixXd q = ad::softmax((s.h * s.W.transpose()).rowwise() + s.b);
    const auto rep = regularizer_terms(q, rho_matrix(s.W, s.sigma, s.y), s.W, s.delta, s.priors, s.y);
    double G = 0, R = 0, F = 0;
    for (int i = 0; i < 4; ++i) {
      const int y = s.y[i];
      for (int j = 0; j < 3; ++j) {
        if (j == y) continue;
        const Eigen::RowVectorXd dw = s.W.row(j) - s.W.row(y);
        G += q(i, j) * 0.5 * (dw * s.sigma[y] * dw.transpose())(0, 0);
        R += q(i, j) * dw.dot(s.delta.row(i));
        F += q(i, j) * std::log(s.priors(j) / s.priors(y));
      }
    }
    CHECK(rep.G == doctest::Approx(G).epsilon(1e-12));
    CHECK(rep.R == doctest::Approx(R).epsilon(1e-12));
    CHECK(rep.F == doctest::Approx(F).epsilon(1e-12));
  }
  SUBCASE("generalization term is non-negative for PSD covariances") {
    int negative = 0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
      std::mt19937_64 r(seed);
      const Instance s = random_instance(r, 3, 2 + static_cast<int>(seed % 4), 1 + static_cast<int>(seed % 6));
      const Eigen::MatrixXd q = ad::softmax((s.h * s.W.transpose()).rowwise() + s.b);
      const auto rep = regularizer_terms(q, rho_matrix(s.W, s.sigma, s.y), s.W, s.delta, s.priors, s.y);
      if (!((rep.per_sample_G.array() >= 0.0).all())) ++negative;
    }
    CHECK(negative == 0);
  }
}

TEST_CASE("loss gradient matches finite differences") {
  std::mt19937_64 rng(55);
  const ClassifierShape shape{3, {5}, 4, 3};
  for (int t = 0; t < 10; ++t) {
    const auto params = init_classifier(shape, 300 + t);
    const Eigen::MatrixXd x = testing::uniform(rng, 6, 3);
    const Instance s = random_instance(rng, 6, 3, 4);
    for (LossVariant variant : {LossVariant::Adjusted, LossVariant::WeightedBound}) {
      for (bool detach : {false, true}) {
        LossConfig cfg{0.5, 1.0, detach, variant};
        auto value = [&](const ClassifierParams& p) {
          const Eigen::MatrixXd h = extract_features(p, x);
          if (variant == LossVariant::WeightedBound)
            return surrogate_weighted_bound(p.head_weight(), p.head_bias(), h, s.delta, s.sigma, s.y, s.priors, 0.5) / 6;
          return iada_loss(iada_logits(p.head_weight(), p.head_bias(), h, s.delta, s.sigma, s.y, s.priors, cfg), s.y);
        };
        ad::Tape tape;
        const auto vars = bind(tape, params);
        std::vector<ad::Var> sig;
        for (const auto& m : s.sigma) sig.push_back(tape.constant(m));
        IadaBatch batch{extract_features(vars, tape.constant(x)), tape.constant(s.delta),
                        std::make_shared<const ad::Labels>(s.y), s.priors};
        const ad::Var obj = iada_objective(vars.head_weight(), vars.head_bias(), batch, sig, cfg);
        CHECK(obj.value()(0, 0) == doctest::Approx(value(params)).epsilon(1e-12));
        const auto grads = tape.gradients(obj, vars.tensors);
        for (std::size_t k = 0; k < params.tensors.size(); ++k) {
          const bool head_w = k == params.tensors.size() - 2;
          auto f = [&](const Eigen::VectorXd& v) {
            auto q = params;
            q.tensors[k] = Eigen::Map<const Eigen::MatrixXd>(v.data(), params.tensors[k].rows(), params.tensors[k].cols());
            if (detach && head_w) {
              // ρ keeps the unperturbed W
              const Eigen::MatrixXd h = extract_features(q, x);
              Eigen::MatrixXd z = ((h + s.delta) * q.head_weight().transpose()).rowwise() + q.head_bias().row(0);
              z += 0.5 * rho_matrix(params.head_weight(), s.sigma, s.y);
              if (variant == LossVariant::Adjusted) {
                z.rowwise() += s.priors.array().log().matrix().transpose();
                return iada_loss(z, s.y);
              }
              const Eigen::VectorXd lse = ad::logsumexp(z);
              double acc = 0.0;
              for (int i = 0; i < 6; ++i) acc += (lse(i) - z(i, s.y[i])) / s.priors(s.y[i]);
              return acc / 6;
            }
            return value(q);
          };
          const Eigen::MatrixXd& p0 = params.tensors[k];
          const Eigen::VectorXd x0 = Eigen::Map<const Eigen::VectorXd>(p0.data(), p0.size());
          const Eigen::MatrixXd& g = grads[k].value();
          const Eigen::VectorXd gv = Eigen::Map<const Eigen::VectorXd>(g.data(), g.size());
          CAPTURE(k);
          CAPTURE(detach);
          CHECK(testing::rel_err(gv, oracle::fd_gradient(f, x0, 1e-6)) < 1e-4);
        }
      }
    }
  }
}
