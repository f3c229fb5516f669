#include "iada/suites.hpp"

#include <chrono>
#include <cmath>
#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>

#include "iada/class_stats.hpp"
#include "iada/classifier.hpp"
#include "iada/iada_loss.hpp"
#include "iada/meta_trainer.hpp"
#include "iada/oracle.hpp"

namespace iada::suites {

nlohmann::json SuiteResult::to_json() const {
  return {{"name", name}, {"passed", passed}, {"measured", measured},
          {"bound", bound}, {"detail", detail}, {"seconds", seconds}};
}

namespace {

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

Eigen::MatrixXd uniform(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double lo = -1.0,
                        double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = u(rng);
  return m;
}

// A Aᵀ / dim with A of rank `rank`, so some draws are singular.
Eigen::MatrixXd random_psd(std::mt19937_64& rng, int dim, int rank, double scale) {
  const Eigen::MatrixXd a = uniform(rng, dim, rank);
  return scale * a * a.transpose() / static_cast<double>(dim);
}

int pick(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

double ce_row(const Eigen::RowVectorXd& z, int y) {
  const double m = z.maxCoeff();
  return m + std::log((z.array() - m).exp().sum()) - z(y);
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

}  // namespace

SuiteResult reduction(int instances, std::uint64_t seed) {
  const auto start = Clock::now();
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int k = 0; k < instances; ++k) {
    const int C = pick(rng, 2, 6), H = pick(rng, 1, 8), n = pick(rng, 1, 10);
    const Eigen::MatrixXd W = uniform(rng, C, H, -2, 2);
    const Eigen::RowVectorXd b = uniform(rng, 1, C, -2, 2);
    const Eigen::MatrixXd h = uniform(rng, n, H, -3, 3);
    std::vector<Eigen::MatrixXd> sigma;
    for (int c = 0; c < C; ++c) sigma.push_back(random_psd(rng, H, H, 1.0));
    std::vector<int> y;
    for (int i = 0; i < n; ++i) y.push_back(pick(rng, 0, C - 1));
    Eigen::VectorXd pi = uniform(rng, C, 1, 0.05, 1.0);
    pi /= pi.sum();
    const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(n, H);

    double ce = 0.0, la = 0.0;
    for (int i = 0; i < n; ++i) {
      Eigen::RowVectorXd z = h.row(i) * W.transpose() + b;
      ce += ce_row(z, y[static_cast<std::size_t>(i)]);
      for (int j = 0; j < C; ++j) z(j) += std::log(pi(j));
      la += ce_row(z, y[static_cast<std::size_t>(i)]);
    }
    ce /= n;
    la /= n;

    for (double beta : {0.0, 1.0}) {
      const LossConfig cfg{0.0, beta};
      const double expected = beta == 0.0 ? ce : la;
      const double plain = iada_loss(iada_logits(W, b, h, zero, sigma, y, pi, cfg), y);
      ad::Tape tape;
      std::vector<ad::Var> sv;
      for (const auto& s : sigma) sv.push_back(tape.constant(s));
      const IadaBatch batch{tape.constant(h), tape.constant(zero), std::make_shared<const ad::Labels>(y), pi};
      const double taped = iada_objective(tape.constant(W), tape.constant(b), batch, sv, cfg).value()(0, 0);
      worst = std::max({worst, std::abs(plain - expected), std::abs(taped - expected)});
    }
  }
  SuiteResult r{"reduction", worst <= 1e-12, worst, 1e-12, "", elapsed(start)};
  r.detail = std::to_string(instances) + " instances, max |IADA − CE/LA| = " + fmt(worst);
  return r;
}

SuiteResult jensen(int instances, long draws, std::uint64_t seed, double rho_sign) {
  const auto start = Clock::now();
  std::mt19937_64 rng(seed);
  int held = 0;
  double worst = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < instances; ++k) {
    const int C = pick(rng, 2, 5), H = pick(rng, 1, 8);
    const Eigen::MatrixXd W = uniform(rng, C, H, -1.5, 1.5);
    const Eigen::VectorXd b = uniform(rng, C, 1);
    const Eigen::VectorXd h = uniform(rng, H, 1, -2, 2);
    const double eps = uniform(rng, 1, 1)(0, 0);
    const Eigen::VectorXd g = uniform(rng, H, 1);
    const Eigen::VectorXd delta = eps * g.array().sign().matrix();
    const Eigen::MatrixXd sigma = random_psd(rng, H, pick(rng, 1, H), 2.0);
    const double alpha = uniform(rng, 1, 1, 0.0, 1.0)(0, 0);
    const int y = pick(rng, 0, C - 1);

    const double bound = surrogate_term(W, b, h, delta, sigma, rho_sign * alpha, y);
    const auto mc = oracle::mc_expected_ce(W, b, h, delta, sigma, alpha, y, draws, seed * 1000003ULL + k);
    // violation in units of the MC standard error (−3 or below passes)
    const double excess = mc.estimate - bound;
    const double z = mc.std_error > 0 ? excess / mc.std_error : (excess > 1e-12 ? INFINITY : -INFINITY);
    worst = std::max(worst, z);
    if (bound >= mc.estimate - 3.0 * mc.std_error - 1e-12) ++held;
  }
  SuiteResult r{rho_sign > 0 ? "jensen" : "jensen (ρ sign flipped)", held == instances, worst, 3.0, "",
                elapsed(start)};
  r.detail = std::to_string(held) + "/" + std::to_string(instances) + " instances satisfy the bound; worst (MC − bound)/s.e. = " + fmt(worst);
  return r;
}

SuiteResult mgf(long draws, std::uint64_t seed) {
  const auto start = Clock::now();
  const double grid_t[] = {-1.0, -0.5, 0.0, 0.5, 1.0};
  const double grid_mu[] = {-1.0, -0.5, 0.0, 0.5, 1.0};
  const double grid_s2[] = {0.0, 0.5, 1.0, 1.5, 2.0};
  int held = 0, total = 0;
  double worst = 0.0;
  for (double t : grid_t)
    for (double mu : grid_mu)
      for (double s2 : grid_s2) {
        const auto m = oracle::mgf_check(t, mu, s2, draws, seed * 7919ULL + static_cast<std::uint64_t>(total));
        const double diff = std::abs(m.mc_estimate - m.closed_form);
        // degenerate cells (t = 0 or σ² = 0) have zero s.e.; allow summation round-off
        const double tol = 4.0 * m.std_error + 1e-12 * m.closed_form;
        if (diff <= tol) ++held;
        if (m.std_error > 0) worst = std::max(worst, diff / m.std_error);
        ++total;
      }
  SuiteResult r{"mgf", held == total, worst, 4.0, "", elapsed(start)};
  r.detail = std::to_string(held) + "/" + std::to_string(total) + " grid cells within 4 s.e.; worst |MC − closed|/s.e. = " + fmt(worst);
  return r;
}

SuiteResult convergence(int seeds, std::uint64_t seed) {
  const auto start = Clock::now();
  const std::vector<long> ms{10, 100, 1000};
  const std::vector<double> mx{10.0, 100.0, 1000.0};
  // 1/π integral so every ℳ/π is exact
  const Eigen::Vector3d priors(0.5, 0.25, 0.25);
  double slope_sum = 0.0;
  for (int s = 0; s < seeds; ++s) {
    std::mt19937_64 rng(seed * 104729ULL + static_cast<std::uint64_t>(s));
    const Eigen::MatrixXd W = uniform(rng, 3, 3, -1.5, 1.5);
    const Eigen::VectorXd b = uniform(rng, 3, 1);
    std::vector<Eigen::MatrixXd> sigma;
    for (int c = 0; c < 3; ++c) sigma.push_back(random_psd(rng, 3, 3, 2.0));
    std::vector<oracle::AugmentedSample> samples;
    for (int i = 0; i < 4; ++i) {
      const Eigen::VectorXd h = uniform(rng, 3, 1, -2, 2);
      const Eigen::VectorXd delta = 0.5 * uniform(rng, 3, 1).array().sign().matrix();
      samples.push_back({h, delta, i % 3});
    }
    const auto rows = oracle::finite_loss_convergence(W, b, samples, sigma, 1.0, priors, ms, NAN,
                                                      seed * 15485863ULL + static_cast<std::uint64_t>(s));
    std::vector<double> gaps;
    for (const auto& row : rows) gaps.push_back(row.gap);
    slope_sum += oracle::log_log_slope(mx, gaps);
  }
  const double slope = slope_sum / seeds;
  SuiteResult r{"convergence", std::abs(slope + 0.5) <= 0.15, slope, -0.5, "", elapsed(start)};
  r.detail = "mean log-log slope over " + std::to_string(seeds) + " seeds = " + fmt(slope) + " (target −0.5 ± 0.15)";
  return r;
}

SuiteResult gradient(int instances, std::uint64_t seed) {
  const auto start = Clock::now();
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int k = 0; k < instances; ++k) {
    const int C = pick(rng, 2, 5), D = pick(rng, 2, 4), F = pick(rng, 2, 5), n = pick(rng, 2, 8);
    ClassifierShape shape{D, {pick(rng, 3, 8)}, F, C};
    const ClassifierParams phi = init_classifier(shape, seed * 31ULL + static_cast<std::uint64_t>(k));
    const Eigen::MatrixXd x = uniform(rng, n, D, -2, 2);
    const Eigen::MatrixXd delta = 0.5 * uniform(rng, n, F).array().sign().matrix();
    std::vector<Eigen::MatrixXd> sigma;
    for (int c = 0; c < C; ++c) sigma.push_back(random_psd(rng, F, F, 1.0));
    std::vector<int> y;
    for (int i = 0; i < n; ++i) y.push_back(pick(rng, 0, C - 1));
    Eigen::VectorXd pi = uniform(rng, C, 1, 0.05, 1.0);
    pi /= pi.sum();
    LossConfig cfg{uniform(rng, 1, 1, 0.0, 1.0)(0, 0), k % 2 == 0 ? 1.0 : 0.0};
    if (k % 4 == 3) cfg.variant = LossVariant::WeightedBound;

    auto plain = [&](const ClassifierParams& p) {
      const Eigen::MatrixXd z = iada_logits(p.head_weight(), p.head_bias(), extract_features(p, x), delta, sigma, y, pi, cfg);
      if (cfg.variant == LossVariant::Adjusted) return iada_loss(z, y);
      double total = 0.0;
      for (int i = 0; i < n; ++i) total += ce_row(z.row(i), y[static_cast<std::size_t>(i)]) / pi(y[static_cast<std::size_t>(i)]);
      return total / n;
    };

    ad::Tape tape;
    const ClassifierVars v = bind(tape, phi);
    std::vector<ad::Var> sv;
    for (const auto& s : sigma) sv.push_back(tape.constant(s));
    const IadaBatch batch{extract_features(v, tape.constant(x)), tape.constant(delta),
                          std::make_shared<const ad::Labels>(y), pi};
    const ad::Var loss = iada_objective(v.head_weight(), v.head_bias(), batch, sv, cfg);
    const auto grads = tape.gradients(loss, v.tensors);
    for (std::size_t t = 0; t < phi.tensors.size(); ++t) {
      const Eigen::MatrixXd& w = phi.tensors[t];
      auto f = [&](const Eigen::VectorXd& flat) {
        ClassifierParams q = phi;
        q.tensors[t] = Eigen::Map<const Eigen::MatrixXd>(flat.data(), w.rows(), w.cols());
        return plain(q);
      };
      const Eigen::VectorXd fd = oracle::fd_gradient(f, Eigen::Map<const Eigen::VectorXd>(w.data(), w.size()), 1e-6);
      const Eigen::MatrixXd& g = grads[t].value();
      const double scale = std::max(fd.cwiseAbs().maxCoeff(), 1e-8);
      const double err = (Eigen::Map<const Eigen::VectorXd>(g.data(), g.size()) - fd).cwiseAbs().maxCoeff() / scale;
      worst = std::max(worst, err);
    }
  }
  SuiteResult r{"gradient", worst < 1e-4, worst, 1e-4, "", elapsed(start)};
  r.detail = std::to_string(instances) + " instances, max relative error = " + fmt(worst);
  return r;
}

SuiteResult hypergradient(int instances, std::uint64_t seed) {
  const auto start = Clock::now();
  double worst = 0.0;
  int checked = 0;
  for (int k = 0; k < instances; ++k) {
    std::mt19937_64 rng(seed * 7777ULL + static_cast<std::uint64_t>(k));
    TrainConfig cfg;
    cfg.model = ClassifierShape{2, {}, 2, 2, true};
    cfg.perturb_hidden = 6;
    MetaState state;
    state.phi = init_classifier(cfg.model, seed + static_cast<std::uint64_t>(k));
    state.omega = PerturbNetParams{{uniform(rng, 6, kCharacteristics, -0.5, 0.5), uniform(rng, 1, 6, -0.5, 0.5),
                                    uniform(rng, 1, 6), uniform(rng, 1, 1, -0.3, 0.3)}};
    state.stats = ClassStats(2, 2);
    state.stats.covariances = {random_psd(rng, 2, 2, 2.0), random_psd(rng, 2, 2, 2.0)};
    state.priors = Eigen::Vector2d(0.7, 0.3);
    const Batch batch{uniform(rng, 4, 2, -2, 2), {0, 1, 1, 0}, {0, 1, 2, 3}};
    const Batch meta{uniform(rng, 4, 2, -2, 2), {1, 0, 0, 1}, {0, 1, 2, 3}};
    BatchContext ctx;
    ctx.features = batch.x;
    ctx.sign_grad = ce_grad_wrt_features(state.phi.head_weight(), state.phi.head_bias(), batch.x, batch.y).array().sign();
    ctx.f = uniform(rng, 4, kCharacteristics, -2, 2);
    // keep the perturbation net away from ReLU kinks
    const Eigen::MatrixXd pre = (ctx.f * state.omega.tensors[0].transpose()).rowwise() + state.omega.tensors[1].row(0);
    if (pre.cwiseAbs().minCoeff() < 1e-3) continue;
    ++checked;

    const double lr = 0.4;
    auto meta_loss = [&](const MetaState& s) {
      const PseudoStep p = pseudo_step(s, batch, ctx, cfg, lr);
      const Eigen::MatrixXd z = (meta.x * p.phi_bar.head_weight().value().transpose()).rowwise() +
                                p.phi_bar.head_bias().value().row(0);
      return iada_loss(z, meta.y);
    };
    PseudoStep p = pseudo_step(state, batch, ctx, cfg, lr);
    const Hypergradient hyper = meta_hypergradient(p, meta);

    for (std::size_t t = 0; t < state.omega.tensors.size(); ++t) {
      const Eigen::MatrixXd& w = state.omega.tensors[t];
      auto f = [&](const Eigen::VectorXd& flat) {
        MetaState s = state;
        s.omega.tensors[t] = Eigen::Map<const Eigen::MatrixXd>(flat.data(), w.rows(), w.cols());
        return meta_loss(s);
      };
      const Eigen::VectorXd fd = oracle::fd_gradient(f, Eigen::Map<const Eigen::VectorXd>(w.data(), w.size()), 1e-6);
      const Eigen::VectorXd got = Eigen::Map<const Eigen::VectorXd>(hyper.omega[t].data(), hyper.omega[t].size());
      worst = std::max(worst, (got - fd).cwiseAbs().maxCoeff() / std::max(fd.cwiseAbs().maxCoeff(), 1e-8));
    }
    for (int c = 0; c < 2; ++c) {
      const Eigen::MatrixXd sym = 0.5 * (hyper.sigma[static_cast<std::size_t>(c)] + hyper.sigma[static_cast<std::size_t>(c)].transpose());
      Eigen::Vector3d got, fd;
      int e = 0;
      for (int a = 0; a < 2; ++a)
        for (int bcol = a; bcol < 2; ++bcol, ++e) {
          auto f = [&](const Eigen::VectorXd& v) {
            MetaState s = state;
            s.stats.covariances[static_cast<std::size_t>(c)](a, bcol) = v(0);
            s.stats.covariances[static_cast<std::size_t>(c)](bcol, a) = v(0);
            return meta_loss(s);
          };
          const double x0 = state.stats.covariances[static_cast<std::size_t>(c)](a, bcol);
          fd(e) = oracle::fd_gradient(f, Eigen::VectorXd::Constant(1, x0), 1e-6)(0);
          // a symmetric pair moves two entries at once
          got(e) = a == bcol ? sym(a, a) : 2.0 * sym(a, bcol);
        }
      worst = std::max(worst, (got - fd).cwiseAbs().maxCoeff() / std::max(fd.cwiseAbs().maxCoeff(), 1e-8));
    }
  }
  SuiteResult r{"hypergradient", checked > 0 && worst < 1e-3, worst, 1e-3, "", elapsed(start)};
  r.detail = std::to_string(checked) + " tiny instances (C=2, H=2, n=m=4), max relative error = " + fmt(worst);
  return r;
}

SuiteResult pooling(int partitions, std::uint64_t seed) {
  const auto start = Clock::now();
  std::mt19937_64 rng(seed);
  const int C = 3, H = 4, n = 300;
  Eigen::MatrixXd x = uniform(rng, n, H, -3, 3);
  std::vector<int> y;
  for (int i = 0; i < n; ++i) {
    y.push_back(pick(rng, 0, C - 1));
    x.row(i).array() += 2.0 * y.back();
  }
  // full-batch population covariance, computed directly
  std::vector<Eigen::MatrixXd> full;
  for (int c = 0; c < C; ++c) {
    std::vector<Eigen::Index> rows;
    for (int i = 0; i < n; ++i)
      if (y[static_cast<std::size_t>(i)] == c) rows.push_back(i);
    const Eigen::MatrixXd xc = x(rows, Eigen::all);
    const Eigen::MatrixXd centred = xc.rowwise() - xc.colwise().mean();
    full.push_back(centred.transpose() * centred / static_cast<double>(rows.size()));
  }
  double worst = 0.0;
  for (int p = 0; p < partitions; ++p) {
    std::vector<long> order(n);
    std::iota(order.begin(), order.end(), 0L);
    std::shuffle(order.begin(), order.end(), rng);
    ClassStats stats(C, H);
    std::size_t at = 0;
    while (at < order.size()) {
      const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(pick(rng, 1, 60)), order.size() - at);
      std::vector<Eigen::Index> rows(order.begin() + static_cast<long>(at), order.begin() + static_cast<long>(at + len));
      std::vector<int> labels;
      for (auto r : rows) labels.push_back(y[static_cast<std::size_t>(r)]);
      update_covariance(stats, x(rows, Eigen::all), labels);
      at += len;
    }
    for (int c = 0; c < C; ++c)
      worst = std::max(worst, (stats.covariances[static_cast<std::size_t>(c)] - full[static_cast<std::size_t>(c)]).cwiseAbs().maxCoeff());
  }
  SuiteResult r{"pooling", worst <= 1e-10, worst, 1e-10, "", elapsed(start)};
  r.detail = std::to_string(partitions) + " random partitions, max |online − full| = " + fmt(worst);
  return r;
}

std::vector<SuiteResult> run_all(std::uint64_t seed, double rho_sign) {
  return {reduction(100, seed), jensen(1000, 100000, seed, rho_sign), mgf(1000000, seed), convergence(50, seed),
          gradient(50, seed),   hypergradient(5, seed),               pooling(20, seed)};
}

}  // namespace iada::suites
