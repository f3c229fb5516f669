#include "iada/characteristics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "iada/autodiff.hpp"

namespace iada {

const std::array<const char*, kCharacteristics> kCharacteristicNames{
    "loss",    "ema_loss",   "loss_zscore",      "margin",    "ema_margin",
    "entropy", "prob_true",  "correct",          "ema_correct", "grad_norm",
    "prior",   "log_prior",  "class_mean_dist",  "progress",  "loss_rank"};

CharacteristicHistory::CharacteristicHistory(std::size_t samples, double decay_)
    : decay(decay_),
      loss(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(samples))),
      margin(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(samples))),
      correct(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(samples))),
      seen(samples, 0) {}

namespace {

void check_ids(const CharacteristicHistory& history, std::span<const long> ids) {
  for (long id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= history.size())
      throw std::out_of_range("characteristic history: unknown sample id " + std::to_string(id));
}

double fold(const CharacteristicHistory& h, const Eigen::VectorXd& store, long id, double current) {
  if (h.seen[static_cast<std::size_t>(id)] == 0) return current;
  return h.decay * store(id) + (1.0 - h.decay) * current;
}

// Average rank in [0, 1] of each value among those of the same class.
Eigen::VectorXd rank_within_class(const Eigen::VectorXd& loss, std::span<const int> labels) {
  const auto n = static_cast<Eigen::Index>(labels.size());
  Eigen::VectorXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double below = 0.0, ties = 0.0, peers = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
      if (labels[static_cast<std::size_t>(k)] != labels[static_cast<std::size_t>(i)]) continue;
      peers += 1.0;
      if (k == i) continue;
      if (loss(k) < loss(i)) below += 1.0;
      else if (loss(k) == loss(i)) ties += 1.0;
    }
    out(i) = peers < 2.0 ? 0.5 : (below + 0.5 * ties) / (peers - 1.0);
  }
  return out;
}

}  // namespace

Eigen::MatrixXd extract(const SampleView& view, const CharacteristicHistory& history, const ClassStats& stats,
                        const Eigen::VectorXd& priors) {
  const auto n = static_cast<Eigen::Index>(view.labels.size());
  const Eigen::Index classes = view.logits.cols();
  if (view.logits.rows() != n || view.features.rows() != n || view.grad_h.rows() != n ||
      static_cast<Eigen::Index>(view.ids.size()) != n)
    throw std::invalid_argument("extract: batch components disagree on size");
  if (classes < 2) throw std::invalid_argument("extract: need at least two classes");
  check_ids(history, view.ids);

  const Eigen::VectorXd lse = ad::logsumexp(view.logits);
  const Eigen::MatrixXd q = ad::softmax(view.logits);
  Eigen::MatrixXd out(n, kCharacteristics);
  Eigen::VectorXd loss(n);

  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = view.labels[static_cast<std::size_t>(i)];
    const long id = view.ids[static_cast<std::size_t>(i)];
    const auto z = view.logits.row(i);

    loss(i) = lse(i) - z(y);
    double rival = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < classes; ++j)
      if (j != y) rival = std::max(rival, z(j));
    const double margin = z(y) - rival;
    Eigen::Index top = 0;
    z.maxCoeff(&top);
    const double correct = top == y ? 1.0 : 0.0;
    double entropy = 0.0;
    for (Eigen::Index j = 0; j < classes; ++j)
      if (q(i, j) > 0.0) entropy -= q(i, j) * std::log(q(i, j));
    const double trace = stats.covariances[static_cast<std::size_t>(y)].trace();
    const double dist = (view.features.row(i).transpose() - stats.means[static_cast<std::size_t>(y)]).norm();

    out(i, kLoss) = loss(i);
    out(i, kEmaLoss) = fold(history, history.loss, id, loss(i));
    out(i, kMargin) = margin;
    out(i, kEmaMargin) = fold(history, history.margin, id, margin);
    out(i, kEntropy) = entropy;
    out(i, kTrueClassProb) = q(i, y);
    out(i, kCorrect) = correct;
    out(i, kEmaCorrect) = fold(history, history.correct, id, correct);
    out(i, kGradNorm) = view.grad_h.row(i).norm();
    out(i, kPrior) = priors(y);
    out(i, kLogPrior) = std::log(priors(y));
    out(i, kClassMeanDistance) = dist / std::max(trace, 1e-12);
    out(i, kProgress) = view.progress;
  }

  const double mu = loss.mean();
  const double sd = std::sqrt((loss.array() - mu).square().mean());
  out.col(kLossZScore) = sd > 0.0 ? Eigen::VectorXd((loss.array() - mu) / sd) : Eigen::VectorXd::Zero(n);
  out.col(kLossRank) = rank_within_class(loss, view.labels);
  return out;
}

void update_history(CharacteristicHistory& history, std::span<const long> ids, const Eigen::VectorXd& loss,
                    const Eigen::VectorXd& margin, const Eigen::VectorXd& correct) {
  check_ids(history, ids);
  for (std::size_t k = 0; k < ids.size(); ++k) {
    const long id = ids[k];
    const auto i = static_cast<Eigen::Index>(k);
    history.loss(id) = fold(history, history.loss, id, loss(i));
    history.margin(id) = fold(history, history.margin, id, margin(i));
    history.correct(id) = fold(history, history.correct, id, correct(i));
    ++history.seen[static_cast<std::size_t>(id)];
  }
}

void update_history(CharacteristicHistory& history, std::span<const long> ids, const Eigen::MatrixXd& raw) {
  update_history(history, ids, raw.col(kLoss), raw.col(kMargin), raw.col(kCorrect));
}

void RunningNormalizer::observe(const Eigen::MatrixXd& batch) {
  const Eigen::RowVectorXd m = batch.colwise().mean();
  const Eigen::RowVectorXd v = (batch.rowwise() - m).array().square().colwise().mean();
  if (!initialized) {
    mean = m;
    var = v;
    initialized = true;
    return;
  }
  // EMA of the first two moments; the shift term keeps drifting columns
  // from collapsing to zero variance.
  const Eigen::RowVectorXd d = m - mean;
  var = decay * var + (1.0 - decay) * v + decay * (1.0 - decay) * d.array().square().matrix();
  mean = decay * mean + (1.0 - decay) * m;
}

Eigen::MatrixXd RunningNormalizer::apply(const Eigen::MatrixXd& batch) const {
  if (!initialized) throw std::logic_error("RunningNormalizer::apply before observe");
  const Eigen::RowVectorXd sd = var.array().sqrt().max(min_std);
  Eigen::MatrixXd z = (batch.rowwise() - mean).array().rowwise() / sd.array();
  return z.cwiseMax(-clip).cwiseMin(clip);
}

}  // namespace iada
