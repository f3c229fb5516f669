#include "iada/meta_trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace iada {

namespace {

void emit(const MetaState& state, const char* event) {
  if (state.trace) state.trace->emplace_back(event);
}

bool all_finite(const ParamList& tensors) {
  return std::all_of(tensors.begin(), tensors.end(), [](const Eigen::MatrixXd& t) { return t.allFinite(); });
}

ParamList values(const std::vector<ad::Var>& vars) {
  ParamList out;
  out.reserve(vars.size());
  for (const auto& v : vars) out.push_back(v.value());
  return out;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t k) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (k + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace {

double scalar(ad::Var v) { return v.value()(0, 0); }

RegularizerReport weighted_regularizers(const MetaState& state, const BatchContext& ctx, const Batch& batch,
                                        const Eigen::MatrixXd& delta, const TrainConfig& cfg) {
  const Eigen::MatrixXd q = ad::softmax(logits(state.phi, ctx.features));
  const Eigen::MatrixXd& W = state.phi.head_weight();
  RegularizerReport r =
      regularizer_terms(q, rho_matrix(W, state.stats.covariances, batch.y), W, delta, state.priors, batch.y);
  const double f_weight = cfg.loss.variant == LossVariant::Adjusted ? cfg.loss.beta : 0.0;
  r.G *= cfg.loss.alpha;
  r.per_sample_G *= cfg.loss.alpha;
  r.F *= f_weight;
  r.per_sample_F *= f_weight;
  return r;
}

}  // namespace

void TrainConfig::validate() const {
  loss.validate();
  if (warmup_epochs < 0) throw std::invalid_argument("warmup_epochs must be >= 0");
  if (total_epochs < 1 || total_epochs < warmup_epochs)
    throw std::invalid_argument("total_epochs must be >= max(1, warmup_epochs)");
  if (batch_size < 1 || meta_batch_size < 1) throw std::invalid_argument("batch sizes must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be > 0");
  if (!(meta_lr >= 0.0)) throw std::invalid_argument("meta_lr must be >= 0");
  if (!(lr_decay > 0.0)) throw std::invalid_argument("lr_decay must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be >= 0");
  if (grad_clip < 0.0) throw std::invalid_argument("grad_clip must be >= 0");
  if (perturb_hidden < 1) throw std::invalid_argument("perturb_hidden must be >= 1");
  if (history_decay < 0.0 || history_decay >= 1.0) throw std::invalid_argument("history_decay must lie in [0, 1)");
  for (double m : lr_milestones)
    if (m <= 0.0 || m > 1.0) throw std::invalid_argument("lr milestones must lie in (0, 1]");
}

double TrainConfig::lr_at(int epoch) const {
  return step_decay(lr, lr_decay, lr_milestones, static_cast<double>(epoch) / static_cast<double>(total_epochs));
}

Batch make_batch(const Dataset& data, std::span<const long> ids) {
  Batch b;
  b.x.resize(static_cast<Eigen::Index>(ids.size()), data.features.cols());
  for (std::size_t k = 0; k < ids.size(); ++k) {
    b.x.row(static_cast<Eigen::Index>(k)) = data.features.row(ids[k]);
    b.y.push_back(data.labels[static_cast<std::size_t>(ids[k])]);
  }
  b.ids.assign(ids.begin(), ids.end());
  return b;
}

Batch make_batch(const MetaDataset& data, std::span<const long> ids) {
  Batch b;
  b.x.resize(static_cast<Eigen::Index>(ids.size()), data.features.cols());
  for (std::size_t k = 0; k < ids.size(); ++k) {
    b.x.row(static_cast<Eigen::Index>(k)) = data.features.row(ids[k]);
    b.y.push_back(data.labels[static_cast<std::size_t>(ids[k])]);
  }
  b.ids.assign(ids.begin(), ids.end());
  return b;
}

BatchSampler::BatchSampler(std::size_t size, int batch_size, std::uint64_t seed)
    : size_(size), batch_size_(batch_size), rng_(seed), order_(size) {
  if (size == 0 || batch_size < 1) throw std::invalid_argument("BatchSampler: empty data or batch");
  std::iota(order_.begin(), order_.end(), 0L);
  cursor_ = size_;
}

std::vector<std::vector<long>> BatchSampler::epoch() {
  std::shuffle(order_.begin(), order_.end(), rng_);
  std::vector<std::vector<long>> out;
  for (std::size_t lo = 0; lo < size_; lo += static_cast<std::size_t>(batch_size_)) {
    const std::size_t hi = std::min(size_, lo + static_cast<std::size_t>(batch_size_));
    out.emplace_back(order_.begin() + static_cast<std::ptrdiff_t>(lo), order_.begin() + static_cast<std::ptrdiff_t>(hi));
  }
  cursor_ = size_;
  return out;
}

std::vector<long> BatchSampler::next() {
  const std::size_t want = std::min(size_, static_cast<std::size_t>(batch_size_));
  std::vector<long> out;
  while (out.size() < want) {
    if (cursor_ >= size_) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    out.push_back(order_[cursor_++]);
  }
  return out;
}

MetaState init_state(const TrainConfig& cfg, const Dataset& train) {
  ClassifierShape shape = cfg.model;
  shape.input_dim = train.dim();
  shape.classes = train.classes;
  if (shape.identity_extractor) shape.feature_dim = shape.input_dim;
  MetaState s;
  s.phi = init_classifier(shape, derive_seed(cfg.seed, 0));
  s.omega = init_perturb_net(PerturbNetShape{kCharacteristics, cfg.perturb_hidden}, derive_seed(cfg.seed, 1));
  s.stats = ClassStats(train.classes, s.phi.feature_dim(), cfg.diagonal_sigma);
  s.priors = class_priors(train.class_counts());
  s.history = CharacteristicHistory(train.size(), cfg.history_decay);
  s.sgd.momentum = cfg.momentum;
  s.sgd.weight_decay = cfg.weight_decay;
  s.adam.lr = cfg.meta_lr;
  return s;
}

BatchContext prepare_batch(MetaState& state, const Batch& batch, double progress) {
  BatchContext ctx;
  ctx.features = extract_features(state.phi, batch.x);
  update_covariance(state.stats, ctx.features, batch.y);
  SampleView view;
  view.ids = batch.ids;
  view.labels = batch.y;
  view.logits = logits(state.phi, ctx.features);
  view.features = ctx.features;
  view.grad_h = ce_grad_wrt_features(state.phi.head_weight(), state.phi.head_bias(), ctx.features, batch.y);
  view.progress = progress;
  ctx.sign_grad = view.grad_h.array().sign();
  ctx.raw = extract(view, state.history, state.stats, state.priors);
  update_history(state.history, batch.ids, ctx.raw);
  state.normalizer.observe(ctx.raw);
  ctx.f = state.normalizer.apply(ctx.raw);
  return ctx;
}

double warmup_step(MetaState& state, const Batch& batch, double lr, double grad_clip) {
  ad::Tape tape;
  const ClassifierVars vars = bind(tape, state.phi);
  const ad::Var z = logits(vars.head_weight(), vars.head_bias(), extract_features(vars, tape.constant(batch.x)));
  const ad::Var loss = ad::mean(ad::softmax_cross_entropy(z, batch.y));
  if (!std::isfinite(scalar(loss))) throw NumericalError("non-finite CE loss at iteration " + std::to_string(state.iteration));
  ParamList grads = values(tape.gradients(loss, vars.tensors));
  clip_grad_norm(grads, grad_clip);
  state.sgd.step(state.phi.tensors, grads, lr);
  if (!state.phi.finite()) throw NumericalError("non-finite classifier parameters after warm-up step");
  ++state.iteration;
  emit(state, "warmup");
  return scalar(loss);
}

PseudoStep pseudo_step(const MetaState& state, const Batch& batch, const BatchContext& ctx, const TrainConfig& cfg,
                       double lr) {
  PseudoStep p;
  p.tape = std::make_unique<ad::Tape>();
  ad::Tape& tape = *p.tape;
  const ClassifierVars phi = bind(tape, state.phi);
  for (const auto& t : state.omega.tensors) p.omega.push_back(tape.leaf(t, !cfg.eps_off));
  const bool sigma_grad = cfg.meta_sigma && cfg.loss.alpha != 0.0;
  for (const auto& s : state.stats.covariances) p.sigma.push_back(tape.leaf(s, sigma_grad));

  const auto n = static_cast<Eigen::Index>(batch.y.size());
  const ad::Var eps = cfg.eps_off ? tape.constant(Eigen::MatrixXd::Zero(n, 1)) : eps_forward(p.omega, tape.constant(ctx.f));
  const ad::Var delta = ad::mul_col(tape.constant(ctx.sign_grad), eps);
  const IadaBatch ib{extract_features(phi, tape.constant(batch.x)), delta,
                     std::make_shared<const ad::Labels>(batch.y), state.priors};
  const ad::Var loss = iada_objective(phi.head_weight(), phi.head_bias(), ib, p.sigma, cfg.loss);
  p.train_loss = scalar(loss);
  if (!std::isfinite(p.train_loss))
    throw NumericalError("non-finite IADA loss in pseudo step at iteration " + std::to_string(state.iteration));

  const auto grads = tape.gradients(loss, phi.tensors, std::nullopt, true);
  p.phi_bar.layers = phi.layers;
  for (std::size_t k = 0; k < grads.size(); ++k) p.phi_bar.tensors.push_back(phi.tensors[k] - ad::scale(grads[k], lr));
  emit(state, "pseudo");
  return p;
}

Hypergradient meta_hypergradient(PseudoStep& pseudo, const Batch& meta) {
  ad::Tape& tape = *pseudo.tape;
  const ad::Var h = extract_features(pseudo.phi_bar, tape.constant(meta.x));
  const ad::Var z = logits(pseudo.phi_bar.head_weight(), pseudo.phi_bar.head_bias(), h);
  const ad::Var loss = ad::mean(ad::softmax_cross_entropy(z, meta.y));
  std::vector<ad::Var> wrt = pseudo.omega;
  wrt.insert(wrt.end(), pseudo.sigma.begin(), pseudo.sigma.end());
  const auto grads = tape.gradients(loss, wrt);
  Hypergradient out;
  out.meta_loss = scalar(loss);
  for (std::size_t k = 0; k < pseudo.omega.size(); ++k) out.omega.push_back(grads[k].value());
  for (std::size_t k = pseudo.omega.size(); k < grads.size(); ++k) out.sigma.push_back(grads[k].value());
  return out;
}

bool meta_update_omega(MetaState& state, const Hypergradient& hyper, const TrainConfig& cfg) {
  emit(state, "omega");
  if (cfg.eps_off) return true;
  if (!all_finite(hyper.omega) || !std::isfinite(hyper.meta_loss)) {
    ++state.skipped_meta_updates;
    return false;
  }
  state.adam.lr = cfg.meta_lr;
  state.adam.step(state.omega.tensors, hyper.omega);
  return true;
}

bool meta_update_sigma(MetaState& state, const Hypergradient& hyper, const TrainConfig& cfg) {
  emit(state, "sigma");
  if (!cfg.meta_sigma || cfg.loss.alpha == 0.0 || cfg.meta_lr == 0.0) return true;
  if (!all_finite(hyper.sigma)) {
    ++state.skipped_meta_updates;
    return false;
  }
  std::vector<Eigen::MatrixXd> next;
  try {
    for (std::size_t c = 0; c < hyper.sigma.size(); ++c) {
      const Eigen::MatrixXd g = 0.5 * (hyper.sigma[c] + hyper.sigma[c].transpose());
      Eigen::MatrixXd s = project_psd(state.stats.covariances[c] - cfg.meta_lr * g);
      if (state.stats.diagonal) s = Eigen::MatrixXd(s.diagonal().asDiagonal());
      next.push_back(std::move(s));
    }
  } catch (const std::exception&) {
    ++state.skipped_meta_updates;
    return false;
  }
  state.stats.covariances = std::move(next);
  return true;
}

Eigen::VectorXd current_eps(const MetaState& state, const BatchContext& ctx, const TrainConfig& cfg) {
  if (cfg.eps_off) return Eigen::VectorXd::Zero(ctx.f.rows());
  return eps_forward(state.omega, ctx.f);
}

StepReport final_step(MetaState& state, const Batch& batch, const BatchContext& ctx, const TrainConfig& cfg, double lr) {
  StepReport report;
  report.eps = current_eps(state, ctx, cfg);
  const Eigen::MatrixXd delta = ctx.sign_grad.array().colwise() * report.eps.array();
  report.regularizers = weighted_regularizers(state, ctx, batch, delta, cfg);

  ad::Tape tape;
  const ClassifierVars phi = bind(tape, state.phi);
  std::vector<ad::Var> sigma;
  for (const auto& s : state.stats.covariances) sigma.push_back(tape.constant(s));
  const IadaBatch ib{extract_features(phi, tape.constant(batch.x)), tape.constant(delta),
                     std::make_shared<const ad::Labels>(batch.y), state.priors};
  const ad::Var loss = iada_objective(phi.head_weight(), phi.head_bias(), ib, sigma, cfg.loss);
  report.loss = scalar(loss);
  if (!std::isfinite(report.loss))
    throw NumericalError("non-finite IADA loss in final step at iteration " + std::to_string(state.iteration));
  ParamList grads = values(tape.gradients(loss, phi.tensors));
  clip_grad_norm(grads, cfg.grad_clip);
  state.sgd.step(state.phi.tensors, grads, lr);
  if (!state.phi.finite()) throw NumericalError("non-finite classifier parameters after final step");
  ++state.iteration;
  emit(state, "final");
  return report;
}

StepReport meta_iteration(MetaState& state, const Batch& batch, const Batch& meta, const TrainConfig& cfg, double lr,
                          double progress) {
  const BatchContext ctx = prepare_batch(state, batch, progress);
  PseudoStep pseudo = pseudo_step(state, batch, ctx, cfg, lr);
  const Hypergradient hyper = meta_hypergradient(pseudo, meta);
  meta_update_omega(state, hyper, cfg);
  meta_update_sigma(state, hyper, cfg);
  StepReport rep = final_step(state, batch, ctx, cfg, lr);
  rep.characteristics = ctx.raw;
  return rep;
}

Evaluation evaluate(const ClassifierParams& phi, const Dataset& data) {
  Evaluation ev;
  const Eigen::MatrixXd z = logits(phi, extract_features(phi, data.features));
  const Eigen::VectorXd lse = ad::logsumexp(z);
  const int classes = data.classes;
  Eigen::VectorXd hits = Eigen::VectorXd::Zero(classes), seen = Eigen::VectorXd::Zero(classes);
  const int groups = data.has_groups() ? data.group_count() : 0;
  Eigen::VectorXd group_hits = Eigen::VectorXd::Zero(groups), group_seen = Eigen::VectorXd::Zero(groups);
  double loss = 0.0, correct = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const int y = data.labels[i];
    Eigen::Index top = 0;
    z.row(r).maxCoeff(&top);
    const double hit = top == y ? 1.0 : 0.0;
    loss += lse(r) - z(r, y);
    correct += hit;
    hits(y) += hit;
    seen(y) += 1.0;
    if (groups) {
      group_hits(data.groups[i]) += hit;
      group_seen(data.groups[i]) += 1.0;
    }
  }
  const double n = static_cast<double>(data.size());
  ev.loss = loss / n;
  ev.accuracy = correct / n;
  ev.class_recall = hits.array() / seen.array();  // NaN for absent classes
  if (groups) ev.group_accuracy = group_hits.array() / group_seen.array();
  return ev;
}

namespace {

double nan_min(const Eigen::VectorXd& v) {
  double lo = std::numeric_limits<double>::quiet_NaN();
  for (Eigen::Index k = 0; k < v.size(); ++k)
    if (!std::isnan(v(k)) && !(lo <= v(k))) lo = v(k);
  return lo;
}

// Running sums of ε statistics over one epoch.
struct EpsAccumulator {
  Eigen::VectorXd sum, adv, count;
  double noisy_sum = 0, noisy_n = 0, clean_sum = 0, clean_n = 0;

  explicit EpsAccumulator(int classes)
      : sum(Eigen::VectorXd::Zero(classes)), adv(Eigen::VectorXd::Zero(classes)), count(Eigen::VectorXd::Zero(classes)) {}

  void add(const Batch& batch, const Eigen::VectorXd& eps, const Dataset& data) {
    for (std::size_t k = 0; k < batch.y.size(); ++k) {
      const double e = eps(static_cast<Eigen::Index>(k));
      const int y = batch.y[k];
      sum(y) += e;
      adv(y) += e > 0.0 ? 1.0 : 0.0;
      count(y) += 1.0;
      if (data.has_noise()) {
        if (data.noise_mask[static_cast<std::size_t>(batch.ids[k])]) {
          noisy_sum += e;
          noisy_n += 1.0;
        } else {
          clean_sum += e;
          clean_n += 1.0;
        }
      }
    }
  }
};

}  // namespace

TrainResult train(const TrainConfig& cfg, const Dataset& train_set, const MetaDataset& meta, const Dataset& test_set,
                  std::vector<std::string>* trace, const CharacteristicSink& sink) {
  cfg.validate();
  train_set.validate();
  test_set.validate();
  if (test_set.classes != train_set.classes || test_set.dim() != train_set.dim())
    throw std::invalid_argument("train: test set does not match the training data");
  const bool meta_phase = cfg.total_epochs > cfg.warmup_epochs;
  if (meta_phase && (meta.size() == 0 || meta.features.cols() != train_set.dim()))
    throw std::invalid_argument("train: metadata missing or of the wrong width");

  TrainResult result{init_state(cfg, train_set), MetricsLog{}};
  MetaState& state = result.state;
  state.trace = trace;
  MetricsLog& log = result.log;
  log.classes = train_set.classes;
  log.groups = test_set.has_groups() ? test_set.group_count() : 0;

  BatchSampler sampler(train_set.size(), cfg.batch_size, derive_seed(cfg.seed, 2));
  std::optional<BatchSampler> meta_sampler;
  if (meta_phase) meta_sampler.emplace(meta.size(), cfg.meta_batch_size, derive_seed(cfg.seed, 3));
  const long per_epoch = static_cast<long>((train_set.size() + static_cast<std::size_t>(cfg.batch_size) - 1) /
                                           static_cast<std::size_t>(cfg.batch_size));
  const double total_iters = static_cast<double>(per_epoch) * cfg.total_epochs;
  const double nan = std::numeric_limits<double>::quiet_NaN();

  for (int epoch = 0; epoch < cfg.total_epochs; ++epoch) {
    const bool warm = epoch < cfg.warmup_epochs;
    const double lr = cfg.lr_at(epoch);
    double loss_sum = 0.0, g_sum = 0.0, r_sum = 0.0, f_sum = 0.0, seen = 0.0;
    EpsAccumulator acc(train_set.classes);

    for (const auto& ids : sampler.epoch()) {
      const Batch batch = make_batch(train_set, ids);
      const double progress = static_cast<double>(state.iteration) / total_iters;
      const double n = static_cast<double>(batch.y.size());
      if (warm) {
        const BatchContext ctx = prepare_batch(state, batch, progress);
        const auto reg = weighted_regularizers(state, ctx, batch, Eigen::MatrixXd::Zero(ctx.features.rows(), ctx.features.cols()), cfg);
        loss_sum += warmup_step(state, batch, lr, cfg.grad_clip) * n;
        g_sum += reg.G;
        r_sum += reg.R;
        f_sum += reg.F;
        if (sink) sink(epoch, batch, ctx.raw, Eigen::VectorXd::Constant(ctx.raw.rows(), nan));
      } else {
        const Batch meta_batch = make_batch(meta, meta_sampler->next());
        const StepReport rep = meta_iteration(state, batch, meta_batch, cfg, lr, progress);
        loss_sum += rep.loss * n;
        g_sum += rep.regularizers.G;
        r_sum += rep.regularizers.R;
        f_sum += rep.regularizers.F;
        acc.add(batch, rep.eps, train_set);
        if (sink) sink(epoch, batch, rep.characteristics, rep.eps);
      }
      seen += n;
    }

    const Evaluation ev = evaluate(state.phi, test_set);
    EpochMetrics row;
    row.epoch = epoch;
    row.phase = warm ? "warmup" : "meta";
    row.lr = lr;
    row.train_loss = loss_sum / seen;
    row.test_loss = ev.loss;
    row.test_acc = ev.accuracy;
    row.class_recall = ev.class_recall;
    row.worst_class_recall = nan_min(ev.class_recall);
    row.group_acc = ev.group_accuracy;
    row.worst_group_acc = log.groups ? nan_min(ev.group_accuracy) : nan;
    row.reg_G = g_sum / seen;
    row.reg_R = r_sum / seen;
    row.reg_F = f_sum / seen;
    row.skipped_meta_updates = state.skipped_meta_updates;
    if (warm) {
      row.eps_mean = row.adv_ratio = row.noisy_eps_mean = row.clean_eps_mean = nan;
      row.class_eps_mean = row.class_adv_ratio = Eigen::VectorXd::Constant(train_set.classes, nan);
    } else {
      row.class_eps_mean = acc.sum.array() / acc.count.array();
      row.class_adv_ratio = acc.adv.array() / acc.count.array();
      row.eps_mean = acc.sum.sum() / acc.count.sum();
      row.adv_ratio = acc.adv.sum() / acc.count.sum();
      row.noisy_eps_mean = acc.noisy_n > 0 ? acc.noisy_sum / acc.noisy_n : nan;
      row.clean_eps_mean = acc.clean_n > 0 ? acc.clean_sum / acc.clean_n : nan;
    }
    log.append(std::move(row));
  }
  state.trace = nullptr;
  return result;
}

}  // namespace iada
