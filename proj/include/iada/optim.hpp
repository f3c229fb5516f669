#pragma once

#include "iada/classifier.hpp"

namespace iada {

/// SGD with heavy-ball momentum and L2 weight decay:
///   g ← g + λ p;  v ← μ v + g;  p ← p − η v.
/// With μ = λ = 0 this is the plain step p ← p − η g.
struct Sgd {
  double momentum = 0.9;
  double weight_decay = 5e-4;
  ParamList velocity;

  void step(ParamList& params, const ParamList& grads, double lr);
};

/// Adaptive moment estimation with bias correction.
struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long t = 0;
  ParamList m;
  ParamList v;

  void step(ParamList& params, const ParamList& grads);
};

/// Rescale so the global L2 norm over all tensors is at most max_norm
/// (no-op for max_norm <= 0). Returns the norm before clipping.
double clip_grad_norm(ParamList& grads, double max_norm);

/// Step-decay schedule: base · factor^k where k counts milestones ≤ progress.
double step_decay(double base, double factor, std::span<const double> milestones, double progress);

}  // namespace iada
