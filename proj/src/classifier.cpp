#include "iada/classifier.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

namespace iada {

bool ClassifierParams::finite() const {
  for (const auto& t : tensors)
    if (!t.allFinite()) return false;
  return true;
}

ClassifierParams init_classifier(const ClassifierShape& shape, std::uint64_t seed) {
  if (shape.classes < 1 || shape.input_dim < 1) throw std::invalid_argument("classifier: empty shape");
  std::mt19937_64 rng(seed);
  ClassifierParams p;
  p.layers = shape.extractor_layers();
  auto affine = [&](int in, int out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Eigen::MatrixXd w(out, in);
    Eigen::MatrixXd b(1, out);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = u(rng);
    for (Eigen::Index j = 0; j < b.cols(); ++j) b(0, j) = u(rng);
    p.tensors.push_back(std::move(w));
    p.tensors.push_back(std::move(b));
  };
  int width = shape.input_dim;
  if (!shape.identity_extractor) {
    for (int h : shape.hidden) {
      affine(width, h);
      width = h;
    }
    affine(width, shape.feature_dim);
    width = shape.feature_dim;
  }
  affine(width, shape.classes);
  return p;
}

ClassifierVars bind(ad::Tape& tape, const ClassifierParams& params, bool requires_grad) {
  ClassifierVars v;
  v.layers = params.layers;
  for (const auto& t : params.tensors) v.tensors.push_back(tape.leaf(t, requires_grad));
  return v;
}

ad::Var extract_features(const ClassifierVars& params, ad::Var inputs) {
  ad::Var h = inputs;
  for (int l = 0; l < params.layers; ++l) {
    const auto w = params.tensors[static_cast<std::size_t>(2 * l)];
    const auto b = params.tensors[static_cast<std::size_t>(2 * l + 1)];
    if (h.cols() != w.cols())
      throw ad::ShapeError(h.id, "extractor layer " + std::to_string(l) + " expects width " + std::to_string(w.cols()));
    h = ad::relu(ad::add_row(ad::matmul(h, ad::transpose(w)), b));
  }
  return h;
}

ad::Var logits(ad::Var weight, ad::Var bias, ad::Var features) {
  return ad::add_row(ad::matmul(features, ad::transpose(weight)), bias);
}

Eigen::MatrixXd extract_features(const ClassifierParams& params, const Eigen::MatrixXd& inputs) {
  if (inputs.cols() != params.input_dim())
    throw std::invalid_argument("extract_features: input width " + std::to_string(inputs.cols()) + " != " +
                                std::to_string(params.input_dim()));
  Eigen::MatrixXd h = inputs;
  for (int l = 0; l < params.layers; ++l) {
    const auto& w = params.tensors[static_cast<std::size_t>(2 * l)];
    const auto& b = params.tensors[static_cast<std::size_t>(2 * l + 1)];
    h = ((h * w.transpose()).rowwise() + b.row(0)).cwiseMax(0.0);
  }
  return h;
}

Eigen::MatrixXd logits(const ClassifierParams& params, const Eigen::MatrixXd& features) {
  return (features * params.head_weight().transpose()).rowwise() + params.head_bias().row(0);
}

Eigen::MatrixXd ce_grad_wrt_features(const Eigen::MatrixXd& weight, const Eigen::RowVectorXd& bias,
                                     const Eigen::MatrixXd& features, std::span<const int> labels) {
  const Eigen::MatrixXd z = (features * weight.transpose()).rowwise() + bias;
  Eigen::MatrixXd residual = ad::softmax(z) - ad::one_hot(labels, weight.rows());
  return residual * weight;
}

void save_checkpoint(const ParamList& tensors, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.precision(17);
  out << "iada-params 1\n" << tensors.size() << '\n';
  for (const auto& t : tensors) {
    out << t.rows() << ' ' << t.cols() << '\n';
    for (Eigen::Index i = 0; i < t.rows(); ++i) {
      for (Eigen::Index j = 0; j < t.cols(); ++j) out << (j ? " " : "") << t(i, j);
      out << '\n';
    }
  }
}

ParamList load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  std::string magic;
  int version = 0;
  std::size_t count = 0;
  if (!(in >> magic >> version >> count) || magic != "iada-params" || version != 1)
    throw std::runtime_error("checkpoint " + path.string() + ": bad header");
  ParamList tensors;
  for (std::size_t k = 0; k < count; ++k) {
    Eigen::Index rows = 0, cols = 0;
    if (!(in >> rows >> cols) || rows < 0 || cols < 0)
      throw std::runtime_error("checkpoint: bad shape for tensor " + std::to_string(k));
    Eigen::MatrixXd t(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j)
        if (!(in >> t(i, j))) throw std::runtime_error("checkpoint: truncated tensor " + std::to_string(k));
    tensors.push_back(std::move(t));
  }
  return tensors;
}

}  // namespace iada
