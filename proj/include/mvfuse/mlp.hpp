#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mvfuse/rng.hpp"

namespace mvfuse {

enum class Activation { kIdentity, kRelu, kTanh, kSigmoid };

inline std::string activation_name(Activation a) {
  switch (a) {
    case Activation::kIdentity: return "identity";
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
    case Activation::kSigmoid: return "sigmoid";
  }
  throw std::logic_error("activation_name: bad enum");
}

inline Activation activation_from_name(const std::string& s) {
  if (s == "identity") return Activation::kIdentity;
  if (s == "relu") return Activation::kRelu;
  if (s == "tanh") return Activation::kTanh;
  if (s == "sigmoid") return Activation::kSigmoid;
  throw std::invalid_argument("unknown activation: " + s);
}

// Feed-forward architecture: layer_sizes = (input, hidden..., output); the
// number of affine layers is layer_sizes.size() - 1.
struct MlpSpec {
  std::vector<int> layer_sizes;
  Activation hidden_activation = Activation::kRelu;
  Activation output_activation = Activation::kIdentity;

  int num_affine_layers() const {
    return static_cast<int>(layer_sizes.size()) - 1;
  }

  void validate() const {
    if (layer_sizes.size() < 2) {
      throw std::invalid_argument("MlpSpec: need at least 2 layer sizes");
    }
    for (int s : layer_sizes) {
      if (s < 1) throw std::invalid_argument("MlpSpec: layer sizes must be positive");
    }
    if (hidden_activation == Activation::kIdentity ||
        hidden_activation == Activation::kSigmoid) {
      throw std::invalid_argument("MlpSpec: hidden activation must be relu or tanh");
    }
    if (output_activation == Activation::kRelu ||
        output_activation == Activation::kTanh) {
      throw std::invalid_argument("MlpSpec: output activation must be identity or sigmoid");
    }
  }
};

struct MlpParams {
  MlpSpec spec;
  std::vector<Eigen::MatrixXd> weights;  // per layer, out x in
  std::vector<Eigen::VectorXd> biases;   // per layer, out

  int input_dim() const { return spec.layer_sizes.front(); }
  int output_dim() const { return spec.layer_sizes.back(); }

  bool all_finite() const {
    for (const auto& w : weights)
      if (!w.allFinite()) return false;
    for (const auto& b : biases)
      if (!b.allFinite()) return false;
    return true;
  }
};

// Gradient container shaped like MlpParams.
struct MlpGrads {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  static MlpGrads zeros_like(const MlpParams& p) {
    MlpGrads g;
    g.weights.reserve(p.weights.size());
    g.biases.reserve(p.biases.size());
    for (const auto& w : p.weights) g.weights.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
    for (const auto& b : p.biases) g.biases.push_back(Eigen::VectorXd::Zero(b.size()));
    return g;
  }
};

// Glorot-style uniform init: weights in +-sqrt(6 / (fan_in + fan_out)),
// biases zero. Deterministic given the seed.
inline MlpParams init_params(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  MlpParams p;
  p.spec = spec;
  const int n_layers = spec.num_affine_layers();
  p.weights.reserve(n_layers);
  p.biases.reserve(n_layers);
  for (int l = 0; l < n_layers; ++l) {
    const int fan_in = spec.layer_sizes[l];
    const int fan_out = spec.layer_sizes[l + 1];
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    Eigen::MatrixXd w(fan_out, fan_in);
    for (int r = 0; r < fan_out; ++r)
      for (int c = 0; c < fan_in; ++c) w(r, c) = rng.uniform(-bound, bound);
    p.weights.push_back(std::move(w));
    p.biases.push_back(Eigen::VectorXd::Zero(fan_out));
  }
  return p;
}

namespace detail {

inline void apply_activation(Activation a, Eigen::MatrixXd& m) {
  switch (a) {
    case Activation::kIdentity:
      return;
    case Activation::kRelu:
      m = m.cwiseMax(0.0);
      return;
    case Activation::kTanh:
      m = m.array().tanh().matrix();
      return;
    case Activation::kSigmoid:
      m = (1.0 / (1.0 + (-m.array()).exp())).matrix();
      return;
  }
}

// d activation / d pre-activation, written in terms of pre (for relu) and
// post (for tanh/sigmoid) values.
inline Eigen::MatrixXd activation_grad(Activation a, const Eigen::MatrixXd& pre,
                                       const Eigen::MatrixXd& post) {
  switch (a) {
    case Activation::kIdentity:
      return Eigen::MatrixXd::Ones(pre.rows(), pre.cols());
    case Activation::kRelu:
      return (pre.array() > 0.0).cast<double>().matrix();
    case Activation::kTanh:
      return (1.0 - post.array().square()).matrix();
    case Activation::kSigmoid:
      return (post.array() * (1.0 - post.array())).matrix();
  }
  throw std::logic_error("activation_grad: bad enum");
}

}  // namespace detail

// Cached forward pass: input plus per-layer pre-activations and activations,
// enough to run backward without recomputation.
struct ForwardTape {
  Eigen::MatrixXd input;                 // batch x in
  std::vector<Eigen::MatrixXd> pre;      // batch x out_l
  std::vector<Eigen::MatrixXd> act;      // batch x out_l, post-activation

  const Eigen::MatrixXd& output() const { return act.back(); }
};

inline ForwardTape forward(const MlpParams& p, const Eigen::MatrixXd& x) {
  if (x.cols() != p.input_dim()) {
    throw std::invalid_argument("forward: input has " + std::to_string(x.cols()) +
                                " columns, expected " + std::to_string(p.input_dim()));
  }
  if (!x.allFinite()) {
    throw std::invalid_argument("forward: non-finite input entry");
  }
  ForwardTape tape;
  tape.input = x;
  const int n_layers = p.spec.num_affine_layers();
  tape.pre.reserve(n_layers);
  tape.act.reserve(n_layers);
  const Eigen::MatrixXd* h = &tape.input;
  for (int l = 0; l < n_layers; ++l) {
    Eigen::MatrixXd pre = (*h) * p.weights[l].transpose();
    pre.rowwise() += p.biases[l].transpose();
    Eigen::MatrixXd act = pre;
    const Activation a = (l + 1 == n_layers) ? p.spec.output_activation
                                             : p.spec.hidden_activation;
    detail::apply_activation(a, act);
    tape.pre.push_back(std::move(pre));
    tape.act.push_back(std::move(act));
    h = &tape.act.back();
  }
  return tape;
}

// Exact reverse-mode gradients of the scalar whose d(scalar)/d(output) is
// grad_output. Returns parameter gradients (batch-summed) and the gradient
// with respect to the input rows.
inline std::pair<MlpGrads, Eigen::MatrixXd> backward(
    const MlpParams& p, const ForwardTape& tape,
    const Eigen::MatrixXd& grad_output) {
  const int n_layers = p.spec.num_affine_layers();
  if (static_cast<int>(tape.pre.size()) != n_layers ||
      static_cast<int>(tape.act.size()) != n_layers ||
      tape.input.cols() != p.input_dim()) {
    throw std::invalid_argument("backward: tape does not match parameters");
  }
  if (grad_output.rows() != tape.input.rows() ||
      grad_output.cols() != p.output_dim()) {
    throw std::invalid_argument("backward: grad_output shape mismatch");
  }
  MlpGrads grads;
  grads.weights.resize(n_layers);
  grads.biases.resize(n_layers);
  Eigen::MatrixXd grad_post = grad_output;
  for (int l = n_layers - 1; l >= 0; --l) {
    const Activation a = (l + 1 == n_layers) ? p.spec.output_activation
                                             : p.spec.hidden_activation;
    const Eigen::MatrixXd grad_pre =
        grad_post.cwiseProduct(detail::activation_grad(a, tape.pre[l], tape.act[l]));
    const Eigen::MatrixXd& below = (l == 0) ? tape.input : tape.act[l - 1];
    grads.weights[l] = grad_pre.transpose() * below;
    grads.biases[l] = grad_pre.colwise().sum().transpose();
    grad_post = grad_pre * p.weights[l];
  }
  return {std::move(grads), std::move(grad_post)};
}

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (learning_rate <= 0.0) throw std::invalid_argument("AdamConfig: learning_rate must be > 0");
    if (beta1 <= 0.0 || beta1 >= 1.0 || beta2 <= 0.0 || beta2 >= 1.0) {
      throw std::invalid_argument("AdamConfig: betas must lie in (0, 1)");
    }
    if (epsilon <= 0.0) throw std::invalid_argument("AdamConfig: epsilon must be > 0");
  }
};

// Adaptive-moment estimation state: first/second moment accumulators shaped
// like the tracked parameters plus a step counter.
struct OptimizerState {
  AdamConfig config;
  long step = 0;
  std::vector<Eigen::MatrixXd> m_w, v_w;
  std::vector<Eigen::VectorXd> m_b, v_b;

  static OptimizerState for_params(const MlpParams& p, const AdamConfig& cfg = {}) {
    cfg.validate();
    OptimizerState s;
    s.config = cfg;
    for (const auto& w : p.weights) {
      s.m_w.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
      s.v_w.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
    }
    for (const auto& b : p.biases) {
      s.m_b.push_back(Eigen::VectorXd::Zero(b.size()));
      s.v_b.push_back(Eigen::VectorXd::Zero(b.size()));
    }
    return s;
  }
};

namespace detail {

template <class Mat>
void adam_update(Mat& param, const Mat& grad, Mat& m, Mat& v,
                 const AdamConfig& cfg, double bc1, double bc2) {
  m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
  v = cfg.beta2 * v.array().matrix() + (1.0 - cfg.beta2) * grad.array().square().matrix();
  param.array() -= cfg.learning_rate * (m.array() / bc1) /
                   ((v.array() / bc2).sqrt() + cfg.epsilon);
}

}  // namespace detail

// One bias-corrected adaptive-moment update, in place.
inline void adam_step(MlpParams& params, const MlpGrads& grads, OptimizerState& state) {
  if (grads.weights.size() != params.weights.size() ||
      grads.biases.size() != params.biases.size()) {
    throw std::invalid_argument("adam_step: gradient shape mismatch");
  }
  for (const auto& g : grads.weights)
    if (!g.allFinite()) throw std::invalid_argument("adam_step: non-finite weight gradient");
  for (const auto& g : grads.biases)
    if (!g.allFinite()) throw std::invalid_argument("adam_step: non-finite bias gradient");

  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.config.beta2, static_cast<double>(state.step));
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    detail::adam_update(params.weights[l], grads.weights[l], state.m_w[l], state.v_w[l],
                        state.config, bc1, bc2);
    detail::adam_update(params.biases[l], grads.biases[l], state.m_b[l], state.v_b[l],
                        state.config, bc1, bc2);
  }
}

// Scalar loss of the network output: returns (value, d value / d output).
using OutputLoss =
    std::function<std::pair<double, Eigen::MatrixXd>(const Eigen::MatrixXd&)>;

inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Central-finite-difference check of backward over every parameter of a
// randomly initialized network on a random input batch. Returns the maximum
// relative error.
inline double gradcheck(const MlpSpec& spec, const OutputLoss& loss,
                        std::uint64_t seed, int batch = 3, double h = 1e-5) {
  MlpParams params = init_params(spec, seed);
  Rng rng(derive_seed(seed, "gradcheck.input"));
  Eigen::MatrixXd x(batch, spec.layer_sizes.front());
  for (int i = 0; i < batch; ++i)
    for (int j = 0; j < x.cols(); ++j) x(i, j) = rng.normal();

  const ForwardTape tape = forward(params, x);
  const auto [value, grad_out] = loss(tape.output());
  (void)value;
  const auto [grads, grad_in] = backward(params, tape, grad_out);
  (void)grad_in;

  const auto eval = [&]() {
    return loss(forward(params, x).output()).first;
  };

  double max_rel = 0.0;
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    auto& w = params.weights[l];
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        const double saved = w(r, c);
        w(r, c) = saved + h;
        const double up = eval();
        w(r, c) = saved - h;
        const double dn = eval();
        w(r, c) = saved;
        max_rel = std::max(max_rel, relative_error(grads.weights[l](r, c), (up - dn) / (2 * h)));
      }
    }
    auto& b = params.biases[l];
    for (Eigen::Index r = 0; r < b.size(); ++r) {
      const double saved = b[r];
      b[r] = saved + h;
      const double up = eval();
      b[r] = saved - h;
      const double dn = eval();
      b[r] = saved;
      max_rel = std::max(max_rel, relative_error(grads.biases[l][r], (up - dn) / (2 * h)));
    }
  }
  return max_rel;
}

}  // namespace mvfuse
