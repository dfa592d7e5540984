#include "mvfuse/mlp.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "mvfuse/checkpoint.hpp"
#include "mvfuse/rng.hpp"

using namespace mvfuse;

namespace {

MlpSpec spec_of(std::vector<int> sizes, Activation hidden = Activation::kRelu,
                Activation output = Activation::kIdentity) {
  MlpSpec s;
  s.layer_sizes = std::move(sizes);
  s.hidden_activation = hidden;
  s.output_activation = output;
  return s;
}

bool params_equal(const MlpParams& a, const MlpParams& b) {
  if (a.weights.size() != b.weights.size()) return false;
  for (std::size_t l = 0; l < a.weights.size(); ++l) {
    if (a.weights[l] != b.weights[l]) return false;
    if (a.biases[l] != b.biases[l]) return false;
  }
  return true;
}

}  // namespace

TEST(MlpSpecTest, Validation) {
  EXPECT_THROW(spec_of({3}).validate(), std::invalid_argument);
  EXPECT_THROW(spec_of({3, 0}).validate(), std::invalid_argument);
  EXPECT_THROW(spec_of({3, 2}, Activation::kSigmoid).validate(), std::invalid_argument);
  EXPECT_THROW(spec_of({3, 2}, Activation::kRelu, Activation::kTanh).validate(),
               std::invalid_argument);
  EXPECT_NO_THROW(spec_of({3, 4, 2}, Activation::kTanh, Activation::kSigmoid).validate());
  EXPECT_EQ(spec_of({3, 4, 2}).num_affine_layers(), 2);
}

TEST(InitParamsTest, DeterministicGivenSeed) {
  const MlpSpec spec = spec_of({5, 4, 3});
  EXPECT_TRUE(params_equal(init_params(spec, 99), init_params(spec, 99)));
  EXPECT_FALSE(params_equal(init_params(spec, 99), init_params(spec, 100)));
}

TEST(InitParamsTest, RespectsAnalyticUniformBound) {
  const MlpParams p = init_params(spec_of({3, 2}), 17);
  const double bound = std::sqrt(6.0 / 5.0);
  for (Eigen::Index r = 0; r < p.weights[0].rows(); ++r) {
    for (Eigen::Index c = 0; c < p.weights[0].cols(); ++c) {
      EXPECT_LE(std::abs(p.weights[0](r, c)), bound);
    }
  }
  EXPECT_TRUE(p.biases[0].isZero());
  // Every layer of a deeper net obeys its own bound.
  const MlpParams q = init_params(spec_of({7, 5, 2}), 17);
  for (std::size_t l = 0; l < q.weights.size(); ++l) {
    const double b = std::sqrt(6.0 / (q.spec.layer_sizes[l] + q.spec.layer_sizes[l + 1]));
    EXPECT_LE(q.weights[l].cwiseAbs().maxCoeff(), b);
  }
}

TEST(InitParamsTest, WeightMeanNearZero) {
  const MlpParams p = init_params(spec_of({100, 100}), 2024);
  const double bound = std::sqrt(6.0 / 200.0);
  const double se = bound / std::sqrt(3.0) / 100.0;  // sd of U(-b,b) over 10^4 draws
  EXPECT_LE(std::abs(p.weights[0].mean()), 3.0 * se);
}

TEST(ForwardTest, IdentityNetwork) {
  MlpParams p;
  p.spec = spec_of({2, 2});
  p.weights = {Eigen::MatrixXd::Identity(2, 2)};
  p.biases = {Eigen::VectorXd::Zero(2)};
  Eigen::MatrixXd x(3, 2);
  x << 1.0, -2.0, 0.5, 4.0, 0.0, 0.0;
  EXPECT_TRUE(forward(p, x).output() == x);
}

TEST(ForwardTest, SigmoidOutputsInOpenUnitInterval) {
  MlpSpec spec = spec_of({4, 6, 3}, Activation::kRelu, Activation::kSigmoid);
  const MlpParams p = init_params(spec, 5);
  Rng rng(6);
  Eigen::MatrixXd x(10, 4);
  for (long i = 0; i < x.rows(); ++i)
    for (long j = 0; j < x.cols(); ++j) x(i, j) = rng.normal() * 10.0;
  const Eigen::MatrixXd y = forward(p, x).output();
  EXPECT_GT(y.minCoeff(), 0.0);
  EXPECT_LT(y.maxCoeff(), 1.0);
}

// Two-layer net evaluated by hand with scalar arithmetic.
TEST(ForwardTest, MatchesHandEvaluation) {
  MlpParams p;
  p.spec = spec_of({2, 2, 1}, Activation::kRelu, Activation::kIdentity);
  Eigen::MatrixXd w0(2, 2);
  w0 << 0.3, -0.2, 0.1, 0.4;
  Eigen::VectorXd b0(2);
  b0 << 0.05, -0.01;
  Eigen::MatrixXd w1(1, 2);
  w1 << 0.7, -0.5;
  Eigen::VectorXd b1(1);
  b1 << 0.02;
  p.weights = {w0, w1};
  p.biases = {b0, b1};

  Eigen::MatrixXd x(1, 2);
  x << 0.6, -0.3;
  const double h0 = std::max(0.0, 0.3 * 0.6 + (-0.2) * (-0.3) + 0.05);
  const double h1 = std::max(0.0, 0.1 * 0.6 + 0.4 * (-0.3) + (-0.01));
  const double expected = 0.7 * h0 + (-0.5) * h1 + 0.02;
  EXPECT_NEAR(forward(p, x).output()(0, 0), expected, 1e-12);
}

TEST(ForwardTest, RejectsBadInput) {
  const MlpParams p = init_params(spec_of({3, 2}), 1);
  EXPECT_THROW(forward(p, Eigen::MatrixXd::Zero(2, 4)), std::invalid_argument);
  Eigen::MatrixXd bad = Eigen::MatrixXd::Zero(2, 3);
  bad(0, 0) = std::nan("");
  EXPECT_THROW(forward(p, bad), std::invalid_argument);
}

TEST(BackwardTest, ZeroGradOutputGivesZeroGrads) {
  const MlpParams p = init_params(spec_of({3, 4, 2}), 8);
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(5, 3);
  const ForwardTape tape = forward(p, x);
  const auto [grads, grad_in] = backward(p, tape, Eigen::MatrixXd::Zero(5, 2));
  for (const auto& g : grads.weights) EXPECT_TRUE(g.isZero());
  for (const auto& g : grads.biases) EXPECT_TRUE(g.isZero());
  EXPECT_TRUE(grad_in.isZero());
}

TEST(BackwardTest, SingleLinearLayerClosedForm) {
  MlpParams p;
  p.spec = spec_of({3, 2});
  p.weights = {Eigen::MatrixXd::Random(2, 3)};
  p.biases = {Eigen::VectorXd::Random(2)};
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(4, 3);
  const Eigen::MatrixXd g = Eigen::MatrixXd::Random(4, 2);
  const ForwardTape tape = forward(p, x);
  const auto [grads, grad_in] = backward(p, tape, g);
  EXPECT_LE((grads.weights[0] - g.transpose() * x).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((grads.biases[0] - g.colwise().sum().transpose()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((grad_in - g * p.weights[0]).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(BackwardTest, RejectsMismatchedTape) {
  const MlpParams p = init_params(spec_of({3, 2}), 8);
  const MlpParams other = init_params(spec_of({4, 5, 2}), 8);
  const ForwardTape tape = forward(other, Eigen::MatrixXd::Zero(2, 4));
  EXPECT_THROW(backward(p, tape, Eigen::MatrixXd::Zero(2, 2)), std::invalid_argument);
}

// Central finite differences over every parameter of a three-layer net.
TEST(BackwardTest, FiniteDifferenceAgreement) {
  const MlpSpec spec = spec_of({4, 5, 4, 3}, Activation::kTanh, Activation::kIdentity);
  const OutputLoss squared = [](const Eigen::MatrixXd& y) {
    return std::make_pair(0.5 * y.squaredNorm(), Eigen::MatrixXd(y));
  };
  EXPECT_LE(gradcheck(spec, squared, 31), 1e-5);
}

TEST(GradcheckTest, LinearNetSquaredLoss) {
  const OutputLoss squared = [](const Eigen::MatrixXd& y) {
    return std::make_pair(0.5 * y.squaredNorm(), Eigen::MatrixXd(y));
  };
  EXPECT_LE(gradcheck(spec_of({4, 3}), squared, 12), 1e-8);
}

TEST(GradcheckTest, ReluNetBceLoss) {
  const MlpSpec spec = spec_of({4, 6, 2}, Activation::kRelu, Activation::kSigmoid);
  // Fixed binary targets; inputs drawn inside gradcheck stay away from relu
  // kinks for this seed.
  Eigen::MatrixXd target(3, 2);
  target << 1, 0, 0, 1, 1, 1;
  const OutputLoss bce = [target](const Eigen::MatrixXd& y) {
    double loss = 0.0;
    Eigen::MatrixXd grad(y.rows(), y.cols());
    for (long i = 0; i < y.rows(); ++i) {
      for (long j = 0; j < y.cols(); ++j) {
        loss += -(target(i, j) * std::log(y(i, j)) +
                  (1.0 - target(i, j)) * std::log(1.0 - y(i, j)));
        grad(i, j) = -target(i, j) / y(i, j) + (1.0 - target(i, j)) / (1.0 - y(i, j));
      }
    }
    return std::make_pair(loss, grad);
  };
  EXPECT_LE(gradcheck(spec, bce, 77), 1e-5);
}

TEST(AdamTest, ZeroGradientLeavesParamsFixed) {
  MlpParams p = init_params(spec_of({3, 2}), 4);
  const MlpParams before = p;
  OptimizerState st = OptimizerState::for_params(p);
  adam_step(p, MlpGrads::zeros_like(p), st);
  EXPECT_TRUE(params_equal(p, before));
  EXPECT_EQ(st.step, 1);
}

TEST(AdamTest, FirstStepIsSignScaledByLearningRate) {
  MlpParams p = init_params(spec_of({2, 2}), 4);
  const MlpParams before = p;
  AdamConfig cfg;
  cfg.learning_rate = 0.01;
  OptimizerState st = OptimizerState::for_params(p, cfg);
  MlpGrads g = MlpGrads::zeros_like(p);
  g.weights[0] << 0.7, -1.3, 2.0, -0.1;
  adam_step(p, g, st);
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 2; ++c) {
      const double delta = p.weights[0](r, c) - before.weights[0](r, c);
      const double expected = -cfg.learning_rate * (g.weights[0](r, c) > 0 ? 1.0 : -1.0);
      EXPECT_NEAR(delta, expected, cfg.learning_rate * 1e-6);
    }
  }
}

TEST(AdamTest, RejectsNonFiniteGradients) {
  MlpParams p = init_params(spec_of({2, 2}), 4);
  OptimizerState st = OptimizerState::for_params(p);
  MlpGrads g = MlpGrads::zeros_like(p);
  g.weights[0](0, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(adam_step(p, g, st), std::invalid_argument);
}

// Convex quadratic with a known minimizer.
TEST(AdamTest, ConvergesOnQuadratic) {
  MlpParams p = init_params(spec_of({3, 2}), 15);
  MlpParams target = init_params(spec_of({3, 2}), 16);
  // Start within 0.05 of the target so 200 small steps can both travel there
  // and settle below the oscillation floor.
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    p.weights[l] = target.weights[l].array() + 0.05;
    p.biases[l] = target.biases[l].array() - 0.05;
  }
  AdamConfig cfg;
  cfg.learning_rate = 5e-4;
  OptimizerState st = OptimizerState::for_params(p, cfg);
  for (int step = 0; step < 200; ++step) {
    MlpGrads g = MlpGrads::zeros_like(p);
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
      g.weights[l] = p.weights[l] - target.weights[l];
      g.biases[l] = p.biases[l] - target.biases[l];
    }
    adam_step(p, g, st);
  }
  double max_err = 0.0;
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    max_err = std::max(max_err, (p.weights[l] - target.weights[l]).cwiseAbs().maxCoeff());
    max_err = std::max(max_err, (p.biases[l] - target.biases[l]).cwiseAbs().maxCoeff());
  }
  EXPECT_LE(max_err, 1e-3);
}

TEST(CheckpointTest, MlpRoundTripBitExact) {
  const MlpParams p = init_params(spec_of({6, 5, 3}, Activation::kTanh, Activation::kSigmoid), 321);
  const std::string path =
      (std::filesystem::temp_directory_path() / "mvfuse_mlp_ckpt_test.txt").string();
  save_mlp_checkpoint(path, p);
  const MlpParams q = load_mlp_checkpoint(path);
  EXPECT_TRUE(params_equal(p, q));
  EXPECT_EQ(q.spec.hidden_activation, Activation::kTanh);
  EXPECT_EQ(q.spec.output_activation, Activation::kSigmoid);
  std::filesystem::remove(path);
}
