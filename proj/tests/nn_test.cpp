#include "focal/nn.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "focal/adam.hpp"
#include "focal/checkpoint.hpp"
#include "focal/losses.hpp"
#include "test_util.hpp"

using focal::Activation;
using focal::AdamState;
using focal::adam_step;
using focal::ClassPartition;
using focal::compute_tau;
using focal::DenseMatrix;
using focal::FocalLossMode;
using focal::FocalTarget;
using focal::LossGrad;
using focal::Mlp;
using focal::MlpCache;
using focal::MlpSpec;
using focal::Rng;
using focal::SplitEncoder;

namespace {

MlpSpec linear_spec(std::size_t in, std::size_t out) {
  MlpSpec spec;
  spec.input_dim = in;
  spec.output_dim = out;
  spec.activation = Activation::Identity;
  return spec;
}

DenseMatrix random_batch(testutil::Rand& rnd, std::size_t rows, std::size_t cols, double scale = 2.0) {
  DenseMatrix m(rows, cols);
  for (double& v : m.data) v = rnd.uniform(-scale, scale);
  return m;
}

void zero_weights(Mlp& net) {
  for (const auto& lay : net.linears())
    for (std::size_t i = 0; i < lay.in_dim * lay.out_dim; ++i) net.params()[lay.w_offset + i] = 0.0;
}

// Flattened finite differences over a scalar loss of the logits matrix.
void check_logit_grad(const std::function<double(const DenseMatrix&)>& loss_of,
                      const DenseMatrix& logits, const DenseMatrix& analytic, double tol = 1e-4) {
  std::vector<double> numeric = testutil::central_diff(
      [&](const std::vector<double>& flat) {
        DenseMatrix z = logits;
        z.data = flat;
        return loss_of(z);
      },
      logits.data, 1e-5);
  EXPECT_LT(testutil::max_rel_err(analytic.data, numeric), tol);
}

}  // namespace

TEST(MlpForward, IdentityLayerPassesThrough) {
  Rng rng(1);
  Mlp net(linear_spec(3, 3), rng);
  zero_weights(net);
  const auto& lay = net.linears()[0];
  for (std::size_t k = 0; k < 3; ++k) net.params()[lay.w_offset + k * 3 + k] = 1.0;

  testutil::Rand rnd(2);
  const DenseMatrix x = random_batch(rnd, 5, 3);
  const DenseMatrix y = net.forward(x);
  for (std::size_t i = 0; i < x.data.size(); ++i) EXPECT_DOUBLE_EQ(y.data[i], x.data[i]);
}

TEST(MlpForward, ZeroWeightsBroadcastBias) {
  Rng rng(3);
  Mlp net(linear_spec(4, 2), rng);
  zero_weights(net);
  const auto& lay = net.linears()[0];
  net.params()[lay.b_offset] = 1.5;
  net.params()[lay.b_offset + 1] = -2.0;

  testutil::Rand rnd(4);
  const DenseMatrix y = net.forward(random_batch(rnd, 6, 4));
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_DOUBLE_EQ(y.at(i, 0), 1.5);
    EXPECT_DOUBLE_EQ(y.at(i, 1), -2.0);
  }
}

TEST(MlpForward, DeterministicAcrossRuns) {
  MlpSpec spec;
  spec.input_dim = 5;
  spec.hidden_dims = {8, 8};
  spec.output_dim = 3;
  spec.dropout_rate = 0.3;

  Rng init_a(42), init_b(42);
  Mlp a(spec, init_a), b(spec, init_b);
  EXPECT_EQ(a.params(), b.params());

  testutil::Rand rnd(5);
  const DenseMatrix x = random_batch(rnd, 7, 5);
  Rng drop_a(9), drop_b(9);
  const DenseMatrix ya = a.forward(x, nullptr, true, &drop_a);
  const DenseMatrix yb = b.forward(x, nullptr, true, &drop_b);
  EXPECT_EQ(ya.data, yb.data);
  // Eval mode needs no RNG and ignores dropout.
  EXPECT_EQ(a.forward(x).data, b.forward(x).data);
}

TEST(MlpForward, RejectsBadShapesAndSpecs) {
  Rng rng(6);
  Mlp net(linear_spec(3, 2), rng);
  testutil::Rand rnd(7);
  EXPECT_THROW(net.forward(random_batch(rnd, 2, 4)), std::invalid_argument);

  MlpSpec bad = linear_spec(0, 2);
  EXPECT_THROW(Mlp(bad, rng), std::invalid_argument);
  bad = linear_spec(2, 2);
  bad.dropout_rate = 1.0;
  EXPECT_THROW(Mlp(bad, rng), std::invalid_argument);
}

TEST(Dropout, InvertedScalingPreservesMeanAndEvalIgnoresIt) {
  MlpSpec spec;
  spec.input_dim = 3;
  spec.hidden_dims = {16, 16};
  spec.output_dim = 2;
  spec.activation = Activation::Identity;
  spec.dropout_rate = 0.5;
  Rng rng(8);
  Mlp net(spec, rng);

  testutil::Rand rnd(9);
  const DenseMatrix x = random_batch(rnd, 1, 3);
  const DenseMatrix eval_out = net.forward(x);

  DenseMatrix mean(1, 2);
  const int draws = 20000;
  Rng drop(10);
  for (int d = 0; d < draws; ++d) {
    const DenseMatrix y = net.forward(x, nullptr, true, &drop);
    for (std::size_t j = 0; j < 2; ++j) mean.data[j] += y.data[j] / draws;
  }
  for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(mean.data[j], eval_out.data[j], 0.15);

  EXPECT_THROW(net.forward(x, nullptr, true, nullptr), std::invalid_argument);
}

TEST(MlpBackward, MatchesFiniteDifferencesOnParameters) {
  testutil::Rand rnd(11);
  for (int rep = 0; rep < 20; ++rep) {
    MlpSpec spec;
    spec.input_dim = 3;
    spec.hidden_dims = {4};
    spec.output_dim = 3;
    spec.activation = rep % 2 == 0 ? Activation::PRelu : Activation::LeakyRelu;
    Rng rng(100 + rep);
    Mlp net(spec, rng);

    const DenseMatrix x = random_batch(rnd, 4, 3);
    const std::vector<std::size_t> labels{0, 2, 1, 2};

    MlpCache cache;
    const DenseMatrix logits = net.forward(x, &cache);
    const LossGrad ce = focal::softmax_cross_entropy(logits, labels);
    std::vector<double> analytic(net.param_count(), 0.0);
    net.backward(cache, ce.grad, &analytic);

    const std::vector<double> numeric = testutil::central_diff(
        [&](const std::vector<double>& p) {
          Mlp probe = net;
          probe.params() = p;
          return focal::softmax_cross_entropy(probe.forward(x), labels).loss;
        },
        net.params(), 1e-5);
    EXPECT_LT(testutil::max_rel_err(analytic, numeric), 1e-4);
  }
}

TEST(MlpBackward, InputGradientMatchesFiniteDifferences) {
  testutil::Rand rnd(13);
  MlpSpec spec;
  spec.input_dim = 4;
  spec.hidden_dims = {5};
  spec.output_dim = 3;
  Rng rng(14);
  Mlp net(spec, rng);
  const DenseMatrix x = random_batch(rnd, 3, 4);
  const std::vector<std::size_t> labels{1, 0, 2};

  MlpCache cache;
  const LossGrad ce = focal::softmax_cross_entropy(net.forward(x, &cache), labels);
  const DenseMatrix gx = net.backward(cache, ce.grad, nullptr);

  const std::vector<double> numeric = testutil::central_diff(
      [&](const std::vector<double>& flat) {
        DenseMatrix xx = x;
        xx.data = flat;
        return focal::softmax_cross_entropy(net.forward(xx), labels).loss;
      },
      x.data, 1e-5);
  EXPECT_LT(testutil::max_rel_err(gx.data, numeric), 1e-4);
}

TEST(SoftmaxCrossEntropy, UniformAndConfidentCases) {
  DenseMatrix z(2, 4, 0.0);
  const std::vector<std::size_t> labels{1, 3};
  EXPECT_NEAR(focal::softmax_cross_entropy(z, labels).loss, std::log(4.0), 1e-12);

  DenseMatrix confident(1, 4, 0.0);
  confident.at(0, 2) = 1e6;
  EXPECT_NEAR(focal::softmax_cross_entropy(confident, std::vector<std::size_t>{2}).loss, 0.0,
              1e-9);

  EXPECT_THROW(focal::softmax_cross_entropy(z, std::vector<std::size_t>{1, 4}),
               std::invalid_argument);
  EXPECT_THROW(focal::softmax_cross_entropy(z, std::vector<std::size_t>{1}),
               std::invalid_argument);
}

TEST(SoftmaxCrossEntropy, GradientMatchesFiniteDifferences) {
  testutil::Rand rnd(17);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 3 + rnd.below(6);
    const std::size_t batch = 1 + rnd.below(4);
    const DenseMatrix z = random_batch(rnd, batch, n, 3.0);
    std::vector<std::size_t> labels(batch);
    for (auto& l : labels) l = rnd.below(n);
    const LossGrad lg = focal::softmax_cross_entropy(z, labels);
    check_logit_grad([&](const DenseMatrix& zz) { return focal::softmax_cross_entropy(zz, labels).loss; },
                     z, lg.grad);
  }
}

TEST(EntropyToUniformLoss, ZeroAtUniform) {
  DenseMatrix z(3, 5, 0.7);
  const LossGrad lg = focal::entropy_to_uniform_loss(z);
  EXPECT_NEAR(lg.loss, 0.0, 1e-12);
  for (double g : lg.grad.data) EXPECT_NEAR(g, 0.0, 1e-12);

  DenseMatrix peaked(1, 5, 0.0);
  peaked.at(0, 0) = 50.0;
  EXPECT_NEAR(focal::entropy_to_uniform_loss(peaked).loss, std::log(5.0), 1e-6);
}

TEST(EntropyToUniformLoss, GradientMatchesFiniteDifferences) {
  testutil::Rand rnd(19);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 3 + rnd.below(6);
    const DenseMatrix z = random_batch(rnd, 1 + rnd.below(4), n, 3.0);
    const LossGrad lg = focal::entropy_to_uniform_loss(z);
    check_logit_grad([](const DenseMatrix& zz) { return focal::entropy_to_uniform_loss(zz).loss; },
                     z, lg.grad);
  }
}

TEST(FocalSanitizeLoss, ZeroAtItsTargets) {
  const FocalTarget t = compute_tau(ClassPartition(4, {0}));
  DenseMatrix z(2, 4);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 4; ++j) z.at(i, j) = std::log(t.tau[j]);
  const std::vector<FocalTarget> targets(2, t);
  EXPECT_NEAR(focal::focal_sanitize_loss(z, targets, FocalLossMode::KlTau).loss, 0.0, 1e-12);

  // Uniform predictions have uniform within-group conditionals.
  DenseMatrix u(2, 4, 0.3);
  EXPECT_NEAR(focal::focal_sanitize_loss(u, targets, FocalLossMode::Split).loss, 0.0, 1e-12);
}

TEST(FocalSanitizeLoss, GradientMatchesFiniteDifferencesBothModes) {
  testutil::Rand rnd(23);
  for (FocalLossMode mode : {FocalLossMode::KlTau, FocalLossMode::Split}) {
    for (int rep = 0; rep < 200; ++rep) {
      const std::size_t n = 3 + rnd.below(6);
      const std::size_t batch = 1 + rnd.below(3);
      const DenseMatrix z = random_batch(rnd, batch, n, 3.0);
      std::vector<FocalTarget> targets;
      for (std::size_t i = 0; i < batch; ++i)
        targets.push_back(compute_tau(ClassPartition(n, rnd.subset(n, 1 + rnd.below(n - 1)))));
      const LossGrad lg = focal::focal_sanitize_loss(z, targets, mode);
      check_logit_grad(
          [&](const DenseMatrix& zz) { return focal::focal_sanitize_loss(zz, targets, mode).loss; },
          z, lg.grad);
    }
  }
}

TEST(FocalSanitizeLoss, BalancedPartitionEqualsMaxent) {
  // With N_s = N_d the peak is uniform, so the KlTau route must agree with the
  // KL-to-uniform loss in both value and gradient.
  testutil::Rand rnd(29);
  const std::size_t n = 6;
  const FocalTarget t = compute_tau(ClassPartition(n, {0, 2, 4}));
  const DenseMatrix z = random_batch(rnd, 5, n, 3.0);
  const std::vector<FocalTarget> targets(5, t);
  const LossGrad focal_lg = focal::focal_sanitize_loss(z, targets, FocalLossMode::KlTau);
  const LossGrad maxent_lg = focal::entropy_to_uniform_loss(z);
  EXPECT_NEAR(focal_lg.loss, maxent_lg.loss, 1e-9);
  for (std::size_t i = 0; i < focal_lg.grad.data.size(); ++i)
    EXPECT_NEAR(focal_lg.grad.data[i], maxent_lg.grad.data[i], 1e-9);
}

TEST(MseReconstructionLoss, ValuesAndGradient) {
  testutil::Rand rnd(31);
  const DenseMatrix a = random_batch(rnd, 3, 4);
  EXPECT_DOUBLE_EQ(focal::mse_reconstruction_loss(a, a).loss, 0.0);

  DenseMatrix b = a;
  for (double& v : b.data) v += 1.0;
  EXPECT_NEAR(focal::mse_reconstruction_loss(b, a).loss, 1.0, 1e-12);

  const DenseMatrix d = random_batch(rnd, 2, 3);
  const DenseMatrix o = random_batch(rnd, 2, 3);
  const LossGrad lg = focal::mse_reconstruction_loss(d, o);
  const std::vector<double> numeric = testutil::central_diff(
      [&](const std::vector<double>& flat) {
        DenseMatrix dd = d;
        dd.data = flat;
        return focal::mse_reconstruction_loss(dd, o).loss;
      },
      d.data, 1e-6);
  EXPECT_LT(testutil::max_rel_err(lg.grad.data, numeric), 1e-4);

  EXPECT_THROW(focal::mse_reconstruction_loss(a, d), std::invalid_argument);
}

TEST(Adam, ZeroGradientLeavesParamsFixed) {
  std::vector<double> params{1.0, -2.0, 3.0};
  AdamState state(3, 0.01, 0.0);
  const std::vector<double> before = params;
  for (int i = 0; i < 5; ++i) adam_step(params, {0.0, 0.0, 0.0}, state);
  EXPECT_EQ(params, before);
}

TEST(Adam, FirstStepMagnitude) {
  std::vector<double> params{5.0};
  AdamState state(1, 0.001, 0.0);
  adam_step(params, {1.0}, state);
  EXPECT_NEAR(params[0], 5.0 - 0.001, 1e-10);
}

TEST(Adam, ZeroLearningRateFreezesParams) {
  std::vector<double> params{1.0, 2.0};
  AdamState state(2, 0.0, 1e-4);
  testutil::Rand rnd(37);
  for (int i = 0; i < 10; ++i) adam_step(params, {rnd.uniform(), rnd.uniform()}, state);
  EXPECT_DOUBLE_EQ(params[0], 1.0);
  EXPECT_DOUBLE_EQ(params[1], 2.0);
}

TEST(Adam, DeterministicTrajectoriesAndSignSymmetry) {
  std::vector<double> pa{0.5, -0.5}, pb{0.5, -0.5};
  AdamState sa(2, 0.01, 1e-4), sb(2, 0.01, 1e-4);
  testutil::Rand rnd(41);
  for (int i = 0; i < 50; ++i) {
    const double g = rnd.uniform(-1, 1);
    adam_step(pa, {g, -g}, sa);
    adam_step(pb, {g, -g}, sb);
    EXPECT_EQ(pa, pb);
    // Mirrored parameters with mirrored gradients stay mirrored.
    EXPECT_NEAR(pa[0], -pa[1], 1e-15);
  }
}

TEST(SplitEncoder, ZeroWeightHeadsEmitBiases) {
  MlpSpec trunk = linear_spec(4, 3);
  trunk.activate_output = true;
  Rng rng(43);
  SplitEncoder enc(trunk, linear_spec(3, 2), linear_spec(3, 2), rng);
  zero_weights(enc.target_head());
  zero_weights(enc.residual_head());
  enc.target_head().params()[enc.target_head().linears()[0].b_offset] = 7.0;
  enc.residual_head().params()[enc.residual_head().linears()[0].b_offset + 1] = -3.0;

  testutil::Rand rnd(44);
  DenseMatrix z_tar, z_res;
  enc.encode(random_batch(rnd, 3, 4), z_tar, z_res);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_DOUBLE_EQ(z_tar.at(i, 0), 7.0);
    EXPECT_DOUBLE_EQ(z_tar.at(i, 1), 0.0);
    EXPECT_DOUBLE_EQ(z_res.at(i, 0), 0.0);
    EXPECT_DOUBLE_EQ(z_res.at(i, 1), -3.0);
  }
}

TEST(SplitEncoder, HeadsAreSeparateTrunkIsShared) {
  MlpSpec trunk;
  trunk.input_dim = 4;
  trunk.hidden_dims = {6};
  trunk.output_dim = 5;
  trunk.activate_output = true;
  Rng rng(47);
  SplitEncoder enc(trunk, linear_spec(5, 3), linear_spec(5, 3), rng);

  testutil::Rand rnd(48);
  const DenseMatrix x = random_batch(rnd, 4, 4);
  DenseMatrix tar0, res0;
  enc.encode(x, tar0, res0);

  enc.target_head().params()[0] += 0.5;
  DenseMatrix tar1, res1;
  enc.encode(x, tar1, res1);
  EXPECT_EQ(res1.data, res0.data);
  EXPECT_NE(tar1.data, tar0.data);

  enc.trunk().params()[0] += 0.5;
  DenseMatrix tar2, res2;
  enc.encode(x, tar2, res2);
  EXPECT_NE(tar2.data, tar1.data);
  EXPECT_NE(res2.data, res1.data);
}

TEST(SplitEncoder, GradientFlowSeparation) {
  MlpSpec trunk;
  trunk.input_dim = 4;
  trunk.hidden_dims = {6};
  trunk.output_dim = 5;
  trunk.activate_output = true;
  Rng rng(53);
  SplitEncoder enc(trunk, linear_spec(5, 3), linear_spec(5, 3), rng);

  testutil::Rand rnd(54);
  const DenseMatrix x = random_batch(rnd, 4, 4);
  SplitEncoder::Cache cache;
  DenseMatrix z_tar, z_res;
  enc.encode(x, z_tar, z_res, &cache);

  // A loss touching only z_tar must leave the residual head untouched.
  DenseMatrix g_tar(z_tar.rows, z_tar.cols, 0.1);
  std::vector<double> g_trunk(enc.trunk().param_count(), 0.0);
  std::vector<double> g_th(enc.target_head().param_count(), 0.0);
  std::vector<double> g_rh(enc.residual_head().param_count(), 0.0);
  enc.encode_backward(cache, g_tar, DenseMatrix(), &g_trunk, &g_th, &g_rh);

  for (double g : g_rh) EXPECT_DOUBLE_EQ(g, 0.0);
  double trunk_norm = 0.0, head_norm = 0.0;
  for (double g : g_trunk) trunk_norm += g * g;
  for (double g : g_th) head_norm += g * g;
  EXPECT_GT(trunk_norm, 0.0);
  EXPECT_GT(head_norm, 0.0);

  // Trunk receives contributions from both streams: combined equals the sum.
  DenseMatrix g_res(z_res.rows, z_res.cols, -0.2);
  std::vector<double> g_trunk_res(enc.trunk().param_count(), 0.0);
  enc.encode_backward(cache, DenseMatrix(), g_res, &g_trunk_res, nullptr, nullptr);
  std::vector<double> g_trunk_both(enc.trunk().param_count(), 0.0);
  enc.encode_backward(cache, g_tar, g_res, &g_trunk_both, nullptr, nullptr);
  for (std::size_t i = 0; i < g_trunk.size(); ++i)
    EXPECT_NEAR(g_trunk_both[i], g_trunk[i] + g_trunk_res[i], 1e-12);
}

TEST(Checkpoint, MlpAndAdamRoundTripBitExact) {
  MlpSpec spec;
  spec.input_dim = 5;
  spec.hidden_dims = {7, 4};
  spec.output_dim = 3;
  spec.activation = Activation::PRelu;
  spec.dropout_rate = 0.2;
  Rng rng(59);
  Mlp net(spec, rng);
  AdamState state(net.param_count(), 0.001, 1e-4);
  testutil::Rand rnd(60);
  std::vector<double> grads(net.param_count());
  for (int step = 0; step < 3; ++step) {
    for (double& g : grads) g = rnd.uniform(-1, 1);
    adam_step(net.params(), grads, state);
  }

  std::stringstream buf;
  focal::save_mlp(buf, net);
  focal::save_adam(buf, state);
  const Mlp loaded = focal::load_mlp(buf);
  const AdamState loaded_state = focal::load_adam(buf);

  EXPECT_EQ(loaded.params(), net.params());
  EXPECT_EQ(loaded.spec().hidden_dims, spec.hidden_dims);
  EXPECT_EQ(loaded.spec().dropout_rate, spec.dropout_rate);
  EXPECT_EQ(loaded_state.step, state.step);
  EXPECT_EQ(loaded_state.m, state.m);
  EXPECT_EQ(loaded_state.v, state.v);

  // And again: serialized bytes are identical on re-save.
  std::stringstream buf2;
  focal::save_mlp(buf2, loaded);
  focal::save_adam(buf2, loaded_state);
  EXPECT_EQ(buf.str().substr(0, buf2.str().size()), buf2.str());
}

TEST(Checkpoint, TruncatedStreamFails) {
  MlpSpec spec = linear_spec(3, 2);
  Rng rng(61);
  Mlp net(spec, rng);
  std::stringstream buf;
  focal::save_mlp(buf, net);
  std::string bytes = buf.str();
  bytes.resize(bytes.size() / 2);
  std::stringstream cut(bytes);
  EXPECT_THROW(focal::load_mlp(cut), std::runtime_error);
}
