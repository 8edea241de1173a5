#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "collapse/nn.hpp"

namespace collapse::nn {
namespace {

FeatureMap random_map(std::size_t b, std::size_t c, std::size_t h, std::size_t w,
                      std::mt19937_64& rng) {
  FeatureMap fm(b, c, h, w);
  std::normal_distribution<double> n(0.0, 1.0);
  for (Eigen::Index i = 0; i < fm.data.size(); ++i) fm.data.data()[i] = n(rng);
  return fm;
}

// Scalar probe: L = sum(out * probe).
double probe_loss(const Network& net, const FeatureMap& x, const Eigen::MatrixXd& probe) {
  return (net.forward(x).data.array() * probe.array()).sum();
}

Network small_network(std::mt19937_64& rng) {
  Network net;
  net.add_conv(3, 8, 3, 2, 1);
  net.add_group_norm(8, 4);
  net.add(LayerKind::silu);
  net.add(LayerKind::upsample2x);
  net.add_conv(8, 4, 3, 1, 1);
  net.add(LayerKind::sigmoid);
  net.initialize(rng);
  // Non-trivial norm affine parameters.
  for (auto& l : net.layers()) {
    if (l.kind == LayerKind::group_norm) {
      l.weight.setRandom();
      l.bias.setRandom();
    }
  }
  return net;
}

TEST(Network, InputGradientMatchesCentralDifferences) {
  std::mt19937_64 rng(7);
  const Network net = small_network(rng);
  FeatureMap x = random_map(2, 3, 6, 6, rng);
  const FeatureMap out = net.forward(x);
  const Eigen::MatrixXd probe = random_map(out.batch, out.channels, out.height, out.width, rng).data;

  const auto tape = net.forward_tape(x);
  FeatureMap d_out = out;
  d_out.data = probe;
  const FeatureMap dx = net.backward(tape, d_out, nullptr);

  const double h = 1e-5;
  for (Eigen::Index i = 0; i < x.data.size(); i += 7) {
    const double keep = x.data.data()[i];
    x.data.data()[i] = keep + h;
    const double up = probe_loss(net, x, probe);
    x.data.data()[i] = keep - h;
    const double down = probe_loss(net, x, probe);
    x.data.data()[i] = keep;
    const double fd = (up - down) / (2 * h);
    EXPECT_NEAR(dx.data.data()[i], fd, 1e-6 * std::max(1.0, std::abs(fd))) << "index " << i;
  }
}

TEST(Network, ParameterGradientsMatchCentralDifferences) {
  std::mt19937_64 rng(11);
  Network net = small_network(rng);
  const FeatureMap x = random_map(2, 3, 6, 6, rng);
  const FeatureMap out = net.forward(x);
  const Eigen::MatrixXd probe = random_map(out.batch, out.channels, out.height, out.width, rng).data;

  Gradients grads = net.zero_gradients();
  FeatureMap d_out = out;
  d_out.data = probe;
  net.backward(net.forward_tape(x), d_out, &grads);

  const double h = 1e-5;
  std::size_t pi = 0;
  for (auto& layer : net.layers()) {
    if (!layer.has_parameters()) continue;
    for (Eigen::Index i = 0; i < layer.weight.size(); i += 5) {
      const double keep = layer.weight.data()[i];
      layer.weight.data()[i] = keep + h;
      const double up = probe_loss(net, x, probe);
      layer.weight.data()[i] = keep - h;
      const double down = probe_loss(net, x, probe);
      layer.weight.data()[i] = keep;
      const double fd = (up - down) / (2 * h);
      EXPECT_NEAR(grads.weight[pi].data()[i], fd, 1e-6 * std::max(1.0, std::abs(fd)));
    }
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) {
      const double keep = layer.bias[i];
      layer.bias[i] = keep + h;
      const double up = probe_loss(net, x, probe);
      layer.bias[i] = keep - h;
      const double down = probe_loss(net, x, probe);
      layer.bias[i] = keep;
      EXPECT_NEAR(grads.bias[pi][i], (up - down) / (2 * h), 1e-6);
    }
    ++pi;
  }
}

TEST(Network, GroupNormOutputIsNormalizedPerGroup) {
  Network net;
  net.add_group_norm(4, 2);
  std::mt19937_64 rng(3);
  const FeatureMap x = random_map(1, 4, 5, 5, rng);
  const FeatureMap y = net.forward(x);
  const auto group = y.data.topRows(2).array();
  const double mean = group.mean();
  const double var = (group - mean).square().mean();
  EXPECT_NEAR(mean, 0.0, 1e-12);
  EXPECT_NEAR(var, 1.0, 1e-3);
}

TEST(Network, RejectsGroupCountThatDoesNotDivideChannels) {
  Network net;
  EXPECT_THROW(net.add_group_norm(6, 4), std::invalid_argument);
}

TEST(Adam, FirstStepMovesEachParameterByLearningRate) {
  Network net;
  net.add_conv(1, 1, 1, 1, 0);
  net.layers()[0].weight(0, 0) = 0.5;
  Adam opt(net, 0.01);
  Gradients g = net.zero_gradients();
  g.weight[0](0, 0) = 3.0;
  g.bias[0](0) = -2.0;
  opt.step(net, g);
  EXPECT_NEAR(net.layers()[0].weight(0, 0), 0.49, 1e-9);
  EXPECT_NEAR(net.layers()[0].bias(0), 0.01, 1e-9);
}

}  // namespace
}  // namespace collapse::nn
