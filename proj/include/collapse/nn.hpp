#ifndef COLLAPSE_NN_HPP
#define COLLAPSE_NN_HPP

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace collapse::nn {

/// Batched feature map. `data` is channels x (batch * height * width); column
/// index is b * height * width + y * width + x.
struct FeatureMap {
  std::size_t batch = 0;
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  Eigen::MatrixXd data;

  FeatureMap() = default;
  FeatureMap(std::size_t b, std::size_t c, std::size_t h, std::size_t w)
      : batch(b), channels(c), height(h), width(w),
        data(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(c),
                                   static_cast<Eigen::Index>(b * h * w))) {}
  std::size_t plane() const { return height * width; }
};

enum class LayerKind : std::uint8_t { conv, group_norm, silu, sigmoid, upsample2x };

/// One layer. Convolutions use every geometry field; group normalization uses
/// `groups`, with `weight` holding the per-channel scale (channels x 1) and
/// `bias` the shift.
struct Layer {
  LayerKind kind = LayerKind::conv;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
  Eigen::MatrixXd weight;  // conv: out x (in * k * k), column (ci * k + ky) * k + kx
  Eigen::VectorXd bias;

  bool has_parameters() const { return kind == LayerKind::conv || kind == LayerKind::group_norm; }
  std::size_t out_size(std::size_t in) const { return (in + 2 * padding - kernel) / stride + 1; }
};

inline constexpr double kGroupNormEpsilon = 1e-5;

/// Gradients for every parameterized layer of a Network, in layer order.
struct Gradients {
  std::vector<Eigen::MatrixXd> weight;
  std::vector<Eigen::VectorXd> bias;
  void set_zero();
};

/// Feed-forward stack of layers with explicit reverse-mode differentiation.
class Network {
 public:
  void add_conv(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                std::size_t padding);
  void add_group_norm(std::size_t channels, std::size_t groups);
  void add(LayerKind kind);

  /// He-normal conv weights, unit norm scales, zero biases.
  void initialize(std::mt19937_64& rng);

  FeatureMap forward(const FeatureMap& x) const;
  /// Forward pass keeping every intermediate; tape[0] = x, tape.back() = output.
  std::vector<FeatureMap> forward_tape(const FeatureMap& x) const;
  /// Propagates d(output) back through the network. Accumulates parameter
  /// gradients into `grads` when non-null and returns d(input).
  FeatureMap backward(const std::vector<FeatureMap>& tape, const FeatureMap& d_output,
                      Gradients* grads) const;

  Gradients zero_gradients() const;
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::size_t parameter_count() const;

 private:
  std::vector<Layer> layers_;
};

/// Adam with bias correction.
class Adam {
 public:
  Adam(const Network& net, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
       double epsilon = 1e-8);
  void step(Network& net, const Gradients& grads);

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  Gradients m_, v_;
};

}  // namespace collapse::nn

#endif  // COLLAPSE_NN_HPP
