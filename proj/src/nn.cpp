#include "collapse/nn.hpp"

#include <cmath>

#include "collapse/errors.hpp"

namespace collapse::nn {

namespace {

using Eigen::Index;

Eigen::MatrixXd im2col(const FeatureMap& x, const Layer& conv, std::size_t out_h,
                       std::size_t out_w) {
  const std::size_t k = conv.kernel;
  const std::size_t out_plane = out_h * out_w;
  Eigen::MatrixXd cols = Eigen::MatrixXd::Zero(static_cast<Index>(x.channels * k * k),
                                               static_cast<Index>(x.batch * out_plane));
  const auto h = static_cast<long>(x.height);
  const auto w = static_cast<long>(x.width);
  const auto pad = static_cast<long>(conv.padding);
  const auto stride = static_cast<long>(conv.stride);
  for (std::size_t b = 0; b < x.batch; ++b) {
    for (std::size_t c = 0; c < x.channels; ++c) {
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
          const Index row = static_cast<Index>((c * k + ky) * k + kx);
          for (std::size_t oy = 0; oy < out_h; ++oy) {
            const long iy = static_cast<long>(oy) * stride - pad + static_cast<long>(ky);
            if (iy < 0 || iy >= h) continue;
            for (std::size_t ox = 0; ox < out_w; ++ox) {
              const long ix = static_cast<long>(ox) * stride - pad + static_cast<long>(kx);
              if (ix < 0 || ix >= w) continue;
              cols(row, static_cast<Index>(b * out_plane + oy * out_w + ox)) =
                  x.data(static_cast<Index>(c),
                         static_cast<Index>(b * x.plane() + static_cast<std::size_t>(iy * w + ix)));
            }
          }
        }
      }
    }
  }
  return cols;
}

void col2im(const Eigen::MatrixXd& cols, const Layer& conv, std::size_t out_h, std::size_t out_w,
            FeatureMap& dx) {
  const std::size_t k = conv.kernel;
  const std::size_t out_plane = out_h * out_w;
  const auto h = static_cast<long>(dx.height);
  const auto w = static_cast<long>(dx.width);
  const auto pad = static_cast<long>(conv.padding);
  const auto stride = static_cast<long>(conv.stride);
  for (std::size_t b = 0; b < dx.batch; ++b) {
    for (std::size_t c = 0; c < dx.channels; ++c) {
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
          const Index row = static_cast<Index>((c * k + ky) * k + kx);
          for (std::size_t oy = 0; oy < out_h; ++oy) {
            const long iy = static_cast<long>(oy) * stride - pad + static_cast<long>(ky);
            if (iy < 0 || iy >= h) continue;
            for (std::size_t ox = 0; ox < out_w; ++ox) {
              const long ix = static_cast<long>(ox) * stride - pad + static_cast<long>(kx);
              if (ix < 0 || ix >= w) continue;
              dx.data(static_cast<Index>(c),
                      static_cast<Index>(b * dx.plane() + static_cast<std::size_t>(iy * w + ix))) +=
                  cols(row, static_cast<Index>(b * out_plane + oy * out_w + ox));
            }
          }
        }
      }
    }
  }
}

FeatureMap conv_forward(const Layer& conv, const FeatureMap& x) {
  if (x.channels != conv.in_channels) {
    throw ValidationError("conv: expected " + std::to_string(conv.in_channels) +
                          " input channels, got " + std::to_string(x.channels));
  }
  const std::size_t oh = conv.out_size(x.height);
  const std::size_t ow = conv.out_size(x.width);
  FeatureMap y(x.batch, conv.out_channels, oh, ow);
  if (conv.kernel == 1 && conv.stride == 1 && conv.padding == 0) {
    y.data.noalias() = conv.weight * x.data;
  } else {
    y.data.noalias() = conv.weight * im2col(x, conv, oh, ow);
  }
  y.data.colwise() += conv.bias;
  return y;
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Per-(sample, group) statistics over channels-in-group x spatial positions.
struct GroupStats {
  std::vector<double> mean;
  std::vector<double> inv_std;
};

GroupStats group_stats(const Layer& gn, const FeatureMap& x) {
  const std::size_t per = x.channels / gn.groups;
  const std::size_t plane = x.plane();
  const double n = static_cast<double>(per * plane);
  GroupStats st;
  st.mean.resize(x.batch * gn.groups);
  st.inv_std.resize(x.batch * gn.groups);
  for (std::size_t b = 0; b < x.batch; ++b) {
    for (std::size_t g = 0; g < gn.groups; ++g) {
      const auto block = x.data.block(static_cast<Index>(g * per), static_cast<Index>(b * plane),
                                      static_cast<Index>(per), static_cast<Index>(plane));
      const double m = block.sum() / n;
      const double var = (block.array() - m).square().sum() / n;
      st.mean[b * gn.groups + g] = m;
      st.inv_std[b * gn.groups + g] = 1.0 / std::sqrt(var + kGroupNormEpsilon);
    }
  }
  return st;
}

FeatureMap group_norm_forward(const Layer& gn, const FeatureMap& x) {
  const std::size_t per = x.channels / gn.groups;
  const std::size_t plane = x.plane();
  const GroupStats st = group_stats(gn, x);
  FeatureMap y(x.batch, x.channels, x.height, x.width);
  for (std::size_t b = 0; b < x.batch; ++b) {
    for (std::size_t c = 0; c < x.channels; ++c) {
      const std::size_t k = b * gn.groups + c / per;
      const Index ci = static_cast<Index>(c);
      y.data.row(ci).segment(static_cast<Index>(b * plane), static_cast<Index>(plane)) =
          ((x.data.row(ci).segment(static_cast<Index>(b * plane), static_cast<Index>(plane))
                .array() -
            st.mean[k]) *
               (st.inv_std[k] * gn.weight(ci, 0)) +
           gn.bias(ci))
              .matrix();
    }
  }
  return y;
}

FeatureMap group_norm_backward(const Layer& gn, const FeatureMap& x, const FeatureMap& dy,
                               Eigen::MatrixXd* d_weight, Eigen::VectorXd* d_bias) {
  const std::size_t per = x.channels / gn.groups;
  const std::size_t plane = x.plane();
  const double n = static_cast<double>(per * plane);
  const GroupStats st = group_stats(gn, x);
  FeatureMap dx(x.batch, x.channels, x.height, x.width);
  for (std::size_t b = 0; b < x.batch; ++b) {
    for (std::size_t g = 0; g < gn.groups; ++g) {
      const std::size_t k = b * gn.groups + g;
      const Index r0 = static_cast<Index>(g * per), c0 = static_cast<Index>(b * plane);
      const Index rows = static_cast<Index>(per), cols = static_cast<Index>(plane);
      const Eigen::ArrayXXd xhat =
          (x.data.block(r0, c0, rows, cols).array() - st.mean[k]) * st.inv_std[k];
      const Eigen::ArrayXXd g_out = dy.data.block(r0, c0, rows, cols).array();
      if (d_weight) d_weight->col(0).segment(r0, rows) += (g_out * xhat).rowwise().sum().matrix();
      if (d_bias) d_bias->segment(r0, rows) += g_out.rowwise().sum().matrix();
      const Eigen::ArrayXXd dxhat =
          g_out.colwise() * gn.weight.col(0).segment(r0, rows).array();
      const double mean_dxhat = dxhat.sum() / n;
      const double mean_dxhat_xhat = (dxhat * xhat).sum() / n;
      dx.data.block(r0, c0, rows, cols) =
          (st.inv_std[k] * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)).matrix();
    }
  }
  return dx;
}

}  // namespace

void Gradients::set_zero() {
  for (auto& w : weight) w.setZero();
  for (auto& b : bias) b.setZero();
}

void Network::add_conv(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                       std::size_t padding) {
  Layer l;
  l.kind = LayerKind::conv;
  l.in_channels = in;
  l.out_channels = out;
  l.kernel = kernel;
  l.stride = stride;
  l.padding = padding;
  l.weight = Eigen::MatrixXd::Zero(static_cast<Index>(out),
                                   static_cast<Index>(in * kernel * kernel));
  l.bias = Eigen::VectorXd::Zero(static_cast<Index>(out));
  layers_.push_back(std::move(l));
}

void Network::add_group_norm(std::size_t channels, std::size_t groups) {
  if (groups == 0 || channels % groups != 0) {
    throw ValidationError("group norm: channels must be divisible by groups");
  }
  Layer l;
  l.kind = LayerKind::group_norm;
  l.in_channels = channels;
  l.out_channels = channels;
  l.groups = groups;
  l.weight = Eigen::MatrixXd::Ones(static_cast<Index>(channels), 1);
  l.bias = Eigen::VectorXd::Zero(static_cast<Index>(channels));
  layers_.push_back(std::move(l));
}

void Network::add(LayerKind kind) {
  if (kind == LayerKind::conv || kind == LayerKind::group_norm) {
    throw ValidationError("use add_conv / add_group_norm for parameterized layers");
  }
  Layer l;
  l.kind = kind;
  layers_.push_back(std::move(l));
}

void Network::initialize(std::mt19937_64& rng) {
  for (auto& l : layers_) {
    if (l.kind == LayerKind::group_norm) {
      l.weight.setOnes();
      l.bias.setZero();
    }
    if (l.kind != LayerKind::conv) continue;
    const double fan_in = static_cast<double>(l.weight.cols());
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = dist(rng);
    l.bias.setZero();
  }
}

FeatureMap Network::forward(const FeatureMap& x) const { return forward_tape(x).back(); }

std::vector<FeatureMap> Network::forward_tape(const FeatureMap& x) const {
  std::vector<FeatureMap> tape;
  tape.reserve(layers_.size() + 1);
  tape.push_back(x);
  for (const auto& l : layers_) {
    const FeatureMap& in = tape.back();
    switch (l.kind) {
      case LayerKind::conv:
        tape.push_back(conv_forward(l, in));
        break;
      case LayerKind::group_norm:
        tape.push_back(group_norm_forward(l, in));
        break;
      case LayerKind::silu: {
        FeatureMap out = in;
        out.data = in.data.unaryExpr([](double v) { return v * sigmoid(v); });
        tape.push_back(std::move(out));
        break;
      }
      case LayerKind::sigmoid: {
        FeatureMap out = in;
        out.data = in.data.unaryExpr([](double v) { return sigmoid(v); });
        tape.push_back(std::move(out));
        break;
      }
      case LayerKind::upsample2x: {
        FeatureMap out(in.batch, in.channels, in.height * 2, in.width * 2);
        for (std::size_t b = 0; b < in.batch; ++b)
          for (std::size_t y = 0; y < out.height; ++y)
            for (std::size_t xx = 0; xx < out.width; ++xx)
              out.data.col(static_cast<Index>(b * out.plane() + y * out.width + xx)) =
                  in.data.col(static_cast<Index>(b * in.plane() + (y / 2) * in.width + xx / 2));
        tape.push_back(std::move(out));
        break;
      }
    }
  }
  return tape;
}

FeatureMap Network::backward(const std::vector<FeatureMap>& tape, const FeatureMap& d_output,
                             Gradients* grads) const {
  FeatureMap grad = d_output;
  std::size_t param_index = 0;
  for (const auto& l : layers_)
    if (l.has_parameters()) ++param_index;

  for (std::size_t li = layers_.size(); li-- > 0;) {
    const Layer& l = layers_[li];
    const FeatureMap& in = tape[li];
    const FeatureMap& out = tape[li + 1];
    switch (l.kind) {
      case LayerKind::conv: {
        --param_index;
        const Layer& conv = l;
        const bool pointwise = conv.kernel == 1 && conv.stride == 1 && conv.padding == 0;
        FeatureMap dx(in.batch, in.channels, in.height, in.width);
        if (pointwise) {
          if (grads) {
            grads->weight[param_index].noalias() += grad.data * in.data.transpose();
            grads->bias[param_index] += grad.data.rowwise().sum();
          }
          dx.data.noalias() = conv.weight.transpose() * grad.data;
        } else {
          if (grads) {
            const Eigen::MatrixXd cols = im2col(in, conv, out.height, out.width);
            grads->weight[param_index].noalias() += grad.data * cols.transpose();
            grads->bias[param_index] += grad.data.rowwise().sum();
          }
          const Eigen::MatrixXd dcols = conv.weight.transpose() * grad.data;
          col2im(dcols, conv, out.height, out.width, dx);
        }
        grad = std::move(dx);
        break;
      }
      case LayerKind::group_norm: {
        --param_index;
        grad = group_norm_backward(l, in, grad, grads ? &grads->weight[param_index] : nullptr,
                                   grads ? &grads->bias[param_index] : nullptr);
        break;
      }
      case LayerKind::silu:
        grad.data = grad.data.cwiseProduct(in.data.unaryExpr([](double v) {
          const double s = sigmoid(v);
          return s + v * s * (1.0 - s);
        }));
        break;
      case LayerKind::sigmoid:
        grad.data = grad.data.cwiseProduct(
            out.data.unaryExpr([](double s) { return s * (1.0 - s); }));
        break;
      case LayerKind::upsample2x: {
        FeatureMap dx(in.batch, in.channels, in.height, in.width);
        for (std::size_t b = 0; b < in.batch; ++b)
          for (std::size_t y = 0; y < out.height; ++y)
            for (std::size_t xx = 0; xx < out.width; ++xx)
              dx.data.col(static_cast<Index>(b * in.plane() + (y / 2) * in.width + xx / 2)) +=
                  grad.data.col(static_cast<Index>(b * out.plane() + y * out.width + xx));
        grad = std::move(dx);
        break;
      }
    }
  }
  return grad;
}

Gradients Network::zero_gradients() const {
  Gradients g;
  for (const auto& l : layers_) {
    if (!l.has_parameters()) continue;
    g.weight.push_back(Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()));
    g.bias.push_back(Eigen::VectorXd::Zero(l.bias.size()));
  }
  return g;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_)
    if (l.has_parameters()) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

Adam::Adam(const Network& net, double learning_rate, double beta1, double beta2, double epsilon)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon),
      m_(net.zero_gradients()), v_(net.zero_gradients()) {}

void Adam::step(Network& net, const Gradients& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  std::size_t ci = 0;
  auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseAbs2();
    param.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
  };
  for (auto& l : net.layers()) {
    if (!l.has_parameters()) continue;
    update(l.weight, m_.weight[ci], v_.weight[ci], grads.weight[ci]);
    update(l.bias, m_.bias[ci], v_.bias[ci], grads.bias[ci]);
    ++ci;
  }
}

}  // namespace collapse::nn
