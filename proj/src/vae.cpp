#include "collapse/vae.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

#include <json.hpp>

#include "collapse/errors.hpp"

namespace collapse {

using Eigen::Index;

void VaeArchitecture::validate() const {
  if (image_channels != 1 && image_channels != 3) {
    throw ValidationError("VAE: image channels must be 1 or 3");
  }
  if (image_height == 0 || image_width == 0 || image_height % downsample_factor != 0 ||
      image_width % downsample_factor != 0) {
    throw ValidationError("VAE: image size must be a positive multiple of " +
                          std::to_string(downsample_factor));
  }
  if (latent_channels == 0 || base_channels == 0) {
    throw ValidationError("VAE: latent and base channel counts must be positive");
  }
}

namespace detail {

nn::FeatureMap to_feature_map(const std::vector<const ImageGrid*>& images) {
  const ImageGrid& first = *images.front();
  nn::FeatureMap fm(images.size(), first.channels(), first.height(), first.width());
  const std::size_t plane = fm.plane();
  for (std::size_t b = 0; b < images.size(); ++b) {
    const ImageGrid& img = *images[b];
    for (std::size_t p = 0; p < plane; ++p)
      for (std::size_t c = 0; c < fm.channels; ++c)
        fm.data(static_cast<Index>(c), static_cast<Index>(b * plane + p)) =
            img[p * fm.channels + c];
  }
  return fm;
}

ImageGrid from_feature_map(const nn::FeatureMap& fm, std::size_t b) {
  ImageGrid img(fm.height, fm.width, fm.channels);
  const std::size_t plane = fm.plane();
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t c = 0; c < fm.channels; ++c)
      img[p * fm.channels + c] = fm.data(static_cast<Index>(c), static_cast<Index>(b * plane + p));
  return img;
}

}  // namespace detail

namespace {

constexpr double kLvMin = VaeArchitecture::log_variance_min;
constexpr double kLvMax = VaeArchitecture::log_variance_max;

// Splits encoder output of batch item b into a posterior with clamped log-variance.
PosteriorParams extract_posterior(const nn::FeatureMap& out, std::size_t latent_channels,
                                  std::size_t b) {
  const std::size_t plane = out.plane();
  PosteriorParams post;
  post.mean.resize(latent_channels * plane);
  post.log_variance.resize(latent_channels * plane);
  for (std::size_t c = 0; c < latent_channels; ++c) {
    for (std::size_t p = 0; p < plane; ++p) {
      const Index col = static_cast<Index>(b * plane + p);
      post.mean[c * plane + p] = out.data(static_cast<Index>(c), col);
      post.log_variance[c * plane + p] =
          std::clamp(out.data(static_cast<Index>(latent_channels + c), col), kLvMin, kLvMax);
    }
  }
  return post;
}

// Writes dL/d(mu), dL/d(log_variance) of item b into the encoder-output gradient,
// masking log-variance entries that were clamped.
void scatter_posterior_grad(const nn::FeatureMap& out, std::size_t latent_channels, std::size_t b,
                            const std::vector<double>& d_mean, const std::vector<double>& d_lv,
                            nn::FeatureMap& d_out) {
  const std::size_t plane = out.plane();
  for (std::size_t c = 0; c < latent_channels; ++c) {
    for (std::size_t p = 0; p < plane; ++p) {
      const Index col = static_cast<Index>(b * plane + p);
      const Index lv_row = static_cast<Index>(latent_channels + c);
      d_out.data(static_cast<Index>(c), col) = d_mean[c * plane + p];
      const double raw = out.data(lv_row, col);
      d_out.data(lv_row, col) = (raw > kLvMin && raw < kLvMax) ? d_lv[c * plane + p] : 0.0;
    }
  }
}

constexpr std::size_t kNormGroups = 4;

nn::Network build_encoder(const VaeArchitecture& a) {
  const std::size_t b = a.base_channels;
  nn::Network net;
  net.add_conv(a.image_channels, b, 3, 2, 1);
  net.add_group_norm(b, kNormGroups);
  net.add(nn::LayerKind::silu);
  net.add_conv(b, 2 * b, 3, 2, 1);
  net.add_group_norm(2 * b, kNormGroups);
  net.add(nn::LayerKind::silu);
  net.add_conv(2 * b, 2 * b, 3, 1, 1);
  net.add_group_norm(2 * b, kNormGroups);
  net.add(nn::LayerKind::silu);
  net.add_conv(2 * b, 2 * a.latent_channels, 1, 1, 0);
  return net;
}

nn::Network build_decoder(const VaeArchitecture& a) {
  const std::size_t b = a.base_channels;
  nn::Network net;
  net.add_conv(a.latent_channels, 2 * b, 3, 1, 1);
  net.add(nn::LayerKind::silu);
  net.add(nn::LayerKind::upsample2x);
  net.add_conv(2 * b, b, 3, 1, 1);
  net.add(nn::LayerKind::silu);
  net.add(nn::LayerKind::upsample2x);
  net.add_conv(b, a.image_channels, 3, 1, 1);
  net.add(nn::LayerKind::sigmoid);
  return net;
}

}  // namespace

EncoderModel::EncoderModel(const VaeArchitecture& arch, std::mt19937_64& rng)
    : arch_(arch), net_(build_encoder(arch)) {
  arch_.validate();
  net_.initialize(rng);
  // Start the log-variance head small so the initial posterior is near N(mu, I).
  auto& head = net_.layers().back();
  head.weight.bottomRows(static_cast<Index>(arch_.latent_channels)) *= 0.1;
}

void EncoderModel::check_input(const ImageGrid& image) const {
  const std::size_t f = downsample_factor();
  if (image.channels() != arch_.image_channels) {
    throw ValidationError("encode: expected " + std::to_string(arch_.image_channels) +
                          " channels, got " + std::to_string(image.channels()));
  }
  if (image.height() == 0 || image.width() == 0 || image.height() % f != 0 ||
      image.width() % f != 0) {
    throw ValidationError("encode: image " + std::to_string(image.height()) + "x" +
                          std::to_string(image.width()) + " is not divisible by factor " +
                          std::to_string(f));
  }
}

PosteriorParams EncoderModel::encode(const ImageGrid& image) const {
  check_input(image);
  const nn::FeatureMap out = net_.forward(detail::to_feature_map({&image}));
  return extract_posterior(out, arch_.latent_channels, 0);
}

ImageGrid EncoderModel::input_gradient(const ImageGrid& image,
                                       const PosteriorLossGradient& upstream,
                                       PosteriorParams* posterior) const {
  check_input(image);
  const auto tape = net_.forward_tape(detail::to_feature_map({&image}));
  const nn::FeatureMap& out = tape.back();
  PosteriorParams post = extract_posterior(out, arch_.latent_channels, 0);
  const PosteriorGradient g = upstream(post);
  nn::FeatureMap d_out(out.batch, out.channels, out.height, out.width);
  scatter_posterior_grad(out, arch_.latent_channels, 0, g.d_mean, g.d_log_variance, d_out);
  const nn::FeatureMap dx = net_.backward(tape, d_out, nullptr);
  if (posterior) *posterior = std::move(post);
  return detail::from_feature_map(dx, 0);
}

DecoderModel::DecoderModel(const VaeArchitecture& arch, std::mt19937_64& rng)
    : arch_(arch), net_(build_decoder(arch)) {
  arch_.validate();
  net_.initialize(rng);
}

ImageGrid DecoderModel::decode(const Latent& latent) const {
  return decode(latent, arch_.image_height, arch_.image_width);
}

ImageGrid DecoderModel::decode(const Latent& latent, std::size_t height, std::size_t width) const {
  const std::size_t f = VaeArchitecture::downsample_factor;
  if (height == 0 || width == 0 || height % f != 0 || width % f != 0) {
    throw ValidationError("decode: output size must be a positive multiple of " +
                          std::to_string(f));
  }
  const std::size_t expected = arch_.latent_dim(height, width);
  if (latent.size() != expected) {
    throw ValidationError("decode: latent length " + std::to_string(latent.size()) +
                          " does not match expected " + std::to_string(expected));
  }
  nn::FeatureMap z(1, arch_.latent_channels, height / f, width / f);
  const std::size_t plane = z.plane();
  for (std::size_t c = 0; c < arch_.latent_channels; ++c)
    for (std::size_t p = 0; p < plane; ++p)
      z.data(static_cast<Index>(c), static_cast<Index>(p)) = latent[c * plane + p];
  return detail::from_feature_map(net_.forward(z), 0);
}

VaeModel make_vae(const VaeArchitecture& arch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  EncoderModel enc(arch, rng);
  DecoderModel dec(arch, rng);
  return VaeModel{std::move(enc), std::move(dec)};
}

Latent sample_latent(const PosteriorParams& post, std::uint64_t seed) {
  post.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Latent z(post.dim());
  for (std::size_t i = 0; i < z.size(); ++i) {
    z[i] = post.mean[i] + std::exp(0.5 * post.log_variance[i]) * normal(rng);
  }
  return z;
}

ImageGrid reconstruct(const EncoderModel& enc, const DecoderModel& dec, const ImageGrid& image,
                      ReconstructMode mode, std::uint64_t seed) {
  const PosteriorParams post = enc.encode(image);
  const Latent z = mode == ReconstructMode::mean ? post.mean : sample_latent(post, seed);
  return dec.decode(z, image.height(), image.width());
}

ElboTerms elbo_loss(const EncoderModel& enc, const DecoderModel& dec, const ImageGrid& image,
                    double beta) {
  if (!(beta >= 0.0)) throw ValidationError("elbo: beta must be nonnegative");
  const PosteriorParams post = enc.encode(image);
  const ImageGrid recon = dec.decode(post.mean, image.height(), image.width());
  ElboTerms t;
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double d = recon[i] - image[i];
    t.reconstruction += d * d;
  }
  t.kl = kl_to_isotropic(post, TargetPrior{1.0});
  t.total = t.reconstruction + beta * t.kl;
  return t;
}

double mean_elbo(const EncoderModel& enc, const DecoderModel& dec,
                 const std::vector<ImageGrid>& images, double beta) {
  if (images.empty()) throw ValidationError("mean_elbo: no images");
  double sum = 0.0;
  for (const auto& img : images) sum += elbo_loss(enc, dec, img, beta).total;
  return sum / static_cast<double>(images.size());
}

void VaeTrainConfig::validate() const {
  if (batch_size == 0) throw ValidationError("train: batch size must be positive");
  if (!(learning_rate > 0.0)) throw ValidationError("train: learning rate must be positive");
  if (!(beta >= 0.0)) throw ValidationError("train: beta must be nonnegative");
  if (latent_channels == 0 || base_channels == 0) {
    throw ValidationError("train: channel counts must be positive");
  }
}

TrainedVae train_toy_vae(const std::vector<ImageGrid>& dataset, const VaeTrainConfig& config) {
  config.validate();
  if (dataset.empty()) throw ValidationError("train: dataset is empty");
  for (const auto& img : dataset) require_same_shape(dataset.front(), img, "train");

  VaeArchitecture arch;
  arch.image_height = dataset.front().height();
  arch.image_width = dataset.front().width();
  arch.image_channels = dataset.front().channels();
  arch.latent_channels = config.latent_channels;
  arch.base_channels = config.base_channels;
  arch.validate();

  std::mt19937_64 rng(config.seed);
  EncoderModel enc(arch, rng);
  DecoderModel dec(arch, rng);
  TrainedVae result{VaeModel{std::move(enc), std::move(dec)}, {}};
  nn::Network& enet = result.model.encoder.network();
  nn::Network& dnet = result.model.decoder.network();
  nn::Adam enc_opt(enet, config.learning_rate);
  nn::Adam dec_opt(dnet, config.learning_rate);
  nn::Gradients eg = enet.zero_gradients();
  nn::Gradients dg = dnet.zero_gradients();
  std::normal_distribution<double> normal(0.0, 1.0);

  const std::size_t cz = arch.latent_channels;
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      const std::size_t bsz = stop - start;
      const double inv_b = 1.0 / static_cast<double>(bsz);
      std::vector<const ImageGrid*> batch;
      for (std::size_t i = start; i < stop; ++i) batch.push_back(&dataset[order[i]]);

      const nn::FeatureMap x = detail::to_feature_map(batch);
      const auto etape = enet.forward_tape(x);
      const nn::FeatureMap& eout = etape.back();
      const std::size_t plane = eout.plane();

      nn::FeatureMap z(bsz, cz, eout.height, eout.width);
      std::vector<PosteriorParams> posts(bsz);
      std::vector<std::vector<double>> noise(bsz);
      for (std::size_t b = 0; b < bsz; ++b) {
        posts[b] = extract_posterior(eout, cz, b);
        noise[b].resize(cz * plane);
        for (std::size_t c = 0; c < cz; ++c)
          for (std::size_t p = 0; p < plane; ++p) {
            const std::size_t i = c * plane + p;
            noise[b][i] = normal(rng);
            z.data(static_cast<Index>(c), static_cast<Index>(b * plane + p)) =
                posts[b].mean[i] + std::exp(0.5 * posts[b].log_variance[i]) * noise[b][i];
          }
      }

      const auto dtape = dnet.forward_tape(z);
      const nn::FeatureMap& recon = dtape.back();
      nn::FeatureMap d_recon = recon;
      d_recon.data = (recon.data - x.data) * (2.0 * inv_b);
      double batch_loss = (recon.data - x.data).squaredNorm();
      for (const auto& p : posts) batch_loss += config.beta * kl_to_isotropic(p, TargetPrior{1.0});
      epoch_sum += batch_loss;

      eg.set_zero();
      dg.set_zero();
      const nn::FeatureMap dz = dnet.backward(dtape, d_recon, &dg);

      nn::FeatureMap d_eout(bsz, eout.channels, eout.height, eout.width);
      std::vector<double> d_mean(cz * plane), d_lv(cz * plane);
      for (std::size_t b = 0; b < bsz; ++b) {
        for (std::size_t c = 0; c < cz; ++c)
          for (std::size_t p = 0; p < plane; ++p) {
            const std::size_t i = c * plane + p;
            const double dzi = dz.data(static_cast<Index>(c), static_cast<Index>(b * plane + p));
            const double mu = posts[b].mean[i];
            const double lv = posts[b].log_variance[i];
            const double sd = std::exp(0.5 * lv);
            d_mean[i] = dzi + config.beta * mu * inv_b;
            d_lv[i] = dzi * noise[b][i] * 0.5 * sd +
                      config.beta * 0.5 * (std::exp(lv) - 1.0) * inv_b;
          }
        scatter_posterior_grad(eout, cz, b, d_mean, d_lv, d_eout);
      }
      enet.backward(etape, d_eout, &eg);

      enc_opt.step(enet, eg);
      dec_opt.step(dnet, dg);
    }
    result.epoch_loss.push_back(epoch_sum / static_cast<double>(dataset.size()));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints: "CLPSVAE\0" | u32 version | u64 header length | JSON header |
// u64 parameter count | f64 parameters | u64 FNV-1a checksum of all prior bytes.

namespace {

constexpr char kMagic[8] = {'C', 'L', 'P', 'S', 'V', 'A', 'E', '\0'};

std::uint64_t fnv1a(const char* data, std::size_t n) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 1099511628211ULL;
  }
  return h;
}

template <typename T>
void put(std::string& buf, T value) {
  char raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  buf.append(raw, sizeof(T));
}

template <typename T>
T take(const std::string& buf, std::size_t& pos) {
  if (pos + sizeof(T) > buf.size()) throw ModelFormatError("checkpoint truncated");
  T value;
  std::memcpy(&value, buf.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

void append_params(const nn::Network& net, std::vector<double>& out) {
  for (const auto& l : net.layers()) {
    if (!l.has_parameters()) continue;
    out.insert(out.end(), l.weight.data(), l.weight.data() + l.weight.size());
    out.insert(out.end(), l.bias.data(), l.bias.data() + l.bias.size());
  }
}

std::size_t read_params(nn::Network& net, const std::vector<double>& in, std::size_t pos) {
  for (auto& l : net.layers()) {
    if (!l.has_parameters()) continue;
    for (Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = in.at(pos++);
    for (Index i = 0; i < l.bias.size(); ++i) l.bias.data()[i] = in.at(pos++);
  }
  return pos;
}

}  // namespace

void save_model(const VaeModel& model, const std::filesystem::path& path) {
  const VaeArchitecture& a = model.encoder.architecture();
  nlohmann::json header = {
      {"format", "collapse-vae"},
      {"image_height", a.image_height},
      {"image_width", a.image_width},
      {"image_channels", a.image_channels},
      {"latent_channels", a.latent_channels},
      {"base_channels", a.base_channels},
      {"downsample_factor", VaeArchitecture::downsample_factor},
      {"encoder_parameters", model.encoder.network().parameter_count()},
      {"decoder_parameters", model.decoder.network().parameter_count()},
  };
  const std::string header_text = header.dump();
  std::vector<double> params;
  append_params(model.encoder.network(), params);
  append_params(model.decoder.network(), params);

  std::string buf(kMagic, sizeof(kMagic));
  put<std::uint32_t>(buf, kCheckpointVersion);
  put<std::uint64_t>(buf, header_text.size());
  buf += header_text;
  put<std::uint64_t>(buf, params.size());
  buf.append(reinterpret_cast<const char*>(params.data()), params.size() * sizeof(double));
  put<std::uint64_t>(buf, fnv1a(buf.data(), buf.size()));

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + tmp.string() + "' for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error("failed writing '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

VaeModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelFormatError("cannot open checkpoint '" + path.string() + "'");
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(kMagic) + 4 + 8 + 8 + 8 ||
      std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
    throw ModelFormatError("'" + path.string() + "' is not a VAE checkpoint");
  }
  std::size_t pos = sizeof(kMagic);
  const auto version = take<std::uint32_t>(buf, pos);
  if (version != kCheckpointVersion) throw IncompatibleVersionError(version, kCheckpointVersion);

  std::size_t tail = buf.size() - sizeof(std::uint64_t);
  const auto stored = take<std::uint64_t>(buf, tail);
  if (stored != fnv1a(buf.data(), buf.size() - sizeof(std::uint64_t))) {
    throw ModelFormatError("checkpoint '" + path.string() + "' failed its checksum");
  }

  const auto header_len = take<std::uint64_t>(buf, pos);
  if (pos + header_len > buf.size()) throw ModelFormatError("checkpoint header truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(buf.substr(pos, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw ModelFormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  pos += header_len;

  VaeArchitecture arch;
  try {
    arch.image_height = header.at("image_height").get<std::size_t>();
    arch.image_width = header.at("image_width").get<std::size_t>();
    arch.image_channels = header.at("image_channels").get<std::size_t>();
    arch.latent_channels = header.at("latent_channels").get<std::size_t>();
    arch.base_channels = header.at("base_channels").get<std::size_t>();
    if (header.at("downsample_factor").get<std::size_t>() != VaeArchitecture::downsample_factor) {
      throw ModelFormatError("checkpoint downsample factor is not supported");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ModelFormatError(std::string("checkpoint header is incomplete: ") + e.what());
  }
  try {
    arch.validate();
  } catch (const ValidationError& e) {
    throw ModelFormatError(std::string("checkpoint architecture invalid: ") + e.what());
  }

  const auto count = take<std::uint64_t>(buf, pos);
  if (pos + count * sizeof(double) != buf.size() - sizeof(std::uint64_t)) {
    throw ModelFormatError("checkpoint parameter block has the wrong size");
  }
  std::vector<double> params(count);
  std::memcpy(params.data(), buf.data() + pos, count * sizeof(double));

  VaeModel model = make_vae(arch, 0);
  const std::size_t expected = model.encoder.network().parameter_count() +
                               model.decoder.network().parameter_count();
  if (count != expected) {
    throw ModelFormatError("checkpoint holds " + std::to_string(count) +
                           " parameters, architecture needs " + std::to_string(expected));
  }
  std::size_t p = read_params(model.encoder.network(), params, 0);
  read_params(model.decoder.network(), params, p);
  return model;
}

}  // namespace collapse
