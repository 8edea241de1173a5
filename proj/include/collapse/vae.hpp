#ifndef COLLAPSE_VAE_HPP
#define COLLAPSE_VAE_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "collapse/encoder.hpp"
#include "collapse/image.hpp"
#include "collapse/nn.hpp"
#include "collapse/posterior.hpp"

namespace collapse {

/// Desk-scale convolutional VAE layout. Two stride-2 blocks give a spatial
/// downsample factor of 4; the posterior has `latent_channels` channels per
/// latent cell.
struct VaeArchitecture {
  std::size_t image_height = 32;
  std::size_t image_width = 32;
  std::size_t image_channels = 3;
  std::size_t latent_channels = 4;
  std::size_t base_channels = 16;

  static constexpr std::size_t downsample_factor = 4;
  static constexpr double log_variance_min = -30.0;
  static constexpr double log_variance_max = 20.0;

  std::size_t latent_dim(std::size_t height, std::size_t width) const {
    return (height / downsample_factor) * (width / downsample_factor) * latent_channels;
  }
  std::size_t latent_dim() const { return latent_dim(image_height, image_width); }
  void validate() const;
  friend bool operator==(const VaeArchitecture&, const VaeArchitecture&) = default;
};

using Latent = std::vector<double>;

/// Convolutional encoder E(x) -> (mu, log sigma^2). Latent index order is
/// channel-major: c * (H/f)(W/f) + y * (W/f) + x.
class EncoderModel : public DifferentiableEncoder {
 public:
  EncoderModel(const VaeArchitecture& arch, std::mt19937_64& rng);

  const VaeArchitecture& architecture() const { return arch_; }
  std::size_t downsample_factor() const { return VaeArchitecture::downsample_factor; }
  std::size_t latent_channels() const { return arch_.latent_channels; }

  PosteriorParams encode(const ImageGrid& image) const override;
  ImageGrid input_gradient(const ImageGrid& image, const PosteriorLossGradient& upstream,
                           PosteriorParams* posterior = nullptr) const override;

  nn::Network& network() { return net_; }
  const nn::Network& network() const { return net_; }

  /// Throws ValidationError unless the image fits this encoder.
  void check_input(const ImageGrid& image) const;

 private:
  VaeArchitecture arch_;
  nn::Network net_;
};

/// Convolutional decoder D(z) mirroring the encoder; sigmoid output in [0,1].
class DecoderModel {
 public:
  DecoderModel(const VaeArchitecture& arch, std::mt19937_64& rng);

  const VaeArchitecture& architecture() const { return arch_; }

  /// Decodes to the architecture's image size.
  ImageGrid decode(const Latent& latent) const;
  /// Decodes to an explicit image size (must be divisible by the downsample factor).
  ImageGrid decode(const Latent& latent, std::size_t height, std::size_t width) const;

  nn::Network& network() { return net_; }
  const nn::Network& network() const { return net_; }

 private:
  VaeArchitecture arch_;
  nn::Network net_;
};

struct VaeModel {
  EncoderModel encoder;
  DecoderModel decoder;
};

/// Seeded, freshly initialized encoder/decoder pair.
VaeModel make_vae(const VaeArchitecture& arch, std::uint64_t seed);

/// mu + sigma * eta with eta ~ N(0, I) drawn from a generator seeded with `seed`.
Latent sample_latent(const PosteriorParams& post, std::uint64_t seed);

enum class ReconstructMode { mean, sample };

ImageGrid reconstruct(const EncoderModel& enc, const DecoderModel& dec, const ImageGrid& image,
                      ReconstructMode mode = ReconstructMode::mean, std::uint64_t seed = 0);

struct ElboTerms {
  double reconstruction = 0.0;  // sum of squared pixel errors
  double kl = 0.0;              // KL(q || N(0, I))
  double total = 0.0;           // reconstruction + beta * kl
};

/// Negative ELBO of one image. The reconstruction term decodes the posterior
/// mean, so the value is deterministic.
ElboTerms elbo_loss(const EncoderModel& enc, const DecoderModel& dec, const ImageGrid& image,
                    double beta);
double mean_elbo(const EncoderModel& enc, const DecoderModel& dec,
                 const std::vector<ImageGrid>& images, double beta);

struct VaeTrainConfig {
  std::size_t epochs = 12;
  std::size_t batch_size = 32;
  double learning_rate = 2e-3;
  double beta = 0.01;
  std::uint64_t seed = 3407;
  std::size_t latent_channels = 4;
  std::size_t base_channels = 16;
  void validate() const;
};

struct TrainedVae {
  VaeModel model;
  std::vector<double> epoch_loss;  // mean training loss per epoch
};

/// Minimizes the batch-mean negative ELBO with Adam and reparameterized
/// sampling. Reproducible for a fixed config.
TrainedVae train_toy_vae(const std::vector<ImageGrid>& dataset, const VaeTrainConfig& config);

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_model(const VaeModel& model, const std::filesystem::path& path);
/// Throws ModelFormatError on any malformed file and IncompatibleVersionError
/// on a version tag mismatch.
VaeModel load_model(const std::filesystem::path& path);

namespace detail {
nn::FeatureMap to_feature_map(const std::vector<const ImageGrid*>& images);
ImageGrid from_feature_map(const nn::FeatureMap& fm, std::size_t b);
}  // namespace detail

}  // namespace collapse

#endif  // COLLAPSE_VAE_HPP
