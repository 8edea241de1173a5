#ifndef COLLAPSE_HARNESS_HPP
#define COLLAPSE_HARNESS_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "collapse/attack.hpp"
#include "collapse/defenses.hpp"
#include "collapse/diagnostics.hpp"
#include "collapse/posterior.hpp"
#include "collapse/vae.hpp"

namespace collapse::harness {

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kToolVersion = "collapse 1.0.0";
inline constexpr std::uint64_t kDefaultSeed = 3407;

enum ExitCode : int { kSuccess = 0, kValidationError = 1, kPartialFailure = 2 };

/// Attack block of a run config. Budgets use the 8-bit convention (16 -> 16/255).
struct AttackSettings {
  double epsilon = 16.0;
  double alpha = 2.0;
  std::size_t steps = 40;
  /// Target variance v; defaults to 1e-8 when minimizing and 1 when maximizing.
  std::optional<double> variance_target;
  Direction direction = Direction::minimize;
  Criterion criterion = Criterion::reverse_kl;
  /// Differentiable defense placed in the gradient path (adaptive attack).
  std::optional<DefenseSpec> in_loop;
  bool random_start = false;

  double resolved_variance() const;
  /// Attack config for one image with the given seed.
  AttackConfig to_attack_config(std::uint64_t seed) const;
};

struct TrainSettings {
  std::size_t epochs = 12;
  std::size_t batch_size = 32;
  double learning_rate = 2e-3;
  double beta = 0.01;
  std::size_t latent_channels = 4;
  std::size_t base_channels = 16;
  /// Number of synthetic training images when `dataset` is "synthetic".
  std::size_t synthetic_count = 5000;
};

struct AblationSettings {
  std::string axis;  // v | alpha | steps | surrogate
  std::vector<std::string> values;
};

struct SurfaceSettings {
  Criterion criterion = Criterion::reverse_kl;
  double mu_lo = -3.0, mu_hi = 3.0;
  double sigma2_lo = 0.1, sigma2_hi = 4.0;
  std::size_t resolution = 61;
  double variance = 1.0;
  bool render = false;
};

struct RunConfig {
  int schema_version = kSchemaVersion;
  std::string dataset;        // directory of same-sized PNGs, or "synthetic"
  std::size_t image_size = 32;
  std::string checkpoint;
  std::string protected_dir;  // adversarial PNGs for evaluate
  std::string output_dir;
  std::uint64_t seed = kDefaultSeed;
  std::size_t limit = 0;      // use only the first N images when nonzero
  AttackSettings attack;
  std::vector<DefenseSpec> defenses;
  std::vector<std::string> metrics{"psnr", "ssim", "acdm"};
  TrainSettings train;
  AblationSettings ablation;
  SurfaceSettings surface;
  std::vector<std::size_t> benchmark_sizes{32, 64};
};

void to_json(nlohmann::json& j, const RunConfig& c);
/// Strict: unknown keys and schema mismatches raise ValidationError.
void from_json(const nlohmann::json& j, RunConfig& c);

/// Reads a config file. A run manifest (object with "config" and "items") is
/// accepted as well, so a manifest alone reproduces its campaign.
RunConfig load_run_config(const std::filesystem::path& path);

/// Dataset images with names; "synthetic" draws `synthetic_count` (train) or
/// `limit` (otherwise 100) images from the bundled generator.
std::vector<NamedImage> load_dataset(const RunConfig& config, bool for_training);

/// Writes `text` to `path` via a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

// Subcommands. Each returns an ExitCode; validation problems throw ValidationError.
int cmd_train_vae(const RunConfig& config, std::ostream& log);
int cmd_protect(const RunConfig& config, std::ostream& log);
int cmd_evaluate(const RunConfig& config, std::ostream& log);
int cmd_ablate(const RunConfig& config, std::ostream& log);
int cmd_plot_loss_surface(const RunConfig& config, std::ostream& log);
int cmd_benchmark(const RunConfig& config, std::ostream& log);
/// Writes `count` synthetic PNGs of side `size` to config.output_dir.
int cmd_synth_data(const RunConfig& config, std::size_t count, std::size_t size,
                   std::ostream& log);

// Building blocks shared by the subcommands and the acceptance suite.

struct CampaignItem {
  std::string name;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  AttackResult result;
  PosteriorStats before, after;
  CollapseVerdict verdict;
  TrajectorySummary trajectory;
  double linf = 0.0;            // pre-quantization
  double linf_quantized = 0.0;  // after 8-bit round trip
};

/// Attacks one image and fills the diagnostics. Stats are taken on the plain
/// encoder (no in-loop transform).
CampaignItem attack_item(const std::string& name, const ImageGrid& image,
                         const EncoderModel& encoder, const AttackSettings& settings,
                         std::uint64_t seed);

nlohmann::json item_to_json(const CampaignItem& item);

}  // namespace collapse::harness

#endif  // COLLAPSE_HARNESS_HPP
