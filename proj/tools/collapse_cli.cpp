// Command-line driver: train-vae, protect, evaluate, ablate, plot-loss-surface,
// benchmark and synth-data. Flags override values from --config.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "collapse/errors.hpp"
#include "collapse/harness.hpp"
#include "collapse/metrics.hpp"

namespace {

using namespace collapse;
using namespace collapse::harness;

struct Flags {
  std::string config;
  std::string dataset, checkpoint, protected_dir, output_dir;
  std::size_t image_size = 0, limit = 0;
  std::uint64_t seed = 0;

  double epsilon = 0, alpha = 0, variance = 0;
  std::size_t steps = 0;
  std::string direction, criterion, in_loop;
  bool random_start = false;
  std::vector<std::string> defenses, metrics;

  std::size_t epochs = 0, batch_size = 0, latent_channels = 0, base_channels = 0,
              synthetic_count = 0;
  double learning_rate = 0, beta = 0;

  std::string axis;
  std::vector<std::string> values;

  std::vector<double> mu_range, sigma2_range;
  std::size_t resolution = 0;
  bool render = false;

  std::vector<std::size_t> sizes;
  std::size_t count = 100, size = 32;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON run config or manifest");
  cmd->add_option("--seed", f.seed, "master seed (default 3407)");
  cmd->add_option("-o,--output-dir", f.output_dir, "output directory");
}

void add_data(CLI::App* cmd, Flags& f) {
  cmd->add_option("--dataset", f.dataset, "PNG directory or 'synthetic'");
  cmd->add_option("--image-size", f.image_size, "side of synthetic images");
  cmd->add_option("--limit", f.limit, "use only the first N images");
  cmd->add_option("--checkpoint", f.checkpoint, "model checkpoint path");
}

void add_attack(CLI::App* cmd, Flags& f) {
  cmd->add_option("--epsilon", f.epsilon, "L-inf budget in 1/255 units");
  cmd->add_option("--alpha", f.alpha, "step size in 1/255 units");
  cmd->add_option("--steps", f.steps, "number of steps T");
  cmd->add_option("--variance", f.variance, "target variance v");
  cmd->add_option("--direction", f.direction, "minimize (pca-) or maximize (pca+)");
  cmd->add_option("--criterion", f.criterion, "reverse_kl, forward_kl or mse");
  cmd->add_option("--in-loop", f.in_loop, "defense inside the gradient path, e.g. gaussian_blur:3");
  cmd->add_flag("--random-start", f.random_start, "start from a random point in the ball");
}

bool given(const CLI::App* cmd, const char* name) { return cmd->count(name) > 0; }

RunConfig build_config(const CLI::App* cmd, const Flags& f) {
  RunConfig c = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  auto opt = [&](const char* name) {
    try {
      return given(cmd, name);
    } catch (const CLI::OptionNotFound&) {
      return false;
    }
  };
  if (opt("--seed")) c.seed = f.seed;
  if (opt("--output-dir")) c.output_dir = f.output_dir;
  if (opt("--dataset")) c.dataset = f.dataset;
  if (opt("--image-size")) c.image_size = f.image_size;
  if (opt("--limit")) c.limit = f.limit;
  if (opt("--checkpoint")) c.checkpoint = f.checkpoint;
  if (opt("--protected-dir")) c.protected_dir = f.protected_dir;

  if (opt("--epsilon")) c.attack.epsilon = f.epsilon;
  if (opt("--alpha")) c.attack.alpha = f.alpha;
  if (opt("--steps")) c.attack.steps = f.steps;
  if (opt("--variance")) c.attack.variance_target = f.variance;
  if (opt("--direction")) c.attack.direction = direction_from_string(f.direction);
  if (opt("--criterion")) {
    c.attack.criterion = criterion_from_string(f.criterion);
    c.surface.criterion = c.attack.criterion;
  }
  if (opt("--in-loop")) {
    DefenseSpec spec = DefenseSpec::parse(f.in_loop);
    make_in_loop_transform(spec);
    if (spec.kind == DefenseKind::identity) {
      c.attack.in_loop.reset();
    } else {
      c.attack.in_loop = spec;
    }
  }
  if (opt("--random-start")) c.attack.random_start = f.random_start;
  if (opt("--defense")) {
    c.defenses.clear();
    for (const auto& d : f.defenses) c.defenses.push_back(DefenseSpec::parse(d));
  }
  if (opt("--metric")) {
    for (const auto& m : f.metrics) {
      if (!is_known_metric(m)) throw ValidationError("unknown metric '" + m + "'");
    }
    c.metrics = f.metrics;
  }

  if (opt("--epochs")) c.train.epochs = f.epochs;
  if (opt("--batch-size")) c.train.batch_size = f.batch_size;
  if (opt("--lr")) c.train.learning_rate = f.learning_rate;
  if (opt("--beta")) c.train.beta = f.beta;
  if (opt("--latent-channels")) c.train.latent_channels = f.latent_channels;
  if (opt("--base-channels")) c.train.base_channels = f.base_channels;
  if (opt("--synthetic-count")) c.train.synthetic_count = f.synthetic_count;

  if (opt("--axis")) c.ablation.axis = f.axis;
  if (opt("--values")) c.ablation.values = f.values;

  if (opt("--mu-range")) {
    c.surface.mu_lo = f.mu_range.at(0);
    c.surface.mu_hi = f.mu_range.at(1);
  }
  if (opt("--sigma2-range")) {
    c.surface.sigma2_lo = f.sigma2_range.at(0);
    c.surface.sigma2_hi = f.sigma2_range.at(1);
  }
  if (opt("--resolution")) c.surface.resolution = f.resolution;
  if (opt("--surface-variance")) c.surface.variance = f.variance;
  if (opt("--render")) c.surface.render = f.render;
  if (opt("--sizes")) c.benchmark_sizes = f.sizes;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Posterior-collapse attacks on VAE encoders"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);
  Flags f;

  auto* train = app.add_subcommand("train-vae", "train the toy VAE and write a checkpoint");
  add_common(train, f);
  add_data(train, f);
  train->add_option("--epochs", f.epochs);
  train->add_option("--batch-size", f.batch_size);
  train->add_option("--lr", f.learning_rate, "Adam learning rate");
  train->add_option("--beta", f.beta, "KL weight");
  train->add_option("--latent-channels", f.latent_channels);
  train->add_option("--base-channels", f.base_channels);
  train->add_option("--synthetic-count", f.synthetic_count);

  auto* protect = app.add_subcommand("protect", "attack every image and write adversarial PNGs");
  add_common(protect, f);
  add_data(protect, f);
  add_attack(protect, f);

  auto* evaluate =
      app.add_subcommand("evaluate", "compare clean and adversarial reconstructions");
  add_common(evaluate, f);
  add_data(evaluate, f);
  evaluate->add_option("--protected-dir", f.protected_dir, "directory of adversarial PNGs");
  evaluate->add_option("--defense", f.defenses, "defense applied before encoding (repeatable)")->delimiter(',');
  evaluate->add_option("--metric", f.metrics, "psnr, ssim, acdm (repeatable)")->delimiter(',');
  evaluate->add_option("--variance", f.variance, "v used for the reported collapse loss");
  evaluate->add_option("--direction", f.direction);

  auto* ablate = app.add_subcommand("ablate", "sweep one attack parameter");
  add_common(ablate, f);
  add_data(ablate, f);
  add_attack(ablate, f);
  ablate->add_option("--axis", f.axis, "v, alpha, steps or surrogate");
  ablate->add_option("--values", f.values, "axis values (checkpoint paths for surrogate)")->delimiter(',');

  auto* surface = app.add_subcommand("plot-loss-surface", "write a criterion loss grid");
  add_common(surface, f);
  surface->add_option("--criterion", f.criterion, "reverse_kl, forward_kl or mse");
  surface->add_option("--mu-range", f.mu_range)->expected(2);
  surface->add_option("--sigma2-range", f.sigma2_range)->expected(2);
  surface->add_option("--resolution", f.resolution);
  surface->add_option("--surface-variance", f.variance, "target variance v");
  surface->add_flag("--render", f.render, "also write a PNG heat map");

  auto* bench = app.add_subcommand("benchmark", "time one attack per resolution");
  add_common(bench, f);
  bench->add_option("--checkpoint", f.checkpoint, "model checkpoint path");
  bench->add_option("--sizes", f.sizes, "image sides to time")->delimiter(',');
  bench->add_option("--steps", f.steps, "number of steps T");

  auto* synth = app.add_subcommand("synth-data", "write a synthetic PNG corpus");
  add_common(synth, f);
  synth->add_option("--count", f.count, "number of images");
  synth->add_option("--size", f.size, "image side");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kValidationError;
  }

  try {
    CLI::App* cmd = app.get_subcommands().front();
    const RunConfig config = build_config(cmd, f);
    const std::string name = cmd->get_name();
    if (name == "train-vae") return cmd_train_vae(config, std::cout);
    if (name == "protect") return cmd_protect(config, std::cout);
    if (name == "evaluate") return cmd_evaluate(config, std::cout);
    if (name == "ablate") return cmd_ablate(config, std::cout);
    if (name == "plot-loss-surface") return cmd_plot_loss_surface(config, std::cout);
    if (name == "benchmark") return cmd_benchmark(config, std::cout);
    return cmd_synth_data(config, f.count, f.size, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidationError;
  }
}
