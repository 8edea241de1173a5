#include "collapse/harness.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "collapse/errors.hpp"
#include "collapse/metrics.hpp"

namespace collapse::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ValidationError(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read_opt(const json& j, const char* key, T& out, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(where + "." + key + ": " + e.what());
  }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void require_nonempty(const std::string& value, const char* field, const char* command) {
  if (value.empty()) {
    throw ValidationError(std::string(command) + ": '" + field + "' must be set");
  }
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

VaeModel load_checkpoint(const RunConfig& config, const char* command) {
  require_nonempty(config.checkpoint, "checkpoint", command);
  if (!fs::exists(config.checkpoint)) {
    throw ValidationError(std::string(command) + ": checkpoint '" + config.checkpoint +
                          "' does not exist");
  }
  return load_model(config.checkpoint);
}

json stats_json(const PosteriorStats& s) {
  return {{"mean_sq_mu", s.mean_sq_mu},
          {"mean_sigma_sq", s.mean_sigma_sq},
          {"kl_to_standard", s.kl_to_standard}};
}

double max_abs_diff(const ImageGrid& a, const ImageGrid& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::vector<CampaignItem> run_campaign(const std::vector<NamedImage>& images,
                                       const EncoderModel& encoder,
                                       const AttackSettings& settings, std::uint64_t seed) {
  std::vector<CampaignItem> items;
  items.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    items.push_back(attack_item(images[i].name, images[i].image, encoder, settings, seed + i));
  }
  return items;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double parse_number(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ValidationError(what + ": '" + text + "' is not a number");
  }
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

// ---------------------------------------------------------------------------
// Settings

double AttackSettings::resolved_variance() const {
  if (variance_target) return *variance_target;
  return direction == Direction::minimize ? 1e-8 : 1.0;
}

AttackConfig AttackSettings::to_attack_config(std::uint64_t seed) const {
  AttackConfig c;
  c.epsilon = AttackConfig::from_255(epsilon);
  c.alpha = AttackConfig::from_255(alpha);
  c.steps = steps;
  c.variance_target = TargetPrior{resolved_variance()};
  c.direction = direction;
  c.criterion = criterion;
  if (in_loop) c.in_loop_transform = make_in_loop_transform(*in_loop);
  c.random_start = random_start;
  c.seed = seed;
  c.validate();
  return c;
}

void to_json(json& j, const RunConfig& c) {
  json attack = {{"epsilon", c.attack.epsilon},
                 {"alpha", c.attack.alpha},
                 {"steps", c.attack.steps},
                 {"variance_target", c.attack.variance_target
                                         ? json(*c.attack.variance_target)
                                         : json(nullptr)},
                 {"direction", std::string(to_string(c.attack.direction))},
                 {"criterion", std::string(to_string(c.attack.criterion))},
                 {"in_loop", c.attack.in_loop ? json(*c.attack.in_loop) : json(nullptr)},
                 {"random_start", c.attack.random_start}};
  json train = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"learning_rate", c.train.learning_rate},
                {"beta", c.train.beta},
                {"latent_channels", c.train.latent_channels},
                {"base_channels", c.train.base_channels},
                {"synthetic_count", c.train.synthetic_count}};
  json surface = {{"criterion", std::string(to_string(c.surface.criterion))},
                  {"mu_range", {c.surface.mu_lo, c.surface.mu_hi}},
                  {"sigma2_range", {c.surface.sigma2_lo, c.surface.sigma2_hi}},
                  {"resolution", c.surface.resolution},
                  {"variance", c.surface.variance},
                  {"render", c.surface.render}};
  j = json{{"schema_version", c.schema_version},
           {"dataset", c.dataset},
           {"image_size", c.image_size},
           {"checkpoint", c.checkpoint},
           {"protected_dir", c.protected_dir},
           {"output_dir", c.output_dir},
           {"seed", c.seed},
           {"limit", c.limit},
           {"attack", attack},
           {"defenses", c.defenses},
           {"metrics", c.metrics},
           {"train", train},
           {"ablation", {{"axis", c.ablation.axis}, {"values", c.ablation.values}}},
           {"surface", surface},
           {"benchmark_sizes", c.benchmark_sizes}};
}

void from_json(const json& j, RunConfig& c) {
  const std::string top = "config";
  check_keys(j,
             {"schema_version", "dataset", "image_size", "checkpoint", "protected_dir",
              "output_dir", "seed", "limit", "attack", "defenses", "metrics", "train",
              "ablation", "surface", "benchmark_sizes"},
             top);
  RunConfig out;
  read_opt(j, "schema_version", out.schema_version, top);
  if (out.schema_version != kSchemaVersion) {
    throw ValidationError("config: schema_version " + std::to_string(out.schema_version) +
                          " is not supported (expected " + std::to_string(kSchemaVersion) +
                          ")");
  }
  read_opt(j, "dataset", out.dataset, top);
  read_opt(j, "image_size", out.image_size, top);
  read_opt(j, "checkpoint", out.checkpoint, top);
  read_opt(j, "protected_dir", out.protected_dir, top);
  read_opt(j, "output_dir", out.output_dir, top);
  read_opt(j, "seed", out.seed, top);
  read_opt(j, "limit", out.limit, top);
  read_opt(j, "metrics", out.metrics, top);
  read_opt(j, "benchmark_sizes", out.benchmark_sizes, top);

  if (auto it = j.find("attack"); it != j.end()) {
    const std::string w = "config.attack";
    check_keys(*it,
               {"epsilon", "alpha", "steps", "variance_target", "direction", "criterion",
                "in_loop", "random_start"},
               w);
    auto& a = out.attack;
    read_opt(*it, "epsilon", a.epsilon, w);
    read_opt(*it, "alpha", a.alpha, w);
    read_opt(*it, "steps", a.steps, w);
    if (auto v = it->find("variance_target"); v != it->end() && !v->is_null()) {
      double value = 0.0;
      read_opt(*it, "variance_target", value, w);
      a.variance_target = value;
    }
    if (auto d = it->find("direction"); d != it->end()) {
      a.direction = direction_from_string(d->get<std::string>());
    }
    if (auto cr = it->find("criterion"); cr != it->end()) {
      a.criterion = criterion_from_string(cr->get<std::string>());
    }
    if (auto l = it->find("in_loop"); l != it->end() && !l->is_null()) {
      a.in_loop = l->is_string() ? DefenseSpec::parse(l->get<std::string>())
                                 : l->get<DefenseSpec>();
      if (a.in_loop->kind == DefenseKind::identity) a.in_loop.reset();
    }
    read_opt(*it, "random_start", a.random_start, w);
  }

  if (auto it = j.find("defenses"); it != j.end()) {
    if (!it->is_array()) throw ValidationError("config.defenses: expected an array");
    for (const auto& d : *it) {
      out.defenses.push_back(d.is_string() ? DefenseSpec::parse(d.get<std::string>())
                                           : d.get<DefenseSpec>());
    }
  }

  if (auto it = j.find("train"); it != j.end()) {
    const std::string w = "config.train";
    check_keys(*it,
               {"epochs", "batch_size", "learning_rate", "beta", "latent_channels",
                "base_channels", "synthetic_count"},
               w);
    auto& t = out.train;
    read_opt(*it, "epochs", t.epochs, w);
    read_opt(*it, "batch_size", t.batch_size, w);
    read_opt(*it, "learning_rate", t.learning_rate, w);
    read_opt(*it, "beta", t.beta, w);
    read_opt(*it, "latent_channels", t.latent_channels, w);
    read_opt(*it, "base_channels", t.base_channels, w);
    read_opt(*it, "synthetic_count", t.synthetic_count, w);
  }

  if (auto it = j.find("ablation"); it != j.end()) {
    const std::string w = "config.ablation";
    check_keys(*it, {"axis", "values"}, w);
    read_opt(*it, "axis", out.ablation.axis, w);
    if (auto v = it->find("values"); v != it->end()) {
      if (!v->is_array()) throw ValidationError(w + ".values: expected an array");
      for (const auto& e : *v) {
        out.ablation.values.push_back(e.is_string() ? e.get<std::string>() : e.dump());
      }
    }
  }

  if (auto it = j.find("surface"); it != j.end()) {
    const std::string w = "config.surface";
    check_keys(*it, {"criterion", "mu_range", "sigma2_range", "resolution", "variance", "render"},
               w);
    auto& s = out.surface;
    if (auto cr = it->find("criterion"); cr != it->end()) {
      s.criterion = criterion_from_string(cr->get<std::string>());
    }
    std::array<double, 2> range{};
    if (it->contains("mu_range")) {
      read_opt(*it, "mu_range", range, w);
      s.mu_lo = range[0];
      s.mu_hi = range[1];
    }
    if (it->contains("sigma2_range")) {
      read_opt(*it, "sigma2_range", range, w);
      s.sigma2_lo = range[0];
      s.sigma2_hi = range[1];
    }
    read_opt(*it, "resolution", s.resolution, w);
    read_opt(*it, "variance", s.variance, w);
    read_opt(*it, "render", s.render, w);
  }

  for (const auto& m : out.metrics) {
    if (!is_known_metric(m)) throw ValidationError("config.metrics: unknown metric '" + m + "'");
  }
  if (out.image_size == 0) throw ValidationError("config.image_size must be positive");
  if (out.attack.epsilon < 0.0) throw ValidationError("config.attack.epsilon must be >= 0");
  if (out.attack.steps > 0 && !(out.attack.alpha > 0.0)) {
    throw ValidationError("config.attack.alpha must be > 0 when steps > 0");
  }
  if (out.attack.in_loop) make_in_loop_transform(*out.attack.in_loop);
  c = std::move(out);
}

RunConfig load_run_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw ValidationError("config '" + path.string() + "': " + e.what());
  }
  if (j.is_object() && j.contains("config") && j.contains("items")) j = j["config"];
  try {
    return j.get<RunConfig>();
  } catch (const json::exception& e) {
    throw ValidationError("config '" + path.string() + "': " + e.what());
  }
}

std::vector<NamedImage> load_dataset(const RunConfig& config, bool for_training) {
  if (config.dataset.empty()) throw ValidationError("'dataset' must be set");
  std::vector<NamedImage> out;
  if (config.dataset == "synthetic") {
    const std::size_t count =
        for_training ? config.train.synthetic_count : (config.limit ? config.limit : 100);
    // Held-out images come from a different stream than the training corpus.
    const std::uint64_t seed = for_training ? config.seed : config.seed + 1;
    auto images = generate_shapes(count, config.image_size, seed);
    for (std::size_t i = 0; i < images.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "synthetic_%05zu.png", i);
      out.push_back({name, std::move(images[i])});
    }
  } else {
    out = load_png_directory(config.dataset);
    if (config.limit && out.size() > config.limit) out.resize(config.limit);
  }
  if (out.empty()) throw ValidationError("dataset '" + config.dataset + "' contains no images");
  return out;
}

void write_file_atomic(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    out << text;
    if (!out.flush()) throw std::runtime_error("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Campaign building blocks

CampaignItem attack_item(const std::string& name, const ImageGrid& image,
                         const EncoderModel& encoder, const AttackSettings& settings,
                         std::uint64_t seed) {
  CampaignItem item;
  item.name = name;
  item.seed = seed;
  try {
    const AttackConfig config = settings.to_attack_config(seed);
    item.result = pca_attack(image, encoder, config);
    item.before = posterior_stats(encoder.encode(image));
    item.after = posterior_stats(encoder.encode(item.result.adversarial));
    item.verdict = classify_collapse(item.before, item.after);
    item.trajectory = trajectory_summary(item.result, settings.direction);
    item.linf = max_abs_diff(item.result.adversarial, image);
    item.linf_quantized = max_abs_diff(quantize_8bit(item.result.adversarial), image);
    item.ok = true;
  } catch (const std::exception& e) {
    item.ok = false;
    item.error = e.what();
  }
  return item;
}

json item_to_json(const CampaignItem& item) {
  json j = {{"name", item.name}, {"seed", item.seed}, {"ok", item.ok}};
  if (!item.ok) {
    j["error"] = item.error;
    return j;
  }
  j["before"] = stats_json(item.before);
  j["after"] = stats_json(item.after);
  j["verdict"] = {{"kind", std::string(to_string(item.verdict.kind))},
                  {"mu_ratio", item.verdict.mu_ratio},
                  {"sigma_ratio", item.verdict.sigma_ratio}};
  j["trajectory"] = {{"monotonic_fraction", item.trajectory.monotonic_fraction},
                     {"first_loss", item.trajectory.first_loss},
                     {"last_loss", item.trajectory.last_loss},
                     {"slope", item.trajectory.slope}};
  j["linf"] = item.linf;
  j["linf_quantized"] = item.linf_quantized;
  j["loss_trace"] = item.result.loss_trace;
  j["elapsed_seconds"] = item.result.elapsed_seconds;
  return j;
}

// ---------------------------------------------------------------------------
// train-vae

int cmd_train_vae(const RunConfig& config, std::ostream& log) {
  require_nonempty(config.checkpoint, "checkpoint", "train-vae");
  const auto data = load_dataset(config, true);
  std::vector<ImageGrid> images;
  images.reserve(data.size());
  for (const auto& d : data) images.push_back(d.image);

  VaeTrainConfig tc;
  tc.epochs = config.train.epochs;
  tc.batch_size = config.train.batch_size;
  tc.learning_rate = config.train.learning_rate;
  tc.beta = config.train.beta;
  tc.seed = config.seed;
  tc.latent_channels = config.train.latent_channels;
  tc.base_channels = config.train.base_channels;
  tc.validate();

  log << "training on " << images.size() << " images for " << tc.epochs << " epochs\n";
  const auto t0 = std::chrono::steady_clock::now();
  const TrainedVae trained = train_toy_vae(images, tc);
  for (std::size_t e = 0; e < trained.epoch_loss.size(); ++e) {
    log << "epoch " << e + 1 << " loss " << trained.epoch_loss[e] << "\n";
  }
  save_model(trained.model, config.checkpoint);

  std::string csv = "epoch,loss\n";
  for (std::size_t e = 0; e < trained.epoch_loss.size(); ++e) {
    csv += std::to_string(e + 1) + "," + format_number(trained.epoch_loss[e]) + "\n";
  }
  fs::path curve = config.output_dir.empty()
                       ? fs::path(config.checkpoint).replace_extension(".curve.csv")
                       : fs::path(config.output_dir) / "training_curve.csv";
  write_file_atomic(curve, csv);
  log << "wrote " << config.checkpoint << " and " << curve.string() << " ("
      << seconds_since(t0) << " s)\n";
  return kSuccess;
}

// ---------------------------------------------------------------------------
// protect

namespace {

std::string protect_csv_header() {
  return "image,seed,ok,mean_sq_mu_before,mean_sq_mu_after,mean_sigma_sq_before,"
         "mean_sigma_sq_after,kl_before,kl_after,verdict,first_loss,last_loss,linf,"
         "linf_quantized\n";
}

std::string protect_csv_row(const json& item) {
  std::string row = csv_escape(item["name"].get<std::string>()) + "," +
                    std::to_string(item["seed"].get<std::uint64_t>()) + ",";
  if (!item["ok"].get<bool>()) return row + "0,,,,,,,,,,,\n";
  auto num = [](const json& v) {
    return v.is_number() ? format_number(v.get<double>()) : std::string("inf");
  };
  const json& b = item["before"];
  const json& a = item["after"];
  row += "1," + num(b["mean_sq_mu"]) + "," + num(a["mean_sq_mu"]) + "," +
         num(b["mean_sigma_sq"]) + "," + num(a["mean_sigma_sq"]) + "," +
         num(b["kl_to_standard"]) + "," + num(a["kl_to_standard"]) + "," +
         item["verdict"]["kind"].get<std::string>() + "," +
         num(item["trajectory"]["first_loss"]) + "," + num(item["trajectory"]["last_loss"]) +
         "," + num(item["linf"]) + "," + num(item["audit_linf"]) + "\n";
  return row;
}

}  // namespace

int cmd_protect(const RunConfig& config, std::ostream& log) {
  require_nonempty(config.output_dir, "output_dir", "protect");
  const VaeModel model = load_checkpoint(config, "protect");
  const auto images = load_dataset(config, false);
  model.encoder.check_input(images.front().image);
  const AttackConfig probe = config.attack.to_attack_config(config.seed);
  const fs::path out_dir = config.output_dir;
  fs::create_directories(out_dir);
  const fs::path manifest_path = out_dir / "manifest.json";
  const json config_json = config;

  // Resume: reuse finished items from a manifest written for the same config.
  std::map<std::string, json> done;
  if (fs::exists(manifest_path)) {
    try {
      const json old = json::parse(read_text(manifest_path));
      if (old.value("config", json()) == config_json) {
        for (const auto& it : old["items"]) {
          if (it.value("ok", false) && fs::exists(out_dir / it["name"].get<std::string>())) {
            done[it["name"].get<std::string>()] = it;
          }
        }
      }
    } catch (const json::exception&) {
      log << "ignoring unreadable manifest " << manifest_path.string() << "\n";
    }
  }

  const double budget = probe.epsilon + 1.0 / 255.0 + 1e-9;
  json items = json::array();
  std::size_t failures = 0, resumed = 0;
  const auto t0 = std::chrono::steady_clock::now();
  auto write_manifest = [&](bool complete) {
    json m = {{"tool_version", kToolVersion},
              {"schema_version", kSchemaVersion},
              {"command", "protect"},
              {"seed", config.seed},
              {"config", config_json},
              {"complete", complete},
              {"items", items},
              {"wall_seconds", seconds_since(t0)}};
    write_file_atomic(manifest_path, m.dump(2) + "\n");
  };

  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& [name, image] = images[i];
    if (auto it = done.find(name); it != done.end()) {
      items.push_back(it->second);
      ++resumed;
      continue;
    }
    CampaignItem item = attack_item(name, image, model.encoder, config.attack, config.seed + i);
    json j = item_to_json(item);
    if (item.ok) {
      write_png(item.result.adversarial, out_dir / name);
      const double audit = max_abs_diff(read_png(out_dir / name), image);
      j["audit_linf"] = audit;
      if (!(audit <= budget)) {
        item.ok = false;
        j["ok"] = false;
        j["error"] = "quantization audit failed: linf " + format_number(audit);
        fs::remove(out_dir / name);
      }
    }
    if (!item.ok) {
      ++failures;
      log << "failed " << name << ": " << j.value("error", std::string()) << "\n";
    } else {
      log << name << " " << j["verdict"]["kind"].get<std::string>() << " mu_ratio "
          << item.verdict.mu_ratio << " sigma_ratio " << item.verdict.sigma_ratio << "\n";
    }
    items.push_back(j);
    write_manifest(false);
  }
  write_manifest(true);

  std::string csv = protect_csv_header();
  for (const auto& it : items) csv += protect_csv_row(it);
  write_file_atomic(out_dir / "protect.csv", csv);
  log << "protected " << images.size() - failures << "/" << images.size() << " images";
  if (resumed) log << " (" << resumed << " resumed)";
  log << "\n";
  return failures ? kPartialFailure : kSuccess;
}

// ---------------------------------------------------------------------------
// evaluate

int cmd_evaluate(const RunConfig& config, std::ostream& log) {
  require_nonempty(config.output_dir, "output_dir", "evaluate");
  require_nonempty(config.protected_dir, "protected_dir", "evaluate");
  const VaeModel model = load_checkpoint(config, "evaluate");
  const auto originals = load_dataset(config, false);
  const auto adversarial = load_png_directory(config.protected_dir);
  std::map<std::string, const ImageGrid*> by_name;
  for (const auto& a : adversarial) by_name[a.name] = &a.image;
  for (const auto& o : originals) {
    auto it = by_name.find(o.name);
    if (it == by_name.end()) {
      throw ValidationError("evaluate: '" + o.name + "' has no counterpart in '" +
                            config.protected_dir + "'");
    }
    require_same_shape(o.image, *it->second, "evaluate");
  }
  if (config.limit == 0 && adversarial.size() != originals.size()) {
    throw ValidationError("evaluate: protected directory holds " +
                          std::to_string(adversarial.size()) + " images, dataset holds " +
                          std::to_string(originals.size()));
  }
  model.encoder.check_input(originals.front().image);

  std::vector<DefenseSpec> defenses = config.defenses;
  if (defenses.empty()) defenses.push_back(DefenseSpec{});
  const auto& ids = config.metrics;
  const TargetPrior prior{config.attack.resolved_variance()};

  std::vector<std::pair<ImageGrid, ImageGrid>> direct_pairs;
  for (const auto& o : originals) direct_pairs.emplace_back(o.image, *by_name[o.name]);
  const MetricReport direct = metric_report(direct_pairs, ids);

  std::string csv = "image,defense";
  for (const char* col : {"direct", "clean_recon", "adv_recon"}) {
    for (const auto& m : ids) csv += "," + m + "_" + col;
  }
  csv += ",loss_clean,loss_adv\n";
  json summary = json::object();
  summary["direct"] = json::parse(direct.aggregates_json());

  for (const auto& d : defenses) {
    std::vector<std::pair<ImageGrid, ImageGrid>> clean_pairs, adv_pairs;
    std::vector<double> loss_clean, loss_adv;
    for (const auto& o : originals) {
      const ImageGrid clean_in = apply_defense(o.image, d);
      const ImageGrid adv_in = apply_defense(*by_name[o.name], d);
      clean_pairs.emplace_back(o.image, reconstruct(model.encoder, model.decoder, clean_in));
      adv_pairs.emplace_back(o.image, reconstruct(model.encoder, model.decoder, adv_in));
      loss_clean.push_back(collapse_loss(model.encoder.encode(clean_in), prior));
      loss_adv.push_back(collapse_loss(model.encoder.encode(adv_in), prior));
    }
    const MetricReport clean = metric_report(clean_pairs, ids);
    const MetricReport adv = metric_report(adv_pairs, ids);
    for (std::size_t i = 0; i < originals.size(); ++i) {
      csv += csv_escape(originals[i].name) + "," + d.label();
      for (const MetricReport* r : {&direct, &clean, &adv}) {
        for (double v : r->values[i]) csv += "," + format_number(v);
      }
      csv += "," + format_number(loss_clean[i]) + "," + format_number(loss_adv[i]) + "\n";
    }
    json block = {{"clean_recon", json::parse(clean.aggregates_json())},
                  {"adv_recon", json::parse(adv.aggregates_json())},
                  {"loss_clean_mean", mean_of(loss_clean)},
                  {"loss_adv_mean", mean_of(loss_adv)}};
    summary[d.label()] = block;
    for (const auto& m : ids) {
      log << d.label() << " " << m << ": clean recon " << clean.aggregates.at(m).mean
          << ", adversarial recon " << adv.aggregates.at(m).mean << "\n";
    }
  }

  const fs::path out_dir = config.output_dir;
  write_file_atomic(out_dir / "evaluation.csv", csv);
  json report = {{"tool_version", kToolVersion},
                 {"schema_version", kSchemaVersion},
                 {"command", "evaluate"},
                 {"seed", config.seed},
                 {"count", originals.size()},
                 {"aggregates", summary}};
  write_file_atomic(out_dir / "evaluation.json", report.dump(2) + "\n");
  log << "wrote " << (out_dir / "evaluation.csv").string() << "\n";
  return kSuccess;
}

// ---------------------------------------------------------------------------
// ablate

int cmd_ablate(const RunConfig& config, std::ostream& log) {
  require_nonempty(config.output_dir, "output_dir", "ablate");
  const std::string& axis = config.ablation.axis;
  if (axis != "v" && axis != "alpha" && axis != "steps" && axis != "surrogate") {
    throw ValidationError("ablate: axis must be one of v, alpha, steps, surrogate (got '" +
                          axis + "')");
  }
  if (config.ablation.values.empty()) throw ValidationError("ablate: no axis values given");
  const VaeModel model = load_checkpoint(config, "ablate");
  const auto images = load_dataset(config, false);
  model.encoder.check_input(images.front().image);
  const TargetPrior reference{config.attack.resolved_variance()};

  std::string csv;
  std::size_t failures = 0;
  json rows = json::array();
  if (axis == "surrogate") {
    csv = "surrogate,surrogate_loss_before,surrogate_loss_after,target_loss_before,"
          "target_loss_after,transfer_ratio\n";
    for (const auto& path : config.ablation.values) {
      if (!fs::exists(path)) throw ValidationError("ablate: surrogate '" + path + "' not found");
    }
    for (const auto& path : config.ablation.values) {
      const VaeModel surrogate = load_model(path);
      const auto items = run_campaign(images, surrogate.encoder, config.attack, config.seed);
      std::vector<double> sb, sa, tb, ta;
      for (std::size_t i = 0; i < items.size(); ++i) {
        if (!items[i].ok) {
          ++failures;
          continue;
        }
        const ImageGrid& x = images[i].image;
        const ImageGrid& adv = items[i].result.adversarial;
        sb.push_back(collapse_loss(surrogate.encoder.encode(x), reference));
        sa.push_back(collapse_loss(surrogate.encoder.encode(adv), reference));
        tb.push_back(collapse_loss(model.encoder.encode(x), reference));
        ta.push_back(collapse_loss(model.encoder.encode(adv), reference));
      }
      const double s_change = 1.0 - mean_of(sa) / mean_of(sb);
      const double t_change = 1.0 - mean_of(ta) / mean_of(tb);
      const double ratio = s_change != 0.0 ? t_change / s_change : 0.0;
      csv += csv_escape(path) + "," + format_number(mean_of(sb)) + "," +
             format_number(mean_of(sa)) + "," + format_number(mean_of(tb)) + "," +
             format_number(mean_of(ta)) + "," + format_number(ratio) + "\n";
      rows.push_back({{"surrogate", path}, {"transfer_ratio", ratio}});
      log << "surrogate " << path << " transfer ratio " << ratio << "\n";
    }
  } else {
    csv = axis + ",final_loss,reference_loss,mean_sq_mu,mean_sigma_sq,kl_to_standard,"
                 "concentration_rate\n";
    for (const auto& text : config.ablation.values) {
      const double value = parse_number(text, "ablate " + axis);
      AttackSettings s = config.attack;
      if (axis == "v") {
        if (!(value > 0.0)) throw ValidationError("ablate: v must be positive");
        s.variance_target = value;
      } else if (axis == "alpha") {
        s.alpha = value;
      } else {
        if (value < 0.0 || value != std::floor(value)) {
          throw ValidationError("ablate: steps must be a nonnegative integer");
        }
        s.steps = static_cast<std::size_t>(value);
      }
      const auto items = run_campaign(images, model.encoder, s, config.seed);
      std::vector<double> fin, ref, mu, s2, kl;
      std::size_t conc = 0, ok = 0;
      for (const auto& it : items) {
        if (!it.ok) {
          ++failures;
          continue;
        }
        ++ok;
        fin.push_back(it.result.loss_trace.back());
        ref.push_back(collapse_loss(model.encoder.encode(it.result.adversarial), reference));
        mu.push_back(it.after.mean_sq_mu);
        s2.push_back(it.after.mean_sigma_sq);
        kl.push_back(it.after.kl_to_standard);
        if (it.verdict.kind == CollapseKind::concentration) ++conc;
      }
      const double rate = ok ? static_cast<double>(conc) / static_cast<double>(ok) : 0.0;
      csv += text + "," + format_number(mean_of(fin)) + "," + format_number(mean_of(ref)) + "," +
             format_number(mean_of(mu)) + "," + format_number(mean_of(s2)) + "," +
             format_number(mean_of(kl)) + "," + format_number(rate) + "\n";
      rows.push_back({{axis, value},
                      {"final_loss", mean_of(fin)},
                      {"mean_sigma_sq", mean_of(s2)},
                      {"concentration_rate", rate}});
      log << axis << "=" << text << " final loss " << mean_of(fin) << " mean sigma^2 "
          << mean_of(s2) << "\n";
    }
  }
  const fs::path out_dir = config.output_dir;
  write_file_atomic(out_dir / ("ablation_" + axis + ".csv"), csv);
  json report = {{"tool_version", kToolVersion}, {"schema_version", kSchemaVersion},
                 {"command", "ablate"},          {"axis", axis},
                 {"seed", config.seed},          {"config", json(config)},
                 {"rows", rows}};
  write_file_atomic(out_dir / ("ablation_" + axis + ".json"), report.dump(2) + "\n");
  return failures ? kPartialFailure : kSuccess;
}

// ---------------------------------------------------------------------------
// plot-loss-surface

int cmd_plot_loss_surface(const RunConfig& config, std::ostream& log) {
  require_nonempty(config.output_dir, "output_dir", "plot-loss-surface");
  const auto& s = config.surface;
  const LossSurface grid = loss_surface_grid(s.criterion, {s.mu_lo, s.mu_hi},
                                             {s.sigma2_lo, s.sigma2_hi}, s.resolution, s.variance);
  std::string csv = "mu,sigma2,loss\n";
  for (std::size_t i = 0; i < grid.mu.size(); ++i) {
    for (std::size_t j = 0; j < grid.sigma2.size(); ++j) {
      csv += format_number(grid.mu[i]) + "," + format_number(grid.sigma2[j]) + "," +
             format_number(grid.loss[i][j]) + "\n";
    }
  }
  const std::string stem = "loss_surface_" + std::string(to_string(s.criterion));
  const fs::path out_dir = config.output_dir;
  write_file_atomic(out_dir / (stem + ".csv"), csv);
  log << "wrote " << (out_dir / (stem + ".csv")).string() << "\n";

  if (s.render) {
    // Grayscale heat map of log(1 + loss - min): rows are sigma^2 (top = largest), columns mu.
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& row : grid.loss) {
      for (double v : row) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
    const std::size_t n = grid.mu.size(), m = grid.sigma2.size();
    ImageGrid img(m, n, 1);
    const double span = std::log1p(hi - lo);
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t i = 0; i < n; ++i) {
        const double t = span > 0 ? std::log1p(grid.loss[i][j] - lo) / span : 0.0;
        img.at(m - 1 - j, i, 0) = 1.0 - t;
      }
    }
    write_png(img, out_dir / (stem + ".png"));
    log << "wrote " << (out_dir / (stem + ".png")).string() << "\n";
  }
  return kSuccess;
}

// ---------------------------------------------------------------------------
// benchmark

int cmd_benchmark(const RunConfig& config, std::ostream& log) {
  require_nonempty(config.output_dir, "output_dir", "benchmark");
  const VaeModel model = load_checkpoint(config, "benchmark");
  if (config.benchmark_sizes.empty()) throw ValidationError("benchmark: no sizes given");
  for (std::size_t size : config.benchmark_sizes) {
    model.encoder.check_input(ImageGrid(size, size, model.encoder.architecture().image_channels));
  }
  std::string csv = "size,seconds\n";
  json rows = json::array();
  for (std::size_t size : config.benchmark_sizes) {
    const auto images = generate_shapes(1, size, config.seed);
    ImageGrid image = images.front();
    if (model.encoder.architecture().image_channels == 1) {
      ImageGrid gray(size, size, 1);
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x)
          gray.at(y, x, 0) = (image.at(y, x, 0) + image.at(y, x, 1) + image.at(y, x, 2)) / 3.0;
      image = gray;
    }
    const AttackConfig ac = config.attack.to_attack_config(config.seed);
    const auto t0 = std::chrono::steady_clock::now();
    (void)pca_attack(image, model.encoder, ac);
    const double secs = std::max(seconds_since(t0), 1e-9);
    csv += std::to_string(size) + "," + format_number(secs) + "\n";
    rows.push_back({{"size", size}, {"seconds", secs}, {"steps", ac.steps}});
    log << size << "x" << size << ": " << secs << " s\n";
  }
  const fs::path out_dir = config.output_dir;
  write_file_atomic(out_dir / "benchmark.csv", csv);
  json report = {{"tool_version", kToolVersion}, {"schema_version", kSchemaVersion},
                 {"command", "benchmark"},       {"seed", config.seed},
                 {"config", json(config)},       {"timings", rows}};
  write_file_atomic(out_dir / "benchmark.json", report.dump(2) + "\n");
  return kSuccess;
}

// ---------------------------------------------------------------------------
// synth-data

int cmd_synth_data(const RunConfig& config, std::size_t count, std::size_t size,
                   std::ostream& log) {
  require_nonempty(config.output_dir, "output_dir", "synth-data");
  if (count == 0) throw ValidationError("synth-data: count must be positive");
  const auto images = generate_shapes(count, size, config.seed);
  const fs::path out_dir = config.output_dir;
  fs::create_directories(out_dir);
  for (std::size_t i = 0; i < images.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "shape_%05zu.png", i);
    write_png(images[i], out_dir / name);
  }
  log << "wrote " << count << " images to " << out_dir.string() << "\n";
  return kSuccess;
}

}  // namespace collapse::harness
