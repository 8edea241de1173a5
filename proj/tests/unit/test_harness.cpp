#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "collapse/errors.hpp"
#include "collapse/harness.hpp"

namespace collapse::harness {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "collapse_test_harness" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

// Small corpus on disk plus a briefly trained checkpoint, shared by the tests.
class HarnessFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fresh_dir("fixture");
    RunConfig synth;
    synth.output_dir = (root_ / "data").string();
    std::ostringstream log;
    ASSERT_EQ(cmd_synth_data(synth, 6, 16, log), kSuccess);

    RunConfig train = base();
    train.dataset = "synthetic";
    train.train.synthetic_count = 32;
    train.train.epochs = 1;
    train.train.batch_size = 8;
    train.train.base_channels = 4;
    train.checkpoint = (root_ / "model.ckpt").string();
    ASSERT_EQ(cmd_train_vae(train, log), kSuccess);
  }

  static RunConfig base() {
    RunConfig c;
    c.dataset = (root_ / "data").string();
    c.image_size = 16;
    c.checkpoint = (root_ / "model.ckpt").string();
    c.attack.steps = 3;
    return c;
  }

  static fs::path root_;
  std::ostringstream log_;
};

fs::path HarnessFixture::root_;

TEST(HarnessConfig, DefaultsAndRoundTrip) {
  RunConfig c;
  EXPECT_EQ(c.seed, 3407u);
  EXPECT_EQ(c.attack.resolved_variance(), 1e-8);
  c.attack.direction = Direction::maximize;
  EXPECT_EQ(c.attack.resolved_variance(), 1.0);
  c.attack.variance_target = 0.5;
  c.attack.in_loop = DefenseSpec::parse("gaussian_blur:3");
  c.defenses = {DefenseSpec::parse("jpeg:50"), DefenseSpec::parse("filter_clean:2")};
  c.ablation = {"steps", {"10", "20"}};
  c.surface.resolution = 7;
  c.benchmark_sizes = {32};
  const json j = c;
  const RunConfig back = json::parse(j.dump()).get<RunConfig>();
  EXPECT_EQ(json(back), j);
  EXPECT_EQ(back.attack.in_loop, c.attack.in_loop);
  EXPECT_EQ(back.defenses, c.defenses);
}

TEST(HarnessConfig, AttackConfigConversion) {
  AttackSettings s;
  const auto c = s.to_attack_config(9);
  EXPECT_DOUBLE_EQ(c.epsilon, 16.0 / 255.0);
  EXPECT_DOUBLE_EQ(c.alpha, 2.0 / 255.0);
  EXPECT_EQ(c.steps, 40u);
  EXPECT_EQ(c.variance_target.variance_scale, 1e-8);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.in_loop_transform, nullptr);
}

TEST(HarnessConfig, StrictParsing) {
  EXPECT_THROW(json({{"datset", "x"}}).get<RunConfig>(), ValidationError);
  EXPECT_THROW(json({{"attack", {{"eps", 3}}}}).get<RunConfig>(), ValidationError);
  EXPECT_THROW(json({{"schema_version", 2}}).get<RunConfig>(), ValidationError);
  EXPECT_THROW(json({{"metrics", {"psnr", "nope"}}}).get<RunConfig>(), ValidationError);
  EXPECT_THROW(json({{"attack", {{"in_loop", "jpeg:50"}}}}).get<RunConfig>(), ValidationError);
  EXPECT_THROW(json({{"attack", {{"epsilon", -1}}}}).get<RunConfig>(), ValidationError);
  EXPECT_THROW(json({{"image_size", "big"}}).get<RunConfig>(), ValidationError);
  const auto ok = json({{"defenses", {"jpeg:40", {{"kind", "gaussian_blur"}}}},
                        {"attack", {{"direction", "pca+"}}}})
                      .get<RunConfig>();
  EXPECT_EQ(ok.defenses.size(), 2u);
  EXPECT_EQ(ok.attack.direction, Direction::maximize);
}

TEST(HarnessConfig, LoadFromFileAndManifest) {
  const auto dir = fresh_dir("config");
  write_file_atomic(dir / "c.json", R"({"seed": 7, "dataset": "synthetic"})");
  EXPECT_EQ(load_run_config(dir / "c.json").seed, 7u);
  write_file_atomic(dir / "m.json", R"({"config": {"seed": 8}, "items": []})");
  EXPECT_EQ(load_run_config(dir / "m.json").seed, 8u);
  write_file_atomic(dir / "bad.json", "{ not json");
  EXPECT_THROW(load_run_config(dir / "bad.json"), ValidationError);
  EXPECT_THROW(load_run_config(dir / "missing.json"), ValidationError);
  EXPECT_FALSE(fs::exists(dir / "c.json.tmp"));
}

TEST(HarnessConfig, SyntheticDataset) {
  RunConfig c;
  c.dataset = "synthetic";
  c.image_size = 16;
  c.limit = 5;
  const auto held = load_dataset(c, false);
  ASSERT_EQ(held.size(), 5u);
  EXPECT_EQ(held[0].name, "synthetic_00000.png");
  c.train.synthetic_count = 3;
  const auto train = load_dataset(c, true);
  ASSERT_EQ(train.size(), 3u);
  EXPECT_NE(train[0].image, held[0].image);
  c.dataset = "/nonexistent/collapse";
  EXPECT_THROW(load_dataset(c, false), ValidationError);
}

TEST(HarnessSurface, CsvGrid) {
  const auto dir = fresh_dir("surface");
  RunConfig c;
  c.output_dir = dir.string();
  c.surface.resolution = 5;
  c.surface.mu_lo = -1;
  c.surface.mu_hi = 1;
  c.surface.sigma2_lo = 0.5;
  c.surface.sigma2_hi = 1.5;
  c.surface.render = true;
  std::ostringstream log;
  ASSERT_EQ(cmd_plot_loss_surface(c, log), kSuccess);
  const auto rows = lines(slurp(dir / "loss_surface_reverse_kl.csv"));
  ASSERT_EQ(rows.size(), 26u);
  EXPECT_EQ(rows[0], "mu,sigma2,loss");
  double best = INFINITY, best_mu = 0, best_s2 = 0;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    double mu, s2, loss;
    char comma;
    std::istringstream in(rows[r]);
    in >> mu >> comma >> s2 >> comma >> loss;
    // Full precision text round-trips.
    const auto grid = loss_surface_grid(Criterion::reverse_kl, {-1, 1}, {0.5, 1.5}, 5, 1.0);
    EXPECT_EQ(loss, grid.loss[(r - 1) / 5][(r - 1) % 5]);
    if (loss < best) {
      best = loss;
      best_mu = mu;
      best_s2 = s2;
    }
  }
  EXPECT_EQ(best_mu, 0.0);
  EXPECT_EQ(best_s2, 1.0);
  EXPECT_TRUE(fs::exists(dir / "loss_surface_reverse_kl.png"));
  const auto png = read_png(dir / "loss_surface_reverse_kl.png");
  EXPECT_EQ(png.width(), 5u);
}

TEST_F(HarnessFixture, TrainIsReproducibleAndWritesCurve) {
  RunConfig c = base();
  c.dataset = "synthetic";
  c.train.synthetic_count = 16;
  c.train.epochs = 2;
  c.train.base_channels = 4;
  c.train.batch_size = 8;
  const auto dir = fresh_dir("train");
  c.output_dir = dir.string();
  c.checkpoint = (dir / "a.ckpt").string();
  ASSERT_EQ(cmd_train_vae(c, log_), kSuccess);
  c.checkpoint = (dir / "b.ckpt").string();
  ASSERT_EQ(cmd_train_vae(c, log_), kSuccess);
  EXPECT_EQ(slurp(dir / "a.ckpt"), slurp(dir / "b.ckpt"));
  EXPECT_EQ(lines(slurp(dir / "training_curve.csv")).size(), 3u);
}

TEST_F(HarnessFixture, TrainMissingDatasetLeavesNoOutputs) {
  RunConfig c = base();
  const auto dir = fresh_dir("train_missing");
  c.dataset = (dir / "nope").string();
  c.output_dir = dir.string();
  c.checkpoint = (dir / "x.ckpt").string();
  EXPECT_THROW(cmd_train_vae(c, log_), ValidationError);
  EXPECT_TRUE(fs::is_empty(dir));
}

TEST_F(HarnessFixture, ProtectWritesAuditedOutputs) {
  RunConfig c = base();
  const auto dir = fresh_dir("protect");
  c.output_dir = dir.string();
  ASSERT_EQ(cmd_protect(c, log_), kSuccess);
  const json m = json::parse(slurp(dir / "manifest.json"));
  EXPECT_EQ(m["seed"], 3407);
  EXPECT_EQ(m["config"]["seed"], 3407);
  EXPECT_TRUE(m["complete"].get<bool>());
  ASSERT_EQ(m["items"].size(), 6u);
  const auto originals = load_png_directory(c.dataset);
  for (std::size_t i = 0; i < originals.size(); ++i) {
    const auto& item = m["items"][i];
    EXPECT_TRUE(item["ok"].get<bool>());
    EXPECT_EQ(item["seed"], 3407 + i);
    EXPECT_EQ(item["loss_trace"].size(), 4u);
    const auto adv = read_png(dir / originals[i].name);
    double linf = 0;
    for (std::size_t k = 0; k < adv.size(); ++k) {
      linf = std::max(linf, std::abs(adv[k] - originals[i].image[k]));
    }
    EXPECT_LE(linf, 17.0 / 255.0 + 1e-12);
  }
  EXPECT_EQ(lines(slurp(dir / "protect.csv")).size(), 7u);
}

TEST_F(HarnessFixture, ProtectZeroBudgetIsIdentity) {
  RunConfig c = base();
  c.attack.epsilon = 0.0;
  const auto dir = fresh_dir("protect_zero");
  c.output_dir = dir.string();
  ASSERT_EQ(cmd_protect(c, log_), kSuccess);
  for (const auto& o : load_png_directory(c.dataset)) {
    EXPECT_EQ(to_bytes(read_png(dir / o.name)), to_bytes(o.image)) << o.name;
  }
}

TEST_F(HarnessFixture, ProtectIsDeterministicAndResumes) {
  RunConfig c = base();
  const auto a = fresh_dir("protect_a"), b = fresh_dir("protect_b");
  c.output_dir = a.string();
  ASSERT_EQ(cmd_protect(c, log_), kSuccess);
  c.output_dir = b.string();
  ASSERT_EQ(cmd_protect(c, log_), kSuccess);
  for (const auto& o : load_png_directory(c.dataset)) {
    EXPECT_EQ(slurp(a / o.name), slurp(b / o.name));
  }
  EXPECT_EQ(slurp(a / "protect.csv"), slurp(b / "protect.csv"));

  // Remove one output; a rerun recomputes only that item.
  const auto first = load_png_directory(c.dataset).front().name;
  const std::string before = slurp(b / first);
  fs::remove(b / first);
  std::ostringstream log;
  ASSERT_EQ(cmd_protect(c, log), kSuccess);
  EXPECT_NE(log.str().find("(5 resumed)"), std::string::npos) << log.str();
  EXPECT_EQ(slurp(b / first), before);
  EXPECT_EQ(slurp(b / "protect.csv"), slurp(a / "protect.csv"));
}

TEST_F(HarnessFixture, ProtectRejectsMissingCheckpoint) {
  RunConfig c = base();
  c.checkpoint = (root_ / "absent.ckpt").string();
  c.output_dir = fresh_dir("protect_nockpt").string();
  EXPECT_THROW(cmd_protect(c, log_), ValidationError);
}

TEST_F(HarnessFixture, EvaluateOriginalsAgainstThemselves) {
  RunConfig c = base();
  const auto dir = fresh_dir("eval_self");
  c.protected_dir = c.dataset;
  c.output_dir = dir.string();
  ASSERT_EQ(cmd_evaluate(c, log_), kSuccess);
  const auto rows = lines(slurp(dir / "evaluation.csv"));
  ASSERT_EQ(rows.size(), 7u);
  EXPECT_EQ(rows[0].substr(0, 49), "image,defense,psnr_direct,ssim_direct,acdm_direct");
  for (std::size_t r = 1; r < rows.size(); ++r) {
    EXPECT_NE(rows[r].find(",identity,inf,1,0,"), std::string::npos) << rows[r];
  }
  const json j = json::parse(slurp(dir / "evaluation.json"));
  EXPECT_EQ(j["aggregates"]["direct"]["psnr"]["infinite"], 6);
}

TEST_F(HarnessFixture, EvaluateIdentityDefenseEqualsNone) {
  RunConfig c = base();
  const auto adv = fresh_dir("eval_adv");
  c.output_dir = adv.string();
  ASSERT_EQ(cmd_protect(c, log_), kSuccess);
  c.protected_dir = adv.string();
  const auto none = fresh_dir("eval_none"), ident = fresh_dir("eval_ident");
  c.output_dir = none.string();
  ASSERT_EQ(cmd_evaluate(c, log_), kSuccess);
  c.defenses = {DefenseSpec{}};
  c.output_dir = ident.string();
  ASSERT_EQ(cmd_evaluate(c, log_), kSuccess);
  EXPECT_EQ(slurp(none / "evaluation.csv"), slurp(ident / "evaluation.csv"));

  c.defenses = {DefenseSpec{}, DefenseSpec::parse("gaussian_blur:3"), DefenseSpec::parse("jpeg:75"),
                DefenseSpec::parse("filter_clean:2")};
  ASSERT_EQ(cmd_evaluate(c, log_), kSuccess);
  EXPECT_EQ(lines(slurp(ident / "evaluation.csv")).size(), 1u + 4u * 6u);
}

TEST_F(HarnessFixture, EvaluateRejectsMismatchedSets) {
  RunConfig c = base();
  const auto partial = fresh_dir("eval_partial");
  const auto originals = load_png_directory(c.dataset);
  for (std::size_t i = 0; i + 1 < originals.size(); ++i) {
    fs::copy_file(fs::path(c.dataset) / originals[i].name, partial / originals[i].name);
  }
  c.protected_dir = partial.string();
  c.output_dir = fresh_dir("eval_partial_out").string();
  EXPECT_THROW(cmd_evaluate(c, log_), ValidationError);
}

TEST_F(HarnessFixture, AblateAxes) {
  RunConfig c = base();
  const auto dir = fresh_dir("ablate");
  c.output_dir = dir.string();
  c.limit = 2;
  c.ablation = {"steps", {"1", "2", "4"}};
  ASSERT_EQ(cmd_ablate(c, log_), kSuccess);
  const auto rows = lines(slurp(dir / "ablation_steps.csv"));
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].substr(0, 16), "steps,final_loss");

  c.ablation = {"v", {"1", "1e-8"}};
  ASSERT_EQ(cmd_ablate(c, log_), kSuccess);
  EXPECT_EQ(lines(slurp(dir / "ablation_v.csv")).size(), 3u);

  c.ablation = {"surrogate", {c.checkpoint, c.checkpoint}};
  ASSERT_EQ(cmd_ablate(c, log_), kSuccess);
  const auto sur = lines(slurp(dir / "ablation_surrogate.csv"));
  ASSERT_EQ(sur.size(), 3u);
  // Attacking the target itself: transfer ratio exactly 1.
  EXPECT_EQ(sur[1].substr(sur[1].rfind(',') + 1), "1");

  c.ablation = {"depth", {"1"}};
  EXPECT_THROW(cmd_ablate(c, log_), ValidationError);
  c.ablation = {"alpha", {"two"}};
  EXPECT_THROW(cmd_ablate(c, log_), ValidationError);
}

TEST_F(HarnessFixture, BenchmarkRows) {
  RunConfig c = base();
  const auto dir = fresh_dir("bench");
  c.output_dir = dir.string();
  c.benchmark_sizes = {16, 32};
  ASSERT_EQ(cmd_benchmark(c, log_), kSuccess);
  const auto rows = lines(slurp(dir / "benchmark.csv"));
  ASSERT_EQ(rows.size(), 3u);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    EXPECT_GT(std::stod(rows[r].substr(rows[r].find(',') + 1)), 0.0);
  }
  c.benchmark_sizes = {18};
  EXPECT_THROW(cmd_benchmark(c, log_), ValidationError);
}

TEST_F(HarnessFixture, CampaignItemJson) {
  const auto img = generate_shapes(1, 16, 4).front();
  const auto model = load_model(base().checkpoint);
  AttackSettings s;
  s.steps = 2;
  const auto item = attack_item("x.png", img, model.encoder, s, 11);
  ASSERT_TRUE(item.ok) << item.error;
  EXPECT_LE(item.linf, 16.0 / 255.0 + 1e-6);
  EXPECT_LE(item.linf_quantized, 17.0 / 255.0 + 1e-9);
  const json j = item_to_json(item);
  EXPECT_EQ(j["seed"], 11);
  EXPECT_EQ(j["loss_trace"].size(), 3u);
  EXPECT_TRUE(j.contains("verdict"));

  const auto bad = attack_item("y.png", ImageGrid(10, 10, 3), model.encoder, s, 1);
  EXPECT_FALSE(bad.ok);
  EXPECT_FALSE(item_to_json(bad)["error"].get<std::string>().empty());
}

}  // namespace
}  // namespace collapse::harness
