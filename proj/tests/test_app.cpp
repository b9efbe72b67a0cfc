#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "capellm/app/pipeline.hpp"

using namespace capellm;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("capellm_app_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

nlohmann::json tiny_run(const fs::path& out) {
  nlohmann::json j = nlohmann::json::object();
  for (const std::string o :
       {"seed=5", "model.image_size=16", "model.patch=4", "model.C=8", "model.encoder_depth=1",
        "model.encoder_heads=2", "model.D=16", "model.depth=1", "model.heads=2", "model.context=512",
        "model.rank=2", "train.epochs=1", "train.accumulation=4", "train.lr=0.002",
        "data.synthetic.n_categories=3", "data.synthetic.images_per_category=3", "data.synthetic.image_size=16",
        "density.samples=20", "density.grid=16", "decode.strategy.kind=temperature",
        "decode.strategy.t=1.0"}) {
    apply_override(j, o);
  }
  j["output_dir"] = out.string();
  return j;
}

}  // namespace

TEST(RunConfig, UnknownKeysAreRejectedWithTheirPath) {
  try {
    run_config_from_json({{"train", {{"learning_rate", 1e-3}}}});
    FAIL();
  } catch (const SchemaError& e) {
    EXPECT_NE(std::string(e.what()).find("train.learning_rate"), std::string::npos) << e.what();
  }
  EXPECT_THROW(run_config_from_json({{"modle", nlohmann::json::object()}}), SchemaError);
  EXPECT_THROW(run_config_from_json({{"train", {{"strategy", "random"}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"eval", {{"mode", "support_query_pairs"}}}}), ConfigError);
}

TEST(RunConfig, OverridesParseJsonAndFallBackToStrings) {
  nlohmann::json j = nlohmann::json::object();
  apply_override(j, "train.lr=0.01");
  apply_override(j, "decode.strategy.kind=top_k");
  apply_override(j, "decode.strategy.k=3");
  apply_override(j, "data.synthetic.test_categories=[\"square\"]");
  EXPECT_EQ(j["train"]["lr"], 0.01);
  EXPECT_EQ(j["decode"]["strategy"]["kind"], "top_k");
  EXPECT_EQ(j["decode"]["strategy"]["k"], 3);
  const auto c = run_config_from_json(j);
  EXPECT_DOUBLE_EQ(c.train.lr, 0.01);
  EXPECT_EQ(c.decode.strategy.name(), DecodeStrategy::topk(3).name());
  EXPECT_EQ(c.data.synthetic.test_categories, std::vector<std::string>{"square"});
  EXPECT_THROW(apply_override(j, "no_equals"), ConfigError);
  EXPECT_THROW(apply_override(j, "a..b=1"), ConfigError);
}

TEST(RunConfig, SeedPropagatesAndEnvironmentWins) {
  const auto dir = scratch("seed");
  std::ofstream(dir / "c.json") << R"({"seed": 11})";
  unsetenv("CAPE_SEED");
  auto c = load_run_config(dir / "c.json", {"seed=12"});
  EXPECT_EQ(c.seed, 12u);
  EXPECT_EQ(c.model.seed, 12u);
  EXPECT_EQ(c.train.seed, 12u);
  EXPECT_EQ(c.data.synthetic.seed, 12u);
  setenv("CAPE_SEED", "99", 1);
  EXPECT_EQ(load_run_config(dir / "c.json", {"seed=12"}).seed, 99u);
  setenv("CAPE_SEED", "abc", 1);
  EXPECT_THROW(load_run_config(dir / "c.json"), ConfigError);
  unsetenv("CAPE_SEED");
  EXPECT_THROW(load_run_config(dir / "missing.json"), MissingFileError);
}

TEST(RunConfig, JsonRoundTripIsStable) {
  nlohmann::json j = tiny_run("/tmp/x");
  apply_override(j, "density.bandwidth=0.03");
  apply_override(j, "eval.pck_norm=bbox_diagonal");
  apply_override(j, "train.prompt.kind=step_by_step");
  const auto c = run_config_from_json(j);
  const auto once = to_json(c);
  EXPECT_EQ(to_json(run_config_from_json(once)), once);
  EXPECT_EQ(once["density"]["bandwidth"], 0.03);
  EXPECT_EQ(to_json(RunConfig{})["density"]["bandwidth"], nullptr);
}

TEST(Pipeline, MissingCheckpointNamesThePath) {
  const auto dir = scratch("missing");
  RunContext ctx(run_config_from_json(tiny_run(dir)));
  try {
    run_eval(ctx, dir / "nope.ckpt");
    FAIL();
  } catch (const MissingFileError& e) {
    EXPECT_NE(std::string(e.what()).find("nope.ckpt"), std::string::npos);
  }
}

TEST(Pipeline, TinyEndToEndRunWritesEveryArtifact) {
  const auto dir = scratch("e2e");
  RunContext ctx(run_config_from_json(tiny_run(dir)));
  const auto ds = run_synth_gen(ctx);
  EXPECT_EQ(ds.samples.size(), 9u);
  EXPECT_TRUE(fs::exists(dir / "data" / "dataset.json"));

  int epochs = 0;
  const auto st = run_train(ctx, [&](const TrainState&) { ++epochs; });
  EXPECT_EQ(epochs, 1);
  EXPECT_GT(st.step, 0);
  EXPECT_TRUE(fs::exists(dir / "model.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "config.json"));
  const auto summary = read_json_file(dir / "train_summary.json");
  EXPECT_EQ(summary["steps"], st.step);

  const auto rep = run_eval(ctx, ctx.default_checkpoint());
  const auto report = read_json_file(dir / "eval" / "report.json");
  EXPECT_EQ(report["queries"], rep.queries);
  EXPECT_TRUE(report["overall"].contains("mPCK"));
  std::ifstream jl(dir / "eval" / "predictions.jsonl");
  std::string line;
  std::size_t rows = 0;
  while (std::getline(jl, line)) {
    const auto rec = nlohmann::json::parse(line);
    EXPECT_TRUE(rec.contains("image_id") && rec.contains("x") && rec.contains("flags"));
    ++rows;
  }
  EXPECT_EQ(rows, rep.predictions.size());
  EXPECT_GT(rows, 0u);
  EXPECT_FALSE(slurp(dir / "eval" / "report.txt").empty());

  const PoseSample& s = *ds.in_partition("test").front();
  const auto inf = run_infer(ctx, ctx.default_checkpoint(), ds.root / s.image_file, s.category);
  EXPECT_EQ(inf["predictions"].size(), ds.registry.category(s.category).size());
  for (const auto& p : inf["predictions"]) {
    EXPECT_GE(p["x"].get<double>(), 0.0);
    EXPECT_LE(p["x"].get<double>(), 1.0);
  }

  DensityRequest req;
  req.image_id = s.id;
  req.keypoint = ds.registry.category(s.category).front().name;
  const auto dens = run_density(ctx, ctx.default_checkpoint(), req);
  EXPECT_EQ(dens["keypoint"], req.keypoint);
  for (const char* f : {"kde.csv", "kde.pgm", "gaussian.csv", "gaussian.pgm", "report.json", "samples.csv"}) {
    EXPECT_TRUE(fs::exists(dir / "density" / f)) << f;
  }
  const auto pgm = slurp(dir / "density" / "kde.pgm");
  EXPECT_EQ(pgm.rfind("P5\n16 16\n255\n", 0), 0u);
  EXPECT_EQ(pgm.size(), std::string("P5\n16 16\n255\n").size() + 256);

  RunContext greedy(run_config_from_json(tiny_run(dir)));
  greedy.cfg.decode.strategy = DecodeStrategy::greedy();
  EXPECT_THROW(run_density(greedy, ctx.default_checkpoint(), req), PreconditionError);
}
