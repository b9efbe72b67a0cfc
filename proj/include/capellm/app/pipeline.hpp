#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "capellm/app/run_config.hpp"

namespace capellm {

// Everything a subcommand needs besides the model weights.
struct RunContext {
  RunConfig cfg;
  Vocabulary vocab = Vocabulary::standard();
  CoordinateCodec codec;
  PromptTemplates templates = PromptTemplates::defaults();

  explicit RunContext(RunConfig c) : cfg(std::move(c)) {
    if (!cfg.data.templates.empty()) templates = PromptTemplates::load(cfg.resolve(cfg.data.templates));
    cfg.model.vocab_size = vocab.size();
  }

  std::filesystem::path dir(const std::string& sub = {}) const {
    auto d = sub.empty() ? cfg.output_dir : cfg.output_dir / sub;
    std::filesystem::create_directories(d);
    return d;
  }
  std::filesystem::path dataset_path() const { return cfg.resolve(cfg.data.dataset); }
  std::filesystem::path default_checkpoint() const { return cfg.output_dir / "model.ckpt"; }

  void snapshot(const std::filesystem::path& d) const {
    std::ofstream(d / "config.json") << to_json(cfg).dump(2) << '\n';
  }

  InferenceOptions inference() const {
    InferenceOptions o;
    o.mode = cfg.decode.mode;
    o.constrained = cfg.decode.constrained;
    o.teacher_forced = cfg.decode.teacher_forced;
    o.strategy = cfg.decode.strategy;
    o.style = cfg.decode.prompt;
    o.seed = cfg.seed;
    o.max_new_tokens = cfg.decode.max_new_tokens;
    return o;
  }

  Dataset dataset() const { return load_dataset(dataset_path(), cfg.data.drop_lint); }

  template <typename T>
  Model<T> load_model(const std::filesystem::path& checkpoint) const {
    if (!std::filesystem::exists(checkpoint)) throw MissingFileError("checkpoint not found: " + checkpoint.string());
    Model<T> m(cfg.model);
    m.load(checkpoint);
    return m;
  }
};

inline Dataset run_synth_gen(const RunContext& ctx) {
  const auto root = ctx.dataset_path().parent_path();
  std::filesystem::create_directories(root);
  ctx.snapshot(ctx.dir());
  auto ds = generate_synthetic(ctx.cfg.data.synthetic, root);
  if (ctx.dataset_path().filename() != "dataset.json") {
    std::filesystem::copy_file(root / "dataset.json", ctx.dataset_path(),
                               std::filesystem::copy_options::overwrite_existing);
  }
  return ds;
}

template <typename T = float>
TrainState run_train(const RunContext& ctx, std::function<void(const TrainState&)> on_epoch = {}) {
  const auto out = ctx.dir();
  ctx.snapshot(out);
  const Dataset ds = ctx.dataset();
  const auto samples = ds.in_partition("train");
  if (samples.empty()) throw PreconditionError("dataset has no training samples");
  std::vector<Tensor<float>> images;
  images.reserve(samples.size());
  for (const auto* s : samples) images.push_back(ds.image(*s));

  Model<T> model(ctx.cfg.model);
  TrainConfig tc = ctx.cfg.train;
  tc.output_dir = ctx.dir("checkpoints");
  TrainContext tctx{ctx.vocab, ctx.codec, ctx.templates};
  tctx.checkpoint_meta = {{"model", to_json(ctx.cfg.model)}, {"vocabulary", ctx.vocab.to_json()}};
  tctx.on_epoch = std::move(on_epoch);
  auto st = train(model, tc, samples, images, ds.registry, tctx);
  model.save(ctx.default_checkpoint(), tctx.checkpoint_meta);
  nlohmann::json summary = {{"steps", st.step}, {"epoch_loss", st.epoch_loss}};
  std::ofstream(out / "train_summary.json") << summary.dump(2) << '\n';
  return st;
}

template <typename T = float>
EvalReport run_eval(const RunContext& ctx, const std::filesystem::path& checkpoint) {
  const auto model = ctx.load_model<T>(checkpoint);
  const Dataset ds = ctx.dataset();
  const auto samples = ds.in_partition(ctx.cfg.eval.split);
  EvalMode mode = EvalMode::only_query_images();
  if (ctx.cfg.eval.mode == EvalMode::Kind::SupportQueryPairs) {
    mode = EvalMode::support_query_pairs(load_pair_list(ctx.cfg.resolve(ctx.cfg.eval.pairs)));
  }
  EvalOptions opt{ctx.inference(), ctx.cfg.eval.pck_norm};
  auto rep = evaluate(model, ds, samples, mode, opt, ctx.templates, ctx.vocab, ctx.codec);
  const auto out = ctx.dir("eval");
  ctx.snapshot(out);
  std::ofstream(out / "report.json") << report_json(rep, opt).dump(2) << '\n';
  std::ofstream(out / "report.txt") << report_table(rep);
  write_predictions_jsonl(out / "predictions.jsonl", rep, opt);
  return rep;
}

// Predicts every keypoint of `category` on one image file.
template <typename T = float>
nlohmann::json run_infer(const RunContext& ctx, const std::filesystem::path& checkpoint,
                         const std::filesystem::path& image_path, const std::string& category) {
  if (!std::filesystem::exists(image_path)) throw MissingFileError("image not found: " + image_path.string());
  const auto model = ctx.load_model<T>(checkpoint);
  const auto registry = ctx.dataset().registry;
  const auto& specs = registry.category(category);
  std::vector<int> order(specs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  const auto opt = ctx.inference();
  const auto results =
      infer_keypoints(model, read_image(image_path), specs, order, opt, ctx.templates, ctx.vocab, ctx.codec);
  nlohmann::json preds = nlohmann::json::array();
  for (const auto& r : results) {
    nlohmann::json flags = nlohmann::json::array();
    if (r.parse_failed) flags.push_back("parse_failed");
    if (r.truncated) flags.push_back("truncated");
    preds.push_back({{"name", r.name}, {"x", r.x}, {"y", r.y}, {"answer", r.answer}, {"flags", flags}});
  }
  nlohmann::json j = {{"image", image_path.filename().string()},
                      {"category", category},
                      {"strategy", opt.strategy.to_json()},
                      {"mode", to_string(opt.mode)},
                      {"predictions", preds}};
  const auto out = ctx.dir("infer");
  ctx.snapshot(out);
  std::ofstream(out / (image_path.stem().string() + ".json")) << j.dump(2) << '\n';
  return j;
}

struct DensityRequest {
  std::optional<int> image_id;  // dataset image; supplies ground truth and mask
  std::filesystem::path image;  // or a raw image file
  std::string category;
  std::string keypoint;
  std::optional<Point> ground_truth;
  std::filesystem::path mask;
};

template <typename T = float>
nlohmann::json run_density(const RunContext& ctx, const std::filesystem::path& checkpoint, const DensityRequest& req) {
  const auto& dc = ctx.cfg.density;
  if (!ctx.cfg.decode.strategy.stochastic()) {
    throw PreconditionError("density sampling needs a stochastic strategy; " + ctx.cfg.decode.strategy.name() +
                            " is a zero-variance sampler");
  }
  const auto model = ctx.load_model<T>(checkpoint);
  const Dataset ds = ctx.dataset();
  Tensor<float> image;
  std::optional<Tensor<float>> mask;
  std::string category = req.category;
  std::optional<Point> gt = req.ground_truth;
  const PoseSample* sample = nullptr;
  if (req.image_id) {
    sample = &ds.sample(*req.image_id);
    image = ds.image(*sample);
    mask = ds.mask(*sample);
    if (category.empty()) category = sample->category;
  } else {
    if (!std::filesystem::exists(req.image)) throw MissingFileError("image not found: " + req.image.string());
    image = read_image(req.image);
  }
  if (!req.mask.empty()) {
    if (!std::filesystem::exists(req.mask)) throw MissingFileError("mask not found: " + req.mask.string());
    mask = read_mask(req.mask);
  }
  const auto& specs = ds.registry.category(category);
  const int kp = static_cast<int>(&ds.registry.find(category, req.keypoint) - specs.data());
  if (!gt && sample) gt = Point{sample->keypoints[kp].x, sample->keypoints[kp].y};
  if (!gt) throw PreconditionError("density report needs a ground truth (dataset image id or explicit point)");

  auto prompt_rng = generation_rng(ctx.cfg.seed, req.image_id.value_or(0), kp, 1);
  const Round round = build_round(specs, kp, ctx.cfg.decode.prompt, ctx.templates, prompt_rng);
  const std::vector<Turn> prior(round.turns.begin(), round.turns.end() - 1);
  const auto prompt = render_prompt(conversation_preamble(specs, ctx.cfg.decode.prompt, ctx.templates), prior,
                                    round.question(), ctx.vocab);
  const auto samples =
      sample_keypoint(model, image, prompt, ctx.cfg.decode.strategy, dc.samples, ctx.cfg.seed, ctx.vocab, ctx.codec);
  const auto kde_grid = kde(samples.points, dc.grid, dc.bandwidth);
  const auto gauss = gaussian_baseline(*gt, dc.sigma, dc.grid);
  auto report = density_report(kde_grid, gauss, *gt, mask ? &*mask : nullptr);
  report["category"] = category;
  report["keypoint"] = req.keypoint;
  report["sampling"] = samples.source;
  report["sigma"] = dc.sigma;

  const auto out = ctx.dir("density");
  ctx.snapshot(out);
  write_grid_csv(out / "kde.csv", kde_grid);
  write_grid_pgm(out / "kde.pgm", kde_grid);
  write_grid_csv(out / "gaussian.csv", gauss);
  write_grid_pgm(out / "gaussian.pgm", gauss);
  std::ofstream(out / "report.json") << report.dump(2) << '\n';
  std::ofstream pts(out / "samples.csv");
  char line[64];
  for (const auto& p : samples.points) {
    std::snprintf(line, sizeof line, "%.6f,%.6f\n", p[0], p[1]);
    pts << line;
  }
  return report;
}

}  // namespace capellm
