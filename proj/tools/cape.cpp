#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "capellm/app/pipeline.hpp"

using namespace capellm;

namespace {

int exit_code_for(const std::string& kind) {
  if (kind == "missing_file") return 2;
  if (kind == "config" || kind == "schema" || kind == "registry") return 3;
  if (kind == "precondition") return 4;
  return 1;
}

// One JSON line on stderr plus error.json in the run directory when known.
int report_error(const std::string& command, const std::string& kind, const std::string& message,
                 const std::filesystem::path& run_dir) {
  const nlohmann::json rec = {{"error", kind}, {"command", command}, {"message", message}};
  std::cerr << rec.dump() << '\n';
  if (!run_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(run_dir, ec);
    if (!ec) std::ofstream(run_dir / "error.json") << rec.dump(2) << '\n';
  }
  return exit_code_for(kind);
}

std::optional<Point> parse_point(const std::string& s) {
  if (s.empty()) return std::nullopt;
  Point p{};
  char tail = 0;
  if (std::sscanf(s.c_str(), "%lf,%lf%c", &p[0], &p[1], &tail) != 2) {
    throw ConfigError("expected x,y for a point, got '" + s + "'");
  }
  return p;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Support-free keypoint localization with digit-token coordinates"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> overrides;
  std::string checkpoint;
  app.add_option("-c,--config", config_path, "JSON run config (omit for built-in defaults)");
  app.add_option("--set", overrides, "override: section.key=value (repeatable)");

  auto* synth = app.add_subcommand("synth-gen", "generate the synthetic dataset");
  auto* train_cmd = app.add_subcommand("train", "instruction-tune a model");
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the configured split");
  auto* infer_cmd = app.add_subcommand("infer", "predict all keypoints of one image");
  auto* density_cmd = app.add_subcommand("density", "sample one keypoint and estimate its density");
  for (auto* sc : {eval_cmd, infer_cmd, density_cmd}) {
    sc->add_option("--checkpoint", checkpoint, "checkpoint (default <output_dir>/model.ckpt)");
  }
  std::string image, category;
  infer_cmd->add_option("--image", image, "PPM image")->required();
  infer_cmd->add_option("--category", category, "category name")->required();
  DensityRequest dreq;
  int image_id = -1;
  std::string gt, dimage;
  density_cmd->add_option("--image-id", image_id, "dataset image id (supplies ground truth and mask)");
  density_cmd->add_option("--image", dimage, "PPM image (with --category and --gt)");
  density_cmd->add_option("--category", dreq.category, "category name");
  density_cmd->add_option("--keypoint", dreq.keypoint, "keypoint name")->required();
  density_cmd->add_option("--gt", gt, "ground truth as x,y in [0,1]");
  density_cmd->add_option("--mask", dreq.mask, "foreground mask PGM");
  CLI11_PARSE(app, argc, argv);

  const auto* active = app.get_subcommands().front();
  const std::string command = active->get_name();
  std::filesystem::path run_dir;
  try {
    RunContext ctx(load_run_config(config_path, overrides));
    run_dir = ctx.cfg.output_dir;
    const std::filesystem::path ckpt = checkpoint.empty() ? ctx.default_checkpoint() : std::filesystem::path(checkpoint);
    if (active == synth) {
      const auto ds = run_synth_gen(ctx);
      std::printf("wrote %zu samples to %s\n", ds.samples.size(), ctx.dataset_path().parent_path().c_str());
    } else if (active == train_cmd) {
      const auto st = run_train(ctx, [](const TrainState& s) {
        std::printf("epoch %d loss %.6f\n", s.epoch, s.epoch_loss.back());
        std::fflush(stdout);
      });
      std::printf("trained %ld steps; checkpoint %s\n", st.step, ctx.default_checkpoint().c_str());
    } else if (active == eval_cmd) {
      const auto rep = run_eval(ctx, ckpt);
      std::printf("%s", report_table(rep).c_str());
    } else if (active == infer_cmd) {
      std::printf("%s\n", run_infer(ctx, ckpt, image, category).dump(2).c_str());
    } else if (active == density_cmd) {
      if (image_id >= 0) dreq.image_id = image_id;
      dreq.image = dimage;
      dreq.ground_truth = parse_point(gt);
      if (!dreq.image_id && dimage.empty()) throw ConfigError("density needs --image-id or --image");
      if (!dreq.image_id && dreq.category.empty()) throw ConfigError("density with --image needs --category");
      std::printf("%s\n", run_density(ctx, ckpt, dreq).dump(2).c_str());
    }
  } catch (const Error& e) {
    return report_error(command, e.kind(), e.what(), run_dir);
  } catch (const nlohmann::json::exception& e) {
    return report_error(command, "schema", e.what(), run_dir);
  } catch (const std::exception& e) {
    return report_error(command, "internal", e.what(), run_dir);
  }
  return 0;
}
