#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "capellm/app/pipeline.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace capellm;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Tensor<float> noise_image(int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0, 1);
  Tensor<float> img({size, size, 3});
  for (auto& v : img.values()) v = u(rng);
  return img;
}

std::string digits_of(int value, int k) {
  std::string s = std::to_string(value);
  return std::string(static_cast<std::size_t>(k) - s.size(), '0') + s;
}

std::vector<const PoseSample*> first_n(std::vector<const PoseSample*> v, std::size_t n) {
  if (v.size() > n) v.resize(n);
  return v;
}

double center_pck(const std::vector<const PoseSample*>& samples) {
  std::vector<Prediction> preds;
  for (const auto* s : samples) {
    for (int k = 0; k < static_cast<int>(s->keypoints.size()); ++k) preds.push_back({s->id, k, 0.5, 0.5});
  }
  return pck(preds, samples, 0.2);
}

// Shared by the generalization and cumulative criteria.
struct DeskScale {
  fs::path root;
  Dataset ds;
  std::vector<const PoseSample*> train, test;
  std::vector<Tensor<float>> images;
  Vocabulary vocab = Vocabulary::standard();
  CoordinateCodec codec;
  PromptTemplates tpl = PromptTemplates::defaults();

  explicit DeskScale(const fs::path& dir) : root(dir) {
    SyntheticConfig sc;
    sc.images_per_category = 200;
    sc.seed = 7;
    ds = fs::exists(dir / "dataset.json") ? load_dataset(dir / "dataset.json") : generate_synthetic(sc, dir);
    train = ds.in_partition("train");
    test = ds.in_partition("test");
    for (const auto* s : train) images.push_back(ds.image(*s));
  }

  ModelConfig model_config() const {
    ModelConfig mc;
    mc.width = 64;
    mc.depth = 2;
    mc.vocab_size = vocab.size();
    mc.seed = 1;
    return mc;
  }

  Model<float> fit(PairingStrategy strategy) const {
    Model<float> model(model_config());
    TrainConfig tc;
    tc.lr = 1e-3;
    tc.epochs = 6;
    tc.accumulation = 8;
    tc.seed = 3;
    tc.strategy = strategy;
    TrainContext ctx{vocab, codec, tpl};
    const auto t0 = std::chrono::steady_clock::now();
    ctx.on_epoch = [&](const TrainState& st) {
      std::printf("    [%s] epoch %d loss %.4f (%.0f s)\n", to_string(strategy).c_str(), st.epoch,
                  st.epoch_loss.back(), seconds_since(t0));
      std::fflush(stdout);
    };
    capellm::train(model, tc, train, images, ds.registry, ctx);
    return model;
  }

  EvalReport eval(const Model<float>& m, InferenceMode mode = InferenceMode::Single) const {
    EvalOptions opt;
    opt.inference.mode = mode;
    return evaluate(m, ds, test, EvalMode::only_query_images(), opt, tpl, vocab, codec);
  }
};

Outcome gradient_suite() {
  std::map<std::string, double> worst;
  std::map<std::string, int> count;
  const auto t0 = std::chrono::steady_clock::now();
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(5000 + seed);
    for (auto& c : capellm::testing::gradient_cases(rng)) {
      const auto r = capellm::testing::grad_check(c.f, c.inputs);
      worst[c.op] = std::max(worst[c.op], r.max_rel_error);
      ++count[c.op];
    }
  }
  const double t = seconds_since(t0);
  double overall = 0;
  std::string op_max;
  bool ok = t < 120;
  for (const auto& [op, err] : worst) {
    ok = ok && err < 1e-4 && count[op] >= 20;
    if (err >= overall) {
      overall = err;
      op_max = op;
    }
  }
  return {ok, fmt("%zu ops x 20 cases, max rel error %.2e (%s), %.1f s", worst.size(), overall, op_max.c_str(), t)};
}

Outcome posterior_normalization() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto vocab = Vocabulary::standard();
  ModelConfig c;
  c.vision = {8, 4, 8, 1, 2};
  c.width = 8;
  c.depth = 1;
  c.heads = 2;
  c.context = 64;
  c.mlp_ratio = 2;
  c.vocab_size = vocab.size();
  c.adapter_rank = 0;
  c.init_std = 0.5;
  c.seed = 99;
  Model<double> model(c);
  const auto source = model_logit_source(model, noise_image(8, 12));
  const auto prompt = vocab.encode("Where is the tip?");
  double worst = 0;
  for (int k = 1; k <= 3; ++k) {
    const CoordinateCodec codec(k);
    const int n = static_cast<int>(std::pow(10, k));
    const std::string fixed = digits_of(n / 7, k);
    double sx = 0, sy = 0;
    for (int i = 0; i < n; ++i) {
      sx += coord_posterior(source, prompt, codec, digits_of(i, k), fixed, vocab).x;
      sy += coord_posterior(source, prompt, codec, fixed, digits_of(i, k), vocab).y;
    }
    worst = std::max({worst, std::abs(sx - 1), std::abs(sy - 1)});
  }
  const double t = seconds_since(t0);
  return {worst < 1e-9 && t < 60, fmt("K=1..3 both axes, max |sum-1| = %.2e, %.1f s", worst, t)};
}

Outcome codec_round_trip() {
  const auto vocab = Vocabulary::standard();
  const CoordinateCodec codec;
  double worst = 0;
  bool parsed = true;
  for (int i = 0; i < 100; ++i) {
    for (int j = 0; j < 100; ++j) {
      const double x = (i + 0.37) / 100.0, y = (j + 0.81) / 100.0;
      const auto p = codec.parse(vocab.decode_text(vocab.encode(codec.encode(x, y))));
      parsed = parsed && p.ok;
      worst = std::max({worst, std::abs(p.x - x), std::abs(p.y - y)});
    }
  }
  const bool clamps = codec.encode(1.0, 0.0) == "[0.999, 0.000]" && codec.encode(0.9999, 0.9995) == "[0.999, 0.999]" &&
                      codec.encode(0.29, 0.001) == "[0.290, 0.001]";
  return {parsed && worst < 1e-3 && clamps,
          fmt("10^4 grid max error %.2e, boundary clamps %s", worst, clamps ? "exact" : "WRONG")};
}

Outcome pairing_arithmetic() {
  int cases = 0, bad = 0;
  for (int n = 1; n <= 68; ++n) {
    for (int k = 1; k <= 8; ++k) {
      std::mt19937_64 rng(n * 100 + k);
      const auto g = fixed_round_pairing(n, k, rng);
      std::set<int> covered;
      for (const auto& grp : g) covered.insert(grp.begin(), grp.end());
      ++cases;
      if (static_cast<int>(g.size()) != (n + k - 1) / k || static_cast<int>(covered.size()) != n) ++bad;
    }
  }
  int dyn_bad = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    for (int n : {8, 15, 17, 68}) {
      std::mt19937_64 rng(seed);
      const auto g = dynamic_round_pairing(n, rng, 1, 8);
      std::set<int> covered;
      for (const auto& grp : g) {
        covered.insert(grp.begin(), grp.end());
        if (grp.empty() || grp.size() > 8) ++dyn_bad;
      }
      if (static_cast<int>(covered.size()) != n) ++dyn_bad;
    }
  }
  return {bad == 0 && dyn_bad == 0,
          fmt("fixed: %d/%d (K,k) cases exact; dynamic: %d violations over 100 seeds", cases - bad, cases, dyn_bad)};
}

Outcome mpck_definition() {
  const double m = mpck_of({78.43, 91.34, 95.26, 96.98, 97.90});
  return {std::abs(m - 91.98) <= 0.005, fmt("mean of the round-k row = %.4f (printed 91.98)", m)};
}

Outcome memorization(const fs::path& dir) {
  const auto t0 = std::chrono::steady_clock::now();
  SyntheticConfig sc;
  sc.n_categories = 4;
  sc.images_per_category = 10;
  sc.seed = 2;
  fs::remove_all(dir);
  const Dataset ds = generate_synthetic(sc, dir);
  const auto samples = first_n(ds.in_partition("train"), 10);
  std::vector<Tensor<float>> images;
  for (const auto* s : samples) images.push_back(ds.image(*s));
  const auto vocab = Vocabulary::standard();
  const CoordinateCodec codec;
  const auto tpl = PromptTemplates::defaults();

  ModelConfig mc;
  mc.vision.width = 32;
  mc.vision.depth = 1;
  mc.width = 64;
  mc.depth = 2;
  mc.vocab_size = vocab.size();
  mc.seed = 1;
  Model<float> model(mc);
  // Full-batch steps: one optimizer step per pass over the 10 samples.
  TrainConfig tc;
  tc.lr = 2e-3;
  tc.epochs = 200;
  tc.accumulation = 10;
  tc.warmup_fraction = 0;
  tc.seed = 3;
  long first_perfect = -1;
  double last = 0, best = 0;
  TrainContext ctx{vocab, codec, tpl};
  ctx.on_epoch = [&](const TrainState& st) {
    if (st.step < 100 || st.step % 5 != 0) return;
    last = evaluate(model, ds, samples, EvalMode::only_query_images(), EvalOptions{}, tpl, vocab, codec).overall.pck[3];
    best = std::max(best, last);
    if (last == 1.0 && first_perfect < 0) first_perfect = st.step;
  };
  const auto st = train(model, tc, samples, images, ds.registry, ctx);
  const double t = seconds_since(t0);
  // Greedy first-digit flips make the curve oscillate near the top, so the
  // criterion is the first evaluation reaching 1.0; the final value is shown too.
  return {first_perfect > 0 && first_perfect <= 200 && t < 300,
          fmt("%zu samples, training PCK@0.2 first reached %.3f at step %ld (checked every 5 steps from 100); "
              "%.3f after step %ld; %.0f s",
              samples.size(), best, first_perfect, last, st.step, t)};
}

Outcome generalization(const DeskScale& d) {
  const auto t0 = std::chrono::steady_clock::now();
  const double base = center_pck(d.test);
  const auto fixed = d.eval(d.fit(PairingStrategy::Fixed));
  const auto subset = d.eval(d.fit(PairingStrategy::LocLLMStyle));
  const double t = seconds_since(t0);
  const double margin = fixed.overall.pck[3] - base;
  std::printf("    held-out fixed:\n%s    held-out locllm_style:\n%s", report_table(fixed).c_str(),
              report_table(subset).c_str());
  return {margin >= 0.20 && fixed.overall.mpck > subset.overall.mpck && t <= 45 * 60,
          fmt("held-out PCK@0.2 %.2f vs measured center baseline %.2f (+%.1f points); mPCK fixed %.2f vs "
              "locllm_style %.2f; %.0f s",
              100 * fixed.overall.pck[3], 100 * base, 100 * margin, 100 * fixed.overall.mpck, 100 * subset.overall.mpck, t)};
}

Outcome baseline_oracle() {
  std::mt19937_64 rng(31337);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<PoseSample> samples(100000);
  std::vector<Prediction> preds;
  for (int i = 0; i < static_cast<int>(samples.size()); ++i) {
    auto& s = samples[i];
    s.id = i;
    s.category = "uniform";
    s.bbox = {0, 0, 1, 1};
    s.crop = {0, 0, 1, 1};
    for (int k = 0; k < 10; ++k) {
      s.keypoints.push_back({u(rng), u(rng), true});
      preds.push_back({i, k, 0.5, 0.5});
    }
  }
  std::vector<const PoseSample*> ptrs;
  for (const auto& s : samples) ptrs.push_back(&s);
  const double library = pck(preds, ptrs, 0.2);
  const double oracle = capellm::testing::center_baseline_monte_carlo(1000000, 4242);
  return {std::abs(library - oracle) <= 0.01, fmt("library %.4f vs Monte-Carlo %.4f (10^6 draws)", library, oracle)};
}

Outcome cumulative(const DeskScale& d) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto model = d.fit(PairingStrategy::Dynamic);
  InferenceOptions single, cum;
  cum.mode = InferenceMode::Cumulative;
  int pairs = 0, grow = 0, truncated = 0, equal = 0, checked = 0;
  for (const auto* s : first_n(d.test, 20)) {
    const auto img = d.ds.image(*s);
    const auto& specs = d.ds.registry.category(s->category);
    std::vector<int> order(specs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    const auto r = infer_keypoints(model, img, specs, order, cum, d.tpl, d.vocab, d.codec, s->id);
    for (std::size_t i = 1; i < r.size(); ++i) {
      if (r[i].truncated) {
        ++truncated;
        continue;
      }
      ++pairs;
      grow += r[i].context_tokens > r[i - 1].context_tokens;
    }
    for (int kp : order) {
      const auto a = infer_keypoints(model, img, specs, {kp}, single, d.tpl, d.vocab, d.codec, s->id);
      const auto b = infer_keypoints(model, img, specs, {kp}, cum, d.tpl, d.vocab, d.codec, s->id);
      ++checked;
      equal += a[0].answer == b[0].answer && a[0].x == b[0].x && a[0].y == b[0].y;
    }
  }
  const auto rs = d.eval(model, InferenceMode::Single);
  const auto rc = d.eval(model, InferenceMode::Cumulative);
  const double t = seconds_since(t0);
  return {pairs > 0 && grow == pairs && equal == checked,
          fmt("context grew on %d/%d consecutive queries (%d later queries hit the context cap and were "
              "truncated); one-keypoint Single==Cumulative on %d/%d; directional (not gated): dynamic-trained "
              "mPCK Single %.2f, Cumulative %.2f; %.0f s",
              grow, pairs, truncated, equal, checked, 100 * rs.overall.mpck, 100 * rc.overall.mpck, t)};
}

std::vector<long> draw_counts(const std::vector<double>& p, const DecodeStrategy& s, std::uint64_t seed) {
  std::vector<double> logits;
  for (double v : p) logits.push_back(std::log(v));
  std::mt19937_64 rng(seed);
  std::vector<long> counts(p.size(), 0);
  for (int i = 0; i < 100000; ++i) ++counts[decode_next(logits, s, rng)];
  return counts;
}

Outcome decoding_fidelity() {
  namespace ct = capellm::testing;
  const std::vector<double> p = {0.5, 0.3, 0.15, 0.05};
  const double pt = ct::chi_square_p_value(draw_counts(p, DecodeStrategy::sampling(0.6), 11), ct::tempered(p, 0.6));
  const double pk = ct::chi_square_p_value(draw_counts(p, DecodeStrategy::topk(3), 12), ct::kept_largest(p, 3));
  const double pn = ct::chi_square_p_value(draw_counts(p, DecodeStrategy::nucleus(0.92), 13), ct::nucleus_of(p, 0.92));

  ModelConfig c;
  c.vision = {16, 4, 8, 1, 2};
  c.width = 16;
  c.depth = 1;
  c.heads = 2;
  c.context = 256;
  c.mlp_ratio = 2;
  c.vocab_size = Vocabulary::standard().size();
  c.init_std = 0.3;
  c.seed = 5;
  const Model<float> m(c);
  const auto vocab = Vocabulary::standard();
  const CoordinateCodec codec;
  const auto prompt = vocab.encode("Where is the left eye?");
  int same = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 r1(seed), r2(seed + 1000);
    const auto img = noise_image(16, seed);
    same += generate_answer(m, img, prompt, DecodeStrategy::greedy(), true, vocab, codec, r1).tokens ==
            generate_answer(m, img, prompt, DecodeStrategy::topk(1), true, vocab, codec, r2).tokens;
  }
  return {pt > 0.01 && pk > 0.01 && pn > 0.01 && same == 20,
          fmt("chi-square p: temperature %.3f, top-k %.3f, nucleus %.3f; TopK(1)==Greedy on %d/20", pt, pk, pn, same)};
}

Outcome density_suite() {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0, 0.07);
  std::vector<Point> pts;
  while (pts.size() < 500) {
    const Point q{0.45 + n(rng), 0.55 + n(rng)};
    if (q[0] >= 0 && q[0] < 1 && q[1] >= 0 && q[1] < 1) pts.push_back(q);
  }
  const auto interior = kde(pts, 128);

  // Edge fixture: ground truth on the left border, foreground the left half,
  // samples inside the square near the border.
  Tensor<float> mask({64, 64});
  for (int r = 0; r < 64; ++r) {
    for (int c = 0; c < 32; ++c) mask(r, c) = 1;
  }
  const Point gt{0.01, 0.5};
  std::vector<Point> edge;
  std::normal_distribution<double> e(0, 0.03);
  while (edge.size() < 256) {
    const Point q{0.06 + e(rng), 0.5 + e(rng)};
    if (q[0] >= 0 && q[0] < 0.45 && q[1] >= 0 && q[1] < 1) edge.push_back(q);
  }
  const auto rep = density_report(kde(edge, 128), gaussian_baseline(gt, 0.05, 128), gt, &mask);
  const double g_in = rep["gaussian"]["in_square_mass"].get<double>();
  const double k_in = rep["kde"]["in_square_mass"].get<double>();
  const bool ok = std::abs(interior.raw_mass - 1) <= 0.02 && std::abs(interior.mass() - 1) <= 0.02 && g_in < 0.60 &&
                  std::abs(k_in - 1.0) < 1e-9;
  return {ok, fmt("G=128 KDE quadrature mass %.4f (stored grid %.6f); edge fixture in-square mass: Gaussian %.3f, "
                  "KDE %.3f (raw quadrature %.3f)",
                  interior.raw_mass, interior.mass(), g_in, k_in, rep["kde"].value("raw_mass", k_in))};
}

Outcome determinism(const fs::path& dir) {
  auto run = [&](const fs::path& out) {
    fs::remove_all(out);
    nlohmann::json j = nlohmann::json::object();
    for (const std::string o :
         {"seed=21", "model.image_size=32", "model.patch=8", "model.C=16", "model.encoder_depth=1",
          "model.encoder_heads=2", "model.D=32", "model.depth=1", "model.heads=2", "train.epochs=2",
          "train.accumulation=4", "train.lr=0.002", "data.synthetic.n_categories=4",
          "data.synthetic.images_per_category=6", "data.synthetic.image_size=32", "decode.strategy.kind=nucleus",
          "decode.strategy.p=0.9"}) {
      apply_override(j, o);
    }
    j["output_dir"] = out.string();
    RunContext ctx(run_config_from_json(j));
    run_synth_gen(ctx);
    run_train(ctx);
    run_eval(ctx, ctx.default_checkpoint());
  };
  run(dir / "a");
  run(dir / "b");
  int same = 0, total = 0;
  for (const char* f : {"eval/report.json", "eval/predictions.jsonl", "eval/report.txt", "model.ckpt",
                        "data/dataset.json", "train_summary.json"}) {
    ++total;
    const auto a = slurp(dir / "a" / f);
    same += !a.empty() && a == slurp(dir / "b" / f);
  }
  return {same == total, fmt("%d/%d artifacts byte-identical across two synth-gen -> train -> eval runs", same, total)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria 1-12"};
  std::string workdir = "acceptance_runs";
  std::vector<int> only;
  app.add_option("--workdir", workdir, "scratch directory for datasets and runs");
  app.add_option("--only", only, "run just these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  const fs::path root = fs::absolute(workdir);
  fs::create_directories(root);

  std::unique_ptr<DeskScale> desk;
  auto desk_scale = [&]() -> const DeskScale& {
    if (!desk) desk = std::make_unique<DeskScale>(root / "desk_scale");
    return *desk;
  };
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient suite", gradient_suite},
      {"posterior normalization", posterior_normalization},
      {"codec round trip", codec_round_trip},
      {"pairing arithmetic", pairing_arithmetic},
      {"mPCK definition", mpck_definition},
      {"memorization oracle", [&] { return memorization(root / "memorize"); }},
      {"desk-scale generalization", [&] { return generalization(desk_scale()); }},
      {"baseline oracle", baseline_oracle},
      {"cumulative reasoning mechanics", [&] { return cumulative(desk_scale()); }},
      {"decoding fidelity", decoding_fidelity},
      {"density suite", density_suite},
      {"determinism", [&] { return determinism(root / "determinism"); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %2d %s  %s: %s\n", id, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
