#include <gtest/gtest.h>

#include <random>

#include "capellm/density/density.hpp"

using namespace capellm;

namespace {

double phi(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Mass a product-Gaussian kernel mixture keeps inside the unit square.
double kernel_mass_in_square(const std::vector<Point>& pts, double hx, double hy) {
  double m = 0;
  for (const auto& p : pts) {
    m += (phi((1 - p[0]) / hx) - phi(-p[0] / hx)) * (phi((1 - p[1]) / hy) - phi(-p[1] / hy));
  }
  return m / static_cast<double>(pts.size());
}

std::vector<Point> cluster(Point c, double sd, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0, sd);
  std::vector<Point> out;
  while (static_cast<int>(out.size()) < n) {
    const Point p{c[0] + d(rng), c[1] + d(rng)};
    if (p[0] >= 0 && p[0] < 1 && p[1] >= 0 && p[1] < 1) out.push_back(p);
  }
  return out;
}

int local_maxima(const DensityGrid& g) {
  int count = 0;
  const int n = g.resolution;
  for (int r = 1; r + 1 < n; ++r) {
    for (int c = 1; c + 1 < n; ++c) {
      bool peak = true;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          if ((dr || dc) && g.at(r + dr, c + dc) >= g.at(r, c)) peak = false;
        }
      }
      count += peak;
    }
  }
  return count;
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.vision = {8, 4, 8, 1, 2};
  c.width = 8;
  c.depth = 1;
  c.heads = 2;
  c.context = 64;
  c.mlp_ratio = 2;
  c.vocab_size = Vocabulary::standard().size();
  c.adapter_rank = 0;
  return c;
}

// Every parameter zero: all logits vanish, so digits are uniform.
Model<float> uniform_digit_model() {
  Model<float> m(tiny_config());
  for (auto& p : m.parameters()) {
    for (auto& v : p.mutable_value().values()) v = 0;
  }
  return m;
}

}  // namespace

TEST(Kde, QuadratureMassMatchesTheErfOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto pts = cluster({0.3 + 0.1 * seed, 0.55}, 0.08, 256, seed);
    const auto g = kde(pts, 128);
    EXPECT_NEAR(g.raw_mass, kernel_mass_in_square(pts, g.bandwidth_x, g.bandwidth_y), 1e-3);
    EXPECT_NEAR(g.raw_mass, 1.0, 0.02);
    EXPECT_NEAR(g.mass(), 1.0, 1e-9);
    for (double v : g.values) EXPECT_GE(v, 0.0);
  }
}

TEST(Kde, BandwidthFollowsScottsRule) {
  const auto pts = cluster({0.5, 0.5}, 0.1, 300, 4);
  double mx = 0, my = 0;
  for (const auto& p : pts) {
    mx += p[0];
    my += p[1];
  }
  mx /= 300;
  my /= 300;
  double vx = 0, vy = 0;
  for (const auto& p : pts) {
    vx += (p[0] - mx) * (p[0] - mx);
    vy += (p[1] - my) * (p[1] - my);
  }
  const auto g = kde(pts, 64);
  EXPECT_NEAR(g.bandwidth_x, std::pow(300.0, -1.0 / 6) * std::sqrt(vx / 299), 1e-12);
  EXPECT_NEAR(g.bandwidth_y, std::pow(300.0, -1.0 / 6) * std::sqrt(vy / 299), 1e-12);
  EXPECT_EQ(kde(std::vector<Point>(10, Point{0.4, 0.4}), 64).bandwidth_x, kMinBandwidth);
}

TEST(Kde, SingleKernelPeaksAtItsCell) {
  const auto g = kde({{0.5, 0.5}}, 127, 0.05);
  const auto m = grid_metrics(g, {0.5, 0.5}, nullptr);
  EXPECT_EQ(m.mode_row, 63);
  EXPECT_EQ(m.mode_col, 63);
}

TEST(Kde, TwoSeparatedClustersGiveTwoModes) {
  auto pts = cluster({0.2, 0.2}, 0.03, 150, 1);
  const auto other = cluster({0.8, 0.7}, 0.03, 150, 2);
  pts.insert(pts.end(), other.begin(), other.end());
  EXPECT_EQ(local_maxima(kde(pts, 128, 0.04)), 2);
  EXPECT_EQ(local_maxima(gaussian_baseline({0.3, 0.6}, 0.05)), 1);
}

TEST(Kde, SampleOrderDoesNotChangeAnyBit) {
  auto pts = cluster({0.4, 0.6}, 0.1, 200, 7);
  const auto a = kde(pts, 128);
  std::mt19937_64 rng(1);
  std::shuffle(pts.begin(), pts.end(), rng);
  const auto b = kde(pts, 128);
  EXPECT_EQ(a.values, b.values);
  EXPECT_EQ(a.bandwidth_x, b.bandwidth_x);
}

TEST(Kde, RefusesEmptyOrUnderdeterminedInput) {
  EXPECT_THROW(kde({}, 128), PreconditionError);
  EXPECT_THROW(kde({{0.5, 0.5}}, 128), PreconditionError);
  EXPECT_THROW(kde({{0.5, 0.5}, {0.4, 0.4}}, 0), ConfigError);
}

TEST(GaussianBaseline, CenterKeepsAllMassEdgeLosesAboutHalfAnAxis) {
  EXPECT_NEAR(gaussian_baseline({0.5, 0.5}, 0.05).mass(), 1.0, 1e-3);
  const double edge = gaussian_baseline({0.01, 0.5}, 0.05).mass();
  const double oracle = (phi(0.99 / 0.05) - phi(-0.01 / 0.05)) * (phi(0.5 / 0.05) - phi(-0.5 / 0.05));
  EXPECT_NEAR(edge, oracle, 2e-3);
  EXPECT_NEAR(edge, 0.58, 0.01);
  EXPECT_THROW(gaussian_baseline({0.5, 0.5}, 0.0), ConfigError);
}

TEST(GaussianBaseline, ModeIsTheGroundTruthCell) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.001, 0.999);
  for (int i = 0; i < 50; ++i) {
    const Point gt{u(rng), u(rng)};
    const auto m = grid_metrics(gaussian_baseline(gt, 0.05, 128), gt, nullptr);
    EXPECT_EQ(m.mode_col, static_cast<int>(gt[0] * 128));
    EXPECT_EQ(m.mode_row, static_cast<int>(gt[1] * 128));
  }
}

TEST(Report, EdgeKeypointFixtureContrastsTheTwoMethods) {
  // Foreground: left half of the image. Ground truth on the left border;
  // every sample lies inside the foreground.
  Tensor<float> mask({64, 64});
  for (int r = 0; r < 64; ++r) {
    for (int c = 0; c < 32; ++c) mask(r, c) = 1;
  }
  const Point gt{0.01, 0.5};
  std::vector<Point> pts;
  for (const auto& p : cluster({0.06, 0.5}, 0.03, 256, 3)) {
    if (p[0] < 0.45) pts.push_back(p);
  }
  const auto rep = density_report(kde(pts, 128), gaussian_baseline(gt, 0.05, 128), gt, &mask);
  EXPECT_LT(rep["gaussian"]["in_square_mass"].get<double>(), 0.60);
  EXPECT_NEAR(rep["kde"]["in_square_mass"].get<double>(), 1.0, 1e-9);
  EXPECT_GE(rep["kde"]["in_foreground_mass"].get<double>(), rep["gaussian"]["in_foreground_mass"].get<double>());
  EXPECT_GT(rep["kde"]["in_foreground_mass"].get<double>(), 0.99);
}

TEST(Report, IdenticalGridsIdenticalMetricsAndMaskRules) {
  const auto g = gaussian_baseline({0.3, 0.3}, 0.05, 64);
  const auto rep = density_report(g, g, {0.3, 0.3});
  EXPECT_EQ(rep["kde"], rep["gaussian"]);
  EXPECT_FALSE(rep["kde"].contains("in_foreground_mass"));
  Tensor<float> empty({16, 16});
  EXPECT_FALSE(density_report(g, g, {0.3, 0.3}, &empty)["kde"].contains("in_foreground_mass"));
  EXPECT_THROW(density_report(g, gaussian_baseline({0.3, 0.3}, 0.05, 32), {0.3, 0.3}), DimensionError);
}

TEST(Sampling, GreedyIsRefusedAsZeroVariance) {
  const auto m = uniform_digit_model();
  const auto vocab = Vocabulary::standard();
  try {
    sample_keypoint(m, Tensor<float>({8, 8, 3}), vocab.encode("Where?"), DecodeStrategy::greedy(), 8, 0, vocab,
                    CoordinateCodec());
    FAIL();
  } catch (const PreconditionError& e) {
    EXPECT_NE(std::string(e.what()).find("zero-variance"), std::string::npos);
  }
  EXPECT_TRUE(sample_keypoint(m, Tensor<float>({8, 8, 3}), vocab.encode("Where?"), DecodeStrategy::sampling(0.6), 0, 0,
                              vocab, CoordinateCodec())
                  .points.empty());
}

TEST(Sampling, DegenerateModelRepeatsOnePoint) {
  auto m = uniform_digit_model();
  for (auto& v : m.parameters().get("lm.ln_f.shift").mutable_value().values()) v = 1;
  auto& head = m.parameters().get("head.weight").mutable_value();
  for (int r = 0; r < head.rows(); ++r) head(r, Vocabulary::digit_id(7)) = 100;
  const auto vocab = Vocabulary::standard();
  const auto s = sample_keypoint(m, Tensor<float>({8, 8, 3}), vocab.encode("Where?"), DecodeStrategy::sampling(0.6),
                                 32, 1, vocab, CoordinateCodec());
  ASSERT_EQ(s.points.size(), 32u);
  for (const auto& p : s.points) {
    EXPECT_DOUBLE_EQ(p[0], 0.777);
    EXPECT_DOUBLE_EQ(p[1], 0.777);
  }
}

TEST(Sampling, UniformDigitModelMeanWithinThreeSigma) {
  // Uniform over {0.000, ..., 0.999}: mean 0.4995, variance (1000^2 - 1) / 12 / 1000^2.
  const auto m = uniform_digit_model();
  const auto vocab = Vocabulary::standard();
  const double sigma = std::sqrt((1e6 - 1) / 12.0) / 1000.0;
  double prev_dev = 1;
  for (int count : {400, 6400}) {
    const auto s = sample_keypoint(m, Tensor<float>({8, 8, 3}), vocab.encode("Where?"), DecodeStrategy::sampling(1.0),
                                   count, 11, vocab, CoordinateCodec());
    double mx = 0, my = 0;
    for (const auto& p : s.points) {
      mx += p[0];
      my += p[1];
    }
    mx /= count;
    my /= count;
    const double bound = 3 * sigma / std::sqrt(static_cast<double>(count));
    EXPECT_LT(std::abs(mx - 0.4995), bound) << count;
    EXPECT_LT(std::abs(my - 0.4995), bound) << count;
    prev_dev = std::max(std::abs(mx - 0.4995), std::abs(my - 0.4995));
  }
  EXPECT_LT(prev_dev, 3 * sigma / 80.0);
}

TEST(Sampling, SameSeedSameSamples) {
  const auto m = uniform_digit_model();
  const auto vocab = Vocabulary::standard();
  auto draw = [&](std::uint64_t seed) {
    return sample_keypoint(m, Tensor<float>({8, 8, 3}), vocab.encode("Where?"), DecodeStrategy::nucleus(0.92), 20,
                           seed, vocab, CoordinateCodec())
        .points;
  };
  EXPECT_EQ(draw(3), draw(3));
  EXPECT_NE(draw(3), draw(4));
}

TEST(Serialization, CsvAndPgmLayouts) {
  const auto dir = std::filesystem::temp_directory_path() / "capellm_density_io";
  std::filesystem::create_directories(dir);
  DensityGrid g;
  g.resolution = 2;
  g.values = {0.0, 1.5, 3.0, 0.25};
  write_grid_csv(dir / "g.csv", g);
  write_grid_pgm(dir / "g.pgm", g);
  std::ifstream csv(dir / "g.csv");
  std::stringstream ss;
  ss << csv.rdbuf();
  EXPECT_EQ(ss.str(), "0,1.5\n3,0.25\n");
  std::ifstream pgm(dir / "g.pgm", std::ios::binary);
  std::stringstream ps;
  ps << pgm.rdbuf();
  EXPECT_EQ(ps.str(), std::string("P5\n2 2\n255\n\x00\x80\xff\x15", 15));
}
