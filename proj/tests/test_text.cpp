#include <gtest/gtest.h>

#include <random>

#include "capellm/decode/generate.hpp"

using namespace capellm;

namespace {

ModelConfig tiny_model_config(int vocab, std::uint64_t seed) {
  ModelConfig c;
  c.vision = {8, 4, 8, 1, 2};
  c.width = 8;
  c.depth = 1;
  c.heads = 2;
  c.context = 64;
  c.mlp_ratio = 2;
  c.vocab_size = vocab;
  c.adapter_rank = 0;
  c.init_std = 0.5;  // large init so the digit distributions are far from uniform
  c.seed = seed;
  return c;
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

}  // namespace

TEST(Vocabulary, DigitsAreConsecutiveAndRoundTripHolds) {
  const auto v = Vocabulary::standard();
  for (int d = 0; d < 10; ++d) EXPECT_EQ(v.id_of(static_cast<char>('0' + d)), Vocabulary::kDigitZero + d);
  const std::string text = "Where is the topmost vertex? [0.123, 0.456] (left-most/right) & it's fine!";
  EXPECT_EQ(v.decode(v.encode(text)), text);
  for (int id : v.encode(text)) EXPECT_LT(id, v.size());
}

TEST(Vocabulary, JsonIsTheSymbolArray) {
  const auto v = Vocabulary::standard();
  const auto j = v.to_json();
  ASSERT_TRUE(j.is_array());
  EXPECT_EQ(j[0], "<pad>");
  EXPECT_EQ(j[4], "<sep-assistant>");
  EXPECT_EQ(j[5], "0");
  EXPECT_EQ(Vocabulary::from_json(j).symbols(), v.symbols());
}

TEST(Vocabulary, UncoveredCharacterIsADomainError) {
  EXPECT_THROW(Vocabulary::standard().encode("caf\xc3\xa9"), DomainError);
}

TEST(Vocabulary, DuplicateOrMisplacedSymbolsRejected) {
  auto s = Vocabulary::standard().symbols();
  s.push_back("a");
  EXPECT_THROW(Vocabulary{s}, ConfigError);
  auto t = Vocabulary::standard().symbols();
  std::swap(t[5], t[6]);
  EXPECT_THROW(Vocabulary{t}, ConfigError);
}

TEST(Codec, EncodesTemplateInstances) {
  const CoordinateCodec c;
  EXPECT_EQ(c.encode(0.123, 0.456), "[0.123, 0.456]");
  EXPECT_EQ(c.encode(1.0, 0.0), "[0.999, 0.000]");
  EXPECT_EQ(c.encode(0.29, 0.9999), "[0.290, 0.999]");
  EXPECT_EQ(c.blank(), "[0.___, 0.___]");
  EXPECT_EQ(c.answer_length(), 14u);
}

TEST(Codec, RejectsNegativeAndNonFinite) {
  const CoordinateCodec c;
  EXPECT_THROW(c.encode(-0.1, 0.5), DomainError);
  EXPECT_THROW(c.encode(0.5, std::nan("")), DomainError);
  EXPECT_THROW(c.encode(INFINITY, 0.5), DomainError);
}

TEST(Codec, ParsesFirstMatchAndReportsFailures) {
  const CoordinateCodec c;
  auto p = c.parse("[0.500, 0.250]");
  ASSERT_TRUE(p.ok);
  EXPECT_DOUBLE_EQ(p.x, 0.5);
  EXPECT_DOUBLE_EQ(p.y, 0.25);
  p = c.parse("answer: [0.120, 0.340].");
  ASSERT_TRUE(p.ok);
  EXPECT_DOUBLE_EQ(p.x, 0.12);
  EXPECT_DOUBLE_EQ(p.y, 0.34);
  p = c.parse("[0.5, 0.25]");
  EXPECT_FALSE(p.ok);
  EXPECT_EQ(p.offending, "[0.5, 0.25]");
  EXPECT_FALSE(c.parse("no coordinates here").ok);
}

TEST(Codec, TenThousandPointGridMatchesIntegerTruncation) {
  // Grid x = i / 10^4: the truncated value is floor(i / 10) / 1000, computed
  // in exact integer arithmetic.
  const CoordinateCodec c;
  for (int i = 0; i < 10000; ++i) {
    const double x = i / 10000.0;
    const double y = (9999 - i) / 10000.0;
    const auto p = c.parse(c.encode(x, y));
    ASSERT_TRUE(p.ok);
    EXPECT_EQ(p.x_digits, digits_of(i / 10, 3));
    EXPECT_EQ(p.y_digits, digits_of((9999 - i) / 10, 3));
    EXPECT_LT(std::abs(p.x - x), 1e-3);
    EXPECT_LT(std::abs(p.y - y), 1e-3);
  }
}

TEST(Codec, TokenRoundTripForEveryDigitCount) {
  const auto v = Vocabulary::standard();
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0, 1);
  for (int k = 1; k <= 5; ++k) {
    const CoordinateCodec c(k);
    const double res = std::pow(10.0, -k);
    for (int t = 0; t < 500; ++t) {
      const double x = u(rng), y = u(rng);
      const auto p = c.parse(v.decode_text(v.encode(c.encode(x, y))));
      ASSERT_TRUE(p.ok) << k;
      EXPECT_LE(p.x, x + 1e-12);
      EXPECT_GT(p.x, x - res);
      EXPECT_LE(p.y, y + 1e-12);
      EXPECT_GT(p.y, y - res);
    }
  }
}

TEST(Codec, TemplateMustHaveTwoPlaceholders) {
  EXPECT_THROW(CoordinateCodec(3, "(%s)"), ConfigError);
  EXPECT_THROW(CoordinateCodec(0), ConfigError);
  const CoordinateCodec alt(2, "(%s; %s)");
  EXPECT_EQ(alt.encode(0.25, 0.5), "(25; 50)");
  EXPECT_TRUE(alt.parse("(25; 50)").ok);
}

TEST(Posterior, UniformDigitSourceGivesTenToMinusK) {
  const auto v = Vocabulary::standard();
  const CoordinateCodec c;
  LogitSource uniform = [&](std::span<const int>) {
    std::vector<double> l(v.size(), -50.0);
    for (int d = 0; d < 10; ++d) l[Vocabulary::digit_id(d)] = 0.0;
    return l;
  };
  const auto p = coord_posterior(uniform, {}, c, "123", "987", v);
  EXPECT_NEAR(p.x, 1e-3, 1e-15);
  EXPECT_NEAR(p.y, 1e-3, 1e-15);
  EXPECT_NEAR(p.joint, 1e-6, 1e-18);
}

TEST(Posterior, DegenerateSourceSelectsOneString) {
  const auto v = Vocabulary::standard();
  const CoordinateCodec c;
  LogitSource sevens = [&](std::span<const int>) {
    std::vector<double> l(v.size(), -std::numeric_limits<double>::infinity());
    l[Vocabulary::digit_id(7)] = 0.0;
    return l;
  };
  EXPECT_DOUBLE_EQ(coord_posterior(sevens, {}, c, "777", "777", v).joint, 1.0);
  EXPECT_DOUBLE_EQ(coord_posterior(sevens, {}, c, "777", "770", v).y, 0.0);
}

TEST(Posterior, ScaffoldingIsFedButNotMultiplied) {
  const auto v = Vocabulary::standard();
  const CoordinateCodec c;
  std::vector<std::vector<int>> seen;
  LogitSource probe = [&](std::span<const int> prefix) {
    seen.emplace_back(prefix.begin(), prefix.end());
    return std::vector<double>(v.size(), 0.0);
  };
  coord_posterior(probe, {}, c, "123", "456", v);
  ASSERT_EQ(seen.size(), 6u);
  EXPECT_EQ(v.decode(seen[0]), "[0.");
  EXPECT_EQ(v.decode(seen[3]), "[0.123, 0.");
  EXPECT_EQ(v.decode(seen[5]), "[0.123, 0.45");
}

TEST(Posterior, BruteForceSumsToOneOnRandomTinyModel) {
  const auto v = Vocabulary::standard();
  Model<double> model(tiny_model_config(v.size(), 21));
  const auto source = model_logit_source(model, noise_image(8, 4));
  const std::vector<int> prompt = v.encode("Where?");
  for (int k = 1; k <= 3; ++k) {
    const CoordinateCodec c(k);
    const int n = static_cast<int>(std::pow(10, k));
    double sx = 0, sy = 0;
    const std::string fixed = digits_of(n / 3, k);
    for (int i = 0; i < n; ++i) {
      sx += coord_posterior(source, prompt, c, digits_of(i, k), fixed, v).x;
      sy += coord_posterior(source, prompt, c, fixed, digits_of(i, k), v).y;
    }
    EXPECT_NEAR(sx, 1.0, 1e-9) << "K=" << k;
    EXPECT_NEAR(sy, 1.0, 1e-9) << "K=" << k;
  }
}
