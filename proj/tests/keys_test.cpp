#include "drw/keys.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "drw/error.hpp"
#include "drw/json_io.hpp"
#include "json.hpp"
#include "test_util.hpp"

namespace drw {
namespace {

KeySpec small_spec(std::uint64_t seed = 7) {
  KeySpec s;
  s.classes = 2;
  s.vocab_size = 100;
  s.dim = 128;
  s.frequency = 16.0;
  s.target_class = 0;
  s.seed = seed;
  return s;
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no drw::Error thrown";
  return ErrorKind::kIo;
}

TEST(GenerateKey, DeterministicPerSeed) {
  EXPECT_EQ(generate_key(small_spec(7)), generate_key(small_spec(7)));
  EXPECT_NE(generate_key(small_spec(7)), generate_key(small_spec(8)));
}

TEST(GenerateKey, ShapesAndRanges) {
  const auto key = generate_key(small_spec());
  EXPECT_EQ(key.token_matrix.size(), 100u * 128u);
  for (double v : key.phase_vector) {
    EXPECT_GE(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  for (double v : key.selection_vector) {
    EXPECT_GE(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  EXPECT_NO_THROW(key.validate());
}

TEST(GenerateKey, PosTaggingConfiguration) {
  KeySpec s;
  s.classes = 47;
  s.vocab_size = 30522;
  s.target_class = 22;
  s.seed = 1;
  const auto key = generate_key(s);
  EXPECT_EQ(key.target_class, 22u);
  EXPECT_EQ(key.token_matrix.size(), 30522u * 128u);
}

TEST(GenerateKey, RejectsBadSpecs) {
  auto with = [](auto mutate) {
    KeySpec s = small_spec();
    mutate(s);
    return kind_of([&] { generate_key(s); });
  };
  EXPECT_EQ(with([](KeySpec& s) { s.classes = 1; }), ErrorKind::kInvalidDimension);
  EXPECT_EQ(with([](KeySpec& s) { s.vocab_size = 0; }), ErrorKind::kInvalidDimension);
  EXPECT_EQ(with([](KeySpec& s) { s.dim = 0; }), ErrorKind::kInvalidDimension);
  EXPECT_EQ(with([](KeySpec& s) { s.target_class = 2; }), ErrorKind::kInvalidDimension);
  EXPECT_EQ(with([](KeySpec& s) { s.frequency = 0.0; }), ErrorKind::kInvalidDimension);
}

TEST(GenerateKey, MatrixMomentsMatchStandardNormal) {
  KeySpec s = small_spec(3);
  s.vocab_size = 7813;  // 7813 * 128 > 10^6 entries
  const auto key = generate_key(s);
  const auto& m = key.token_matrix;
  double sum = 0.0, sq = 0.0;
  for (double v : m) {
    sum += v;
    sq += v * v;
  }
  const double n = static_cast<double>(m.size());
  const double mu = sum / n;
  EXPECT_NEAR(mu, 0.0, 0.005);
  EXPECT_NEAR(sq / n - mu * mu, 1.0, 0.01);
}

TEST(Hash, NormalCdfAgreesWithQuadrature) {
  for (double z = -6.0; z <= 6.0; z += 0.25) {
    EXPECT_NEAR(standard_normal_cdf(z), testing::normal_cdf_quadrature(z), 1e-10) << z;
  }
  EXPECT_NEAR(testing::normal_cdf_quadrature(1.0), 0.841345, 1e-6);
}

TEST(Hash, ZeroProjectionGivesHalf) {
  const auto key = generate_key(small_spec());
  const std::vector<double> zeros(key.dim, 0.0);
  EXPECT_EQ(hash_value(key, zeros, 5), 0.5);
}

TEST(Hash, UnitStandardisedProjection) {
  // One-token key whose row makes v . M_x / sqrt(n/3) exactly 1.
  WatermarkKey key = generate_key(small_spec());
  const double scale = std::sqrt(key.dim / 3.0);
  std::vector<double> v(key.dim, 0.0);
  v[0] = 0.5;
  key.token_matrix[0] = scale / 0.5;
  EXPECT_NEAR(hash_value(key, v, 0), testing::normal_cdf_quadrature(1.0), 1e-10);
}

TEST(Hash, OutOfVocabularyThrows) {
  const auto key = generate_key(small_spec());
  EXPECT_EQ(kind_of([&] { phase_hash(key, 100); }), ErrorKind::kOutOfVocabulary);
  EXPECT_EQ(kind_of([&] { is_selected(key, {}, 100); }), ErrorKind::kOutOfVocabulary);
  EXPECT_FALSE(is_selected_for_serving(key, {}, 100));
}

TEST(Hash, UniformOverTokens) {
  KeySpec s = small_spec(11);
  s.vocab_size = 10000;
  const auto key = generate_key(s);
  std::vector<double> g;
  for (TokenId x = 0; x < key.vocab_size; ++x) g.push_back(phase_hash(key, x));
  EXPECT_LT(testing::ks_uniform(g), 0.02);
}

TEST(Hash, ProjectionVarianceIsOneThird) {
  // The limit is over random v as well as random M_x, so every token gets a
  // fresh U[0,1)^n vector.
  KeySpec s = small_spec(12);
  s.vocab_size = 10000;
  const auto key = generate_key(s);
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> proj;
  for (TokenId x = 0; x < key.vocab_size; ++x) {
    const auto row = key.token_row(x);
    double dot = 0.0;
    for (std::size_t k = 0; k < key.dim; ++k) dot += u(rng) * row[k];
    proj.push_back(dot / std::sqrt(static_cast<double>(key.dim)));
  }
  EXPECT_NEAR(testing::mean(proj), 0.0, 0.01);
  EXPECT_NEAR(testing::variance(proj) * 3.0, 1.0, 0.05);
}

TEST(Hash, FixedKeyProjectionVariance) {
  // Given v, the projection is N(0, |v|^2 / n) over tokens.
  KeySpec s = small_spec(13);
  s.vocab_size = 10000;
  const auto key = generate_key(s);
  double norm2 = 0.0;
  for (double v : key.phase_vector) norm2 += v * v;
  std::vector<double> proj;
  for (TokenId x = 0; x < key.vocab_size; ++x) {
    const auto row = key.token_row(x);
    double dot = 0.0;
    for (std::size_t k = 0; k < key.dim; ++k) dot += key.phase_vector[k] * row[k];
    proj.push_back(dot / std::sqrt(static_cast<double>(key.dim)));
  }
  EXPECT_NEAR(testing::variance(proj) / (norm2 / key.dim), 1.0, 0.05);
}

TEST(Hash, PhaseSelectionCorrelationMatchesGaussianOracle) {
  // v_k and v_s share a positive mean, so the two projections of M_x are
  // jointly normal with correlation rho = v_k.v_s / (|v_k| |v_s|); for
  // Phi-transformed normals the Pearson correlation is (6/pi) asin(rho/2).
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    KeySpec s = small_spec(100 + seed);
    s.vocab_size = 5000;
    const auto key = generate_key(s);
    double kk = 0, ss = 0, ks = 0;
    for (std::size_t i = 0; i < key.dim; ++i) {
      kk += key.phase_vector[i] * key.phase_vector[i];
      ss += key.selection_vector[i] * key.selection_vector[i];
      ks += key.phase_vector[i] * key.selection_vector[i];
    }
    const double rho = ks / std::sqrt(kk * ss);
    const double oracle = 6.0 / std::numbers::pi * std::asin(rho / 2.0);

    std::vector<double> a, b;
    for (TokenId x = 0; x < key.vocab_size; ++x) {
      a.push_back(phase_hash(key, x));
      b.push_back(selection_hash(key, x));
    }
    const double ma = testing::mean(a), mb = testing::mean(b);
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      sab += (a[i] - ma) * (b[i] - mb);
      saa += (a[i] - ma) * (a[i] - ma);
      sbb += (b[i] - mb) * (b[i] - mb);
    }
    EXPECT_NEAR(sab / std::sqrt(saa * sbb), oracle, 0.05) << seed;
  }
}

TEST(Selection, ExtremesAndRatio) {
  KeySpec s = small_spec(21);
  s.vocab_size = 10000;
  const auto key = generate_key(s);
  std::size_t all = 0, none = 0, half = 0;
  for (TokenId x = 0; x < key.vocab_size; ++x) {
    all += is_selected(key, {0.2, 1.0}, x);
    none += is_selected(key, {0.2, 0.0}, x);
    half += is_selected(key, {0.2, 0.5}, x);
  }
  EXPECT_EQ(all, key.vocab_size);
  EXPECT_EQ(none, 0u);
  EXPECT_NEAR(half / 10000.0, 0.5, 0.02);
}

TEST(KeyIo, RoundTripIsBitExact) {
  testing::TempDir dir("keys");
  const auto key = generate_key(small_spec());
  save_key(dir.file("k.drw"), key, WatermarkConfig{0.1, 0.3});
  const KeyFile loaded = load_key_file(dir.file("k.drw"));
  EXPECT_EQ(loaded.key, key);
  ASSERT_TRUE(loaded.config);
  EXPECT_EQ(loaded.config->epsilon, 0.1);
  EXPECT_EQ(loaded.config->tau, 0.3);
  EXPECT_EQ(parse_key(serialize_key(key)).key, key);
  EXPECT_FALSE(parse_key(serialize_key(key)).config);
}

TEST(KeyIo, WrongRowCountNamesM) {
  auto doc = nlohmann::json::parse(serialize_key(generate_key(small_spec())));
  doc["M"].erase(doc["M"].begin());
  try {
    parse_key(doc.dump());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDimensionMismatch);
    EXPECT_NE(std::string(e.what()).find("M"), std::string::npos);
  }
}

TEST(KeyIo, CorruptFieldIsNamed) {
  auto doc = nlohmann::json::parse(serialize_key(generate_key(small_spec())));
  doc["v_s"] = "nope";
  try {
    parse_key(doc.dump());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kCorruptFile);
    EXPECT_NE(std::string(e.what()).find("v_s"), std::string::npos);
  }
  EXPECT_EQ(kind_of([] { parse_key("{not json"); }), ErrorKind::kCorruptFile);
  EXPECT_EQ(kind_of([] { load_key("/nonexistent/key.drw"); }), ErrorKind::kIo);
}

TEST(KeyIo, EntriesOutOfRangeRejected) {
  auto doc = nlohmann::json::parse(serialize_key(generate_key(small_spec())));
  doc["v_k"][3] = 1.0;
  EXPECT_THROW(parse_key(doc.dump()), Error);
}

TEST(KeyIo, SerializesSeventeenDigits) {
  const std::string text = serialize_key(generate_key(small_spec()));
  EXPECT_NE(text.find("\"f_w\": 1.6000000000000000e+01"), std::string::npos);
}

TEST(KeyIo, GoldenFileFromIndependentImplementation) {
  const auto key = load_key(std::string(DRW_TEST_DATA) + "/golden_key.json");
  EXPECT_EQ(key.classes, 3u);
  EXPECT_EQ(key.target_class, 1u);
  const auto golden =
      nlohmann::json::parse(read_file(std::string(DRW_TEST_DATA) + "/golden_hashes.json"));
  const auto tokens = golden["tokens"].get<std::vector<TokenId>>();
  const auto phase = golden["phase"].get<std::vector<double>>();
  const auto selection = golden["selection"].get<std::vector<double>>();
  ASSERT_EQ(tokens.size(), 100u);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    EXPECT_NEAR(phase_hash(key, tokens[i]), phase[i], 1e-12);
    EXPECT_NEAR(selection_hash(key, tokens[i]), selection[i], 1e-12);
  }
}

TEST(WatermarkConfigTest, Validation) {
  EXPECT_NO_THROW((WatermarkConfig{0.5, 1.0}.validate()));
  EXPECT_THROW((WatermarkConfig{0.6, 0.5}.validate()), Error);
  EXPECT_THROW((WatermarkConfig{-0.1, 0.5}.validate()), Error);
  EXPECT_THROW((WatermarkConfig{0.2, 1.1}.validate()), Error);
  EXPECT_EQ(parse_output_mode("hard"), OutputMode::kHard);
  EXPECT_THROW(parse_output_mode("medium"), Error);
}

}  // namespace
}  // namespace drw
