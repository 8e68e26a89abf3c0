#include "drw/sim.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "drw/error.hpp"
#include "json.hpp"
#include "test_util.hpp"

namespace drw::sim {
namespace {

std::vector<TokenId> iota_tokens(std::size_t n) {
  std::vector<TokenId> v(n);
  std::iota(v.begin(), v.end(), TokenId{0});
  return v;
}

double total_variation(const ProbabilityVector& a, const ProbabilityVector& b) {
  double s = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c) s += std::abs(a[c] - b[c]);
  return 0.5 * s;
}

// ---------------------------------------------------------------------------

TEST(MakeTask, Deterministic) {
  TaskConfig c;
  c.vocab_size = 300;
  c.classes = 4;
  const auto a = make_task(c);
  const auto b = make_task(c);
  EXPECT_EQ(a.pi, b.pi);
  EXPECT_EQ(a.token_freq, b.token_freq);
  c.seed = 2;
  EXPECT_NE(make_task(c).pi, a.pi);
}

TEST(MakeTask, ConcentratedRowsMatchDirichletOracle) {
  TaskConfig c;
  c.vocab_size = 4000;
  c.classes = 3;
  c.concentration = 0.1;
  const auto task = make_task(c);
  double mean_max = 0.0;
  for (const auto& p : task.pi) mean_max += *std::max_element(p.values().begin(), p.values().end());
  mean_max /= c.vocab_size;

  // Independent Monte Carlo: normalised gamma draws.
  std::mt19937_64 rng(77);
  std::gamma_distribution<double> g(0.1, 1.0);
  double oracle = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    double v[3], s = 0;
    for (double& x : v) s += (x = g(rng));
    oracle += std::max({v[0], v[1], v[2]}) / s;
  }
  oracle /= n;
  EXPECT_GT(mean_max, 0.8);
  EXPECT_NEAR(mean_max, oracle, 0.02);
}

TEST(MakeTask, BinaryUnitConcentrationIsUniform) {
  TaskConfig c;
  c.vocab_size = 5000;
  const auto task = make_task(c);
  std::vector<double> p0;
  for (const auto& p : task.pi) p0.push_back(p[0]);
  EXPECT_LT(testing::ks_uniform(p0), 0.03);
}

TEST(MakeTask, ZipfFrequencies) {
  TaskConfig c;
  c.vocab_size = 1000;
  const auto task = make_task(c);
  EXPECT_NEAR(std::accumulate(task.token_freq.begin(), task.token_freq.end(), 0.0), 1.0, 1e-12);
  auto f = task.token_freq;
  std::sort(f.rbegin(), f.rend());
  EXPECT_NEAR(f[0] / f[1], std::pow(2.0, 1.1), 1e-9);
  EXPECT_NEAR(f[9] / f[99], std::pow(10.0, 1.1), 1e-9);
  // The rank order is shuffled, not tied to token id.
  EXPECT_NE(task.token_freq[0], f[0]);
}

TEST(MakeTask, TargetMass) {
  TaskConfig c;
  c.vocab_size = 4000;
  c.classes = 5;
  c.target_class = 2;
  c.target_mass = 0.6;
  const auto task = make_task(c);
  double m = 0.0;
  for (const auto& p : task.pi) m += p[2];
  EXPECT_NEAR(m / c.vocab_size, 0.6, 0.02);
  for (TokenId x : category_tokens(task, 2)) EXPECT_EQ(argmax_label(task.pi[x].values()), 2u);
}

TEST(MakeTask, Validation) {
  TaskConfig c;
  c.classes = 1;
  EXPECT_THROW(make_task(c), Error);
  c = {};
  c.concentration = 0.0;
  EXPECT_THROW(make_task(c), Error);
  c = {};
  c.target_mass = 1.0;
  EXPECT_THROW(make_task(c), Error);
}

// ---------------------------------------------------------------------------

class VictimTest : public ::testing::Test {
 protected:
  void SetUp() override {
    task = make_task({});
    KeySpec s;
    s.vocab_size = task.vocab_size;
    s.seed = 7;
    key = generate_key(s);
  }
  SyntheticTask task;
  WatermarkKey key;
};

TEST_F(VictimTest, EpsilonZeroIsOracle) {
  EngineStream s(1);
  for (TokenId x = 0; x < task.vocab_size; ++x) {
    const auto out = victim_answer(task, key, {0.0, 0.5}, x, s);
    EXPECT_EQ(*out.soft, task.pi[x]);
  }
}

TEST_F(VictimTest, DefaultsPerturbAboutHalf) {
  EngineStream s(1);
  std::size_t changed = 0;
  for (TokenId x = 0; x < task.vocab_size; ++x) {
    changed += *victim_answer(task, key, {}, x, s).soft != task.pi[x];
  }
  EXPECT_NEAR(changed / double(task.vocab_size), 0.5, 0.035);
}

TEST_F(VictimTest, HardFrequenciesMatchSoft) {
  TokenId x = 0;
  while (!is_selected(key, {}, x)) ++x;
  const WatermarkConfig hard{0.2, 0.5, OutputMode::kHard};
  const auto soft = *victim_answer(task, key, {}, x, *std::make_unique<EngineStream>(0)).soft;
  const int n = 100000;
  int zeros = 0;
  for (int i = 0; i < n; ++i) {
    CounterStream s(3, static_cast<std::uint64_t>(i));
    zeros += *victim_answer(task, key, hard, x, s).hard == 0;
  }
  EXPECT_NEAR(zeros / double(n), soft[0], 4 * std::sqrt(soft[0] * soft[1] / n));
}

TEST_F(VictimTest, ApiAccuracyWithoutWatermark) {
  const auto acc = api_accuracy(task, key, {0.0, 0.5});
  EXPECT_DOUBLE_EQ(acc.victim, acc.argmax_soft);
  // Sampling on selected tokens agrees with the label with probability sum p^2.
  double hard = 0.0;
  for (TokenId x = 0; x < task.vocab_size; ++x) {
    const double p = task.pi[x][0];
    hard += task.token_freq[x] *
            (is_selected(key, {0.0, 0.5}, x) ? p * p + (1 - p) * (1 - p) : std::max(p, 1 - p));
  }
  EXPECT_NEAR(acc.sampling_hard, hard, 1e-12);
  const auto wm = api_accuracy(task, key, {});
  EXPECT_LE(wm.argmax_soft, wm.victim);
  EXPECT_LE(wm.sampling_hard, wm.victim);
  EXPECT_LE(wm.victim - wm.argmax_soft, 0.05);
}

// ---------------------------------------------------------------------------

TEST_F(VictimTest, TableStudentReachesSoftTargets) {
  std::vector<ProbabilityVector> answers;
  for (TokenId x = 0; x < task.vocab_size; ++x) {
    answers.push_back(apply_watermark(key, {}, x, task.pi[x]).probs);
  }
  const auto tokens = iota_tokens(task.vocab_size);
  const auto result = distill_student(StudentModel::table(task.vocab_size, 2, 1), tokens, answers,
                                      {LossKind::kKl, 3000, 2.0});
  double worst = 0.0;
  for (TokenId x = 0; x < task.vocab_size; ++x) {
    worst = std::max(worst, total_variation(result.student.predict(x), answers[x]));
  }
  EXPECT_LT(worst, 1e-4);
  const auto& h = result.loss_history;
  ASSERT_EQ(h.size(), 3001u);
  for (std::size_t i = 1; i < h.size(); ++i) EXPECT_LE(h[i], h[i - 1] + 1e-8) << i;
}

TEST_F(VictimTest, RepeatedAnswersAreAveraged) {
  const std::vector<TokenId> q{0, 0, 1};
  const std::vector<ProbabilityVector> a{ProbabilityVector::checked({0.2, 0.8}),
                                         ProbabilityVector::checked({0.6, 0.4}),
                                         ProbabilityVector::checked({0.5, 0.5})};
  const auto r = distill_student(StudentModel::table(2, 2, 1), q, a, {LossKind::kKl, 400, 2.0});
  EXPECT_NEAR(r.student.predict(0)[0], 0.4, 1e-6);
}

TEST_F(VictimTest, HardLabelStudentWithinMultinomialBands) {
  const WatermarkConfig cfg{0.2, 1.0};
  const std::size_t vocab = 300, k = 50;
  std::vector<TokenId> queries;
  std::vector<ClassIndex> labels;
  std::vector<ProbabilityVector> soft;
  for (TokenId x = 0; x < vocab; ++x) {
    soft.push_back(apply_watermark(key, cfg, x, task.pi[x]).probs);
    for (std::size_t i = 0; i < k; ++i) {
      CounterStream s(11, x * k + i);
      queries.push_back(x);
      labels.push_back(sample_hard(soft[x], s));
    }
  }
  const auto r = distill_student(StudentModel::table(task.vocab_size, 2, 1), queries, labels,
                                 {LossKind::kCrossEntropy, 300, 2.0});
  for (TokenId x = 0; x < vocab; ++x) {
    const double y = soft[x][0];
    const double band = 4.0 * std::sqrt(y * (1.0 - y) / k) + 0.01;
    EXPECT_NEAR(r.student.predict(x)[0], y, band) << x;
  }
}

TEST(Students, DivergenceDetected) {
  const std::vector<TokenId> q{0, 1, 2, 3};
  const std::vector<ClassIndex> labels{0, 1, 0, 1};
  try {
    distill_student(StudentModel::featurized(4, 2, 8, 1), q, labels,
                    {LossKind::kCrossEntropy, 50, 500.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDivergence);
  }
}

TEST(Students, InputValidation) {
  const std::vector<TokenId> q{0, 1};
  const std::vector<ClassIndex> one{0};
  EXPECT_THROW(distill_student(StudentModel::table(2, 2, 1), q, one, {}), Error);
  const std::vector<ClassIndex> bad{0, 3};
  EXPECT_THROW(distill_student(StudentModel::table(2, 2, 1), q, bad, {}), Error);
  const std::vector<TokenId> oov{0, 9};
  const std::vector<ClassIndex> ok{0, 1};
  EXPECT_THROW(distill_student(StudentModel::table(2, 2, 1), oov, ok, {}), Error);
  EXPECT_THROW(distill_student(StudentModel::table(2, 2, 1), q, ok, {LossKind::kKl, 0, 1.0}), Error);
  EXPECT_THROW(StudentModel::table(2, 2, 1).predict(2), Error);
}

TEST(Students, FeaturizedPredictionsValid) {
  const auto s = StudentModel::featurized(50, 4, 32, 3);
  for (TokenId x = 0; x < 50; ++x) {
    const auto p = s.predict(x);
    double sum = 0.0;
    for (double v : p.values()) sum += v;
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

// ---------------------------------------------------------------------------

class ExperimentTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { result = new ExperimentResult(run_detection_experiment({})); }
  static void TearDownTestSuite() {
    delete result;
    result = nullptr;
  }
  static ExperimentResult* result;
};
ExperimentResult* ExperimentTest::result = nullptr;

TEST_F(ExperimentTest, PerfectRankingBothModes) {
  ASSERT_TRUE(result->soft && result->hard);
  EXPECT_EQ(result->map_soft(), 1.0);
  EXPECT_EQ(result->map_hard(), 1.0);
  EXPECT_EQ(result->soft->snr_positive.size(), 10u);
  EXPECT_EQ(result->soft->snr_negative.size(), 20u);
}

TEST_F(ExperimentTest, NegativesBelowThresholdWithGap) {
  for (const auto* m : {&*result->soft, &*result->hard}) {
    const double min_pos = *std::min_element(m->snr_positive.begin(), m->snr_positive.end());
    const double max_neg = *std::max_element(m->snr_negative.begin(), m->snr_negative.end());
    EXPECT_LT(max_neg, 10.0);
    EXPECT_GE(min_pos - max_neg, 10.0);
  }
}

TEST_F(ExperimentTest, SoftAtLeastHard) {
  EXPECT_GE(testing::mean(result->soft->snr_positive), testing::mean(result->hard->snr_positive));
}

TEST_F(ExperimentTest, AccuraciesInRange) {
  for (double a : {result->victim_acc, result->argmax_soft_acc, result->sampling_hard_acc,
                   result->soft->student_acc, result->hard->student_acc}) {
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
  }
  EXPECT_LE(result->victim_acc - result->argmax_soft_acc, 0.05);
  EXPECT_GE(result->soft->map_jsd, 0.0);
  EXPECT_LE(result->soft->map_jsd, 1.0);
}

TEST_F(ExperimentTest, ExampleProbesReplay) {
  const auto key = experiment_key(result->config);
  const auto report = detect_watermark(key, result->config.watermark, result->example_probes,
                                       result->config.detection);
  EXPECT_EQ(report.snr.p_snr, result->example_snr);
  EXPECT_EQ(result->example_snr, result->soft->snr_positive.front());
}

TEST_F(ExperimentTest, SoftStudentSpectrumPeaksAtCarrier) {
  const auto key = experiment_key(result->config);
  const auto series =
      build_probe_series(key, result->config.watermark, result->example_probes);
  const auto spectrum = lomb_scargle(series, FrequencyGrid{}.values());
  const auto peak = std::max_element(spectrum.power.begin(), spectrum.power.end());
  EXPECT_NEAR(spectrum.freqs[static_cast<std::size_t>(peak - spectrum.power.begin())], 16.0,
              0.05 + 1e-9);
}

TEST(Experiment, NegativesOnTheirOwn) {
  const auto task = make_task({});
  ExperimentConfig c;
  const auto key = experiment_key(c);
  const auto tokens = iota_tokens(task.vocab_size);
  for (auto kind : {NegativeKind::kUnwatermarkedDistill, NegativeKind::kTrueLabels}) {
    const auto s = train_negative(task, kind, 5);
    const auto r = detect_watermark(key, c.watermark, probe_student(s, tokens));
    EXPECT_LT(r.snr.p_snr, 5.0);
  }
}

TEST(Experiment, FeaturizedStudentCarriesWatermark) {
  ExperimentConfig c;
  c.student = StudentKind::kFeaturized;
  c.modes = {OutputMode::kSoft};
  c.positives = 2;
  c.negatives_unwatermarked = 1;
  c.negatives_true_label = 1;
  const auto r = run_detection_experiment(c);
  for (double snr : r.soft->snr_positive) EXPECT_GT(snr, 10.0);
  for (double snr : r.soft->snr_negative) EXPECT_LT(snr, 10.0);
}

TEST(Experiment, Validation) {
  ExperimentConfig c;
  c.positives = 0;
  EXPECT_THROW(run_detection_experiment(c), Error);
  c = {};
  c.negatives_true_label = 0;
  c.negatives_unwatermarked = 1;
  EXPECT_THROW(run_detection_experiment(c), Error);
}

// ---------------------------------------------------------------------------

struct BetaOracle {
  double acc_victim, band, quadratic;
};

BetaOracle beta52_oracle(double eps) {
  auto pdf = [](double p) { return 30.0 * std::pow(p, 4) * (1.0 - p); };
  BetaOracle o;
  o.acc_victim = testing::simpson([&](double p) { return std::max(p, 1 - p) * pdf(p); }, 0, 0.5) +
                 testing::simpson([&](double p) { return std::max(p, 1 - p) * pdf(p); }, 0.5, 1);
  o.band = eps > 0 ? testing::simpson(pdf, 0.5 - eps, 0.5 + eps) : 0.0;
  o.quadratic = testing::simpson([&](double p) { return (2 * p * p - 2 * p + 1) * pdf(p); }, 0, 1);
  return o;
}

TEST(AccuracyBound, DegenerateWatermark) {
  const auto r = theorem_bound_check(BetaDistribution{5, 2}, 0.0, 0.0, 100000, 1);
  EXPECT_DOUBLE_EQ(r.bound_soft, r.victim_expected);
  EXPECT_DOUBLE_EQ(r.bound_hard, r.victim_expected);
  EXPECT_EQ(r.acc_soft_emp, r.acc_victim);
  EXPECT_EQ(r.acc_hard_emp, r.acc_victim);
  EXPECT_NEAR(r.acc_victim, r.victim_expected, 4 * std::sqrt(0.25 / 100000));
}

TEST(AccuracyBound, PointMassAtOne) {
  for (double eps : {0.1, 0.2, 0.5}) {
    const auto r = theorem_bound_check(PointMass{1.0}, eps, 1.0, 200000, 2);
    EXPECT_EQ(r.acc_victim, 1.0);
    EXPECT_DOUBLE_EQ(r.bound_hard, 1.0 / (1.0 + 2.0 * eps));
    // E[z] = 0 over the carrier phase, so P(label 1) = (1 + eps) / (1 + 2 eps).
    const double expected = (1.0 + eps) / (1.0 + 2.0 * eps);
    EXPECT_NEAR(r.acc_hard_emp, expected, 4 * std::sqrt(expected * (1 - expected) / 200000));
    EXPECT_TRUE(r.hard_holds());
    EXPECT_EQ(r.acc_soft_emp, 1.0);
  }
}

TEST(AccuracyBound, BetaMatchesQuadrature) {
  const double eps = 0.2, tau = 0.5;
  const auto r = theorem_bound_check(BetaDistribution{5, 2}, eps, tau, 100000, 3);
  const auto o = beta52_oracle(eps);
  const double soft = o.acc_victim - tau * (0.5 + eps) * o.band;
  const double hard = (1 - tau) * o.acc_victim + tau / (1 + 2 * eps) * o.quadratic;
  EXPECT_NEAR(r.bound_soft, soft, 0.005);
  EXPECT_NEAR(r.bound_hard, hard, 0.005);
  EXPECT_TRUE(r.soft_holds());
  EXPECT_TRUE(r.hard_holds());
}

TEST(AccuracyBound, HoldsAcrossGrid) {
  std::uint64_t seed = 10;
  for (double eps : {0.0, 0.1, 0.2, 0.3}) {
    for (double tau : {0.0, 0.25, 0.5, 1.0}) {
      const auto r = theorem_bound_check(BetaDistribution{5, 2}, eps, tau, 100000, seed++);
      EXPECT_TRUE(r.soft_holds()) << eps << " " << tau;
      EXPECT_TRUE(r.hard_holds()) << eps << " " << tau;
    }
  }
}

TEST(AccuracyBound, Validation) {
  EXPECT_THROW(theorem_bound_check(PointMass{}, -0.1, 0.5, 10, 1), Error);
  EXPECT_THROW(theorem_bound_check(PointMass{}, 0.1, 1.5, 10, 1), Error);
  EXPECT_THROW(theorem_bound_check(PointMass{}, 0.1, 0.5, 0, 1), Error);
}

// ---------------------------------------------------------------------------

TEST(Documents, ConfigRoundTrip) {
  ExperimentConfig c;
  c.task.target_mass = 0.3;
  c.modes = {OutputMode::kHard};
  c.student = StudentKind::kFeaturized;
  c.probe_set = ProbeSet::kTargetCategory;
  c.detection.delta = 1.5;
  const auto back = parse_experiment_config(experiment_config_to_json(c));
  EXPECT_EQ(back.task.target_mass, 0.3);
  EXPECT_EQ(back.modes, c.modes);
  EXPECT_EQ(back.student, StudentKind::kFeaturized);
  EXPECT_EQ(back.probe_set, ProbeSet::kTargetCategory);
  EXPECT_EQ(back.detection.delta, 1.5);
  EXPECT_EQ(back.learning_rate(), 1.0);
  EXPECT_EQ(experiment_config_to_json(back), experiment_config_to_json(c));
}

TEST(Documents, ConfigErrors) {
  EXPECT_THROW(parse_experiment_config("[]"), Error);
  EXPECT_THROW(parse_experiment_config(R"({"epsilonn": 0.1})"), Error);
  EXPECT_THROW(parse_experiment_config(R"({"epsilon": 0.9})"), Error);
  EXPECT_THROW(parse_experiment_config(R"({"task": {"vocab": 3}})"), Error);
  EXPECT_THROW(parse_experiment_config(R"({"positives": "ten"})"), Error);
  EXPECT_EQ(parse_experiment_config("{}").positives, 10u);
}

TEST(Documents, SweepTable) {
  std::vector<SweepRow> rows{{0.1, 1, 1, 0.7, 0.69, 0.66, 20, 18}};
  std::ostringstream out;
  write_sweep_table(out, SweepParameter::kTau, rows);
  std::istringstream in(out.str());
  std::string header, line;
  std::getline(in, header);
  std::getline(in, line);
  EXPECT_EQ(header.rfind("# tau\t", 0), 0u);
  EXPECT_EQ(std::count(line.begin(), line.end(), '\t'), 7);
  EXPECT_EQ(parse_sweep_parameter("target_class_mass"), SweepParameter::kTargetClassMass);
  EXPECT_THROW(parse_sweep_parameter("delta"), Error);
}

}  // namespace
}  // namespace drw::sim
