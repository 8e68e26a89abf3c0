#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "drw/detect.hpp"
#include "drw/keys.hpp"
#include "drw/watermark.hpp"

namespace drw::sim {

// ---------------------------------------------------------------------------
// Synthetic task: a calibrated oracle over a discrete vocabulary.

struct TaskConfig {
  std::size_t vocab_size = 2000;
  std::size_t classes = 2;
  /// Symmetric Dirichlet concentration per class.
  double concentration = 1.0;
  /// When set, rows are Dirichlet with E[pi_{target}] = target_mass and the
  /// same total concentration.
  std::optional<double> target_mass;
  ClassIndex target_class = 0;
  std::uint64_t seed = 1;
};

struct SyntheticTask {
  std::size_t vocab_size = 0;
  std::size_t classes = 0;
  /// pi[x] = P(y | x).
  std::vector<ProbabilityVector> pi;
  /// Query/test distribution over tokens.
  std::vector<double> token_freq;
};

/// Dirichlet rows are drawn by inverse-CDF from per-(token, class) uniforms,
/// so tasks built from one seed with different concentrations are coupled.
/// Token frequencies are Zipf(1.1) over a random rank permutation.
SyntheticTask make_task(const TaskConfig& config);

/// Tokens whose most likely class is `c`.
std::vector<TokenId> category_tokens(const SyntheticTask& task, ClassIndex c);

template <UniformSource S>
WatermarkedOutput victim_answer(const SyntheticTask& task,
                                const WatermarkKey& key,
                                const WatermarkConfig& cfg, TokenId x,
                                S& stream) {
  return respond(key, cfg, x, task.pi.at(x), stream);
}

// ---------------------------------------------------------------------------
// Students.

enum class StudentKind { kTable, kFeaturized };
enum class LossKind { kKl, kCrossEntropy };

const char* to_string(StudentKind kind);
StudentKind parse_student_kind(std::string_view text);

class StudentModel {
 public:
  /// Free per-token logits, initialised N(0, init_scale^2).
  static StudentModel table(std::size_t vocab_size, std::size_t classes,
                            std::uint64_t seed, double init_scale = 0.01);
  /// Token embeddings (initialised from fixed N(0,1) features, then
  /// fine-tuned) feeding a shared linear head of shape dim x classes.
  static StudentModel featurized(std::size_t vocab_size, std::size_t classes,
                                 std::size_t dim, std::uint64_t seed);

  StudentKind kind() const noexcept { return kind_; }
  std::size_t vocab_size() const noexcept { return vocab_size_; }
  std::size_t classes() const noexcept { return classes_; }

  std::vector<double> logits(TokenId x) const;
  ProbabilityVector predict(TokenId x) const;

 private:
  friend class StudentTrainer;

  StudentKind kind_ = StudentKind::kTable;
  std::size_t vocab_size_ = 0;
  std::size_t classes_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> table_;       // vocab x classes
  std::vector<double> embeddings_;  // vocab x dim
  std::vector<double> head_;        // dim x classes
  std::vector<double> bias_;        // classes
};

struct TrainingOptions {
  LossKind loss = LossKind::kKl;
  std::size_t epochs = 300;
  double lr = 2.0;
};

struct TrainingResult {
  StudentModel student;
  /// Mean per-token loss before each epoch, plus the final value.
  std::vector<double> loss_history;
};

/// Full-batch gradient descent on the per-token loss, with the answers of
/// each distinct token averaged into one target. Throws kDivergence when
/// the loss rises three epochs in a row.
TrainingResult distill_student(StudentModel student,
                               std::span<const TokenId> queries,
                               std::span<const ProbabilityVector> answers,
                               const TrainingOptions& options);
TrainingResult distill_student(StudentModel student,
                               std::span<const TokenId> queries,
                               std::span<const ClassIndex> labels,
                               const TrainingOptions& options);

enum class NegativeKind { kUnwatermarkedDistill, kTrueLabels };

struct NegativeOptions {
  StudentKind student = StudentKind::kTable;
  std::size_t feature_dim = 32;
  OutputMode mode = OutputMode::kSoft;
  std::size_t queries_per_token = 50;
  TrainingOptions training;
};

/// Either distilled from the same oracle with no watermark, or trained on
/// labels drawn from pi.
StudentModel train_negative(const SyntheticTask& task, NegativeKind kind,
                            std::uint64_t seed,
                            const NegativeOptions& options = {});

/// Soft probe records of `student` on `tokens`.
std::vector<ProbeRecord> probe_student(const StudentModel& student,
                                       std::span<const TokenId> tokens);

// ---------------------------------------------------------------------------
// Detection experiment.

enum class ProbeSet { kAllTokens, kTargetCategory };

struct ExperimentConfig {
  TaskConfig task;
  std::size_t key_dim = kDefaultKeyDim;
  double frequency = 16.0;
  std::uint64_t key_seed = 7;
  WatermarkConfig watermark;  // mode ignored; see `modes`
  std::vector<OutputMode> modes = {OutputMode::kSoft, OutputMode::kHard};
  std::size_t positives = 10;
  std::size_t negatives_unwatermarked = 10;
  std::size_t negatives_true_label = 10;
  StudentKind student = StudentKind::kTable;
  std::size_t feature_dim = 32;
  std::size_t epochs = 300;
  /// Unset: 2 for the table student, 1 for the featurized one.
  std::optional<double> lr;
  std::size_t hard_queries_per_token = 50;
  ProbeSet probe_set = ProbeSet::kAllTokens;
  DetectionParams detection;
  std::uint64_t seed = 2022;

  double learning_rate() const {
    return lr ? *lr : (student == StudentKind::kTable ? 2.0 : 1.0);
  }
};

struct ModeResult {
  double map = 0.0;
  /// Baseline: mAP of ranking by JSD to the victim (lower
  /// is positive).
  double map_jsd = 0.0;
  std::vector<double> snr_positive;
  std::vector<double> snr_negative;
  std::vector<double> jsd_positive;
  std::vector<double> jsd_negative;
  double student_acc = 0.0;
};

struct ExperimentResult {
  std::optional<ModeResult> soft;
  std::optional<ModeResult> hard;
  double victim_acc = 0.0;
  double argmax_soft_acc = 0.0;
  double sampling_hard_acc = 0.0;
  /// Probe records of the first positive of the first mode, with its score;
  /// lets callers replay detection outside the process.
  std::vector<ProbeRecord> example_probes;
  double example_snr = 0.0;
  ExperimentConfig config;

  double map_soft() const { return soft ? soft->map : 0.0; }
  double map_hard() const { return hard ? hard->map : 0.0; }
};

WatermarkKey experiment_key(const ExperimentConfig& config);

/// Expected accuracies of the victim API under token_freq.
struct ApiAccuracy {
  double victim = 0.0;
  double argmax_soft = 0.0;
  double sampling_hard = 0.0;
};
ApiAccuracy api_accuracy(const SyntheticTask& task, const WatermarkKey& key,
                         const WatermarkConfig& cfg);

ExperimentResult run_detection_experiment(const ExperimentConfig& config);

// ---------------------------------------------------------------------------
// Accuracy bounds for the binary case.

struct BetaDistribution {
  double a = 1.0;
  double b = 1.0;
};
struct PointMass {
  double value = 1.0;
};
using ScoreDistribution = std::variant<BetaDistribution, PointMass>;

struct BoundCheck {
  double bound_soft = 0.0;
  double bound_hard = 0.0;
  /// Empirical accuracy of the unwatermarked argmax against sampled labels.
  double acc_victim = 0.0;
  double acc_soft_emp = 0.0;
  double acc_hard_emp = 0.0;
  double se_soft = 0.0;
  double se_hard = 0.0;
  // Monte Carlo estimates of the quantities inside the bounds.
  double victim_expected = 0.0;  // E[max(p, 1-p)]
  double band_probability = 0.0;  // P[0.5-eps <= p <= 0.5+eps]
  double quadratic_mean = 0.0;    // E[2p^2 - 2p + 1]

  bool soft_holds() const { return acc_soft_emp >= bound_soft - 3.0 * se_soft; }
  bool hard_holds() const { return acc_hard_emp >= bound_hard - 3.0 * se_hard; }
};

/// Draws p ~ dist, y ~ Bernoulli(p), a uniform carrier phase and a
/// selection coin per sample, then compares empirical argmax-soft and
/// sampling-hard accuracy against the lower bounds.
BoundCheck theorem_bound_check(const ScoreDistribution& dist, double epsilon,
                               double tau, std::size_t n_samples,
                               std::uint64_t seed);

// ---------------------------------------------------------------------------
// Sweeps.

enum class SweepParameter { kEpsilon, kTau, kTargetClassMass };

const char* to_string(SweepParameter p);
SweepParameter parse_sweep_parameter(std::string_view text);

struct SweepRow {
  double value = 0.0;
  double map_soft = 0.0;
  double map_hard = 0.0;
  double victim_acc = 0.0;
  double argmax_soft_acc = 0.0;
  double sampling_hard_acc = 0.0;
  double mean_snr_soft = 0.0;
  double mean_snr_hard = 0.0;
};

/// One experiment per value (averaged over `replicates` independent
/// task/key seeds). The target-class-mass sweep probes the target category.
std::vector<SweepRow> sweep_parameter(const ExperimentConfig& base,
                                      SweepParameter parameter,
                                      std::span<const double> values,
                                      std::size_t replicates = 1);

void write_sweep_table(std::ostream& out, SweepParameter parameter,
                       std::span<const SweepRow> rows);

// ---------------------------------------------------------------------------
// Config / result documents.

ExperimentConfig parse_experiment_config(std::string_view json_text);
std::string experiment_config_to_json(const ExperimentConfig& config);
std::string experiment_result_to_json(const ExperimentResult& result);

}  // namespace drw::sim
