#include "drw/sim.hpp"

#include <algorithm>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>

#include "drw/error.hpp"
#include "drw/json_io.hpp"
#include "drw/random.hpp"
#include "json.hpp"

namespace drw::sim {

namespace {

using nlohmann::json;

constexpr double kZipfExponent = 1.1;

[[noreturn]] void invalid(const std::string& what) {
  throw Error(ErrorKind::kInvalidArgument, what);
}

/// log-softmax of `logits` into `out`.
void log_softmax(std::span<const double> logits, std::span<double> out) {
  const double peak = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - peak);
  const double lse = peak + std::log(sum);
  for (std::size_t c = 0; c < logits.size(); ++c) out[c] = logits[c] - lse;
}

ProbabilityVector softmax(std::span<const double> logits) {
  std::vector<double> ls(logits.size());
  log_softmax(logits, ls);
  for (double& v : ls) v = std::exp(v);
  return ProbabilityVector::checked(std::move(ls));
}

}  // namespace

// ---------------------------------------------------------------------------

SyntheticTask make_task(const TaskConfig& config) {
  if (config.classes < 2) invalid("task needs at least 2 classes");
  if (config.vocab_size < 1) invalid("task needs a non-empty vocabulary");
  if (!(config.concentration > 0.0)) invalid("concentration must be positive");
  if (config.target_class >= config.classes) invalid("target class out of range");

  const std::size_t m = config.classes;
  std::vector<double> alpha(m, config.concentration);
  if (config.target_mass) {
    const double mass = *config.target_mass;
    if (!(mass > 0.0 && mass < 1.0)) invalid("target_mass must lie in (0,1)");
    const double total = config.concentration * static_cast<double>(m);
    for (std::size_t c = 0; c < m; ++c) {
      alpha[c] = c == config.target_class
                     ? total * mass
                     : total * (1.0 - mass) / static_cast<double>(m - 1);
    }
  }

  std::mt19937_64 rng(derive_seed(config.seed, 0));
  SyntheticTask task;
  task.vocab_size = config.vocab_size;
  task.classes = m;
  task.pi.reserve(config.vocab_size);
  std::vector<double> row(m);
  for (std::size_t x = 0; x < config.vocab_size; ++x) {
    double sum = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      const double u = uniform01(rng);
      row[c] = u > 0.0 ? boost::math::gamma_p_inv(alpha[c], u) : 0.0;
      sum += row[c];
    }
    if (!(sum > 0.0)) {
      std::fill(row.begin(), row.end(), 1.0 / static_cast<double>(m));
    } else {
      for (double& v : row) v /= sum;
    }
    task.pi.push_back(ProbabilityVector::checked(row));
  }

  std::vector<std::size_t> rank(config.vocab_size);
  std::iota(rank.begin(), rank.end(), std::size_t{1});
  std::mt19937_64 perm_rng(derive_seed(config.seed, 1));
  std::shuffle(rank.begin(), rank.end(), perm_rng);
  task.token_freq.resize(config.vocab_size);
  double total = 0.0;
  for (std::size_t x = 0; x < config.vocab_size; ++x) {
    task.token_freq[x] = std::pow(static_cast<double>(rank[x]), -kZipfExponent);
    total += task.token_freq[x];
  }
  for (double& f : task.token_freq) f /= total;
  return task;
}

std::vector<TokenId> category_tokens(const SyntheticTask& task, ClassIndex c) {
  std::vector<TokenId> out;
  for (TokenId x = 0; x < task.vocab_size; ++x) {
    if (argmax_label(task.pi[x].values()) == c) out.push_back(x);
  }
  return out;
}

// ---------------------------------------------------------------------------

const char* to_string(StudentKind kind) {
  return kind == StudentKind::kTable ? "table" : "featurized";
}

StudentKind parse_student_kind(std::string_view text) {
  if (text == "table") return StudentKind::kTable;
  if (text == "featurized") return StudentKind::kFeaturized;
  invalid("student kind must be table or featurized");
}

StudentModel StudentModel::table(std::size_t vocab_size, std::size_t classes,
                                 std::uint64_t seed, double init_scale) {
  StudentModel s;
  s.kind_ = StudentKind::kTable;
  s.vocab_size_ = vocab_size;
  s.classes_ = classes;
  s.table_.resize(vocab_size * classes);
  std::mt19937_64 rng(splitmix64(seed));
  std::normal_distribution<double> normal(0.0, init_scale);
  for (double& v : s.table_) v = normal(rng);
  return s;
}

StudentModel StudentModel::featurized(std::size_t vocab_size,
                                      std::size_t classes, std::size_t dim,
                                      std::uint64_t seed) {
  if (dim < 1) invalid("feature dimension must be >= 1");
  StudentModel s;
  s.kind_ = StudentKind::kFeaturized;
  s.vocab_size_ = vocab_size;
  s.classes_ = classes;
  s.dim_ = dim;
  std::mt19937_64 rng(splitmix64(seed));
  std::normal_distribution<double> normal(0.0, 1.0);
  s.embeddings_.resize(vocab_size * dim);
  for (double& v : s.embeddings_) v = normal(rng);
  s.head_.resize(dim * classes);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  for (double& v : s.head_) v = scale * normal(rng);
  s.bias_.assign(classes, 0.0);
  return s;
}

std::vector<double> StudentModel::logits(TokenId x) const {
  if (x >= vocab_size_) {
    throw Error(ErrorKind::kOutOfVocabulary,
                "token " + std::to_string(x) + " outside student vocabulary");
  }
  if (kind_ == StudentKind::kTable) {
    return {table_.begin() + static_cast<std::ptrdiff_t>(x * classes_),
            table_.begin() + static_cast<std::ptrdiff_t>((x + 1) * classes_)};
  }
  std::vector<double> out(bias_);
  const double* e = embeddings_.data() + x * dim_;
  for (std::size_t k = 0; k < dim_; ++k) {
    const double* w = head_.data() + k * classes_;
    for (std::size_t c = 0; c < classes_; ++c) out[c] += e[k] * w[c];
  }
  return out;
}

ProbabilityVector StudentModel::predict(TokenId x) const {
  return softmax(logits(x));
}

// ---------------------------------------------------------------------------

/// Per-token averaged targets and the gradient-descent loop.
class StudentTrainer {
 public:
  StudentTrainer(StudentModel student, std::size_t classes)
      : s_(std::move(student)), m_(classes) {
    if (s_.classes() != m_) {
      throw Error(ErrorKind::kDimensionMismatch,
                  "answers and student disagree on class count");
    }
    sums_.assign(s_.vocab_size() * m_, 0.0);
    counts_.assign(s_.vocab_size(), 0);
  }

  void add(TokenId x, std::span<const double> target) {
    check_token(x);
    for (std::size_t c = 0; c < m_; ++c) sums_[x * m_ + c] += target[c];
    ++counts_[x];
  }

  void add_label(TokenId x, ClassIndex label) {
    check_token(x);
    if (label >= m_) invalid("label out of range");
    sums_[x * m_ + label] += 1.0;
    ++counts_[x];
  }

  TrainingResult run(const TrainingOptions& options) {
    if (options.epochs < 1) invalid("epochs must be >= 1");
    if (!(options.lr > 0.0)) invalid("learning rate must be positive");
    for (TokenId x = 0; x < counts_.size(); ++x) {
      if (counts_[x] == 0) continue;
      tokens_.push_back(x);
      for (std::size_t c = 0; c < m_; ++c) {
        sums_[x * m_ + c] /= static_cast<double>(counts_[x]);
      }
    }
    if (tokens_.empty()) invalid("no training queries");

    TrainingResult result{s_, {}};
    int rises = 0;
    for (std::size_t epoch = 0; epoch <= options.epochs; ++epoch) {
      const double loss = evaluate(options.loss);
      if (!std::isfinite(loss)) {
        throw Error(ErrorKind::kDivergence, "training loss is not finite");
      }
      if (!result.loss_history.empty() &&
          loss > result.loss_history.back() + 1e-12) {
        if (++rises >= 3) {
          throw Error(ErrorKind::kDivergence,
                      "loss increased for 3 consecutive epochs (lr too high?)");
        }
      } else {
        rises = 0;
      }
      result.loss_history.push_back(loss);
      if (epoch == options.epochs) break;
      step(options.lr);
    }
    result.student = std::move(s_);
    return result;
  }

 private:
  void check_token(TokenId x) const {
    if (x >= s_.vocab_size()) {
      throw Error(ErrorKind::kOutOfVocabulary,
                  "query token " + std::to_string(x) + " outside vocabulary");
    }
  }

  std::span<const double> target(TokenId x) const {
    return {sums_.data() + x * m_, m_};
  }

  /// Fills residuals_ (q - target) and returns the mean loss.
  double evaluate(LossKind loss) {
    residuals_.assign(tokens_.size() * m_, 0.0);
    std::vector<double> ls(m_);
    double total = 0.0;
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      const TokenId x = tokens_[i];
      const auto logits = s_.logits(x);
      log_softmax(logits, ls);
      const auto y = target(x);
      double l = 0.0;
      for (std::size_t c = 0; c < m_; ++c) {
        if (y[c] > 0.0) {
          l -= y[c] * ls[c];
          if (loss == LossKind::kKl) l += y[c] * std::log(y[c]);
        }
        residuals_[i * m_ + c] = std::exp(ls[c]) - y[c];
      }
      total += l;
    }
    return total / static_cast<double>(tokens_.size());
  }

  void step(double lr) {
    if (s_.kind_ == StudentKind::kTable) {
      for (std::size_t i = 0; i < tokens_.size(); ++i) {
        double* row = s_.table_.data() + tokens_[i] * m_;
        for (std::size_t c = 0; c < m_; ++c) row[c] -= lr * residuals_[i * m_ + c];
      }
      return;
    }
    const std::size_t d = s_.dim_;
    const double shared = lr / static_cast<double>(tokens_.size());
    std::vector<double> grad_head(d * m_, 0.0);
    std::vector<double> grad_bias(m_, 0.0);
    std::vector<double> grad_e(d);
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      double* e = s_.embeddings_.data() + tokens_[i] * d;
      const double* r = residuals_.data() + i * m_;
      for (std::size_t k = 0; k < d; ++k) {
        const double* w = s_.head_.data() + k * m_;
        double g = 0.0;
        for (std::size_t c = 0; c < m_; ++c) {
          g += w[c] * r[c];
          grad_head[k * m_ + c] += e[k] * r[c];
        }
        grad_e[k] = g;
      }
      for (std::size_t c = 0; c < m_; ++c) grad_bias[c] += r[c];
      for (std::size_t k = 0; k < d; ++k) e[k] -= lr * grad_e[k];
    }
    for (std::size_t j = 0; j < grad_head.size(); ++j) {
      s_.head_[j] -= shared * grad_head[j];
    }
    for (std::size_t c = 0; c < m_; ++c) s_.bias_[c] -= shared * grad_bias[c];
  }

  StudentModel s_;
  std::size_t m_;
  std::vector<double> sums_;
  std::vector<std::size_t> counts_;
  std::vector<TokenId> tokens_;
  std::vector<double> residuals_;
};

TrainingResult distill_student(StudentModel student,
                               std::span<const TokenId> queries,
                               std::span<const ProbabilityVector> answers,
                               const TrainingOptions& options) {
  if (queries.size() != answers.size()) {
    throw Error(ErrorKind::kLengthMismatch, "queries and answers differ in length");
  }
  const std::size_t m = student.classes();
  StudentTrainer trainer(std::move(student), m);
  for (std::size_t i = 0; i < queries.size(); ++i) {
    if (answers[i].size() != m) {
      throw Error(ErrorKind::kDimensionMismatch, "answer has wrong class count");
    }
    trainer.add(queries[i], answers[i].values());
  }
  return trainer.run(options);
}

TrainingResult distill_student(StudentModel student,
                               std::span<const TokenId> queries,
                               std::span<const ClassIndex> labels,
                               const TrainingOptions& options) {
  if (queries.size() != labels.size()) {
    throw Error(ErrorKind::kLengthMismatch, "queries and labels differ in length");
  }
  const std::size_t m = student.classes();
  StudentTrainer trainer(std::move(student), m);
  for (std::size_t i = 0; i < queries.size(); ++i) {
    trainer.add_label(queries[i], labels[i]);
  }
  return trainer.run(options);
}

namespace {

StudentModel fresh_student(StudentKind kind, std::size_t vocab,
                           std::size_t classes, std::size_t feature_dim,
                           std::uint64_t seed) {
  return kind == StudentKind::kTable
             ? StudentModel::table(vocab, classes, seed)
             : StudentModel::featurized(vocab, classes, feature_dim, seed);
}

std::vector<TokenId> repeated_queries(std::size_t vocab, std::size_t k) {
  std::vector<TokenId> q;
  q.reserve(vocab * k);
  for (TokenId x = 0; x < vocab; ++x) q.insert(q.end(), k, x);
  return q;
}

}  // namespace

StudentModel train_negative(const SyntheticTask& task, NegativeKind kind,
                            std::uint64_t seed, const NegativeOptions& options) {
  StudentModel student = fresh_student(options.student, task.vocab_size,
                                       task.classes, options.feature_dim,
                                       derive_seed(seed, 0));
  TrainingOptions training = options.training;
  const std::size_t k = std::max<std::size_t>(options.queries_per_token, 1);

  if (kind == NegativeKind::kUnwatermarkedDistill) {
    if (options.mode == OutputMode::kSoft) {
      std::vector<TokenId> queries(task.vocab_size);
      std::iota(queries.begin(), queries.end(), TokenId{0});
      training.loss = LossKind::kKl;
      return distill_student(std::move(student), queries, task.pi, training)
          .student;
    }
    // A watermark-free hard-label API answers the argmax label.
    auto queries = repeated_queries(task.vocab_size, k);
    std::vector<ClassIndex> labels(queries.size());
    for (std::size_t i = 0; i < queries.size(); ++i) {
      labels[i] = argmax_label(task.pi[queries[i]].values());
    }
    training.loss = LossKind::kCrossEntropy;
    return distill_student(std::move(student), queries, labels, training).student;
  }

  auto queries = repeated_queries(task.vocab_size, k);
  std::vector<ClassIndex> labels(queries.size());
  EngineStream stream(derive_seed(seed, 1));
  for (std::size_t i = 0; i < queries.size(); ++i) {
    labels[i] = sample_hard(task.pi[queries[i]], stream);
  }
  training.loss = LossKind::kCrossEntropy;
  return distill_student(std::move(student), queries, labels, training).student;
}

std::vector<ProbeRecord> probe_student(const StudentModel& student,
                                       std::span<const TokenId> tokens) {
  std::vector<ProbeRecord> out;
  out.reserve(tokens.size());
  for (TokenId x : tokens) out.push_back({x, student.predict(x)});
  return out;
}

// ---------------------------------------------------------------------------

WatermarkKey experiment_key(const ExperimentConfig& config) {
  KeySpec spec;
  spec.classes = config.task.classes;
  spec.vocab_size = config.task.vocab_size;
  spec.dim = config.key_dim;
  spec.frequency = config.frequency;
  spec.target_class = config.task.target_class;
  spec.seed = config.key_seed;
  return generate_key(spec);
}

ApiAccuracy api_accuracy(const SyntheticTask& task, const WatermarkKey& key,
                         const WatermarkConfig& cfg) {
  ApiAccuracy acc;
  for (TokenId x = 0; x < task.vocab_size; ++x) {
    const auto& p = task.pi[x];
    const double f = task.token_freq[x];
    const double best = p[argmax_label(p.values())];
    acc.victim += f * best;
    const SoftWatermark wm = apply_watermark(key, cfg, x, p);
    acc.argmax_soft += f * p[argmax_label(wm.probs.values())];
    if (wm.selected) {
      double agree = 0.0;
      for (std::size_t c = 0; c < p.size(); ++c) agree += wm.probs[c] * p[c];
      acc.sampling_hard += f * agree;
    } else {
      acc.sampling_hard += f * best;
    }
  }
  return acc;
}

namespace {

double expected_student_accuracy(const SyntheticTask& task,
                                 const StudentModel& student) {
  double acc = 0.0;
  for (TokenId x = 0; x < task.vocab_size; ++x) {
    const auto q = student.logits(x);
    acc += task.token_freq[x] * task.pi[x][argmax_label(q)];
  }
  return acc;
}

struct Scored {
  double snr = 0.0;
  double jsd = 0.0;
};

Scored score_suspect(const StudentModel& student,
                     std::span<const TokenId> probe_tokens,
                     std::span<const ProbabilityVector> victim_outputs,
                     const WatermarkKey& key, const WatermarkConfig& cfg,
                     const DetectionParams& params,
                     std::vector<ProbeRecord>* keep) {
  auto records = probe_student(student, probe_tokens);
  const auto report = detect_watermark(key, cfg, records, params);
  std::vector<ProbabilityVector> suspect;
  suspect.reserve(records.size());
  for (const auto& r : records) suspect.push_back(std::get<ProbabilityVector>(r.output));
  Scored s{report.snr.p_snr, jsd_score(victim_outputs, suspect)};
  if (keep) *keep = std::move(records);
  return s;
}

void check_experiment(const ExperimentConfig& c) {
  c.watermark.validate();
  if (c.positives < 1) invalid("experiment needs at least one positive");
  if (c.negatives_unwatermarked + c.negatives_true_label < 2) {
    invalid("experiment needs at least two negatives");
  }
  if (c.modes.empty()) invalid("experiment needs at least one mode");
  if (c.hard_queries_per_token < 1) invalid("hard_queries_per_token must be >= 1");
}

}  // namespace

ExperimentResult run_detection_experiment(const ExperimentConfig& config) {
  check_experiment(config);
  const SyntheticTask task = make_task(config.task);
  const WatermarkKey key = experiment_key(config);
  WatermarkConfig wm = config.watermark;
  wm.mode = OutputMode::kSoft;

  ExperimentResult result;
  result.config = config;
  const ApiAccuracy acc = api_accuracy(task, key, wm);
  result.victim_acc = acc.victim;
  result.argmax_soft_acc = acc.argmax_soft;
  result.sampling_hard_acc = acc.sampling_hard;

  std::vector<ProbabilityVector> victim_soft;
  std::vector<char> selected;
  victim_soft.reserve(task.vocab_size);
  for (TokenId x = 0; x < task.vocab_size; ++x) {
    auto out = apply_watermark(key, wm, x, task.pi[x]);
    selected.push_back(out.selected ? 1 : 0);
    victim_soft.push_back(std::move(out.probs));
  }

  std::vector<TokenId> probe_tokens;
  if (config.probe_set == ProbeSet::kTargetCategory) {
    probe_tokens = category_tokens(task, config.task.target_class);
  } else {
    probe_tokens.resize(task.vocab_size);
    std::iota(probe_tokens.begin(), probe_tokens.end(), TokenId{0});
  }
  std::vector<ProbabilityVector> victim_on_probes;
  for (TokenId x : probe_tokens) victim_on_probes.push_back(victim_soft[x]);

  std::vector<TokenId> all_tokens(task.vocab_size);
  std::iota(all_tokens.begin(), all_tokens.end(), TokenId{0});
  const auto hard_queries =
      repeated_queries(task.vocab_size, config.hard_queries_per_token);

  TrainingOptions training;
  training.epochs = config.epochs;
  training.lr = config.learning_rate();

  for (std::size_t mi = 0; mi < config.modes.size(); ++mi) {
    const OutputMode mode = config.modes[mi];
    ModeResult mr;
    double student_acc = 0.0;
    for (std::size_t i = 0; i < config.positives; ++i) {
      const std::uint64_t seed =
          derive_seed(config.seed, (static_cast<std::uint64_t>(mode) << 32) | i);
      StudentModel init = fresh_student(config.student, task.vocab_size,
                                        task.classes, config.feature_dim,
                                        derive_seed(seed, 0));
      StudentModel student;
      if (mode == OutputMode::kSoft) {
        training.loss = LossKind::kKl;
        student = distill_student(std::move(init), all_tokens, victim_soft, training)
                      .student;
      } else {
        std::vector<ClassIndex> labels(hard_queries.size());
        for (std::size_t q = 0; q < hard_queries.size(); ++q) {
          const TokenId x = hard_queries[q];
          if (selected[x]) {
            CounterStream stream(derive_seed(seed, 1), q);
            labels[q] = sample_hard(victim_soft[x], stream);
          } else {
            labels[q] = argmax_label(task.pi[x].values());
          }
        }
        training.loss = LossKind::kCrossEntropy;
        student = distill_student(std::move(init), hard_queries, labels, training)
                      .student;
      }
      const bool keep = mi == 0 && i == 0;
      const Scored s = score_suspect(student, probe_tokens, victim_on_probes, key,
                                     wm, config.detection,
                                     keep ? &result.example_probes : nullptr);
      if (keep) result.example_snr = s.snr;
      mr.snr_positive.push_back(s.snr);
      mr.jsd_positive.push_back(s.jsd);
      student_acc += expected_student_accuracy(task, student);
    }
    mr.student_acc = student_acc / static_cast<double>(config.positives);

    NegativeOptions neg;
    neg.student = config.student;
    neg.feature_dim = config.feature_dim;
    neg.mode = mode;
    neg.queries_per_token = config.hard_queries_per_token;
    neg.training = training;
    const std::size_t n_neg =
        config.negatives_unwatermarked + config.negatives_true_label;
    for (std::size_t j = 0; j < n_neg; ++j) {
      const NegativeKind kind = j < config.negatives_unwatermarked
                                    ? NegativeKind::kUnwatermarkedDistill
                                    : NegativeKind::kTrueLabels;
      const std::uint64_t seed = derive_seed(
          config.seed, (static_cast<std::uint64_t>(mode) << 32) | (1u << 20) | j);
      const StudentModel student = train_negative(task, kind, seed, neg);
      const Scored s = score_suspect(student, probe_tokens, victim_on_probes, key,
                                     wm, config.detection, nullptr);
      mr.snr_negative.push_back(s.snr);
      mr.jsd_negative.push_back(s.jsd);
    }

    const RankingTrial by_snr{mr.snr_positive, mr.snr_negative, true};
    const RankingTrial by_jsd{mr.jsd_positive, mr.jsd_negative, false};
    mr.map = mean_average_precision(std::span(&by_snr, 1));
    mr.map_jsd = mean_average_precision(std::span(&by_jsd, 1));
    (mode == OutputMode::kSoft ? result.soft : result.hard) = std::move(mr);
  }
  return result;
}

// ---------------------------------------------------------------------------

BoundCheck theorem_bound_check(const ScoreDistribution& dist, double epsilon,
                               double tau, std::size_t n_samples,
                               std::uint64_t seed) {
  if (!(epsilon >= 0.0) || !(tau >= 0.0 && tau <= 1.0)) {
    invalid("need epsilon >= 0 and tau in [0,1]");
  }
  if (n_samples < 1) invalid("need at least one sample");

  std::mt19937_64 rng(splitmix64(seed));
  auto draw_score = [&]() -> double {
    if (const auto* pm = std::get_if<PointMass>(&dist)) return pm->value;
    const auto& beta = std::get<BetaDistribution>(dist);
    std::gamma_distribution<double> ga(beta.a, 1.0);
    std::gamma_distribution<double> gb(beta.b, 1.0);
    const double x = ga(rng);
    const double y = gb(rng);
    return x / (x + y);
  };

  const double scale = 1.0 + 2.0 * epsilon;
  double correct_victim = 0, correct_soft = 0, correct_hard = 0;
  double victim_expected = 0, band = 0, quadratic = 0;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const double p = draw_score();
    const bool label = uniform01(rng) < p;
    const double z = std::cos(2.0 * std::numbers::pi * uniform01(rng));
    const bool selected = uniform01(rng) < tau;
    const double u = uniform01(rng);

    const bool victim_pred = p > 0.5;
    correct_victim += victim_pred == label;
    victim_expected += std::max(p, 1.0 - p);
    band += (p >= 0.5 - epsilon && p <= 0.5 + epsilon) ? 1.0 : 0.0;
    quadratic += 2.0 * p * p - 2.0 * p + 1.0;

    if (selected) {
      const double y_hat = (p + epsilon * (1.0 + z)) / scale;
      correct_soft += (y_hat > 0.5) == label;
      correct_hard += (u < y_hat) == label;
    } else {
      correct_soft += victim_pred == label;
      correct_hard += victim_pred == label;
    }
  }

  const double n = static_cast<double>(n_samples);
  BoundCheck r;
  r.acc_victim = correct_victim / n;
  r.acc_soft_emp = correct_soft / n;
  r.acc_hard_emp = correct_hard / n;
  r.victim_expected = victim_expected / n;
  r.band_probability = band / n;
  r.quadratic_mean = quadratic / n;
  r.bound_soft = r.victim_expected - tau * (0.5 + epsilon) * r.band_probability;
  r.bound_hard = (1.0 - tau) * r.victim_expected + tau / scale * r.quadratic_mean;
  r.se_soft = std::sqrt(r.acc_soft_emp * (1.0 - r.acc_soft_emp) / n);
  r.se_hard = std::sqrt(r.acc_hard_emp * (1.0 - r.acc_hard_emp) / n);
  return r;
}

// ---------------------------------------------------------------------------

const char* to_string(SweepParameter p) {
  switch (p) {
    case SweepParameter::kEpsilon: return "epsilon";
    case SweepParameter::kTau: return "tau";
    case SweepParameter::kTargetClassMass: return "target_class_mass";
  }
  return "unknown";
}

SweepParameter parse_sweep_parameter(std::string_view text) {
  if (text == "epsilon") return SweepParameter::kEpsilon;
  if (text == "tau") return SweepParameter::kTau;
  if (text == "target_class_mass") return SweepParameter::kTargetClassMass;
  invalid("sweep parameter must be epsilon, tau or target_class_mass");
}

namespace {

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

std::vector<SweepRow> sweep_parameter(const ExperimentConfig& base,
                                      SweepParameter parameter,
                                      std::span<const double> values,
                                      std::size_t replicates) {
  if (values.empty()) invalid("sweep needs at least one value");
  if (replicates < 1) invalid("replicates must be >= 1");
  std::vector<SweepRow> rows;
  for (double v : values) {
    SweepRow row;
    row.value = v;
    for (std::size_t r = 0; r < replicates; ++r) {
      ExperimentConfig cfg = base;
      if (r > 0) {
        cfg.task.seed = derive_seed(base.task.seed, r);
        cfg.key_seed = derive_seed(base.key_seed, r);
        cfg.seed = derive_seed(base.seed, r);
      }
      switch (parameter) {
        case SweepParameter::kEpsilon: cfg.watermark.epsilon = v; break;
        case SweepParameter::kTau: cfg.watermark.tau = v; break;
        case SweepParameter::kTargetClassMass:
          cfg.task.target_mass = v;
          cfg.probe_set = ProbeSet::kTargetCategory;
          break;
      }
      const ExperimentResult res = run_detection_experiment(cfg);
      row.map_soft += res.map_soft();
      row.map_hard += res.map_hard();
      row.victim_acc += res.victim_acc;
      row.argmax_soft_acc += res.argmax_soft_acc;
      row.sampling_hard_acc += res.sampling_hard_acc;
      if (res.soft) row.mean_snr_soft += mean_of(res.soft->snr_positive);
      if (res.hard) row.mean_snr_hard += mean_of(res.hard->snr_positive);
    }
    const double k = static_cast<double>(replicates);
    row.map_soft /= k;
    row.map_hard /= k;
    row.victim_acc /= k;
    row.argmax_soft_acc /= k;
    row.sampling_hard_acc /= k;
    row.mean_snr_soft /= k;
    row.mean_snr_hard /= k;
    rows.push_back(row);
  }
  return rows;
}

void write_sweep_table(std::ostream& out, SweepParameter parameter,
                       std::span<const SweepRow> rows) {
  out << "# " << to_string(parameter)
      << "\tmap_soft\tmap_hard\tvictim_acc\targmax_soft_acc\tsampling_hard_acc"
         "\tmean_snr_soft\tmean_snr_hard\n";
  for (const auto& r : rows) {
    out << format_real(r.value) << '\t' << format_real(r.map_soft) << '\t'
        << format_real(r.map_hard) << '\t' << format_real(r.victim_acc) << '\t'
        << format_real(r.argmax_soft_acc) << '\t'
        << format_real(r.sampling_hard_acc) << '\t'
        << format_real(r.mean_snr_soft) << '\t' << format_real(r.mean_snr_hard)
        << '\n';
  }
}

// ---------------------------------------------------------------------------

namespace {

template <class T>
void read_opt(const json& doc, const char* field, T& out) {
  auto it = doc.find(field);
  if (it == doc.end() || it->is_null()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorKind::kCorruptFile,
                std::string("experiment config: bad value for \"") + field + "\"");
  }
}

void reject_unknown(const json& doc, std::initializer_list<const char*> known,
                    const char* where) {
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) {
      throw Error(ErrorKind::kCorruptFile, std::string(where) +
                                               ": unknown field \"" + it.key() +
                                               "\"");
    }
  }
}

const char* to_string(ProbeSet p) {
  return p == ProbeSet::kAllTokens ? "all" : "target_category";
}

json mode_json(const ModeResult& m) {
  return {{"map", m.map},
          {"map_jsd", m.map_jsd},
          {"student_acc", m.student_acc},
          {"snr_positives", m.snr_positive},
          {"snr_negatives", m.snr_negative},
          {"jsd_positives", m.jsd_positive},
          {"jsd_negatives", m.jsd_negative}};
}

}  // namespace

ExperimentConfig parse_experiment_config(std::string_view json_text) {
  json doc = json::parse(json_text, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) {
    throw Error(ErrorKind::kCorruptFile, "experiment config: not a JSON object");
  }
  reject_unknown(doc,
                 {"task", "key", "epsilon", "tau", "modes", "positives",
                  "negatives_unwatermarked", "negatives_true_label", "student",
                  "feature_dim", "epochs", "lr", "hard_queries_per_token",
                  "probe_set", "detection", "seed"},
                 "experiment config");
  ExperimentConfig c;
  if (auto it = doc.find("task"); it != doc.end()) {
    reject_unknown(*it,
                   {"vocab_size", "classes", "concentration", "target_mass",
                    "target_class", "seed"},
                   "experiment config task");
    read_opt(*it, "vocab_size", c.task.vocab_size);
    read_opt(*it, "classes", c.task.classes);
    read_opt(*it, "concentration", c.task.concentration);
    if (auto m = it->find("target_mass"); m != it->end() && !m->is_null()) {
      double mass = 0.0;
      read_opt(*it, "target_mass", mass);
      c.task.target_mass = mass;
    }
    read_opt(*it, "target_class", c.task.target_class);
    read_opt(*it, "seed", c.task.seed);
  }
  if (auto it = doc.find("key"); it != doc.end()) {
    reject_unknown(*it, {"dim", "f_w", "seed"}, "experiment config key");
    read_opt(*it, "dim", c.key_dim);
    read_opt(*it, "f_w", c.frequency);
    read_opt(*it, "seed", c.key_seed);
  }
  read_opt(doc, "epsilon", c.watermark.epsilon);
  read_opt(doc, "tau", c.watermark.tau);
  if (auto it = doc.find("modes"); it != doc.end()) {
    std::vector<std::string> names;
    read_opt(doc, "modes", names);
    c.modes.clear();
    for (const auto& n : names) c.modes.push_back(parse_output_mode(n));
  }
  read_opt(doc, "positives", c.positives);
  read_opt(doc, "negatives_unwatermarked", c.negatives_unwatermarked);
  read_opt(doc, "negatives_true_label", c.negatives_true_label);
  std::string student = to_string(c.student);
  read_opt(doc, "student", student);
  c.student = parse_student_kind(student);
  read_opt(doc, "feature_dim", c.feature_dim);
  read_opt(doc, "epochs", c.epochs);
  if (auto it = doc.find("lr"); it != doc.end() && !it->is_null()) {
    double lr = 0.0;
    read_opt(doc, "lr", lr);
    c.lr = lr;
  }
  read_opt(doc, "hard_queries_per_token", c.hard_queries_per_token);
  std::string probe = to_string(c.probe_set);
  read_opt(doc, "probe_set", probe);
  if (probe == "all") {
    c.probe_set = ProbeSet::kAllTokens;
  } else if (probe == "target_category") {
    c.probe_set = ProbeSet::kTargetCategory;
  } else {
    throw Error(ErrorKind::kCorruptFile,
                "experiment config: probe_set must be all or target_category");
  }
  if (auto it = doc.find("detection"); it != doc.end()) {
    reject_unknown(*it, {"delta", "fmax", "threshold", "grid"},
                   "experiment config detection");
    read_opt(*it, "delta", c.detection.delta);
    read_opt(*it, "fmax", c.detection.f_max);
    read_opt(*it, "threshold", c.detection.threshold);
    if (auto g = it->find("grid"); g != it->end()) {
      reject_unknown(*g, {"f_min", "f_max", "step"}, "experiment config grid");
      read_opt(*g, "f_min", c.detection.grid.f_min);
      read_opt(*g, "f_max", c.detection.grid.f_max);
      read_opt(*g, "step", c.detection.grid.step);
    }
  }
  read_opt(doc, "seed", c.seed);
  c.watermark.validate();
  return c;
}

std::string experiment_config_to_json(const ExperimentConfig& c) {
  json modes = json::array();
  for (auto m : c.modes) modes.push_back(to_string(m));
  json doc = {
      {"task",
       {{"vocab_size", c.task.vocab_size},
        {"classes", c.task.classes},
        {"concentration", c.task.concentration},
        {"target_mass", c.task.target_mass ? json(*c.task.target_mass) : json()},
        {"target_class", c.task.target_class},
        {"seed", c.task.seed}}},
      {"key", {{"dim", c.key_dim}, {"f_w", c.frequency}, {"seed", c.key_seed}}},
      {"epsilon", c.watermark.epsilon},
      {"tau", c.watermark.tau},
      {"modes", modes},
      {"positives", c.positives},
      {"negatives_unwatermarked", c.negatives_unwatermarked},
      {"negatives_true_label", c.negatives_true_label},
      {"student", to_string(c.student)},
      {"feature_dim", c.feature_dim},
      {"epochs", c.epochs},
      {"lr", c.learning_rate()},
      {"hard_queries_per_token", c.hard_queries_per_token},
      {"probe_set", to_string(c.probe_set)},
      {"detection",
       {{"delta", c.detection.delta},
        {"fmax", c.detection.f_max},
        {"threshold", c.detection.threshold},
        {"grid",
         {{"f_min", c.detection.grid.f_min},
          {"f_max", c.detection.grid.f_max},
          {"step", c.detection.grid.step}}}}},
      {"seed", c.seed},
  };
  return doc.dump(2) + "\n";
}

std::string experiment_result_to_json(const ExperimentResult& r) {
  json doc = {
      {"map_soft", r.soft ? json(r.soft->map) : json()},
      {"map_hard", r.hard ? json(r.hard->map) : json()},
      {"victim_acc", r.victim_acc},
      {"argmax_soft_acc", r.argmax_soft_acc},
      {"sampling_hard_acc", r.sampling_hard_acc},
      {"example_snr", r.example_snr},
      {"config", json::parse(experiment_config_to_json(r.config))},
  };
  if (r.soft) doc["soft"] = mode_json(*r.soft);
  if (r.hard) doc["hard"] = mode_json(*r.hard);
  return doc.dump(2) + "\n";
}

}  // namespace drw::sim
