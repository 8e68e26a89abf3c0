#pragma once

#include <optional>
#include <span>
#include <vector>

#include "drw/keys.hpp"
#include "drw/random.hpp"

namespace drw {

/// A validated class distribution: entries in [0,1], unit sum.
class ProbabilityVector {
 public:
  /// Sums within 1e-12 of one are kept verbatim, sums within 1e-6 are
  /// renormalised, anything else throws kInvalidProbability.
  static ProbabilityVector checked(std::vector<double> values);

  ProbabilityVector() = default;

  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<const double> values() const noexcept { return values_; }
  const std::vector<double>& vector() const noexcept { return values_; }

  bool operator==(const ProbabilityVector&) const = default;

 private:
  explicit ProbabilityVector(std::vector<double> v) : values_(std::move(v)) {}
  friend ProbabilityVector watermark_distribution(const ProbabilityVector&,
                                                  ClassIndex, double, double);

  std::vector<double> values_;
};

struct SoftWatermark {
  ProbabilityVector probs;
  bool selected = false;
};

struct WatermarkedOutput {
  OutputMode mode = OutputMode::kSoft;
  std::optional<ProbabilityVector> soft;
  std::optional<ClassIndex> hard;
  bool selected = false;
};

/// cos(2*pi*f_w*g(v_k, x)) for the target class, the antiphase copy for
/// every other class.
double periodic_signal(const WatermarkKey& key, TokenId x, ClassIndex c);

/// The modified softmax for a given target-class signal value `z`
/// (z in [-1,1]); non-target classes receive -z.
ProbabilityVector watermark_distribution(const ProbabilityVector& p,
                                         ClassIndex target, double z,
                                         double epsilon);

/// Returns `p` untouched when x is not selected, out of vocabulary, or
/// epsilon is zero.
SoftWatermark apply_watermark(const WatermarkKey& key,
                              const WatermarkConfig& cfg, TokenId x,
                              const ProbabilityVector& p);

/// Inverse-CDF draw for a single uniform u in [0,1).
ClassIndex sample_hard(const ProbabilityVector& y, double u);

template <UniformSource S>
ClassIndex sample_hard(const ProbabilityVector& y, S& stream) {
  return sample_hard(y, static_cast<double>(stream.next_uniform()));
}

/// Smallest index attaining the maximum.
ClassIndex argmax_label(std::span<const double> y);

/// Full API answer for one input. Hard mode samples selected inputs from
/// the watermarked distribution and answers the argmax label otherwise.
template <UniformSource S>
WatermarkedOutput respond(const WatermarkKey& key, const WatermarkConfig& cfg,
                          TokenId x, const ProbabilityVector& p, S& stream) {
  SoftWatermark wm = apply_watermark(key, cfg, x, p);
  WatermarkedOutput out;
  out.mode = cfg.mode;
  out.selected = wm.selected;
  if (cfg.mode == OutputMode::kSoft) {
    out.soft = std::move(wm.probs);
  } else if (wm.selected) {
    out.hard = sample_hard(wm.probs, stream);
  } else {
    out.hard = argmax_label(wm.probs.values());
  }
  return out;
}

}  // namespace drw
