#include "drw/watermark.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "drw/error.hpp"

namespace drw {

namespace {

constexpr double kExactSumTolerance = 1e-12;
constexpr double kRenormaliseTolerance = 1e-6;

}  // namespace

ProbabilityVector ProbabilityVector::checked(std::vector<double> values) {
  if (values.empty()) {
    throw Error(ErrorKind::kInvalidProbability, "empty probability vector");
  }
  double sum = 0.0;
  for (double v : values) {
    if (!std::isfinite(v) || v < -kRenormaliseTolerance ||
        v > 1.0 + kRenormaliseTolerance) {
      throw Error(ErrorKind::kInvalidProbability,
                  "probability entry outside [0,1]: " + std::to_string(v));
    }
    sum += v;
  }
  if (std::abs(sum - 1.0) > kRenormaliseTolerance) {
    throw Error(ErrorKind::kInvalidProbability,
                "probabilities sum to " + std::to_string(sum));
  }
  bool in_range = true;
  for (double v : values) in_range = in_range && v >= 0.0 && v <= 1.0;
  if (!in_range || std::abs(sum - 1.0) > kExactSumTolerance) {
    double clamped_sum = 0.0;
    for (double& v : values) {
      v = std::clamp(v, 0.0, 1.0);
      clamped_sum += v;
    }
    for (double& v : values) v /= clamped_sum;
  }
  return ProbabilityVector(std::move(values));
}

double periodic_signal(const WatermarkKey& key, TokenId x, ClassIndex c) {
  if (c >= key.classes) {
    throw Error(ErrorKind::kInvalidArgument,
                "class " + std::to_string(c) + " out of range");
  }
  const double phase =
      2.0 * std::numbers::pi * key.frequency * phase_hash(key, x);
  const double z = std::cos(phase);
  // cos(a + pi) == -cos(a); the negation keeps the antiphase sum exactly 0.
  return c == key.target_class ? z : -z;
}

ProbabilityVector watermark_distribution(const ProbabilityVector& p,
                                         ClassIndex target, double z,
                                         double epsilon) {
  const std::size_t m = p.size();
  const double scale = 1.0 + 2.0 * epsilon;
  const double others = static_cast<double>(m - 1);
  std::vector<double> y(m);
  for (std::size_t c = 0; c < m; ++c) {
    if (c == target) {
      y[c] = (p[c] + epsilon * (1.0 + z)) / scale;
    } else {
      y[c] = (p[c] + epsilon * (1.0 - z) / others) / scale;
    }
  }
  return ProbabilityVector(std::move(y));
}

SoftWatermark apply_watermark(const WatermarkKey& key,
                              const WatermarkConfig& cfg, TokenId x,
                              const ProbabilityVector& p) {
  if (p.size() != key.classes) {
    throw Error(ErrorKind::kDimensionMismatch,
                "probability vector has " + std::to_string(p.size()) +
                    " classes, key expects " + std::to_string(key.classes));
  }
  const bool selected = is_selected_for_serving(key, cfg, x);
  if (!selected || cfg.epsilon == 0.0) return {p, selected};
  const double z = periodic_signal(key, x, key.target_class);
  return {watermark_distribution(p, key.target_class, z, cfg.epsilon), true};
}

ClassIndex sample_hard(const ProbabilityVector& y, double u) {
  double cumulative = 0.0;
  ClassIndex last_positive = 0;
  for (std::size_t c = 0; c < y.size(); ++c) {
    if (y[c] <= 0.0) continue;
    cumulative += y[c];
    last_positive = c;
    if (u < cumulative) return c;
  }
  // Rounding left cumulative just under u.
  return last_positive;
}

ClassIndex argmax_label(std::span<const double> y) {
  ClassIndex best = 0;
  for (std::size_t c = 1; c < y.size(); ++c) {
    if (y[c] > y[best]) best = c;
  }
  return best;
}

}  // namespace drw
