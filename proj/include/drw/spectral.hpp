#pragma once

#include <iosfwd>
#include <span>
#include <vector>

namespace drw {

inline constexpr std::size_t kMinSeriesLength = 8;

/// Unevenly sampled probe series: t are hash values, y suspect scores.
struct ProbeSeries {
  std::vector<double> t;
  std::vector<double> y;

  void validate() const;
  std::size_t size() const noexcept { return t.size(); }
};

/// Evenly spaced frequencies (cycles per unit hash) f_min + i*step <= f_max.
struct FrequencyGrid {
  double f_min = 0.5;
  double f_max = 50.0;
  double step = 0.05;

  std::vector<double> values() const;
};

struct PowerSpectrum {
  std::vector<double> freqs;
  std::vector<double> power;
  /// Set when y is constant; power is then all zero.
  bool degenerate = false;
};

/// Classical Lomb-Scargle periodogram normalised by the sample variance
/// of y. A frequency f is evaluated at angular frequency 2*pi*f.
PowerSpectrum lomb_scargle(const ProbeSeries& series,
                           std::span<const double> freqs);

enum class SnrStatus { kOk, kConstantSeries, kZeroNoise };

const char* to_string(SnrStatus status);

struct SnrResult {
  double p_signal = 0.0;
  double p_noise = 0.0;
  double p_snr = 0.0;
  double frequency = 0.0;
  double delta = 0.0;
  SnrStatus status = SnrStatus::kOk;
};

/// Trapezoidal integral of the piecewise-linear spectrum over [a, b].
double integrate_spectrum(std::span<const double> freqs,
                          std::span<const double> power, double a, double b);

/// Mean power inside [f_w - delta/2, f_w + delta/2] over mean power in
/// the rest of [grid start, f_max].
SnrResult snr_score(const PowerSpectrum& spectrum, double f_w, double delta,
                    double f_max);

/// Two whitespace-separated columns: frequency, power.
void write_spectrum(std::ostream& out, const PowerSpectrum& spectrum);

}  // namespace drw
