#include "drw/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>
#include <string>

#include "drw/error.hpp"
#include "drw/json_io.hpp"

namespace drw {

void ProbeSeries::validate() const {
  if (t.size() != y.size()) {
    throw Error(ErrorKind::kLengthMismatch, "probe series t and y differ in length");
  }
  if (t.size() < kMinSeriesLength) {
    throw Error(ErrorKind::kTooFewProbes,
                "probe series needs at least " +
                    std::to_string(kMinSeriesLength) + " samples, got " +
                    std::to_string(t.size()));
  }
  for (double v : t) {
    if (!(v >= 0.0 && v < 1.0)) {
      throw Error(ErrorKind::kInvalidArgument, "sample times must lie in [0,1)");
    }
  }
  for (double v : y) {
    if (!std::isfinite(v)) {
      throw Error(ErrorKind::kInvalidArgument, "series values must be finite");
    }
  }
}

std::vector<double> FrequencyGrid::values() const {
  if (!(f_min > 0.0) || !(step > 0.0) || !(f_max >= f_min)) {
    throw Error(ErrorKind::kInvalidArgument,
                "frequency grid needs 0 < f_min <= f_max and step > 0");
  }
  const auto count =
      static_cast<std::size_t>(std::floor((f_max - f_min) / step + 1e-9)) + 1;
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    out[i] = f_min + static_cast<double>(i) * step;
  }
  return out;
}

PowerSpectrum lomb_scargle(const ProbeSeries& series,
                           std::span<const double> freqs) {
  series.validate();
  for (double f : freqs) {
    if (!(f > 0.0) || !std::isfinite(f)) {
      throw Error(ErrorKind::kInvalidArgument, "grid frequencies must be positive");
    }
  }

  const std::size_t n = series.size();
  // Canonical order makes every sum independent of input order.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (series.t[a] != series.t[b]) return series.t[a] < series.t[b];
    return series.y[a] < series.y[b];
  });
  std::vector<double> t(n);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = series.t[order[i]];
    y[i] = series.y[order[i]];
  }

  PowerSpectrum out;
  out.freqs.assign(freqs.begin(), freqs.end());
  out.power.assign(freqs.size(), 0.0);

  const auto [lo, hi] = std::minmax_element(y.begin(), y.end());
  if (*lo == *hi) {
    out.degenerate = true;
    return out;
  }

  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(n);
  double variance = 0.0;
  for (double& v : y) {
    v -= mean;
    variance += v * v;
  }
  variance /= static_cast<double>(n - 1);

  std::vector<double> cos_wt(n);
  std::vector<double> sin_wt(n);
  for (std::size_t k = 0; k < freqs.size(); ++k) {
    const double omega = 2.0 * std::numbers::pi * freqs[k];
    double sin2 = 0.0;
    double cos2 = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      cos_wt[j] = std::cos(omega * t[j]);
      sin_wt[j] = std::sin(omega * t[j]);
      sin2 += 2.0 * sin_wt[j] * cos_wt[j];
      cos2 += cos_wt[j] * cos_wt[j] - sin_wt[j] * sin_wt[j];
    }
    // omega*theta, with tan(2*omega*theta) = sin2 / cos2.
    const double shift = 0.5 * std::atan2(sin2, cos2);
    const double cs = std::cos(shift);
    const double ss = std::sin(shift);
    double yc = 0.0, ys = 0.0, cc = 0.0, sq = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double c = cos_wt[j] * cs + sin_wt[j] * ss;
      const double s = sin_wt[j] * cs - cos_wt[j] * ss;
      yc += y[j] * c;
      ys += y[j] * s;
      cc += c * c;
      sq += s * s;
    }
    constexpr double kTiny = 1e-300;
    double p = 0.0;
    if (cc > kTiny) p += yc * yc / cc;
    if (sq > kTiny) p += ys * ys / sq;
    out.power[k] = p / (2.0 * variance);
  }
  return out;
}

const char* to_string(SnrStatus status) {
  switch (status) {
    case SnrStatus::kOk: return "ok";
    case SnrStatus::kConstantSeries: return "constant-series";
    case SnrStatus::kZeroNoise: return "zero-noise";
  }
  return "unknown";
}

double integrate_spectrum(std::span<const double> freqs,
                          std::span<const double> power, double a, double b) {
  if (freqs.size() != power.size() || freqs.size() < 2) {
    throw Error(ErrorKind::kLengthMismatch, "spectrum needs >= 2 matching points");
  }
  if (b <= a) return 0.0;
  auto interp = [&](std::size_t i, double f) {
    const double w = (f - freqs[i]) / (freqs[i + 1] - freqs[i]);
    return power[i] + w * (power[i + 1] - power[i]);
  };
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < freqs.size(); ++i) {
    const double left = std::max(a, freqs[i]);
    const double right = std::min(b, freqs[i + 1]);
    if (right <= left) continue;
    total += 0.5 * (interp(i, left) + interp(i, right)) * (right - left);
  }
  return total;
}

SnrResult snr_score(const PowerSpectrum& spectrum, double f_w, double delta,
                    double f_max) {
  const auto& f = spectrum.freqs;
  if (f.size() < 2 || f.size() != spectrum.power.size()) {
    throw Error(ErrorKind::kWindowOutsideGrid, "spectrum grid too short");
  }
  if (!(delta > 0.0) || !(delta < f_max)) {
    throw Error(ErrorKind::kInvalidArgument, "need 0 < delta < F");
  }
  const double slack = 1e-9 * std::max(1.0, f.back());
  const double lo = f_w - delta / 2.0;
  const double hi = f_w + delta / 2.0;
  if (lo < f.front() - slack || hi > f_max + slack ||
      f_max > f.back() + slack) {
    throw Error(ErrorKind::kWindowOutsideGrid,
                "signal window [" + std::to_string(lo) + ", " +
                    std::to_string(hi) + "] or F = " + std::to_string(f_max) +
                    " outside grid [" + std::to_string(f.front()) + ", " +
                    std::to_string(f.back()) + "]");
  }
  const double band_end = std::min(f_max, f.back());
  const double noise_width = band_end - f.front() - delta;
  if (!(noise_width > 0.0)) {
    throw Error(ErrorKind::kWindowOutsideGrid, "no noise band outside the window");
  }

  SnrResult r;
  r.frequency = f_w;
  r.delta = delta;
  if (spectrum.degenerate) {
    r.status = SnrStatus::kConstantSeries;
    return r;
  }
  const auto& p = spectrum.power;
  r.p_signal = integrate_spectrum(f, p, lo, hi) / delta;
  r.p_noise = (integrate_spectrum(f, p, f.front(), lo) +
               integrate_spectrum(f, p, hi, band_end)) /
              noise_width;
  if (r.p_noise > 0.0) {
    r.p_snr = r.p_signal / r.p_noise;
  } else {
    r.p_snr = std::numeric_limits<double>::infinity();
    r.status = SnrStatus::kZeroNoise;
  }
  return r;
}

void write_spectrum(std::ostream& out, const PowerSpectrum& spectrum) {
  for (std::size_t i = 0; i < spectrum.freqs.size(); ++i) {
    out << format_real(spectrum.freqs[i]) << ' '
        << format_real(spectrum.power[i]) << '\n';
  }
}

}  // namespace drw
