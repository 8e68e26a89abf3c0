#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "drw/keys.hpp"
#include "drw/spectral.hpp"
#include "drw/watermark.hpp"

namespace drw {

/// Soft probes need 8 surviving records; any hard (label-only) probe
/// raises the floor to 64 since its signal lives only in expectation.
inline constexpr std::size_t kMinSoftProbes = 8;
inline constexpr std::size_t kMinHardProbes = 64;

/// One answer obtained from the suspect model.
struct ProbeRecord {
  TokenId x = 0;
  std::variant<ProbabilityVector, ClassIndex> output;

  bool is_hard() const noexcept {
    return std::holds_alternative<ClassIndex>(output);
  }
};

/// Keeps selected records only; t = g(v_k, x), y = target-class score.
ProbeSeries build_probe_series(const WatermarkKey& key,
                               const WatermarkConfig& cfg,
                               std::span<const ProbeRecord> records);

struct DetectionParams {
  FrequencyGrid grid;
  double delta = 2.0;
  double f_max = 50.0;
  double threshold = 10.0;
};

enum class DetectionWarning { kNone, kTooFewProbes, kConstantSeries, kZeroNoise };

const char* to_string(DetectionWarning warning);

struct DetectionReport {
  SnrResult snr;
  std::size_t n_probes_used = 0;
  std::optional<ProbeSeries> series;
  bool positive = false;
  double threshold = 10.0;
  DetectionWarning warning = DetectionWarning::kNone;
  DetectionParams params;
};

/// build_probe_series -> lomb_scargle -> snr_score -> threshold. Too few
/// probes and constant series become a negative report with a warning.
DetectionReport detect_watermark(const WatermarkKey& key,
                                 const WatermarkConfig& cfg,
                                 std::span<const ProbeRecord> records,
                                 const DetectionParams& params = {},
                                 bool keep_series = false);

/// Mean Jensen-Shannon divergence (natural log) over paired outputs.
double jsd_score(std::span<const ProbabilityVector> a,
                 std::span<const ProbabilityVector> b);

struct RankingTrial {
  std::vector<double> positive_scores;
  std::vector<double> negative_scores;
  bool higher_is_positive = true;
};

/// Ties are ranked pessimistically (negatives first).
double average_precision(const RankingTrial& trial);
double mean_average_precision(std::span<const RankingTrial> trials);

// Line-oriented record formats.

/// {"x": int, "probs": [...]} or {"x": int, "label": int} per line.
std::vector<ProbeRecord> read_probe_records(std::istream& in);
std::string format_probe_record(const ProbeRecord& record);

std::string report_to_json(const DetectionReport& report);

}  // namespace drw
