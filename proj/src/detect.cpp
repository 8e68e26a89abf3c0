#include "drw/detect.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numbers>
#include <utility>

#include "drw/error.hpp"
#include "drw/json_io.hpp"
#include "json.hpp"

namespace drw {

namespace {

using nlohmann::json;

double kl_term(double p, double u) { return p > 0.0 ? p * std::log(p / u) : 0.0; }

}  // namespace

const char* to_string(DetectionWarning warning) {
  switch (warning) {
    case DetectionWarning::kNone: return "none";
    case DetectionWarning::kTooFewProbes: return "too-few-probes";
    case DetectionWarning::kConstantSeries: return "constant-series";
    case DetectionWarning::kZeroNoise: return "zero-noise";
  }
  return "unknown";
}

ProbeSeries build_probe_series(const WatermarkKey& key,
                               const WatermarkConfig& cfg,
                               std::span<const ProbeRecord> records) {
  if (records.empty()) {
    throw Error(ErrorKind::kTooFewProbes, "no probe records");
  }
  ProbeSeries series;
  bool any_hard = false;
  for (const auto& r : records) {
    if (!is_selected(key, cfg, r.x)) continue;
    double y = 0.0;
    if (const auto* label = std::get_if<ClassIndex>(&r.output)) {
      if (*label >= key.classes) {
        throw Error(ErrorKind::kInvalidArgument,
                    "probe label " + std::to_string(*label) + " out of range");
      }
      y = *label == key.target_class ? 1.0 : 0.0;
      any_hard = true;
    } else {
      const auto& probs = std::get<ProbabilityVector>(r.output);
      if (probs.size() != key.classes) {
        throw Error(ErrorKind::kDimensionMismatch,
                    "probe probability vector has wrong class count");
      }
      y = probs[key.target_class];
    }
    series.t.push_back(phase_hash(key, r.x));
    series.y.push_back(y);
  }
  const std::size_t floor = any_hard ? kMinHardProbes : kMinSoftProbes;
  if (series.size() < floor) {
    throw Error(ErrorKind::kTooFewProbes,
                std::to_string(series.size()) +
                    " probes survive selection, need at least " +
                    std::to_string(floor));
  }
  return series;
}

DetectionReport detect_watermark(const WatermarkKey& key,
                                 const WatermarkConfig& cfg,
                                 std::span<const ProbeRecord> records,
                                 const DetectionParams& params,
                                 bool keep_series) {
  DetectionReport report;
  report.params = params;
  report.threshold = params.threshold;
  report.snr.frequency = key.frequency;
  report.snr.delta = params.delta;

  ProbeSeries series;
  try {
    series = build_probe_series(key, cfg, records);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kTooFewProbes) throw;
    report.warning = DetectionWarning::kTooFewProbes;
    for (const auto& r : records) {
      if (is_selected(key, cfg, r.x)) ++report.n_probes_used;
    }
    return report;
  }

  report.n_probes_used = series.size();
  const auto grid = params.grid.values();
  const PowerSpectrum spectrum = lomb_scargle(series, grid);
  report.snr = snr_score(spectrum, key.frequency, params.delta, params.f_max);
  switch (report.snr.status) {
    case SnrStatus::kConstantSeries:
      report.warning = DetectionWarning::kConstantSeries;
      break;
    case SnrStatus::kZeroNoise:
      report.warning = DetectionWarning::kZeroNoise;
      break;
    case SnrStatus::kOk:
      break;
  }
  report.positive = report.warning == DetectionWarning::kNone &&
                    report.snr.p_snr >= params.threshold;
  if (keep_series) report.series = std::move(series);
  return report;
}

double jsd_score(std::span<const ProbabilityVector> a,
                 std::span<const ProbabilityVector> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorKind::kLengthMismatch, "JSD inputs differ in length");
  }
  if (a.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    if (a[j].size() != b[j].size()) {
      throw Error(ErrorKind::kLengthMismatch, "JSD pair differs in class count");
    }
    double pair = 0.0;
    for (std::size_t c = 0; c < a[j].size(); ++c) {
      const double u = 0.5 * (a[j][c] + b[j][c]);
      // Summing both directions per cell keeps the score symmetric bit-for-bit.
      pair += kl_term(a[j][c], u) + kl_term(b[j][c], u);
    }
    total += pair;
  }
  return total / (2.0 * static_cast<double>(a.size()));
}

double average_precision(const RankingTrial& trial) {
  if (trial.positive_scores.empty() || trial.negative_scores.empty()) {
    throw Error(ErrorKind::kInvalidArgument,
                "ranking trial needs at least one positive and one negative");
  }
  std::vector<std::pair<double, bool>> items;
  for (double s : trial.positive_scores) items.emplace_back(s, true);
  for (double s : trial.negative_scores) items.emplace_back(s, false);
  std::sort(items.begin(), items.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) {
      return trial.higher_is_positive ? a.first > b.first : a.first < b.first;
    }
    return !a.second && b.second;
  });
  double hits = 0.0;
  double sum = 0.0;
  for (std::size_t rank = 0; rank < items.size(); ++rank) {
    if (!items[rank].second) continue;
    hits += 1.0;
    sum += hits / static_cast<double>(rank + 1);
  }
  return sum / static_cast<double>(trial.positive_scores.size());
}

double mean_average_precision(std::span<const RankingTrial> trials) {
  if (trials.empty()) {
    throw Error(ErrorKind::kInvalidArgument, "no ranking trials");
  }
  double sum = 0.0;
  for (const auto& t : trials) sum += average_precision(t);
  return sum / static_cast<double>(trials.size());
}

std::vector<ProbeRecord> read_probe_records(std::istream& in) {
  std::vector<ProbeRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fail = [&](const std::string& why) -> Error {
      return Error(ErrorKind::kCorruptFile,
                   "probe line " + std::to_string(line_no) + ": " + why);
    };
    json doc = json::parse(line, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) throw fail("not a JSON object");
    auto x = doc.find("x");
    if (x == doc.end() || !x->is_number_unsigned()) {
      throw fail("field \"x\" must be a non-negative integer");
    }
    ProbeRecord rec;
    rec.x = x->get<TokenId>();
    auto probs = doc.find("probs");
    auto label = doc.find("label");
    if (probs != doc.end()) {
      if (!probs->is_array()) throw fail("field \"probs\" must be an array");
      std::vector<double> v;
      for (const auto& e : *probs) {
        if (!e.is_number()) throw fail("field \"probs\" must hold numbers");
        v.push_back(e.get<double>());
      }
      try {
        rec.output = ProbabilityVector::checked(std::move(v));
      } catch (const Error& e) {
        throw fail(e.what());
      }
    } else if (label != doc.end()) {
      if (!label->is_number_unsigned()) {
        throw fail("field \"label\" must be a non-negative integer");
      }
      rec.output = label->get<ClassIndex>();
    } else {
      throw fail("needs \"probs\" or \"label\"");
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::string format_probe_record(const ProbeRecord& record) {
  std::string out = "{\"x\": " + std::to_string(record.x);
  if (const auto* label = std::get_if<ClassIndex>(&record.output)) {
    out += ", \"label\": " + std::to_string(*label) + "}";
    return out;
  }
  out += ", \"probs\": [";
  const auto& p = std::get<ProbabilityVector>(record.output);
  for (std::size_t c = 0; c < p.size(); ++c) {
    if (c) out += ", ";
    out += format_real(p[c]);
  }
  out += "]}";
  return out;
}

std::string report_to_json(const DetectionReport& report) {
  auto real = [](double v) -> json {
    if (std::isfinite(v)) return v;
    return v > 0 ? "inf" : "-inf";
  };
  json doc = {
      {"p_signal", real(report.snr.p_signal)},
      {"p_noise", real(report.snr.p_noise)},
      {"p_snr", real(report.snr.p_snr)},
      {"n_probes_used", report.n_probes_used},
      {"decision", report.positive ? "positive" : "negative"},
      {"threshold", report.threshold},
      {"warning", to_string(report.warning)},
      {"f_w", report.snr.frequency},
      {"delta", report.params.delta},
      {"fmax", report.params.f_max},
      {"grid",
       {{"f_min", report.params.grid.f_min},
        {"f_max", report.params.grid.f_max},
        {"step", report.params.grid.step}}},
  };
  if (report.series) {
    doc["series"] = {{"t", report.series->t}, {"y", report.series->y}};
  }
  return doc.dump(2) + "\n";
}

}  // namespace drw
