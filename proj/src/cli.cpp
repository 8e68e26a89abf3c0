#include "drw/cli.hpp"

#include <CLI11.hpp>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "drw/detect.hpp"
#include "drw/error.hpp"
#include "drw/json_io.hpp"
#include "drw/keys.hpp"
#include "drw/sim.hpp"
#include "drw/spectral.hpp"
#include "drw/watermark.hpp"
#include "json.hpp"

namespace drw {

namespace {

using nlohmann::json;

struct KeygenArgs {
  std::size_t classes = 0;
  std::size_t vocab = 0;
  std::size_t dim = 0;
  double freq = 0.0;
  std::size_t target_class = 0;
  double eps = 0.0;
  double tau = 0.0;
  std::uint64_t seed = 0;
  std::string out;
};

struct WatermarkArgs {
  std::string key;
  std::string mode;
  std::string in;
  std::string out;
  std::optional<std::uint64_t> seed;
};

struct DetectArgs {
  std::string key;
  std::string probe;
  double delta = 0.0;
  double fmax = 0.0;
  double threshold = 0.0;
  std::string report;
  std::optional<double> fmin;
  std::optional<double> fstep;
  std::optional<double> eps;
  std::optional<double> tau;
  std::string spectrum;
  bool series = false;
};

struct SimulateArgs {
  std::string config;
  std::string out;
  std::string probe_out;
  std::string key_out;
};

struct SweepArgs {
  std::string config;
  std::string param;
  std::vector<double> values;
  std::string out;
  std::size_t replicates = 1;
};

struct EvalMapArgs {
  std::string in;
  std::string out;
};

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path);
  return in;
}

json real_array(std::span<const double> v) {
  json a = json::array();
  for (double x : v) a.push_back(x);
  return a;
}

std::string join_reals(std::span<const double> v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ", ";
    s += format_real(v[i]);
  }
  return s + "]";
}

int do_keygen(const KeygenArgs& a, std::ostream& out) {
  KeySpec spec;
  spec.classes = a.classes;
  spec.vocab_size = a.vocab;
  spec.dim = a.dim;
  spec.frequency = a.freq;
  spec.target_class = a.target_class;
  spec.seed = a.seed;
  WatermarkConfig cfg;
  cfg.epsilon = a.eps;
  cfg.tau = a.tau;
  cfg.validate();
  save_key(a.out, generate_key(spec), cfg);
  out << "wrote key " << a.out << '\n';
  return kExitOk;
}

int do_watermark(const WatermarkArgs& a, std::ostream& out) {
  const KeyFile kf = load_key_file(a.key);
  WatermarkConfig cfg = kf.config.value_or(WatermarkConfig{});
  cfg.mode = parse_output_mode(a.mode);
  const std::uint64_t seed = a.seed.value_or(0);

  auto in = open_input(a.in);
  std::string result;
  std::string line;
  std::size_t line_no = 0;
  std::uint64_t record = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fail = [&](const std::string& why) {
      return Error(ErrorKind::kCorruptFile,
                   a.in + " line " + std::to_string(line_no) + ": " + why);
    };
    json doc = json::parse(line, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) throw fail("not a JSON object");
    auto x = doc.find("x");
    auto probs = doc.find("probs");
    if (x == doc.end() || !x->is_number_unsigned()) {
      throw fail("field \"x\" must be a non-negative integer");
    }
    if (probs == doc.end() || !probs->is_array()) {
      throw fail("field \"probs\" must be an array");
    }
    std::vector<double> values;
    for (const auto& e : *probs) {
      if (!e.is_number()) throw fail("field \"probs\" must hold numbers");
      values.push_back(e.get<double>());
    }
    ProbabilityVector p;
    try {
      p = ProbabilityVector::checked(std::move(values));
    } catch (const Error& e) {
      throw fail(e.what());
    }
    if (p.size() != kf.key.classes) throw fail("class count differs from key");

    const TokenId token = x->get<TokenId>();
    CounterStream stream(seed, record++);
    const WatermarkedOutput o = respond(kf.key, cfg, token, p, stream);
    result += "{\"x\": " + std::to_string(token);
    if (o.soft) {
      result += ", \"probs\": " + join_reals(o.soft->values());
    } else {
      result += ", \"label\": " + std::to_string(*o.hard);
    }
    result += o.selected ? ", \"selected\": true}\n" : ", \"selected\": false}\n";
  }
  write_file_atomic(a.out, result);
  out << "watermarked " << record << " records into " << a.out << '\n';
  return kExitOk;
}

int do_detect(const DetectArgs& a, std::ostream& out) {
  const KeyFile kf = load_key_file(a.key);
  WatermarkConfig cfg = kf.config.value_or(WatermarkConfig{});
  if (a.eps) cfg.epsilon = *a.eps;
  if (a.tau) cfg.tau = *a.tau;
  cfg.validate();

  auto in = open_input(a.probe);
  const auto records = read_probe_records(in);

  DetectionParams params;
  params.delta = a.delta;
  params.f_max = a.fmax;
  params.threshold = a.threshold;
  if (a.fmin) params.grid.f_min = *a.fmin;
  if (a.fstep) params.grid.step = *a.fstep;
  params.grid.f_max = params.f_max;

  const DetectionReport report =
      detect_watermark(kf.key, cfg, records, params, a.series);
  write_file_atomic(a.report, report_to_json(report));
  if (!a.spectrum.empty() && report.warning != DetectionWarning::kTooFewProbes) {
    const auto spectrum = lomb_scargle(build_probe_series(kf.key, cfg, records),
                                       params.grid.values());
    std::ostringstream text;
    write_spectrum(text, spectrum);
    write_file_atomic(a.spectrum, text.str());
  }
  out << "p_snr " << format_real(report.snr.p_snr) << " decision "
      << (report.positive ? "positive" : "negative");
  if (report.warning != DetectionWarning::kNone) {
    out << " warning " << to_string(report.warning);
  }
  out << '\n';
  return report.warning == DetectionWarning::kTooFewProbes ? kExitTooFewProbes
                                                           : kExitOk;
}

int do_simulate(const SimulateArgs& a, std::ostream& out) {
  const sim::ExperimentConfig config =
      sim::parse_experiment_config(read_file(a.config));
  const sim::ExperimentResult result = sim::run_detection_experiment(config);
  write_file_atomic(a.out, sim::experiment_result_to_json(result));
  if (!a.probe_out.empty()) {
    std::string text;
    for (const auto& r : result.example_probes) text += format_probe_record(r) + "\n";
    write_file_atomic(a.probe_out, text);
  }
  if (!a.key_out.empty()) {
    WatermarkConfig cfg = config.watermark;
    save_key(a.key_out, sim::experiment_key(config), cfg);
  }
  out << "map_soft " << format_real(result.map_soft()) << " map_hard "
      << format_real(result.map_hard()) << " example_snr "
      << format_real(result.example_snr) << '\n';
  return kExitOk;
}

int do_sweep(const SweepArgs& a, std::ostream& out) {
  const sim::ExperimentConfig config =
      sim::parse_experiment_config(read_file(a.config));
  const auto param = sim::parse_sweep_parameter(a.param);
  const auto rows = sim::sweep_parameter(config, param, a.values, a.replicates);
  std::ostringstream text;
  sim::write_sweep_table(text, param, rows);
  write_file_atomic(a.out, text.str());
  out << text.str();
  return kExitOk;
}

int do_eval_map(const EvalMapArgs& a, std::ostream& out) {
  auto in = open_input(a.in);
  std::vector<RankingTrial> trials;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json doc = json::parse(line, nullptr, false);
    RankingTrial t;
    try {
      if (doc.is_discarded() || !doc.is_object()) throw std::runtime_error("");
      t.positive_scores = doc.at("positive_scores").get<std::vector<double>>();
      t.negative_scores = doc.at("negative_scores").get<std::vector<double>>();
      if (auto h = doc.find("higher_is_positive"); h != doc.end()) {
        t.higher_is_positive = h->get<bool>();
      }
    } catch (const std::exception&) {
      throw Error(ErrorKind::kCorruptFile,
                  a.in + " line " + std::to_string(line_no) +
                      ": expected {\"positive_scores\": [...], "
                      "\"negative_scores\": [...]}");
    }
    trials.push_back(std::move(t));
  }
  std::vector<double> ap;
  for (const auto& t : trials) ap.push_back(average_precision(t));
  const double map = mean_average_precision(trials);
  if (!a.out.empty()) {
    json doc = {{"map", map}, {"trials", trials.size()}, {"ap", real_array(ap)}};
    write_file_atomic(a.out, doc.dump(2) + "\n");
  }
  out << "map " << format_real(map) << '\n';
  return kExitOk;
}

const CLI::App* active_subcommand(const CLI::App& app) {
  for (const auto* sub : app.get_subcommands({})) {
    if (sub->parsed()) return sub;
  }
  return nullptr;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"Keyed output watermarking and spectral detection", "drw"};
  app.require_subcommand(1);

  KeygenArgs kg;
  auto* keygen = app.add_subcommand("keygen", "Generate a watermark key file");
  keygen->add_option("--classes", kg.classes, "Class count m")
      ->required()->check(CLI::Range(std::size_t{2}, std::size_t{1} << 20));
  keygen->add_option("--vocab", kg.vocab, "Vocabulary size")
      ->required()->check(CLI::PositiveNumber);
  keygen->add_option("--dim", kg.dim, "Projection dimension n")
      ->required()->check(CLI::PositiveNumber);
  keygen->add_option("--freq", kg.freq, "Signal frequency f_w")
      ->required()->check(CLI::PositiveNumber);
  keygen->add_option("--target-class", kg.target_class, "Target class c*")
      ->required();
  keygen->add_option("--eps", kg.eps, "Watermark level")
      ->required()->check(CLI::Range(0.0, 0.5));
  keygen->add_option("--tau", kg.tau, "Selection ratio")
      ->required()->check(CLI::Range(0.0, 1.0));
  keygen->add_option("--seed", kg.seed, "Generator seed")->required();
  keygen->add_option("--out", kg.out, "Key file to write")->required();

  WatermarkArgs wa;
  auto* watermark =
      app.add_subcommand("watermark", "Watermark a file of prediction records");
  watermark->add_option("--key", wa.key, "Key file")->required();
  watermark->add_option("--mode", wa.mode, "soft or hard")
      ->required()->check(CLI::IsMember({"soft", "hard"}));
  watermark->add_option("--in", wa.in, "Prediction records")->required();
  watermark->add_option("--out", wa.out, "Watermarked records")->required();
  watermark->add_option("--seed", wa.seed, "Sampling seed (hard mode)");

  DetectArgs da;
  auto* detect = app.add_subcommand("detect", "Score a probe file against a key");
  detect->add_option("--key", da.key, "Key file")->required();
  detect->add_option("--probe", da.probe, "Probe records")->required();
  detect->add_option("--delta", da.delta, "Signal window width")
      ->required()->check(CLI::PositiveNumber);
  detect->add_option("--fmax", da.fmax, "Maximum frequency F")
      ->required()->check(CLI::PositiveNumber);
  detect->add_option("--threshold", da.threshold, "Decision threshold")
      ->required();
  detect->add_option("--report", da.report, "Report to write")->required();
  detect->add_option("--fmin", da.fmin, "Lowest grid frequency")
      ->check(CLI::PositiveNumber);
  detect->add_option("--fstep", da.fstep, "Grid step")->check(CLI::PositiveNumber);
  detect->add_option("--eps", da.eps, "Override the key file's epsilon")
      ->check(CLI::Range(0.0, 0.5));
  detect->add_option("--tau", da.tau, "Override the key file's tau")
      ->check(CLI::Range(0.0, 1.0));
  detect->add_option("--spectrum", da.spectrum, "Two-column spectrum output");
  detect->add_flag("--series", da.series, "Echo the probe series in the report");

  SimulateArgs sa;
  auto* simulate =
      app.add_subcommand("simulate", "Run a simulated detection experiment");
  simulate->add_option("--config", sa.config, "Experiment config")
      ->required()->check(CLI::ExistingFile);
  simulate->add_option("--out", sa.out, "Result document")->required();
  simulate->add_option("--probe-out", sa.probe_out,
                       "Probe records of the first positive student");
  simulate->add_option("--key-out", sa.key_out, "Key file of the experiment");

  SweepArgs sw;
  auto* sweep = app.add_subcommand("sweep", "Sweep one experiment parameter");
  sweep->add_option("--config", sw.config, "Base experiment config")
      ->required()->check(CLI::ExistingFile);
  sweep->add_option("--param", sw.param, "epsilon, tau or target_class_mass")
      ->required()->check(CLI::IsMember({"epsilon", "tau", "target_class_mass"}));
  sweep->add_option("--values", sw.values, "Comma-separated values")
      ->required()->delimiter(',');
  sweep->add_option("--out", sw.out, "Table to write")->required();
  sweep->add_option("--replicates", sw.replicates, "Seeds per value")
      ->check(CLI::PositiveNumber);

  EvalMapArgs ea;
  auto* eval_map =
      app.add_subcommand("eval-map", "Mean average precision of ranking trials");
  eval_map->add_option("--in", ea.in, "One trial per line")->required();
  eval_map->add_option("--out", ea.out, "Result document");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    const auto* sub = active_subcommand(app);
    out << (sub ? sub->help() : app.help());
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "drw: " << e.what() << "\n\n";
    const auto* sub = active_subcommand(app);
    err << (sub ? sub->help() : app.help());
    return kExitUsage;
  }

  try {
    if (keygen->parsed()) return do_keygen(kg, out);
    if (watermark->parsed()) {
      if (wa.mode == "hard" && !wa.seed) {
        err << "drw: --seed is required in hard mode\n\n" << watermark->help();
        return kExitUsage;
      }
      return do_watermark(wa, out);
    }
    if (detect->parsed()) return do_detect(da, out);
    if (simulate->parsed()) return do_simulate(sa, out);
    if (sweep->parsed()) return do_sweep(sw, out);
    if (eval_map->parsed()) return do_eval_map(ea, out);
  } catch (const Error& e) {
    err << "drw: " << to_string(e.kind()) << ": " << e.what() << '\n';
    return e.kind() == ErrorKind::kTooFewProbes ? kExitTooFewProbes : kExitData;
  } catch (const std::exception& e) {
    err << "drw: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace drw
