#include "drw/keys.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "drw/error.hpp"
#include "drw/json_io.hpp"
#include "drw/random.hpp"
#include "json.hpp"

namespace drw {

namespace {

using nlohmann::json;

[[noreturn]] void invalid_dim(const std::string& what) {
  throw Error(ErrorKind::kInvalidDimension, what);
}

void check_unit_interval(const std::vector<double>& v, const char* name) {
  for (double e : v) {
    if (!(e >= 0.0 && e < 1.0)) {
      invalid_dim(std::string(name) + " entries must lie in [0,1)");
    }
  }
}

const json& require(const json& doc, const char* field) {
  auto it = doc.find(field);
  if (it == doc.end()) {
    throw Error(ErrorKind::kCorruptFile,
                std::string("key file: missing field \"") + field + "\"");
  }
  return *it;
}

[[noreturn]] void bad_field(const char* field, const char* expected) {
  throw Error(ErrorKind::kCorruptFile, std::string("key file: field \"") +
                                           field + "\" must be " + expected);
}

std::size_t read_count(const json& doc, const char* field) {
  const json& v = require(doc, field);
  if (!v.is_number_unsigned()) bad_field(field, "a non-negative integer");
  return v.get<std::size_t>();
}

double read_real(const json& doc, const char* field) {
  const json& v = require(doc, field);
  if (!v.is_number()) bad_field(field, "a number");
  return v.get<double>();
}

std::vector<double> read_vector(const json& v, const char* field) {
  if (!v.is_array()) bad_field(field, "an array of numbers");
  std::vector<double> out;
  out.reserve(v.size());
  for (const auto& e : v) {
    if (!e.is_number()) bad_field(field, "an array of numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

void append_vector(std::string& out, std::span<const double> v) {
  out += '[';
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    out += format_real(v[i]);
  }
  out += ']';
}

}  // namespace

const char* to_string(OutputMode mode) {
  return mode == OutputMode::kSoft ? "soft" : "hard";
}

OutputMode parse_output_mode(std::string_view text) {
  if (text == "soft") return OutputMode::kSoft;
  if (text == "hard") return OutputMode::kHard;
  throw Error(ErrorKind::kInvalidArgument,
              "mode must be soft or hard, got \"" + std::string(text) + "\"");
}

std::span<const double> WatermarkKey::token_row(TokenId x) const {
  if (x >= vocab_size) {
    throw Error(ErrorKind::kOutOfVocabulary,
                "token " + std::to_string(x) + " outside vocabulary of size " +
                    std::to_string(vocab_size));
  }
  return {token_matrix.data() + x * dim, dim};
}

void WatermarkKey::validate() const {
  if (classes < 2) invalid_dim("class count must be >= 2");
  if (vocab_size < 1) invalid_dim("vocabulary size must be >= 1");
  if (dim < 1) invalid_dim("key dimension must be >= 1");
  if (target_class >= classes) invalid_dim("target class out of range");
  if (!(frequency > 0.0) || !std::isfinite(frequency)) {
    invalid_dim("frequency must be positive");
  }
  if (phase_vector.size() != dim) {
    throw Error(ErrorKind::kDimensionMismatch, "v_k length differs from dim");
  }
  if (selection_vector.size() != dim) {
    throw Error(ErrorKind::kDimensionMismatch, "v_s length differs from dim");
  }
  if (token_matrix.size() != vocab_size * dim) {
    throw Error(ErrorKind::kDimensionMismatch,
                "M must have vocab_size x dim entries");
  }
  check_unit_interval(phase_vector, "v_k");
  check_unit_interval(selection_vector, "v_s");
  for (double e : token_matrix) {
    if (!std::isfinite(e)) invalid_dim("M entries must be finite");
  }
}

void WatermarkConfig::validate() const {
  if (!(epsilon >= 0.0 && epsilon <= 0.5)) {
    throw Error(ErrorKind::kInvalidArgument, "epsilon must lie in [0, 0.5]");
  }
  if (!(tau >= 0.0 && tau <= 1.0)) {
    throw Error(ErrorKind::kInvalidArgument, "tau must lie in [0, 1]");
  }
}

WatermarkKey generate_key(const KeySpec& spec) {
  WatermarkKey key;
  key.classes = spec.classes;
  key.vocab_size = spec.vocab_size;
  key.dim = spec.dim;
  key.frequency = spec.frequency;
  key.target_class = spec.target_class;
  // Sizes are checked before allocating anything large.
  if (spec.classes < 2 || spec.vocab_size < 1 || spec.dim < 1 ||
      spec.target_class >= spec.classes || !(spec.frequency > 0.0)) {
    key.validate();
  }

  std::mt19937_64 rng(splitmix64(spec.seed));
  std::normal_distribution<double> normal(0.0, 1.0);
  key.phase_vector.resize(spec.dim);
  key.selection_vector.resize(spec.dim);
  for (auto& v : key.phase_vector) v = uniform01(rng);
  for (auto& v : key.selection_vector) v = uniform01(rng);
  key.token_matrix.resize(spec.vocab_size * spec.dim);
  for (auto& m : key.token_matrix) m = normal(rng);
  return key;
}

double standard_normal_cdf(double z) {
  return 0.5 * std::erfc(-z * M_SQRT1_2);
}

double hash_value(const WatermarkKey& key, std::span<const double> v,
                  TokenId x) {
  const auto row = key.token_row(x);
  if (v.size() != row.size()) {
    throw Error(ErrorKind::kDimensionMismatch,
                "projection vector length differs from key dimension");
  }
  double dot = 0.0;
  for (std::size_t i = 0; i < row.size(); ++i) dot += v[i] * row[i];
  const double g =
      standard_normal_cdf(dot / std::sqrt(static_cast<double>(key.dim) / 3.0));
  constexpr double kBelowOne = 1.0 - std::numeric_limits<double>::epsilon() / 2;
  return g < 1.0 ? g : kBelowOne;
}

bool is_selected(const WatermarkKey& key, const WatermarkConfig& cfg,
                 TokenId x) {
  return selection_hash(key, x) <= cfg.tau;
}

bool is_selected_for_serving(const WatermarkKey& key,
                             const WatermarkConfig& cfg, TokenId x) {
  return x < key.vocab_size && is_selected(key, cfg, x);
}

std::string serialize_key(const WatermarkKey& key,
                          const std::optional<WatermarkConfig>& config) {
  key.validate();
  std::string out;
  out.reserve(key.token_matrix.size() * 25 + 4096);
  out += "{\n";
  out += "  \"version\": " + std::to_string(kKeyFileVersion) + ",\n";
  out += "  \"m\": " + std::to_string(key.classes) + ",\n";
  out += "  \"vocab_size\": " + std::to_string(key.vocab_size) + ",\n";
  out += "  \"dim\": " + std::to_string(key.dim) + ",\n";
  out += "  \"f_w\": " + format_real(key.frequency) + ",\n";
  out += "  \"target_class\": " + std::to_string(key.target_class) + ",\n";
  if (config) {
    out += "  \"config\": {\"epsilon\": " + format_real(config->epsilon) +
           ", \"tau\": " + format_real(config->tau) + "},\n";
  }
  out += "  \"v_k\": ";
  append_vector(out, key.phase_vector);
  out += ",\n  \"v_s\": ";
  append_vector(out, key.selection_vector);
  out += ",\n  \"M\": [\n";
  for (std::size_t r = 0; r < key.vocab_size; ++r) {
    out += "    ";
    append_vector(out, key.token_row(r));
    out += r + 1 < key.vocab_size ? ",\n" : "\n";
  }
  out += "  ]\n}\n";
  return out;
}

KeyFile parse_key(std::string_view text) {
  json doc = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded() || !doc.is_object()) {
    throw Error(ErrorKind::kCorruptFile, "key file: not a JSON document");
  }
  const std::size_t version = read_count(doc, "version");
  if (version != static_cast<std::size_t>(kKeyFileVersion)) {
    throw Error(ErrorKind::kCorruptFile,
                "key file: field \"version\" unsupported: " +
                    std::to_string(version));
  }
  KeyFile file;
  WatermarkKey& key = file.key;
  key.classes = read_count(doc, "m");
  key.vocab_size = read_count(doc, "vocab_size");
  key.dim = read_count(doc, "dim");
  key.frequency = read_real(doc, "f_w");
  key.target_class = read_count(doc, "target_class");
  key.phase_vector = read_vector(require(doc, "v_k"), "v_k");
  if (key.phase_vector.size() != key.dim) {
    throw Error(ErrorKind::kDimensionMismatch,
                "key file: \"v_k\" has " +
                    std::to_string(key.phase_vector.size()) +
                    " entries, expected dim = " + std::to_string(key.dim));
  }
  key.selection_vector = read_vector(require(doc, "v_s"), "v_s");
  if (key.selection_vector.size() != key.dim) {
    throw Error(ErrorKind::kDimensionMismatch,
                "key file: \"v_s\" has " +
                    std::to_string(key.selection_vector.size()) +
                    " entries, expected dim = " + std::to_string(key.dim));
  }
  const json& rows = require(doc, "M");
  if (!rows.is_array()) bad_field("M", "an array of rows");
  if (rows.size() != key.vocab_size) {
    throw Error(ErrorKind::kDimensionMismatch,
                "key file: \"M\" has " + std::to_string(rows.size()) +
                    " rows, expected vocab_size = " +
                    std::to_string(key.vocab_size));
  }
  key.token_matrix.reserve(key.vocab_size * key.dim);
  for (const auto& row : rows) {
    auto values = read_vector(row, "M");
    if (values.size() != key.dim) {
      throw Error(ErrorKind::kDimensionMismatch,
                  "key file: \"M\" row has " + std::to_string(values.size()) +
                      " columns, expected dim = " + std::to_string(key.dim));
    }
    key.token_matrix.insert(key.token_matrix.end(), values.begin(),
                            values.end());
  }
  if (auto it = doc.find("config"); it != doc.end()) {
    if (!it->is_object()) bad_field("config", "an object");
    WatermarkConfig cfg;
    cfg.epsilon = read_real(*it, "epsilon");
    cfg.tau = read_real(*it, "tau");
    cfg.validate();
    file.config = cfg;
  }
  key.validate();
  return file;
}

void save_key(const std::filesystem::path& path, const WatermarkKey& key,
              const std::optional<WatermarkConfig>& config) {
  write_file_atomic(path, serialize_key(key, config));
}

KeyFile load_key_file(const std::filesystem::path& path) {
  return parse_key(read_file(path));
}

WatermarkKey load_key(const std::filesystem::path& path) {
  return load_key_file(path).key;
}

}  // namespace drw
