#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace drw {

using TokenId = std::size_t;
using ClassIndex = std::size_t;

inline constexpr std::size_t kDefaultKeyDim = 128;
inline constexpr int kKeyFileVersion = 1;

/// Secret watermark key: target class, signal frequency, phase and
/// selection vectors, and the random token matrix that feeds the hash.
///
/// `frequency` is measured in cycles per unit hash value, so the carrier
/// is cos(2*pi*frequency*g).
struct WatermarkKey {
  std::size_t classes = 0;
  std::size_t vocab_size = 0;
  std::size_t dim = 0;
  double frequency = 0.0;
  ClassIndex target_class = 0;
  std::vector<double> phase_vector;
  std::vector<double> selection_vector;
  /// Row-major, vocab_size x dim.
  std::vector<double> token_matrix;

  std::span<const double> token_row(TokenId x) const;

  /// Throws Error(kInvalidDimension | kDimensionMismatch) on any violated
  /// invariant.
  void validate() const;

  bool operator==(const WatermarkKey&) const = default;
};

enum class OutputMode { kSoft, kHard };

const char* to_string(OutputMode mode);
OutputMode parse_output_mode(std::string_view text);

struct WatermarkConfig {
  double epsilon = 0.2;
  double tau = 0.5;
  OutputMode mode = OutputMode::kSoft;

  void validate() const;

  bool operator==(const WatermarkConfig&) const = default;
};

struct KeySpec {
  std::size_t classes = 2;
  std::size_t vocab_size = 0;
  std::size_t dim = kDefaultKeyDim;
  double frequency = 16.0;
  ClassIndex target_class = 0;
  std::uint64_t seed = 0;
};

/// M ~ N(0,1), v_k and v_s ~ U[0,1); deterministic in `spec.seed`.
WatermarkKey generate_key(const KeySpec& spec);

/// Standard normal CDF through erfc.
double standard_normal_cdf(double z);

/// Phi(v . M_x / sqrt(n/3)), clamped below 1.
double hash_value(const WatermarkKey& key, std::span<const double> v,
                  TokenId x);

inline double phase_hash(const WatermarkKey& key, TokenId x) {
  return hash_value(key, key.phase_vector, x);
}
inline double selection_hash(const WatermarkKey& key, TokenId x) {
  return hash_value(key, key.selection_vector, x);
}

bool is_selected(const WatermarkKey& key, const WatermarkConfig& cfg,
                 TokenId x);

/// Serving-side selection: out-of-vocabulary tokens are never selected.
bool is_selected_for_serving(const WatermarkKey& key,
                             const WatermarkConfig& cfg, TokenId x);

struct KeyFile {
  WatermarkKey key;
  /// epsilon/tau stored alongside the key by `keygen`; mode is chosen at
  /// serving time.
  std::optional<WatermarkConfig> config;
};

std::string serialize_key(const WatermarkKey& key,
                          const std::optional<WatermarkConfig>& config = {});
KeyFile parse_key(std::string_view text);

void save_key(const std::filesystem::path& path, const WatermarkKey& key,
              const std::optional<WatermarkConfig>& config = {});
KeyFile load_key_file(const std::filesystem::path& path);
WatermarkKey load_key(const std::filesystem::path& path);

}  // namespace drw
