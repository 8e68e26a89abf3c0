#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "drw/keys.hpp"
#include "drw/watermark.hpp"

namespace drw::gateway {

struct TokenConfig {
  std::filesystem::path key_path;
  WatermarkConfig watermark;
  /// Seed of the hard-label stream; positions come from the request counter.
  std::uint64_t seed = 0;
};

struct GatewayConfig {
  /// e.g. http://127.0.0.1:9000/predict
  std::string upstream_url;
  std::string listen_address = "127.0.0.1";
  int port = 8080;
  std::filesystem::path log_path;
  /// Per-token request counters survive restarts here; empty disables.
  std::filesystem::path state_path;
  int timeout_ms = 2000;
  std::map<std::string, TokenConfig, std::less<>> tokens;
};

/// Relative paths are resolved against `base_dir`.
GatewayConfig parse_gateway_config(std::string_view json_text,
                                   const std::filesystem::path& base_dir = {});
GatewayConfig load_gateway_config(const std::filesystem::path& path);

/// Source of clean probabilities.
class Upstream {
 public:
  virtual ~Upstream() = default;
  /// One vector per input, in order. Throws on any transport failure.
  virtual std::vector<std::vector<double>> predict(
      std::span<const TokenId> xs) = 0;
  /// Empty when reachable, otherwise the reason.
  virtual std::optional<std::string> probe() = 0;
};

/// POSTs {"x": [...]} to the URL and expects {"probs": [[...], ...]}.
class HttpUpstream final : public Upstream {
 public:
  HttpUpstream(std::string url, int timeout_ms);
  std::vector<std::vector<double>> predict(std::span<const TokenId> xs) override;
  std::optional<std::string> probe() override;

 private:
  std::string origin_;
  std::string path_;
  int timeout_ms_;
};

struct HttpReply {
  int status = 200;
  std::string body;
};

class Gateway {
 public:
  /// Loads every key; a missing or corrupt key file aborts construction
  /// with an Error naming the path.
  Gateway(GatewayConfig config, std::unique_ptr<Upstream> upstream);

  HttpReply handle_predict(std::string_view api_token, std::string_view body);
  HttpReply handle_health();

  std::size_t keys_loaded() const noexcept { return keys_.size(); }
  const GatewayConfig& config() const noexcept { return config_; }

 private:
  struct Tenant {
    WatermarkKey key;
    WatermarkConfig watermark;
    std::uint64_t seed = 0;
  };

  std::uint64_t reserve_counter(const std::string& token, std::size_t n);
  void append_log(std::string_view lines);

  GatewayConfig config_;
  std::unique_ptr<Upstream> upstream_;
  std::map<std::string, Tenant, std::less<>> keys_;
  std::mutex state_mutex_;
  std::map<std::string, std::uint64_t> counters_;
  std::mutex log_mutex_;
};

/// HTTP front end: POST /v1/predict, GET /v1/health.
class Server {
 public:
  explicit Server(Gateway& gateway);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Port 0 picks a free one. Returns the bound port, or -1.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  bool run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Token ids logged under `api_token`, in log order; `unique` keeps the
/// first occurrence of each.
std::vector<TokenId> logged_tokens(std::istream& log, std::string_view api_token,
                                   bool unique = false);

}  // namespace drw::gateway
