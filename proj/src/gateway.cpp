#include "drw/gateway.hpp"

#include <httplib.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <istream>
#include <set>

#include "drw/error.hpp"
#include "drw/json_io.hpp"
#include "json.hpp"

namespace drw::gateway {

namespace {

using nlohmann::json;

HttpReply error_reply(int status, const std::string& message) {
  return {status, json{{"error", message}}.dump() + "\n"};
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      now.time_since_epoch()) % 1000;
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ",
                tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday, tm.tm_hour,
                tm.tm_min, tm.tm_sec, static_cast<int>(ms.count()));
  return buf;
}

std::pair<std::string, std::string> split_url(const std::string& url) {
  const auto scheme = url.find("://");
  const auto host_start = scheme == std::string::npos ? 0 : scheme + 3;
  const auto slash = url.find('/', host_start);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

}  // namespace

// ---------------------------------------------------------------------------

GatewayConfig parse_gateway_config(std::string_view json_text,
                                   const std::filesystem::path& base_dir) {
  json doc = json::parse(json_text, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) {
    throw Error(ErrorKind::kCorruptFile, "gateway config: not a JSON object");
  }
  auto resolve = [&](const std::string& p) -> std::filesystem::path {
    std::filesystem::path path(p);
    return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
  };
  GatewayConfig c;
  std::string field;
  try {
    field = "upstream_url";
    c.upstream_url = doc.at(field).get<std::string>();
    field = "listen_address";
    if (doc.contains(field)) c.listen_address = doc[field].get<std::string>();
    field = "port";
    if (doc.contains(field)) c.port = doc[field].get<int>();
    field = "log_path";
    c.log_path = resolve(doc.at(field).get<std::string>());
    field = "state_path";
    if (doc.contains(field)) c.state_path = resolve(doc[field].get<std::string>());
    field = "timeout_ms";
    if (doc.contains(field)) c.timeout_ms = doc[field].get<int>();
    field = "tokens";
    const json& tokens = doc.at(field);
    if (!tokens.is_object() || tokens.empty()) {
      throw Error(ErrorKind::kCorruptFile, "gateway config: \"tokens\" must be a non-empty object");
    }
    for (auto it = tokens.begin(); it != tokens.end(); ++it) {
      field = "tokens." + it.key();
      TokenConfig t;
      t.key_path = resolve(it->at("key").get<std::string>());
      if (it->contains("epsilon")) t.watermark.epsilon = (*it)["epsilon"].get<double>();
      if (it->contains("tau")) t.watermark.tau = (*it)["tau"].get<double>();
      if (it->contains("mode")) {
        t.watermark.mode = parse_output_mode((*it)["mode"].get<std::string>());
      }
      if (it->contains("seed")) t.seed = (*it)["seed"].get<std::uint64_t>();
      t.watermark.validate();
      c.tokens.emplace(it.key(), std::move(t));
    }
  } catch (const json::exception&) {
    throw Error(ErrorKind::kCorruptFile,
                "gateway config: missing or bad field \"" + field + "\"");
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kCorruptFile) throw;
    throw Error(ErrorKind::kCorruptFile,
                "gateway config: field \"" + field + "\": " + e.what());
  }
  if (c.timeout_ms <= 0) {
    throw Error(ErrorKind::kCorruptFile, "gateway config: timeout_ms must be positive");
  }
  return c;
}

GatewayConfig load_gateway_config(const std::filesystem::path& path) {
  return parse_gateway_config(read_file(path), path.parent_path());
}

// ---------------------------------------------------------------------------

HttpUpstream::HttpUpstream(std::string url, int timeout_ms)
    : timeout_ms_(timeout_ms) {
  std::tie(origin_, path_) = split_url(url);
}

std::vector<std::vector<double>> HttpUpstream::predict(
    std::span<const TokenId> xs) {
  httplib::Client client(origin_);
  const auto timeout = std::chrono::milliseconds(timeout_ms_);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  const json request = {{"x", std::vector<TokenId>(xs.begin(), xs.end())}};
  auto res = client.Post(path_, request.dump(), "application/json");
  if (!res) {
    throw Error(ErrorKind::kIo, "upstream unreachable: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw Error(ErrorKind::kIo, "upstream answered HTTP " + std::to_string(res->status));
  }
  json doc = json::parse(res->body, nullptr, false);
  if (doc.is_discarded() || !doc.contains("probs")) {
    throw Error(ErrorKind::kCorruptFile, "upstream reply lacks \"probs\"");
  }
  try {
    return doc["probs"].get<std::vector<std::vector<double>>>();
  } catch (const json::exception&) {
    throw Error(ErrorKind::kCorruptFile, "upstream \"probs\" is not a list of vectors");
  }
}

std::optional<std::string> HttpUpstream::probe() {
  httplib::Client client(origin_);
  const auto timeout = std::chrono::milliseconds(timeout_ms_);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  auto res = client.Get(path_);
  if (!res) return "upstream unreachable: " + httplib::to_string(res.error());
  if (res->status >= 500) return "upstream answered HTTP " + std::to_string(res->status);
  return std::nullopt;
}

// ---------------------------------------------------------------------------

Gateway::Gateway(GatewayConfig config, std::unique_ptr<Upstream> upstream)
    : config_(std::move(config)), upstream_(std::move(upstream)) {
  if (!upstream_) {
    upstream_ = std::make_unique<HttpUpstream>(config_.upstream_url, config_.timeout_ms);
  }
  for (const auto& [token, tc] : config_.tokens) {
    Tenant tenant;
    try {
      tenant.key = load_key(tc.key_path);
    } catch (const Error& e) {
      throw Error(e.kind(), "key for token \"" + token + "\" at " +
                                tc.key_path.string() + ": " + e.what());
    }
    tenant.watermark = tc.watermark;
    tenant.seed = tc.seed;
    keys_.emplace(token, std::move(tenant));
  }
  if (!config_.state_path.empty() && std::filesystem::exists(config_.state_path)) {
    json doc = json::parse(read_file(config_.state_path), nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) {
      throw Error(ErrorKind::kCorruptFile,
                  "gateway state " + config_.state_path.string() + " is corrupt");
    }
    for (auto it = doc.begin(); it != doc.end(); ++it) {
      counters_[it.key()] = it->get<std::uint64_t>();
    }
  }
}

std::uint64_t Gateway::reserve_counter(const std::string& token, std::size_t n) {
  std::lock_guard lock(state_mutex_);
  std::uint64_t& counter = counters_[token];
  const std::uint64_t first = counter;
  counter += n;
  if (!config_.state_path.empty()) {
    json doc = json::object();
    for (const auto& [t, c] : counters_) doc[t] = c;
    write_file_atomic(config_.state_path, doc.dump() + "\n");
  }
  return first;
}

void Gateway::append_log(std::string_view lines) {
  std::lock_guard lock(log_mutex_);
  std::ofstream out(config_.log_path, std::ios::app | std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot open log " + config_.log_path.string());
  out.write(lines.data(), static_cast<std::streamsize>(lines.size()));
  out.flush();
  if (!out) throw Error(ErrorKind::kIo, "cannot append to log " + config_.log_path.string());
}

HttpReply Gateway::handle_predict(std::string_view api_token,
                                  std::string_view body) {
  const auto tenant_it = keys_.find(api_token);
  if (tenant_it == keys_.end()) return error_reply(401, "unknown API token");
  const Tenant& tenant = tenant_it->second;
  const std::string token(api_token);

  json doc = json::parse(body, nullptr, false);
  if (doc.is_discarded() || !doc.is_object() || !doc.contains("x")) {
    return error_reply(400, "body must be {\"x\": int | [ints]}");
  }
  const json& xfield = doc["x"];
  const bool batch = xfield.is_array();
  std::vector<TokenId> xs;
  if (batch) {
    for (const auto& e : xfield) {
      if (!e.is_number_unsigned()) return error_reply(400, "\"x\" entries must be non-negative integers");
      xs.push_back(e.get<TokenId>());
    }
    if (xs.empty()) return error_reply(400, "\"x\" must not be empty");
  } else if (xfield.is_number_unsigned()) {
    xs.push_back(xfield.get<TokenId>());
  } else {
    return error_reply(400, "\"x\" must be a non-negative integer or a list of them");
  }

  std::vector<ProbabilityVector> clean;
  try {
    auto raw = upstream_->predict(xs);
    if (raw.size() != xs.size()) {
      return error_reply(502, "upstream returned " + std::to_string(raw.size()) +
                                  " vectors for " + std::to_string(xs.size()) + " inputs");
    }
    for (auto& v : raw) {
      if (v.size() != tenant.key.classes) {
        return error_reply(502, "upstream vector has wrong class count");
      }
      clean.push_back(ProbabilityVector::checked(std::move(v)));
    }
  } catch (const std::exception& e) {
    return error_reply(502, e.what());
  }

  json answers = json::array();
  std::string log;
  try {
    const std::uint64_t first = reserve_counter(token, xs.size());
    const std::string ts = utc_timestamp();
    for (std::size_t i = 0; i < xs.size(); ++i) {
      CounterStream stream(tenant.seed, first + i);
      const WatermarkedOutput o = respond(tenant.key, tenant.watermark, xs[i], clean[i], stream);
      if (o.soft) {
        answers.push_back(o.soft->vector());
      } else {
        answers.push_back(*o.hard);
      }
      log += json{{"ts", ts}, {"token", token}, {"x", xs[i]}, {"selected", o.selected}}.dump();
      log += '\n';
    }
    append_log(log);
  } catch (const std::exception& e) {
    return error_reply(500, std::string("watermarking failed: ") + e.what());
  }

  const char* field = tenant.watermark.mode == OutputMode::kSoft ? "probs" : "label";
  json reply = {{field, batch ? answers : answers.front()}};
  return {200, reply.dump() + "\n"};
}

HttpReply Gateway::handle_health() {
  const auto problem = upstream_->probe();
  json doc = {{"status", problem ? "degraded" : "ok"},
              {"upstream", problem ? "unreachable" : "reachable"},
              {"keys_loaded", keys_.size()}};
  if (problem) doc["reason"] = *problem;
  return {200, doc.dump() + "\n"};
}

// ---------------------------------------------------------------------------

struct Server::Impl {
  Gateway& gateway;
  httplib::Server http;
  explicit Impl(Gateway& g) : gateway(g) {}
};

Server::Server(Gateway& gateway) : impl_(std::make_unique<Impl>(gateway)) {
  auto& g = impl_->gateway;
  impl_->http.Post("/v1/predict", [&g](const httplib::Request& req, httplib::Response& res) {
    const HttpReply r = g.handle_predict(req.get_header_value("X-Api-Token"), req.body);
    res.status = r.status;
    res.set_content(r.body, "application/json");
  });
  impl_->http.Get("/v1/health", [&g](const httplib::Request&, httplib::Response& res) {
    const HttpReply r = g.handle_health();
    res.status = r.status;
    res.set_content(r.body, "application/json");
  });
}

Server::~Server() { stop(); }

int Server::bind(const std::string& host, int port) {
  if (port == 0) return impl_->http.bind_to_any_port(host);
  return impl_->http.bind_to_port(host, port) ? port : -1;
}

bool Server::run() { return impl_->http.listen_after_bind(); }

void Server::stop() {
  if (impl_) impl_->http.stop();
}

std::vector<TokenId> logged_tokens(std::istream& log, std::string_view api_token,
                                   bool unique) {
  std::vector<TokenId> out;
  std::set<TokenId> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(log, line)) {
    ++line_no;
    if (line.empty()) continue;
    json doc = json::parse(line, nullptr, false);
    if (doc.is_discarded() || !doc.contains("token") || !doc.contains("x")) {
      throw Error(ErrorKind::kCorruptFile,
                  "query log line " + std::to_string(line_no) + " is malformed");
    }
    if (doc["token"].get<std::string>() != api_token) continue;
    const auto x = doc["x"].get<TokenId>();
    if (unique && !seen.insert(x).second) continue;
    out.push_back(x);
  }
  return out;
}

}  // namespace drw::gateway
