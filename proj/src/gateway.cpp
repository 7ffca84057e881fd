#include "nsfwguard/gateway.hpp"

#include <httplib.h>

#include <charconv>
#include <cstdlib>
#include <iostream>
#include <json.hpp>

#include "base64.hpp"
#include "binary_io.hpp"

namespace nsfwguard {
namespace {

using Clock = std::chrono::steady_clock;

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

double parse_threshold(const std::string& text, std::string_view origin) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError(std::string(origin) + ": threshold is not a number: " + text);
  }
  return v;
}

int parse_port(const std::string& text, std::string_view origin) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError(std::string(origin) + ": port is not an integer: " + text);
  }
  return v;
}

std::string error_json(const std::string& message) {
  return nlohmann::json{{"error", message}}.dump();
}

ImageTensor decode_payload(const std::string& b64) {
  auto bytes = detail::base64_decode(b64);
  if (!bytes) throw GatewayError(400, "image_b64 is not valid base64");
  try {
    return decode_image_file(*bytes);
  } catch (const Error& e) {
    throw GatewayError(400, std::string("malformed image: ") + e.what());
  }
}

}  // namespace

std::string_view to_string(CheckMode mode) {
  switch (mode) {
    case CheckMode::kPreGen: return "PRE_GEN";
    case CheckMode::kPostGen: return "POST_GEN";
    case CheckMode::kPair: return "PAIR";
  }
  return "?";
}

std::string_view to_string(Decision decision) {
  return decision == Decision::kNsfw ? "NSFW" : "SAFE";
}

std::optional<CheckMode> parse_check_mode(std::string_view token) {
  for (auto m : {CheckMode::kPreGen, CheckMode::kPostGen, CheckMode::kPair}) {
    if (token == to_string(m)) return m;
  }
  return std::nullopt;
}

void validate_request(const ModerationRequest& request) {
  const bool p = request.prompt.has_value();
  const bool i = request.image_b64.has_value();
  bool ok = false;
  switch (request.mode) {
    case CheckMode::kPreGen: ok = p && !i; break;
    case CheckMode::kPostGen: ok = !p && i; break;
    case CheckMode::kPair: ok = p && i; break;
  }
  if (!ok) {
    std::string fields = p && i ? "prompt and image_b64" : p ? "prompt only" : i ? "image_b64 only" : "no fields";
    throw GatewayError(400, std::string(to_string(request.mode)) + " does not accept " + fields);
  }
}

ModerationRequest parse_request(std::string_view body) {
  auto json = nlohmann::json::parse(body, nullptr, false);
  if (json.is_discarded() || !json.is_object()) throw GatewayError(400, "body is not a JSON object");
  if (!json.contains("mode") || !json["mode"].is_string()) {
    throw GatewayError(400, "missing \"mode\"");
  }
  auto mode = parse_check_mode(json["mode"].get<std::string>());
  if (!mode) throw GatewayError(400, "unknown mode " + json["mode"].get<std::string>());
  ModerationRequest req;
  req.mode = *mode;
  for (const char* key : {"prompt", "image_b64"}) {
    if (!json.contains(key) || json[key].is_null()) continue;
    if (!json[key].is_string()) throw GatewayError(400, std::string(key) + " must be a string");
    (std::string_view(key) == "prompt" ? req.prompt : req.image_b64) = json[key].get<std::string>();
  }
  return req;
}

std::string response_json(const ModerationResponse& r) {
  return nlohmann::json{{"decision", to_string(r.decision)},
                        {"score", r.score},
                        {"mode_used", to_string(r.mode_used)},
                        {"model_version", r.model_version},
                        {"latency_ms", r.latency_ms}}
      .dump();
}

ImageTensor neutral_image(std::size_t size) { return ImageTensor(size, size, 0.5f); }

ModerationService::ModerationService(double threshold) : threshold_(threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must lie in (0,1)");
}

ModerationService::ModerationService(std::shared_ptr<const Model> model, double threshold)
    : ModerationService(threshold) {
  swap_model(std::move(model));
}

void ModerationService::swap_model(std::shared_ptr<const Model> model) {
  Snapshot next;
  if (model) next.version = nsfwguard::model_version(*model);
  next.model = std::move(model);
  std::lock_guard lock(mutex_);
  current_ = std::move(next);
}

void ModerationService::load(const std::filesystem::path& checkpoint) {
  swap_model(std::make_shared<const Model>(read_checkpoint(checkpoint)));
}

ModerationService::Snapshot ModerationService::snapshot() const {
  std::lock_guard lock(mutex_);
  return current_;
}

bool ModerationService::loaded() const { return snapshot().model != nullptr; }

std::string ModerationService::model_version() const { return snapshot().version; }

ModerationResponse ModerationService::score(const Snapshot& snap, std::string_view prompt,
                                            const ImageTensor& image, CheckMode mode,
                                            Clock::time_point start) const {
  if (!snap.model) throw GatewayError(503, "no checkpoint loaded");
  const auto size = snap.model->config().image_size;
  if (image.height() != size || image.width() != size) {
    throw GatewayError(400, "image must be " + std::to_string(size) + "x" + std::to_string(size));
  }
  if (!image.valid()) throw GatewayError(400, "image values outside [0,1]");
  ModerationResponse r;
  r.score = snap.model->prob_nsfw(prompt, image);
  r.decision = is_nsfw(r.score, threshold_) ? Decision::kNsfw : Decision::kSafe;
  r.mode_used = mode;
  r.model_version = snap.version;
  r.latency_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
  return r;
}

ModerationResponse ModerationService::check_pair(std::string_view prompt,
                                                 const ImageTensor& image) const {
  return score(snapshot(), prompt, image, CheckMode::kPair, Clock::now());
}

ModerationResponse ModerationService::check_prompt(std::string_view prompt) const {
  const auto start = Clock::now();
  if (prompt.empty()) throw GatewayError(400, "prompt must be non-empty");
  const Snapshot snap = snapshot();
  if (!snap.model) throw GatewayError(503, "no checkpoint loaded");
  return score(snap, prompt, neutral_image(snap.model->config().image_size), CheckMode::kPreGen,
               start);
}

ModerationResponse ModerationService::check_image(const ImageTensor& image) const {
  return score(snapshot(), "", image, CheckMode::kPostGen, Clock::now());
}

ModerationResponse ModerationService::handle(const ModerationRequest& request) const {
  validate_request(request);
  switch (request.mode) {
    case CheckMode::kPreGen:
      return check_prompt(*request.prompt);
    case CheckMode::kPostGen:
      return check_image(decode_payload(*request.image_b64));
    case CheckMode::kPair:
      return check_pair(*request.prompt, decode_payload(*request.image_b64));
  }
  throw GatewayError(400, "unknown mode");
}

ModerationService::HttpReply ModerationService::handle_http_check(std::string_view body) const {
  try {
    return {200, response_json(handle(parse_request(body)))};
  } catch (const GatewayError& e) {
    return {e.status(), error_json(e.what())};
  } catch (const std::exception& e) {
    return {500, error_json(e.what())};
  }
}

ModerationService::HttpReply ModerationService::handle_http_health() const {
  const Snapshot snap = snapshot();
  if (!snap.model) {
    return {503, nlohmann::json{{"status", "no_model"}, {"model_version", nullptr}}.dump()};
  }
  return {200, nlohmann::json{{"status", "ok"}, {"model_version", snap.version}}.dump()};
}

std::optional<std::string> process_env(const char* name) {
  if (const char* v = std::getenv(name); v && *v) return std::string(v);
  return std::nullopt;
}

std::map<std::string, std::string> parse_config_text(std::string_view text) {
  std::map<std::string, std::string> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    const std::string line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(line_no, "expected key=value");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    if (key.empty()) throw ParseError(line_no, "empty key");
    out[key] = trim(std::string_view(line).substr(eq + 1));
  }
  return out;
}

GatewayConfig resolve_gateway_config(const GatewayOverrides& overrides, const EnvLookup& env) {
  GatewayConfig config;
  if (overrides.config_file) {
    const auto file = parse_config_text(detail::read_file(*overrides.config_file));
    const std::string origin = overrides.config_file->string();
    for (const auto& [key, value] : file) {
      if (key == "ckpt") config.ckpt = value;
      else if (key == "threshold") config.threshold = parse_threshold(value, origin);
      else if (key == "port") config.port = parse_port(value, origin);
      else if (key == "host") config.host = value;
      else throw ConfigError(origin + ": unknown key " + key);
    }
  }
  if (auto v = env("NSFWGUARD_CKPT")) config.ckpt = *v;
  if (auto v = env("NSFWGUARD_THRESHOLD")) config.threshold = parse_threshold(*v, "NSFWGUARD_THRESHOLD");
  if (auto v = env("NSFWGUARD_PORT")) config.port = parse_port(*v, "NSFWGUARD_PORT");
  if (overrides.ckpt) config.ckpt = *overrides.ckpt;
  if (overrides.threshold) config.threshold = *overrides.threshold;
  if (overrides.port) config.port = *overrides.port;
  if (overrides.host) config.host = *overrides.host;

  if (!(config.threshold > 0.0 && config.threshold < 1.0)) {
    throw ConfigError("threshold must lie in (0,1)");
  }
  if (config.port < 0 || config.port > 65535) throw ConfigError("port must lie in [0,65535]");
  return config;
}

GatewayServer::GatewayServer(const ModerationService& service, bool access_log)
    : service_(service), server_(std::make_unique<httplib::Server>()) {
  server_->Post("/v1/check", [this](const httplib::Request& req, httplib::Response& res) {
    auto reply = service_.handle_http_check(req.body);
    res.status = reply.status;
    res.set_content(reply.body, "application/json");
  });
  server_->Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) {
    auto reply = service_.handle_http_health();
    res.status = reply.status;
    res.set_content(reply.body, "application/json");
  });
  if (access_log) {
    server_->set_logger([](const httplib::Request& req, const httplib::Response& res) {
      std::cout << req.remote_addr + " " + req.method + " " + req.path + " " +
                       std::to_string(res.status) + "\n"
                << std::flush;
    });
  }
}

GatewayServer::~GatewayServer() { stop(); }

int GatewayServer::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = server_->bind_to_any_port(host);
  } else if (!server_->bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound <= 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return bound;
}

void GatewayServer::run(const std::string& host, int port) {
  if (!server_->bind_to_port(host, port)) {
    throw IoError("cannot bind " + host + ":" + std::to_string(port));
  }
  server_->listen_after_bind();
}

void GatewayServer::stop() {
  server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace nsfwguard
