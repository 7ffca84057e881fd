#pragma once

// Moderation service for the two generation hook points: PRE_GEN checks a
// prompt before an image exists, POST_GEN checks a generated image, PAIR
// checks both together. Served as a small HTTP/1.1 JSON API.

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>

#include "nsfwguard/error.hpp"
#include "nsfwguard/fusion.hpp"
#include "nsfwguard/image.hpp"
#include "nsfwguard/model.hpp"

namespace httplib {
class Server;
}

namespace nsfwguard {

enum class CheckMode { kPreGen, kPostGen, kPair };
enum class Decision { kSafe, kNsfw };

std::string_view to_string(CheckMode mode);
std::string_view to_string(Decision decision);
std::optional<CheckMode> parse_check_mode(std::string_view token);

/// Carries the HTTP status the failure maps to (400 or 503).
class GatewayError : public Error {
 public:
  GatewayError(int status, const std::string& what) : Error(what), status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

struct ModerationRequest {
  CheckMode mode = CheckMode::kPair;
  std::optional<std::string> prompt;
  std::optional<std::string> image_b64;
};

struct ModerationResponse {
  Decision decision = Decision::kSafe;
  double score = 0.0;
  CheckMode mode_used = CheckMode::kPair;
  std::string model_version;
  double latency_ms = 0.0;
};

/// PRE_GEN carries only a prompt, POST_GEN only an image, PAIR both. Throws
/// GatewayError(400) otherwise.
void validate_request(const ModerationRequest& request);

/// Parses a /v1/check body. Throws GatewayError(400) on malformed JSON,
/// unknown modes or non-string fields.
ModerationRequest parse_request(std::string_view body);
std::string response_json(const ModerationResponse& response);

/// Placeholder image for prompt-only checks: uniform 0.5 gray.
ImageTensor neutral_image(std::size_t size);

class ModerationService {
 public:
  explicit ModerationService(double threshold = kDefaultThreshold);
  ModerationService(std::shared_ptr<const Model> model, double threshold = kDefaultThreshold);

  /// Replaces the served model; in-flight requests finish on the old one.
  void swap_model(std::shared_ptr<const Model> model);
  /// read_checkpoint + swap_model.
  void load(const std::filesystem::path& checkpoint);

  bool loaded() const;
  std::string model_version() const;
  double threshold() const noexcept { return threshold_; }

  // Each throws GatewayError(503) without a model.
  ModerationResponse check_pair(std::string_view prompt, const ImageTensor& image) const;
  /// Throws GatewayError(400) on an empty prompt.
  ModerationResponse check_prompt(std::string_view prompt) const;
  /// Same score as check_pair("", image).
  ModerationResponse check_image(const ImageTensor& image) const;

  ModerationResponse handle(const ModerationRequest& request) const;

  struct HttpReply {
    int status = 200;
    std::string body;
  };
  HttpReply handle_http_check(std::string_view body) const;
  HttpReply handle_http_health() const;

 private:
  struct Snapshot {
    std::shared_ptr<const Model> model;
    std::string version;
  };
  Snapshot snapshot() const;
  ModerationResponse score(const Snapshot& snap, std::string_view prompt, const ImageTensor& image,
                           CheckMode mode, std::chrono::steady_clock::time_point start) const;

  double threshold_;
  mutable std::mutex mutex_;
  Snapshot current_;
};

struct GatewayConfig {
  std::string ckpt;
  double threshold = kDefaultThreshold;
  int port = 8080;
  std::string host = "127.0.0.1";
};

struct GatewayOverrides {
  std::optional<std::string> ckpt;
  std::optional<double> threshold;
  std::optional<int> port;
  std::optional<std::string> host;
  std::optional<std::filesystem::path> config_file;
};

using EnvLookup = std::function<std::optional<std::string>(const char*)>;
std::optional<std::string> process_env(const char* name);

/// key=value lines; '#' comments and blank lines skipped. Throws ParseError.
std::map<std::string, std::string> parse_config_text(std::string_view text);

/// Precedence: overrides, then NSFWGUARD_CKPT / NSFWGUARD_THRESHOLD /
/// NSFWGUARD_PORT, then the config file (keys ckpt, threshold, port, host),
/// then defaults. Throws ConfigError on out-of-range values.
GatewayConfig resolve_gateway_config(const GatewayOverrides& overrides,
                                     const EnvLookup& env = process_env);

/// HTTP front end: POST /v1/check and GET /v1/health.
class GatewayServer {
 public:
  explicit GatewayServer(const ModerationService& service, bool access_log = true);
  ~GatewayServer();
  GatewayServer(const GatewayServer&) = delete;
  GatewayServer& operator=(const GatewayServer&) = delete;

  /// Binds (port 0 picks a free port) and serves on a background thread.
  /// Returns the bound port. Throws IoError when binding fails.
  int start(const std::string& host, int port);
  /// Binds and serves on the calling thread until stop().
  void run(const std::string& host, int port);
  void stop();

 private:
  const ModerationService& service_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

}  // namespace nsfwguard
