#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "lastmile/assistant.hpp"
#include "lastmile/eval.hpp"

namespace httplib {
class Server;
}

namespace lastmile {

// kind: "http" | "canned" (chat only) | "hashing" (embed only) | "none"
struct ProviderConfig {
  std::string kind = "none";
  HttpEndpoint endpoint;
  std::string model;
  std::filesystem::path canned_path;
};

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path manual_dir = "manuals";
  std::filesystem::path templates_dir;
  std::filesystem::path lexicon_path;  // empty: built-in defaults
  std::filesystem::path log_path = "lastmile_queries.jsonl";
  std::size_t log_max_bytes = 10 * 1024 * 1024;
  int log_keep = 5;
  ProviderConfig chat;
  ProviderConfig embed;
  AssistantConfig assistant;

  // Built-in defaults; templates come from the installed data directory.
  static ServiceConfig defaults();

  // Layers LASTMILE_CHAT_URL, LASTMILE_CHAT_MODEL, LASTMILE_EMBED_URL and
  // LASTMILE_EMBED_MODEL over the current values.
  void apply_env(const std::function<std::optional<std::string>(const std::string&)>& getenv);
  // Overrides from a config document; unknown keys are rejected.
  void apply_json(const nlohmann::json& j);

  // defaults -> environment -> config file. The file is `config_file` when
  // given, else LASTMILE_CONFIG when set. Relative paths inside a config
  // file resolve against the file's directory.
  static ServiceConfig load(const std::optional<std::filesystem::path>& config_file);

  // Every referenced path must exist. Throws ConfigError.
  void validate() const;
  nlohmann::json to_json() const;
};

std::shared_ptr<ChatProvider> make_chat_provider(const ProviderConfig& cfg);
std::shared_ptr<Embedder> make_embedder(const ProviderConfig& cfg);

struct QueryLogEntry {
  std::string timestamp;  // UTC, ISO 8601 with milliseconds
  std::string query;
  std::string mode;
  std::string pattern;
  std::string refusal;
  std::vector<Reference> references;
  std::size_t provider_calls = 0;
  double latency_ms = 0.0;

  nlohmann::json to_json() const;
};

std::string utc_timestamp(std::chrono::system_clock::time_point t);

// Append-only JSON Lines log. Appends are serialised; when a write would
// push the file past `max_bytes` it is rotated to <path>.1 (older files
// shift up, at most `keep` are retained).
class QueryLog {
 public:
  QueryLog(std::filesystem::path path, std::size_t max_bytes, int keep);

  void append(const QueryLogEntry& entry);  // QueryLogError
  std::size_t appended() const;
  const std::filesystem::path& path() const { return path_; }

 private:
  void rotate();

  std::filesystem::path path_;
  std::size_t max_bytes_;
  int keep_;
  mutable std::mutex mu_;
  std::size_t appended_ = 0;
};

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

nlohmann::json error_body(const std::string& code, const std::string& message);

class Service {
 public:
  // Builds providers from the config.
  explicit Service(ServiceConfig config);
  // Uses the given providers instead of the configured ones.
  Service(ServiceConfig config, std::shared_ptr<ChatProvider> chat,
          std::shared_ptr<Embedder> embedder);
  ~Service();

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  ApiResponse handle_ask(const std::string& body);
  ApiResponse handle_manuals_get() const;
  ApiResponse handle_manuals_post(const std::string& body);
  ApiResponse handle_eval(const std::string& body);
  ApiResponse handle_health();

  // Background listener; port 0 picks a free port, which is returned.
  int start(const std::string& host, int port);
  void stop();
  // Serves on the calling thread until stop() is called.
  void listen_blocking();

  KnowledgeStore& store() { return store_; }
  QueryLog& log() { return *log_; }
  const ServiceConfig& config() const { return config_; }

 private:
  struct Reachability {
    bool reachable = false;
    std::chrono::steady_clock::time_point checked;
  };

  void install_routes();
  nlohmann::json provider_health(const std::string& name, const ProviderConfig& cfg);

  ServiceConfig config_;
  std::shared_ptr<ChatProvider> chat_;
  std::shared_ptr<Embedder> embedder_;
  std::unique_ptr<Assistant> assistant_;
  KnowledgeStore store_;
  std::unique_ptr<QueryLog> log_;
  std::mutex upload_mu_;
  std::mutex health_mu_;
  std::map<std::string, Reachability> reach_cache_;
  std::map<std::string, std::string> template_sha_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

// Lower-case hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

}  // namespace lastmile
