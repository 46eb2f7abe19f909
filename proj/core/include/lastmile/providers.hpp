#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

namespace httplib {
class Server;
}

namespace lastmile {

// ---------------------------------------------------------------------------
// Embedding provider
//
// Wire protocol: POST <base>/embed  {"model", "texts": [..]}
//            -> {"model", "dimension", "vectors": [[..], ..]}
// ---------------------------------------------------------------------------

struct EmbeddingBatch {
  std::string model;
  std::size_t dimension = 0;
  std::vector<std::vector<double>> vectors;
};

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual const std::string& model() const = 0;
  // Vectors are aligned with `texts`. Throws ProviderUnavailable.
  virtual EmbeddingBatch embed(const std::vector<std::string>& texts) = 0;
};

struct HttpEndpoint {
  std::string url;  // http://host:port[/prefix]
  int timeout_ms = 10000;
  int retries = 2;  // extra attempts after the first
  std::size_t max_inflight = 8;
};

// Split "http://host:port/prefix" into the httplib host part and the path prefix.
struct ParsedUrl {
  std::string origin;  // scheme://host:port
  std::string prefix;  // "" or "/prefix" without trailing slash
};
ParsedUrl parse_url(std::string_view url);

class HttpEmbedder final : public Embedder {
 public:
  HttpEmbedder(HttpEndpoint endpoint, std::string model);

  const std::string& model() const override { return model_; }
  EmbeddingBatch embed(const std::vector<std::string>& texts) override;

  // Total HTTP attempts issued so far.
  std::size_t attempts() const { return attempts_.load(); }

 private:
  HttpEndpoint endpoint_;
  std::string model_;
  std::counting_semaphore<1024> inflight_;
  std::atomic<std::size_t> attempts_{0};
};

// Deterministic offline embedder: signed feature hashing of case-folded
// terms (stop words removed, CJK runs as bigrams), not L2-normalised.
class HashingEmbedder final : public Embedder {
 public:
  static constexpr std::string_view kDefaultModel = "lastmile-hash-bow-256";

  explicit HashingEmbedder(std::size_t dimension = 256,
                           std::string model = std::string(kDefaultModel));

  const std::string& model() const override { return model_; }
  EmbeddingBatch embed(const std::vector<std::string>& texts) override;
  std::vector<double> embed_one(std::string_view text) const;

 private:
  std::size_t dimension_;
  std::string model_;
};

// Embeds `texts` in batches of `batch_size`, at most `max_inflight`
// batches concurrently, and reassembles the vectors in input order.
EmbeddingBatch embed_batched(Embedder& embedder, const std::vector<std::string>& texts,
                             std::size_t batch_size, std::size_t max_inflight);

// ---------------------------------------------------------------------------
// Chat provider
//
// Wire protocol: POST <base>/chat
//   {"model", "system", "messages": [{"role": "user", "content"}]}
//   -> {"content", optional "usage": {"prompt_tokens", "completion_tokens"}}
// ---------------------------------------------------------------------------

struct ChatRequest {
  std::string system;
  std::string user;
};

struct ChatResult {
  std::string content;
  std::size_t attempts = 0;
  double latency_ms = 0.0;
  std::optional<long long> prompt_tokens;
  std::optional<long long> completion_tokens;
};

class ChatProvider {
 public:
  virtual ~ChatProvider() = default;
  virtual const std::string& model() const = 0;
  // Throws ProviderUnavailable / ProviderTimeout once retries are spent.
  virtual ChatResult generate(const ChatRequest& request) = 0;
};

class HttpChatProvider final : public ChatProvider {
 public:
  HttpChatProvider(HttpEndpoint endpoint, std::string model);

  const std::string& model() const override { return model_; }
  ChatResult generate(const ChatRequest& request) override;

 private:
  HttpEndpoint endpoint_;
  std::string model_;
  std::counting_semaphore<1024> inflight_;
};

// Canned responses keyed by question text. A user message matches a key
// when it ends with that key (context blocks precede the question). A
// key may map to a list of responses returned on successive calls, the
// last one repeating.
//
// File format: {"default": "...", "responses": {"question": "text" | ["a", "b"]}}
class CannedChatProvider final : public ChatProvider {
 public:
  static constexpr std::string_view kModel = "lastmile-canned";

  CannedChatProvider(std::map<std::string, std::vector<std::string>> responses,
                     std::string fallback);
  static std::shared_ptr<CannedChatProvider> from_json(const nlohmann::json& j);
  static std::shared_ptr<CannedChatProvider> from_file(const std::string& path);

  const std::string& model() const override { return model_; }
  ChatResult generate(const ChatRequest& request) override;

  std::size_t calls() const;
  // Most recent request, for assertions on prompt assembly.
  std::optional<ChatRequest> last_request() const;

 private:
  std::string model_{kModel};
  std::map<std::string, std::vector<std::string>> responses_;
  std::string fallback_;
  mutable std::mutex mu_;
  std::map<std::string, std::size_t> cursor_;
  std::size_t calls_ = 0;
  std::optional<ChatRequest> last_;
};

// ---------------------------------------------------------------------------
// Stub HTTP servers implementing the two provider protocols, for offline
// tests and demos. Both also answer GET /health.
// ---------------------------------------------------------------------------

class StubProviderServer {
 public:
  StubProviderServer(std::shared_ptr<ChatProvider> chat, std::shared_ptr<Embedder> embedder);
  ~StubProviderServer();

  StubProviderServer(const StubProviderServer&) = delete;
  StubProviderServer& operator=(const StubProviderServer&) = delete;

  // Binds (port 0 picks a free port) and serves on a background thread.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  void stop();
  std::string url() const;

  // Fault injection: the next `n` requests get HTTP 503.
  void fail_next(int n) { fail_next_.store(n); }
  std::size_t requests() const { return requests_.load(); }

  // Blocks serving on the calling thread (used by the CLI).
  void listen_blocking(const std::string& host, int port);

 private:
  void install_routes();

  std::shared_ptr<ChatProvider> chat_;
  std::shared_ptr<Embedder> embedder_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  std::string host_;
  int port_ = 0;
  std::atomic<int> fail_next_{0};
  std::atomic<std::size_t> requests_{0};
};

}  // namespace lastmile
