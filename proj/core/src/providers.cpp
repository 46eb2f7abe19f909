#include "lastmile/providers.hpp"

#include <httplib.h>

#include <algorithm>
#include <fstream>
#include <future>

#include "lastmile/errors.hpp"
#include "lastmile/retrieval.hpp"

namespace lastmile {

using nlohmann::json;

namespace {

std::ptrdiff_t semaphore_slots(std::size_t max_inflight) {
  return static_cast<std::ptrdiff_t>(std::clamp<std::size_t>(max_inflight, 1, 1024));
}

httplib::Client make_client(const ParsedUrl& url, int timeout_ms) {
  httplib::Client cli(url.origin);
  const auto sec = timeout_ms / 1000;
  const auto usec = (timeout_ms % 1000) * 1000;
  cli.set_connection_timeout(sec, usec);
  cli.set_read_timeout(sec, usec);
  cli.set_write_timeout(sec, usec);
  return cli;
}

bool is_timeout(httplib::Error e) {
  return e == httplib::Error::ConnectionTimeout || e == httplib::Error::Read ||
         e == httplib::Error::Write;
}

// POSTs `body` to `path`, retrying on transport errors, non-200 replies and
// unparsable JSON. Returns the parsed body and the number of attempts made.
std::pair<json, std::size_t> post_json_with_retries(const HttpEndpoint& ep, const std::string& path,
                                                    const json& body, std::string_view what,
                                                    std::atomic<std::size_t>* attempt_counter) {
  const auto url = parse_url(ep.url);
  const int total = std::max(0, ep.retries) + 1;
  std::string last_error = "no attempt made";
  bool last_was_timeout = false;
  const auto payload = body.dump();
  for (int attempt = 1; attempt <= total; ++attempt) {
    if (attempt_counter != nullptr) ++*attempt_counter;
    auto cli = make_client(url, ep.timeout_ms);
    auto res = cli.Post(url.prefix + path, payload, "application/json");
    if (!res) {
      last_was_timeout = is_timeout(res.error());
      last_error = httplib::to_string(res.error());
      continue;
    }
    last_was_timeout = false;
    if (res->status != 200) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    auto parsed = json::parse(res->body, nullptr, false);
    if (parsed.is_discarded() || !parsed.is_object()) {
      last_error = "response is not a JSON object";
      continue;
    }
    return {std::move(parsed), static_cast<std::size_t>(attempt)};
  }
  const auto msg = std::string(what) + " provider at " + ep.url + " failed after " +
                   std::to_string(total) + " attempt(s): " + last_error;
  if (last_was_timeout) throw ProviderTimeout(msg);
  throw ProviderUnavailable(msg);
}

class SemaphoreGuard {
 public:
  explicit SemaphoreGuard(std::counting_semaphore<1024>& s) : s_(s) { s_.acquire(); }
  ~SemaphoreGuard() { s_.release(); }
  SemaphoreGuard(const SemaphoreGuard&) = delete;
  SemaphoreGuard& operator=(const SemaphoreGuard&) = delete;

 private:
  std::counting_semaphore<1024>& s_;
};

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

ParsedUrl parse_url(std::string_view url) {
  ParsedUrl out;
  const auto scheme_end = url.find("://");
  const auto host_start = scheme_end == std::string_view::npos ? 0 : scheme_end + 3;
  const auto path_start = url.find('/', host_start);
  if (path_start == std::string_view::npos) {
    out.origin = std::string(url);
  } else {
    out.origin = std::string(url.substr(0, path_start));
    out.prefix = std::string(url.substr(path_start));
    while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
  }
  if (scheme_end == std::string_view::npos) out.origin = "http://" + out.origin;
  return out;
}

// --- HttpEmbedder -----------------------------------------------------------

HttpEmbedder::HttpEmbedder(HttpEndpoint endpoint, std::string model)
    : endpoint_(std::move(endpoint)),
      model_(std::move(model)),
      inflight_(semaphore_slots(endpoint_.max_inflight)) {}

EmbeddingBatch HttpEmbedder::embed(const std::vector<std::string>& texts) {
  SemaphoreGuard guard(inflight_);
  auto [body, attempts] = post_json_with_retries(
      endpoint_, "/embed", json{{"model", model_}, {"texts", texts}}, "embedding", &attempts_);
  (void)attempts;
  EmbeddingBatch out;
  try {
    out.model = body.at("model").get<std::string>();
    out.dimension = body.at("dimension").get<std::size_t>();
    out.vectors = body.at("vectors").get<std::vector<std::vector<double>>>();
  } catch (const json::exception& e) {
    throw ProviderUnavailable(std::string("embedding provider sent a malformed response: ") +
                              e.what());
  }
  if (out.vectors.size() != texts.size()) {
    throw ProviderUnavailable("embedding provider returned " + std::to_string(out.vectors.size()) +
                              " vectors for " + std::to_string(texts.size()) + " texts");
  }
  for (const auto& v : out.vectors) {
    if (v.size() != out.dimension) {
      throw DimensionMismatch("embedding provider vector dimension " + std::to_string(v.size()) +
                              " != declared " + std::to_string(out.dimension));
    }
  }
  return out;
}

// --- HashingEmbedder --------------------------------------------------------

HashingEmbedder::HashingEmbedder(std::size_t dimension, std::string model)
    : dimension_(std::max<std::size_t>(dimension, 1)), model_(std::move(model)) {}

std::vector<double> HashingEmbedder::embed_one(std::string_view text) const {
  std::vector<double> v(dimension_, 0.0);
  for (const auto& term : tokenize_terms(text)) {
    const auto h = fnv1a(term);
    const double sign = (h >> 63) != 0 ? -1.0 : 1.0;
    v[h % dimension_] += sign;
  }
  return v;
}

EmbeddingBatch HashingEmbedder::embed(const std::vector<std::string>& texts) {
  EmbeddingBatch out{model_, dimension_, {}};
  out.vectors.reserve(texts.size());
  for (const auto& t : texts) out.vectors.push_back(embed_one(t));
  return out;
}

EmbeddingBatch embed_batched(Embedder& embedder, const std::vector<std::string>& texts,
                             std::size_t batch_size, std::size_t max_inflight) {
  batch_size = std::max<std::size_t>(batch_size, 1);
  max_inflight = std::max<std::size_t>(max_inflight, 1);
  EmbeddingBatch out{embedder.model(), 0, {}};
  out.vectors.resize(texts.size());

  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  for (std::size_t i = 0; i < texts.size(); i += batch_size) {
    ranges.emplace_back(i, std::min(texts.size(), i + batch_size));
  }
  std::optional<std::string> model;
  std::optional<std::size_t> dimension;
  for (std::size_t wave = 0; wave < ranges.size(); wave += max_inflight) {
    std::vector<std::future<EmbeddingBatch>> futures;
    const auto end = std::min(ranges.size(), wave + max_inflight);
    for (std::size_t r = wave; r < end; ++r) {
      std::vector<std::string> part(texts.begin() + static_cast<std::ptrdiff_t>(ranges[r].first),
                                    texts.begin() + static_cast<std::ptrdiff_t>(ranges[r].second));
      futures.push_back(std::async(std::launch::async, [&embedder, part = std::move(part)] {
        return embedder.embed(part);
      }));
    }
    for (std::size_t r = wave; r < end; ++r) {
      auto batch = futures[r - wave].get();
      if (model && *model != batch.model) {
        throw MixedEmbeddingModel("embedding batches came back from different models");
      }
      if (dimension && *dimension != batch.dimension) {
        throw DimensionMismatch("embedding batches disagree on dimension");
      }
      model = batch.model;
      dimension = batch.dimension;
      for (std::size_t k = 0; k < batch.vectors.size(); ++k) {
        out.vectors[ranges[r].first + k] = std::move(batch.vectors[k]);
      }
    }
  }
  if (model) out.model = *model;
  out.dimension = dimension.value_or(0);
  return out;
}

// --- HttpChatProvider -------------------------------------------------------

HttpChatProvider::HttpChatProvider(HttpEndpoint endpoint, std::string model)
    : endpoint_(std::move(endpoint)),
      model_(std::move(model)),
      inflight_(semaphore_slots(endpoint_.max_inflight)) {}

ChatResult HttpChatProvider::generate(const ChatRequest& request) {
  SemaphoreGuard guard(inflight_);
  const auto started = std::chrono::steady_clock::now();
  const json body{{"model", model_},
                  {"system", request.system},
                  {"messages", json::array({{{"role", "user"}, {"content", request.user}}})}};
  auto [reply, attempts] = post_json_with_retries(endpoint_, "/chat", body, "chat", nullptr);
  ChatResult out;
  out.attempts = attempts;
  out.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                             started)
                       .count();
  if (!reply.contains("content") || !reply["content"].is_string()) {
    throw ProviderUnavailable("chat provider response has no string 'content'");
  }
  out.content = reply["content"].get<std::string>();
  if (reply.contains("usage") && reply["usage"].is_object()) {
    const auto& u = reply["usage"];
    if (u.contains("prompt_tokens") && u["prompt_tokens"].is_number_integer()) {
      out.prompt_tokens = u["prompt_tokens"].get<long long>();
    }
    if (u.contains("completion_tokens") && u["completion_tokens"].is_number_integer()) {
      out.completion_tokens = u["completion_tokens"].get<long long>();
    }
  }
  return out;
}

// --- CannedChatProvider -----------------------------------------------------

CannedChatProvider::CannedChatProvider(std::map<std::string, std::vector<std::string>> responses,
                                       std::string fallback)
    : responses_(std::move(responses)), fallback_(std::move(fallback)) {}

std::shared_ptr<CannedChatProvider> CannedChatProvider::from_json(const json& j) {
  std::map<std::string, std::vector<std::string>> responses;
  std::string fallback =
      "The information is not found in the procedure manual. Please check with the faculty member.";
  try {
    if (j.contains("default")) fallback = j.at("default").get<std::string>();
    if (j.contains("responses")) {
      for (const auto& [key, value] : j.at("responses").items()) {
        if (value.is_string()) {
          responses[key] = {value.get<std::string>()};
        } else {
          responses[key] = value.get<std::vector<std::string>>();
          if (responses[key].empty()) throw ConfigError("canned response list for '" + key + "' is empty");
        }
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed canned-response file: ") + e.what());
  }
  return std::make_shared<CannedChatProvider>(std::move(responses), std::move(fallback));
}

std::shared_ptr<CannedChatProvider> CannedChatProvider::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open canned-response file '" + path + "'");
  auto j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("canned-response file '" + path + "' is not JSON");
  return from_json(j);
}

ChatResult CannedChatProvider::generate(const ChatRequest& request) {
  std::lock_guard lock(mu_);
  ++calls_;
  last_ = request;
  const std::string_view user = request.user;
  const std::vector<std::string>* best = nullptr;
  std::string best_key;
  for (const auto& [key, values] : responses_) {
    if (key.size() <= user.size() && user.substr(user.size() - key.size()) == key &&
        key.size() > best_key.size()) {
      best = &values;
      best_key = key;
    }
  }
  ChatResult out;
  out.attempts = 1;
  if (best == nullptr) {
    out.content = fallback_;
    return out;
  }
  auto& cursor = cursor_[best_key];
  out.content = (*best)[std::min(cursor, best->size() - 1)];
  ++cursor;
  return out;
}

std::size_t CannedChatProvider::calls() const {
  std::lock_guard lock(mu_);
  return calls_;
}

std::optional<ChatRequest> CannedChatProvider::last_request() const {
  std::lock_guard lock(mu_);
  return last_;
}

// --- StubProviderServer -----------------------------------------------------

StubProviderServer::StubProviderServer(std::shared_ptr<ChatProvider> chat,
                                       std::shared_ptr<Embedder> embedder)
    : chat_(std::move(chat)),
      embedder_(std::move(embedder)),
      server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

StubProviderServer::~StubProviderServer() { stop(); }

void StubProviderServer::install_routes() {
  const auto reply_json = [](httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  };
  const auto injected_failure = [this, reply_json](httplib::Response& res) {
    ++requests_;
    int n = fail_next_.load();
    while (n > 0) {
      if (fail_next_.compare_exchange_weak(n, n - 1)) {
        reply_json(res, 503, {{"error", "injected failure"}});
        return true;
      }
    }
    return false;
  };

  server_->Get("/health", [reply_json](const httplib::Request&, httplib::Response& res) {
    reply_json(res, 200, {{"status", "ok"}});
  });

  server_->Post("/chat", [this, reply_json, injected_failure](const httplib::Request& req,
                                                             httplib::Response& res) {
    if (injected_failure(res)) return;
    if (!chat_) return reply_json(res, 404, {{"error", "no chat provider configured"}});
    auto body = json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.contains("messages") || !body["messages"].is_array() ||
        body["messages"].empty()) {
      return reply_json(res, 400, {{"error", "expected {system, messages}"}});
    }
    ChatRequest request;
    request.system = body.value("system", "");
    for (const auto& m : body["messages"]) {
      if (m.value("role", "") == "user") request.user = m.value("content", "");
    }
    try {
      const auto result = chat_->generate(request);
      reply_json(res, 200, {{"content", result.content}, {"model", chat_->model()}});
    } catch (const Error& e) {
      reply_json(res, 502, {{"error", e.what()}});
    }
  });

  server_->Post("/embed", [this, reply_json, injected_failure](const httplib::Request& req,
                                                              httplib::Response& res) {
    if (injected_failure(res)) return;
    if (!embedder_) return reply_json(res, 404, {{"error", "no embedder configured"}});
    auto body = json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.contains("texts") || !body["texts"].is_array()) {
      return reply_json(res, 400, {{"error", "expected {model, texts}"}});
    }
    const auto model = body.value("model", embedder_->model());
    if (model != embedder_->model()) {
      return reply_json(res, 400, {{"error", "unknown model '" + model + "'"}});
    }
    try {
      const auto batch = embedder_->embed(body["texts"].get<std::vector<std::string>>());
      reply_json(res, 200,
                 {{"model", batch.model}, {"dimension", batch.dimension}, {"vectors", batch.vectors}});
    } catch (const std::exception& e) {
      reply_json(res, 500, {{"error", e.what()}});
    }
  });
}

int StubProviderServer::start(const std::string& host, int port) {
  host_ = host;
  port_ = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (port_ < 0) throw ProviderUnavailable("stub provider could not bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void StubProviderServer::listen_blocking(const std::string& host, int port) {
  host_ = host;
  port_ = port;
  if (!server_->listen(host, port)) {
    throw ProviderUnavailable("stub provider could not listen on " + host + ":" + std::to_string(port));
  }
}

void StubProviderServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

std::string StubProviderServer::url() const {
  return "http://" + host_ + ":" + std::to_string(port_);
}

}  // namespace lastmile
