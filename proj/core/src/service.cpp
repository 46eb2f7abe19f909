#include "lastmile/service.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include <httplib.h>

#include "lastmile/errors.hpp"
#include "lastmile/text.hpp"

#ifndef LASTMILE_DATA_DIR
#define LASTMILE_DATA_DIR "data"
#endif

namespace lastmile {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::optional<std::string> real_getenv(const std::string& name) {
  if (const char* v = std::getenv(name.c_str()); v != nullptr && *v != '\0') return std::string(v);
  return std::nullopt;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read '" + p.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

fs::path resolve_against(const fs::path& base, const fs::path& p) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

void apply_provider_json(ProviderConfig& cfg, const json& j, const fs::path& base) {
  static const std::set<std::string> known{"kind", "url", "model", "timeout_ms", "retries",
                                           "max_inflight", "path"};
  for (const auto& [k, _] : j.items()) {
    if (!known.count(k)) throw ConfigError("unknown provider key '" + k + "'");
  }
  if (j.contains("url")) {
    cfg.endpoint.url = j["url"].get<std::string>();
    cfg.kind = "http";
  }
  if (j.contains("kind")) cfg.kind = j["kind"].get<std::string>();
  if (j.contains("model")) cfg.model = j["model"].get<std::string>();
  if (j.contains("timeout_ms")) cfg.endpoint.timeout_ms = j["timeout_ms"].get<int>();
  if (j.contains("retries")) cfg.endpoint.retries = j["retries"].get<int>();
  if (j.contains("max_inflight")) cfg.endpoint.max_inflight = j["max_inflight"].get<std::size_t>();
  if (j.contains("path")) cfg.canned_path = resolve_against(base, j["path"].get<std::string>());
}

json provider_json(const ProviderConfig& cfg) {
  json j{{"kind", cfg.kind}, {"model", cfg.model}};
  if (cfg.kind == "http") {
    j["url"] = cfg.endpoint.url;
    j["timeout_ms"] = cfg.endpoint.timeout_ms;
    j["retries"] = cfg.endpoint.retries;
    j["max_inflight"] = cfg.endpoint.max_inflight;
  }
  if (!cfg.canned_path.empty()) j["path"] = cfg.canned_path.string();
  return j;
}

}  // namespace

// --- config -----------------------------------------------------------------

ServiceConfig ServiceConfig::defaults() {
  ServiceConfig c;
  const fs::path data = real_getenv("LASTMILE_DATA_DIR").value_or(LASTMILE_DATA_DIR);
  c.templates_dir = data / "templates";
  c.chat.model = "gpt-4o";
  c.embed.model = "paraphrase-multilingual-MiniLM-L12-v2";
  return c;
}

void ServiceConfig::apply_env(
    const std::function<std::optional<std::string>(const std::string&)>& getenv) {
  if (auto v = getenv("LASTMILE_CHAT_URL")) {
    chat.kind = "http";
    chat.endpoint.url = *v;
  }
  if (auto v = getenv("LASTMILE_CHAT_MODEL")) chat.model = *v;
  if (auto v = getenv("LASTMILE_EMBED_URL")) {
    embed.kind = "http";
    embed.endpoint.url = *v;
  }
  if (auto v = getenv("LASTMILE_EMBED_MODEL")) embed.model = *v;
}

void ServiceConfig::apply_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  const fs::path base = j.contains("_base_dir") ? fs::path(j["_base_dir"].get<std::string>()) : fs::path();
  static const std::set<std::string> known{
      "_base_dir", "host", "port", "manual_dir", "templates_dir", "lexicon_path", "log_path",
      "log_max_bytes", "log_keep", "chat", "embed", "retrieval", "max_regenerations",
      "instructional_max_sections"};
  try {
    for (const auto& [k, _] : j.items()) {
      if (!known.count(k)) throw ConfigError("unknown config key '" + k + "'");
    }
    if (j.contains("host")) host = j["host"].get<std::string>();
    if (j.contains("port")) port = j["port"].get<int>();
    if (j.contains("manual_dir")) manual_dir = resolve_against(base, j["manual_dir"].get<std::string>());
    if (j.contains("templates_dir"))
      templates_dir = resolve_against(base, j["templates_dir"].get<std::string>());
    if (j.contains("lexicon_path"))
      lexicon_path = resolve_against(base, j["lexicon_path"].get<std::string>());
    if (j.contains("log_path")) log_path = resolve_against(base, j["log_path"].get<std::string>());
    if (j.contains("log_max_bytes")) log_max_bytes = j["log_max_bytes"].get<std::size_t>();
    if (j.contains("log_keep")) log_keep = j["log_keep"].get<int>();
    if (j.contains("chat")) apply_provider_json(chat, j["chat"], base);
    if (j.contains("embed")) apply_provider_json(embed, j["embed"], base);
    if (j.contains("retrieval")) {
      const auto& r = j["retrieval"];
      if (r.contains("top_k")) assistant.retrieval.top_k = r["top_k"].get<std::size_t>();
      if (r.contains("grounding_threshold"))
        assistant.retrieval.grounding_threshold = r["grounding_threshold"].get<double>();
      if (r.contains("lexical_fallback"))
        assistant.retrieval.lexical_fallback = r["lexical_fallback"].get<bool>();
    }
    if (j.contains("max_regenerations")) assistant.max_regenerations = j["max_regenerations"].get<int>();
    if (j.contains("instructional_max_sections"))
      assistant.instructional_max_sections = j["instructional_max_sections"].get<std::size_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
}

ServiceConfig ServiceConfig::load(const std::optional<fs::path>& config_file) {
  auto cfg = defaults();
  cfg.apply_env(real_getenv);
  std::optional<fs::path> file = config_file;
  if (!file) {
    if (auto env = real_getenv("LASTMILE_CONFIG")) file = fs::path(*env);
  }
  if (file) {
    auto j = json::parse(read_file(*file), nullptr, false);
    if (j.is_discarded()) throw ConfigError("config '" + file->string() + "' is not valid JSON");
    if (j.is_object()) j["_base_dir"] = fs::absolute(*file).parent_path().string();
    cfg.apply_json(j);
  }
  return cfg;
}

void ServiceConfig::validate() const {
  const auto require_dir = [](const fs::path& p, const char* what) {
    if (p.empty() || !fs::is_directory(p))
      throw ConfigError(std::string(what) + " '" + p.string() + "' does not exist");
  };
  require_dir(manual_dir, "manual_dir");
  require_dir(templates_dir, "templates_dir");
  for (const char* f : {"retrieval_prompt.txt", "instructional_prompt.txt"}) {
    if (!fs::is_regular_file(templates_dir / f))
      throw ConfigError("template '" + (templates_dir / f).string() + "' does not exist");
  }
  if (!lexicon_path.empty() && !fs::is_regular_file(lexicon_path))
    throw ConfigError("lexicon_path '" + lexicon_path.string() + "' does not exist");
  const auto log_dir = fs::absolute(log_path).parent_path();
  if (!fs::is_directory(log_dir))
    throw ConfigError("log directory '" + log_dir.string() + "' does not exist");
  if (log_max_bytes == 0 || log_keep < 1) throw ConfigError("log rotation settings must be positive");
  if (port < 0 || port > 65535) throw ConfigError("port out of range");
  for (const auto* p : {&chat, &embed}) {
    if (p->kind == "http" && p->endpoint.url.empty()) throw ConfigError("http provider needs a url");
  }
  if (chat.kind != "none" && chat.kind != "http" && chat.kind != "canned")
    throw ConfigError("unknown chat provider kind '" + chat.kind + "'");
  if (embed.kind != "none" && embed.kind != "http" && embed.kind != "hashing")
    throw ConfigError("unknown embed provider kind '" + embed.kind + "'");
  if (chat.kind == "canned" && !fs::is_regular_file(chat.canned_path))
    throw ConfigError("canned chat file '" + chat.canned_path.string() + "' does not exist");
  assistant.validate();
}

json ServiceConfig::to_json() const {
  return {{"host", host},
          {"port", port},
          {"manual_dir", manual_dir.string()},
          {"templates_dir", templates_dir.string()},
          {"lexicon_path", lexicon_path.string()},
          {"log_path", log_path.string()},
          {"log_max_bytes", log_max_bytes},
          {"log_keep", log_keep},
          {"chat", provider_json(chat)},
          {"embed", provider_json(embed)},
          {"retrieval",
           {{"top_k", assistant.retrieval.top_k},
            {"grounding_threshold", assistant.retrieval.grounding_threshold},
            {"lexical_fallback", assistant.retrieval.lexical_fallback}}},
          {"max_regenerations", assistant.max_regenerations},
          {"instructional_max_sections", assistant.instructional_max_sections}};
}

std::shared_ptr<ChatProvider> make_chat_provider(const ProviderConfig& cfg) {
  if (cfg.kind == "http") return std::make_shared<HttpChatProvider>(cfg.endpoint, cfg.model);
  if (cfg.kind == "canned") return CannedChatProvider::from_file(cfg.canned_path.string());
  return nullptr;
}

std::shared_ptr<Embedder> make_embedder(const ProviderConfig& cfg) {
  if (cfg.kind == "http") return std::make_shared<HttpEmbedder>(cfg.endpoint, cfg.model);
  if (cfg.kind == "hashing") return std::make_shared<HashingEmbedder>();
  return nullptr;
}

// --- query log --------------------------------------------------------------

std::string utc_timestamp(std::chrono::system_clock::time_point t) {
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch()).count();
  const std::time_t secs = static_cast<std::time_t>(ms / 1000);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec,
                static_cast<int>(ms % 1000));
  return buf;
}

json QueryLogEntry::to_json() const {
  json refs = json::array();
  for (const auto& r : references) refs.push_back(lastmile::to_json(r));
  return {{"timestamp", timestamp}, {"query", query},     {"mode", mode},
          {"pattern", pattern},     {"refusal", refusal}, {"references", refs},
          {"provider_calls", provider_calls}, {"latency_ms", latency_ms}};
}

QueryLog::QueryLog(fs::path path, std::size_t max_bytes, int keep)
    : path_(std::move(path)), max_bytes_(max_bytes), keep_(keep) {}

void QueryLog::rotate() {
  const auto numbered = [this](int i) { return fs::path(path_.string() + "." + std::to_string(i)); };
  std::error_code ec;
  fs::remove(numbered(keep_), ec);
  for (int i = keep_ - 1; i >= 1; --i) {
    if (fs::exists(numbered(i))) fs::rename(numbered(i), numbered(i + 1), ec);
  }
  fs::rename(path_, numbered(1), ec);
  if (ec) throw QueryLogError("log rotation failed: " + ec.message());
}

void QueryLog::append(const QueryLogEntry& entry) {
  const std::string line = entry.to_json().dump() + "\n";
  std::lock_guard lock(mu_);
  std::error_code ec;
  const auto size = fs::exists(path_, ec) ? fs::file_size(path_, ec) : 0;
  if (!ec && size > 0 && size + line.size() > max_bytes_) rotate();
  std::ofstream out(path_, std::ios::binary | std::ios::app);
  if (!out) throw QueryLogError("cannot open query log '" + path_.string() + "'");
  out << line;
  out.flush();
  if (!out) throw QueryLogError("write to query log '" + path_.string() + "' failed");
  ++appended_;
}

std::size_t QueryLog::appended() const {
  std::lock_guard lock(mu_);
  return appended_;
}

// --- service ----------------------------------------------------------------

json error_body(const std::string& code, const std::string& message) {
  return {{"error", {{"code", code}, {"message", message}}}};
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr);
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xF];
  }
  return out;
}

namespace {

std::shared_ptr<const KnowledgeBase> initial_kb(const ServiceConfig& cfg, Embedder* embedder) {
  return KnowledgeBase::build(load_manual_dir(cfg.manual_dir), embedder,
                              cfg.embed.endpoint.max_inflight);
}

ApiResponse fail(int status, const Error& e) { return {status, error_body(e.code(), e.what())}; }

std::optional<json> parse_object(const std::string& body) {
  auto j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  return j;
}

bool safe_file_name(const std::string& name) {
  if (name.empty() || name.front() == '.') return false;
  if (name.find_first_of("/\\") != std::string::npos) return false;
  const auto ext = fs::path(name).extension();
  return ext == ".md" || ext == ".txt";
}

}  // namespace

Service::Service(ServiceConfig config)
    : Service(config, make_chat_provider(config.chat), make_embedder(config.embed)) {}

Service::Service(ServiceConfig config, std::shared_ptr<ChatProvider> chat,
                 std::shared_ptr<Embedder> embedder)
    : config_((config.validate(), std::move(config))),
      chat_(std::move(chat)),
      embedder_(std::move(embedder)),
      store_(initial_kb(config_, embedder_.get())) {
  auto templates = PromptTemplates::load(config_.templates_dir);
  template_sha_["retrieval"] = sha256_hex(templates.retrieval);
  template_sha_["instructional"] = sha256_hex(templates.instructional);
  auto lexicon = config_.lexicon_path.empty() ? Lexicon::defaults()
                                              : Lexicon::from_file(config_.lexicon_path.string());
  assistant_ = std::make_unique<Assistant>(std::move(templates), std::move(lexicon),
                                           config_.assistant, chat_, embedder_);
  log_ = std::make_unique<QueryLog>(config_.log_path, config_.log_max_bytes, config_.log_keep);
}

Service::~Service() { stop(); }

ApiResponse Service::handle_ask(const std::string& body) {
  const auto started = std::chrono::steady_clock::now();
  const auto j = parse_object(body);
  if (!j) return {400, error_body("BadRequest", "request body must be a JSON object")};
  if (!j->contains("question") || !(*j)["question"].is_string())
    return {400, error_body("BadRequest", "'question' must be a string")};
  ResponseMode mode = ResponseMode::retrieval;
  if (j->contains("mode")) {
    if (!(*j)["mode"].is_string()) return {400, error_body("BadRequest", "'mode' must be a string")};
    try {
      mode = response_mode_from_string((*j)["mode"].get<std::string>());
    } catch (const Error& e) {
      return fail(400, e);
    }
  }

  GroundedAnswer answer;
  Query query;
  try {
    query = Query::make((*j)["question"].get<std::string>(), mode);
    const auto kb = store_.current();
    answer = assistant_->answer(query, *kb);
  } catch (const InvalidQuery& e) {
    return fail(400, e);
  } catch (const EmptyText& e) {
    return fail(400, e);
  } catch (const ProviderUnavailable& e) {
    return fail(502, e);
  } catch (const AdvisoryValidationFailed& e) {
    return fail(500, e);
  } catch (const Error& e) {
    return fail(500, e);
  }

  const double latency = std::chrono::duration<double, std::milli>(
                             std::chrono::steady_clock::now() - started)
                             .count();
  QueryLogEntry entry{utc_timestamp(query.received_at),
                      query.text,
                      std::string(to_string(mode)),
                      std::string(to_string(answer.pattern)),
                      std::string(to_string(answer.refusal)),
                      answer.references,
                      answer.provider_calls,
                      latency};
  try {
    log_->append(entry);
  } catch (const QueryLogError& e) {
    return fail(500, e);
  }
  auto out = answer.to_json();
  out["mode"] = std::string(to_string(mode));
  out["latency_ms"] = latency;
  return {200, std::move(out)};
}

ApiResponse Service::handle_manuals_get() const {
  const auto kb = store_.current();
  json list = json::array();
  for (const auto& [name, doc] : kb->catalog.resolved()) {
    json sections = json::array();
    for (const auto& s : doc.sections) sections.push_back({{"id", s.id}, {"title", s.title}});
    list.push_back({{"logical_name", name},
                    {"version", doc.version},
                    {"source_file", doc.source_file},
                    {"language", std::string(to_string(doc.language))},
                    {"sections", sections}});
  }
  return {200, {{"manuals", list}, {"documents", kb->catalog.documents().size()}}};
}

ApiResponse Service::handle_manuals_post(const std::string& body) {
  const auto j = parse_object(body);
  if (!j || !j->contains("filename") || !j->contains("content") || !(*j)["filename"].is_string() ||
      !(*j)["content"].is_string()) {
    return {400, error_body("BadRequest", "body must be {\"filename\": str, \"content\": str}")};
  }
  const auto filename = (*j)["filename"].get<std::string>();
  if (!safe_file_name(filename))
    return {400, error_body("BadRequest", "filename must be a plain *.md or *.txt name")};

  ManualDocument doc;
  try {
    doc = parse_manual((*j)["content"].get<std::string>(), filename);
  } catch (const MalformedManual& e) {
    return fail(422, e);
  }

  std::lock_guard lock(upload_mu_);
  const auto target = config_.manual_dir / filename;
  {
    std::ofstream out(target, std::ios::binary | std::ios::trunc);
    out << (*j)["content"].get<std::string>();
    if (!out) return {500, error_body("WriteFailed", "cannot write '" + target.string() + "'")};
  }
  auto docs = store_.current()->catalog.documents();
  std::erase_if(docs, [&](const ManualDocument& d) { return d.source_file == filename; });
  docs.push_back(std::move(doc));
  store_.replace(KnowledgeBase::build(std::move(docs), embedder_.get(),
                                      config_.embed.endpoint.max_inflight));
  auto listing = handle_manuals_get();
  listing.status = 201;
  return listing;
}

ApiResponse Service::handle_eval(const std::string& body) {
  const auto j = parse_object(body);
  if (!j || !j->contains("dataset_path") || !(*j)["dataset_path"].is_string())
    return {400, error_body("BadRequest", "'dataset_path' must be a string")};
  EvalOptions options;
  options.lexicon = assistant_->lexicon();
  const auto mode = j->value("mode", std::string("fixture"));
  if (mode == "live") {
    options.mode = EvalMode::live;
    options.embedder = embedder_.get();
  } else if (mode != "fixture") {
    return {400, error_body("BadRequest", "'mode' must be fixture or live")};
  }
  options.verbose = j->value("verbose", false);
  try {
    if (j->contains("rubric_path"))
      options.rubric = RubricScores::from_file((*j)["rubric_path"].get<std::string>());
    const auto dataset = load_dataset((*j)["dataset_path"].get<std::string>());
    return {200, run_evaluation(dataset, options).to_json()};
  } catch (const DatasetNotFound& e) {
    return fail(404, e);
  } catch (const ProviderUnavailable& e) {
    return fail(502, e);
  } catch (const IncompleteDataset& e) {
    return fail(422, e);
  } catch (const Error& e) {
    return fail(422, e);
  } catch (const json::exception& e) {
    return {400, error_body("BadRequest", e.what())};
  }
}

json Service::provider_health(const std::string& name, const ProviderConfig& cfg) {
  json out{{"kind", cfg.kind}, {"model", cfg.model}};
  if (cfg.kind == "none") {
    out["reachable"] = false;
    return out;
  }
  if (cfg.kind != "http") {
    out["reachable"] = true;
    return out;
  }
  const auto now = std::chrono::steady_clock::now();
  auto it = reach_cache_.find(name);
  if (it == reach_cache_.end() || now - it->second.checked > std::chrono::seconds(30)) {
    const auto url = parse_url(cfg.endpoint.url);
    httplib::Client client(url.origin);
    client.set_connection_timeout(std::chrono::seconds(2));
    client.set_read_timeout(std::chrono::seconds(2));
    const auto res = client.Get(url.prefix + "/health");
    reach_cache_[name] = {res && res->status == 200, now};
    it = reach_cache_.find(name);
  }
  out["reachable"] = it->second.reachable;
  out["checked_seconds_ago"] =
      std::chrono::duration_cast<std::chrono::seconds>(now - it->second.checked).count();
  return out;
}

ApiResponse Service::handle_health() {
  const auto kb = store_.current();
  json providers;
  {
    std::lock_guard lock(health_mu_);
    providers["chat"] = provider_health("chat", config_.chat);
    providers["embed"] = provider_health("embed", config_.embed);
  }
  if (chat_ && config_.chat.kind != "http") providers["chat"]["model"] = chat_->model();
  if (embedder_ && config_.embed.kind != "http") providers["embed"]["model"] = embedder_->model();
  if (chat_ && config_.chat.kind == "none") providers["chat"] = {{"kind", "injected"}, {"model", chat_->model()}, {"reachable", true}};
  if (embedder_ && config_.embed.kind == "none") providers["embed"] = {{"kind", "injected"}, {"model", embedder_->model()}, {"reachable", true}};
  json templates;
  for (const auto& [k, v] : template_sha_) templates[k] = {{"sha256", v}};
  return {200,
          {{"status", "ok"},
           {"catalog", {{"manuals", kb->catalog.size()},
                        {"documents", kb->catalog.documents().size()},
                        {"chunks", kb->index.chunks().size()},
                        {"embedding_model", kb->index.embedding_model()
                                                ? json(*kb->index.embedding_model())
                                                : json(nullptr)}}},
           {"providers", providers},
           {"templates", templates}}};
}

void Service::install_routes() {
  const auto send = [](httplib::Response& res, const ApiResponse& api) {
    res.status = api.status;
    res.set_content(api.body.dump(), "application/json");
  };
  server_->Post("/v1/ask", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, handle_ask(req.body));
  });
  server_->Get("/v1/manuals", [this, send](const httplib::Request&, httplib::Response& res) {
    send(res, handle_manuals_get());
  });
  server_->Post("/v1/manuals", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, handle_manuals_post(req.body));
  });
  server_->Post("/v1/eval", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, handle_eval(req.body));
  });
  server_->Get("/v1/health", [this, send](const httplib::Request&, httplib::Response& res) {
    send(res, handle_health());
  });
  server_->set_exception_handler(
      [send](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        std::string what = "internal error";
        try {
          std::rethrow_exception(ep);
        } catch (const std::exception& e) {
          what = e.what();
        } catch (...) {
        }
        send(res, {500, error_body("Internal", what)});
      });
  server_->set_error_handler([send](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) send(res, {res.status, error_body("NotFound", "no such route")});
  });
}

int Service::start(const std::string& host, int port) {
  stop();
  server_ = std::make_unique<httplib::Server>();
  install_routes();
  const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw ConfigError("cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return bound;
}

void Service::listen_blocking() {
  server_ = std::make_unique<httplib::Server>();
  install_routes();
  if (!server_->listen(config_.host, config_.port))
    throw ConfigError("cannot listen on " + config_.host + ":" + std::to_string(config_.port));
}

void Service::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace lastmile
