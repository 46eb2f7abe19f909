#include <csignal>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lastmile/assistant.hpp"
#include "lastmile/errors.hpp"
#include "lastmile/eval.hpp"
#include "lastmile/service.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lastmile;

namespace {

int report_error(const std::string& code, const std::string& message) {
  std::cerr << error_body(code, message).dump() << "\n";
  return 2;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("FileNotFound", "cannot read '" + p.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// A stored response file ends with one newline that is not part of the body.
std::string strip_final_newline(std::string s) {
  if (!s.empty() && s.back() == '\n') s.pop_back();
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

struct Common {
  std::optional<std::string> config;
  std::optional<std::string> manuals;
  std::optional<std::string> stub_chat;
  bool hash_embed = false;

  ServiceConfig resolve() const {
    auto cfg = ServiceConfig::load(config ? std::optional<fs::path>(*config) : std::nullopt);
    if (manuals) cfg.manual_dir = *manuals;
    if (stub_chat) {
      cfg.chat.kind = "canned";
      cfg.chat.canned_path = *stub_chat;
    }
    if (hash_embed) cfg.embed.kind = "hashing";
    return cfg;
  }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON config file (overrides environment)");
  cmd->add_option("--manuals", c.manuals, "Manual directory");
  cmd->add_option("--stub-chat", c.stub_chat, "Use canned chat responses from this JSON file");
  cmd->add_flag("--hash-embed", c.hash_embed, "Use the offline hashing embedder");
}

Service* g_service = nullptr;

void on_signal(int) {
  if (g_service != nullptr) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lastmile: grounded lab-manual assistant"};
  app.require_subcommand(1);

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Parse a manual directory and print the resolved catalog");
  std::string ingest_dir;
  ingest->add_option("dir", ingest_dir, "Manual directory")->required();

  // ask
  Common ask_opts;
  auto* ask = app.add_subcommand("ask", "Answer one question against the manual store");
  std::string question, ask_mode = "retrieval";
  bool ask_json = false;
  ask->add_option("text", question, "Question text")->required();
  ask->add_option("--mode", ask_mode, "retrieval | instructional")
      ->check(CLI::IsMember({"retrieval", "instructional"}));
  ask->add_flag("--json", ask_json, "Print the structured answer");
  add_common(ask, ask_opts);

  // eval
  Common eval_opts;
  auto* eval = app.add_subcommand("eval", "Score a QA dataset");
  std::string dataset, format = "json";
  std::optional<std::string> rubric;
  bool live = false, verbose = false;
  eval->add_option("dataset", dataset, "JSONL dataset")->required();
  eval->add_flag("--live", live, "Recompute similarities with the embedding provider");
  eval->add_option("--format", format, "json | csv")->check(CLI::IsMember({"json", "csv"}));
  eval->add_option("--rubric", rubric, "Rubric scores JSON");
  eval->add_flag("--verbose", verbose, "Include per-record detail");
  add_common(eval, eval_opts);

  // serve
  Common serve_opts;
  auto* serve = app.add_subcommand("serve", "Run the HTTP API");
  std::optional<std::string> host;
  std::optional<int> port;
  serve->add_option("--host", host, "Listen address");
  serve->add_option("--port", port, "Listen port");
  std::optional<std::string> log_path;
  serve->add_option("--log", log_path, "Query log path");
  add_common(serve, serve_opts);

  // validate
  auto* validate = app.add_subcommand("validate", "Run the output guardrails on a stored response");
  std::string validate_file, validate_mode = "retrieval";
  std::optional<std::string> validate_lang;
  validate->add_option("file", validate_file, "Response text file")->required();
  validate->add_option("--mode", validate_mode, "retrieval | instructional")
      ->check(CLI::IsMember({"retrieval", "instructional"}));
  validate->add_option("--lang", validate_lang, "en | ja (default: detected)")
      ->check(CLI::IsMember({"en", "ja"}));

  // stub-providers
  auto* stubs = app.add_subcommand("stub-providers", "Serve the stub chat and embedding protocols");
  std::string stub_host = "127.0.0.1", stub_canned;
  int stub_port = 8090;
  stubs->add_option("--host", stub_host);
  stubs->add_option("--port", stub_port);
  stubs->add_option("--canned", stub_canned, "Canned chat responses JSON");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ingest) {
      const auto catalog = resolve_latest(load_manual_dir(ingest_dir));
      std::cout << catalog.to_json().dump(2) << "\n";
      return 0;
    }

    if (*ask) {
      const auto cfg = ask_opts.resolve();
      const auto chat = make_chat_provider(cfg.chat);
      const auto embedder = make_embedder(cfg.embed);
      const auto kb = KnowledgeBase::build(load_manual_dir(cfg.manual_dir), embedder.get(),
                                           cfg.embed.endpoint.max_inflight);
      const auto lexicon = cfg.lexicon_path.empty() ? Lexicon::defaults()
                                                    : Lexicon::from_file(cfg.lexicon_path.string());
      Assistant assistant(PromptTemplates::load(cfg.templates_dir), lexicon, cfg.assistant, chat,
                          embedder);
      const auto answer =
          assistant.answer(Query::make(question, response_mode_from_string(ask_mode)), *kb);
      if (ask_json) {
        std::cout << answer.to_json().dump(2) << "\n";
      } else {
        std::cout << answer.body << "\n";
      }
      return 0;
    }

    if (*eval) {
      const auto cfg = eval_opts.resolve();
      EvalOptions options;
      options.verbose = verbose;
      if (!cfg.lexicon_path.empty()) options.lexicon = Lexicon::from_file(cfg.lexicon_path.string());
      if (rubric) options.rubric = RubricScores::from_file(*rubric);
      std::shared_ptr<Embedder> embedder;
      if (live) {
        options.mode = EvalMode::live;
        embedder = make_embedder(cfg.embed);
        options.embedder = embedder.get();
      }
      const auto report = run_evaluation(load_dataset(dataset), options);
      if (format == "csv") {
        std::cout << report.to_csv();
      } else {
        std::cout << report.to_json().dump(2) << "\n";
      }
      return 0;
    }

    if (*serve) {
      auto cfg = serve_opts.resolve();
      if (host) cfg.host = *host;
      if (port) cfg.port = *port;
      if (log_path) cfg.log_path = *log_path;
      Service service(cfg);
      g_service = &service;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cerr << "listening on http://" << cfg.host << ":" << cfg.port << "/v1\n";
      service.listen_blocking();
      g_service = nullptr;
      return 0;
    }

    if (*validate) {
      const auto body = strip_final_newline(read_text(validate_file));
      const auto lang = validate_lang ? language_from_string(*validate_lang) : detect_language(body);
      const auto r = validate_response(body, response_mode_from_string(validate_mode), lang);
      std::cout << to_json(r).dump(2) << "\n";
      return r.has_hard_violation() ? 1 : 0;
    }

    if (*stubs) {
      std::shared_ptr<ChatProvider> chat =
          stub_canned.empty() ? std::make_shared<CannedChatProvider>(
                                    std::map<std::string, std::vector<std::string>>{},
                                    std::string(pattern_b(Language::en)))
                              : std::shared_ptr<ChatProvider>(CannedChatProvider::from_file(stub_canned));
      StubProviderServer server(chat, std::make_shared<HashingEmbedder>());
      std::cerr << "stub providers on http://" << stub_host << ":" << stub_port << "\n";
      server.listen_blocking(stub_host, stub_port);
      return 0;
    }
  } catch (const Error& e) {
    return report_error(e.code(), e.what());
  } catch (const std::exception& e) {
    return report_error("Internal", e.what());
  }
  return 0;
}
