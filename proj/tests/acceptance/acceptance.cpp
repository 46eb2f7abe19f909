// Acceptance suite: one PASS/FAIL/SKIP line per criterion. Live checks run
// only when LASTMILE_EMBED_URL points at an embedding server.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "lastmile/errors.hpp"
#include "lastmile/service.hpp"
#include "lastmile/text.hpp"
#include "support.hpp"

using namespace lastmile;
using lastmile::testing::fixture;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  enum Kind { pass, fail, skip } kind;
  std::string detail;
};

Outcome ok(std::string d) { return {Outcome::pass, std::move(d)}; }
Outcome bad(std::string d) { return {Outcome::fail, std::move(d)}; }
Outcome skipped(std::string d) { return {Outcome::skip, std::move(d)}; }

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << std::fixed << v;
  return os.str();
}

std::shared_ptr<Embedder> live_embedder() {
  const char* url = std::getenv("LASTMILE_EMBED_URL");
  if (url == nullptr || *url == '\0') return nullptr;
  const char* model = std::getenv("LASTMILE_EMBED_MODEL");
  return std::make_shared<HttpEmbedder>(HttpEndpoint{url},
                                        model ? model : "paraphrase-multilingual-MiniLM-L12-v2");
}

std::vector<double> readable(const std::vector<QAPair>& data, Scope scope) {
  std::vector<double> out;
  for (const auto& p : data) {
    const auto& s = p.responses.at(Condition::rag).similarity;
    if (p.scope == scope && s) out.push_back(*s);
  }
  return out;
}

std::vector<std::string> scalars_of(std::string_view s) {
  std::vector<std::string> out;
  for (char32_t c : text::decode_utf8(s)) out.push_back(text::encode_utf8(c));
  return out;
}

double pair_count_u(const std::vector<double>& xs, const std::vector<double>& ys) {
  double u = 0;
  for (double x : xs)
    for (double y : ys) u += x > y ? 1.0 : (x == y ? 0.5 : 0.0);
  return u;
}

// 1. Fixture statistics.
Outcome criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto rep = run_evaluation(load_dataset(fixture("table_s1.jsonl")), {});
  const double ms = elapsed_ms(t0);
  const double in_rag = rep.cell(Scope::in_manual, Condition::rag).stats->mean;
  const double in_no = rep.cell(Scope::in_manual, Condition::no_rag).stats->mean;
  const double out_no = rep.cell(Scope::out_of_manual, Condition::no_rag).stats->mean;
  const bool good = std::abs(in_rag - 0.585) <= 0.005 && std::abs(in_no - 0.499) <= 0.005 &&
                    std::abs(out_no - 0.408) <= 0.005 && ms < 1000;
  const auto d = "in/rag " + fmt(in_rag) + ", in/no_rag " + fmt(in_no) + ", out/no_rag " + fmt(out_no) +
                 ", " + fmt(ms, 1) + " ms";
  return good ? ok(d) : bad(d);
}

// 2. U against the pair-count oracle.
Outcome criterion2() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937 rng(1337);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> xs(1 + rng() % 30), ys(1 + rng() % 30);
    std::uniform_int_distribution<int> v(0, 12);
    for (auto& x : xs) x = v(rng) / 4.0;
    for (auto& y : ys) y = v(rng) / 4.0;
    const double u = mann_whitney_u(xs, ys).u;
    const double u2 = mann_whitney_u(ys, xs).u;
    if (u != pair_count_u(xs, ys)) return bad("instance " + std::to_string(i) + ": U mismatch");
    if (u + u2 != static_cast<double>(xs.size() * ys.size()))
      return bad("instance " + std::to_string(i) + ": U + U' != mn");
  }
  const double ms = elapsed_ms(t0);
  if (ms >= 5000) return bad("too slow: " + fmt(ms, 1) + " ms");
  return ok("200 instances, " + fmt(ms, 1) + " ms");
}

// 3. Paper reproduction (live) or the offline pair-count substitute.
Outcome criterion3() {
  const auto data = load_dataset(fixture("table_s1.jsonl"));
  const auto xs = readable(data, Scope::in_manual), ys = readable(data, Scope::out_of_manual);
  const auto offline = mann_whitney_u(xs, ys);
  const double expected = pair_count_u(xs, ys);
  std::string d = "offline U=" + fmt(offline.u, 1) + " (pair count " + fmt(expected, 1) + ", " +
                  std::to_string(xs.size()) + " vs " + std::to_string(ys.size()) + ")";
  if (offline.u != expected) return bad(d);

  auto embedder = live_embedder();
  if (!embedder) return skipped(d + "; live part needs LASTMILE_EMBED_URL");
  EvalOptions opt;
  opt.mode = EvalMode::live;
  opt.embedder = embedder.get();
  const auto rep = run_evaluation(data, opt);
  if (!rep.mann_whitney) return bad(d + "; live run produced no test: " + rep.mann_whitney_omitted_reason);
  const auto& mw = *rep.mann_whitney;
  d += "; live U=" + fmt(mw.u, 1) + " p_exact=" + fmt(mw.p_exact, 6);
  return std::abs(mw.u - 96) <= 2 && mw.p_exact < 0.001 ? ok(d) : bad(d);
}

// 4. Refusal taxonomy on the out-of-manual RAG responses.
Outcome criterion4() {
  const auto rep = run_evaluation(load_dataset(fixture("table_s1.jsonl")), {});
  const auto n = [&](RefusalClass c) {
    auto it = rep.refusal_counts.find(c);
    return it == rep.refusal_counts.end() ? std::size_t{0} : it->second;
  };
  const auto rows = [&](RefusalClass c) {
    std::string s;
    auto it = rep.refusal_rows.find(c);
    if (it == rep.refusal_rows.end()) return s;
    for (int id : it->second) s += (s.empty() ? "" : ",") + std::to_string(id);
    return s;
  };
  const auto ex = n(RefusalClass::explicit_refusal), sw = n(RefusalClass::safety_warning),
             pe = n(RefusalClass::partial_with_escalation), fa = n(RefusalClass::full_answer);
  std::string d = "explicit " + std::to_string(ex) + " [" + rows(RefusalClass::explicit_refusal) +
                  "], safety " + std::to_string(sw) + " [" + rows(RefusalClass::safety_warning) +
                  "], partial " + std::to_string(pe) + " [" + rows(RefusalClass::partial_with_escalation) +
                  "], full " + std::to_string(fa) + " [" + rows(RefusalClass::full_answer) + "]";
  const auto within = [](std::size_t got, std::size_t want) {
    return (got > want ? got - want : want - got) <= 1;
  };
  const bool good = ex == 4 && fa == 0 && sw + pe == 9 && within(sw, 3) && within(pe, 6);
  return good ? ok(d) : bad(d + "; expected explicit 4, full 0, safety+partial 9 near (3, 6)");
}

struct Harness {
  lastmile::testing::TempDir tmp;
  std::unique_ptr<Service> service;
  std::shared_ptr<CannedChatProvider> chat;

  Harness() {
    fs::copy(fixture("manuals"), tmp.path() / "manuals");
    auto cfg = ServiceConfig::defaults();
    cfg.manual_dir = tmp.path() / "manuals";
    cfg.templates_dir = lastmile::testing::templates_dir();
    cfg.log_path = tmp.path() / "q.jsonl";
    chat = CannedChatProvider::from_file(fixture("stub_chat.json").string());
    service = std::make_unique<Service>(cfg, chat, nullptr);
  }

  json ask(const std::string& q) {
    const auto r = service->handle_ask(json{{"question", q}}.dump());
    if (r.status != 200) throw std::runtime_error("ask returned " + std::to_string(r.status));
    return r.body;
  }
};

// 5. Fixed responses are emitted byte for byte; every mutation is rejected.
Outcome criterion5() {
  Harness h;
  const std::pair<std::string, std::string_view> cases[] = {
      {"Can the wavelength be changed?", fixed::pattern_b_en},
      {"\xE6\xB3\xA2\xE9\x95\xB7\xE3\x82\x92\xE5\xA4\x89\xE3\x81\x88\xE3\x82\x89\xE3\x82\x8C"
       "\xE3\x81\xBE\xE3\x81\x99\xE3\x81\x8B\xEF\xBC\x9F",  // 波長を変えられますか？
       fixed::pattern_b_ja},
      {"There is smoke coming from the instrument.", fixed::anomaly_en},
      {"\xE8\xA3\x85\xE7\xBD\xAE\xE3\x81\x8B\xE3\x82\x89\xE7\x85\x99\xE3\x81\x8C\xE5\x87\xBA"
       "\xE3\x81\xA6\xE3\x81\x84\xE3\x81\xBE\xE3\x81\x99",  // 装置から煙が出ています
       fixed::anomaly_ja},
  };
  for (const auto& [q, want] : cases) {
    const auto body = h.ask(q)["body"].get<std::string>();
    if (body != want) return bad("service body differs for '" + q + "'");
  }

  std::size_t checked = 0;
  for (const auto fixed_text : {fixed::pattern_b_en, fixed::pattern_b_ja, fixed::anomaly_en, fixed::anomaly_ja}) {
    const auto scalars = scalars_of(fixed_text);
    const auto lang = detect_language(fixed_text);
    const auto expected = validate_response(fixed_text, ResponseMode::retrieval, lang).pattern;
    for (std::size_t i = 0; i <= scalars.size(); ++i) {
      std::vector<std::string> variants;
      std::string prefix, suffix;
      for (std::size_t k = 0; k < scalars.size(); ++k) (k < i ? prefix : suffix) += scalars[k];
      if (i < scalars.size()) {
        const auto rest = suffix.substr(scalars[i].size());
        variants.push_back(prefix + rest);  // deletion
        for (const auto& ch : {std::string("a"), std::string("Z"), std::string("."), std::string("\xE3\x81\x82")})
          if (ch != scalars[i]) variants.push_back(prefix + ch + rest);  // substitution
      }
      for (const auto& ch : {std::string("a"), std::string(" "), std::string("\xE3\x81\x82")})
        variants.push_back(prefix + ch + suffix);  // insertion
      for (const auto& v : variants) {
        const auto p = validate_response(v, ResponseMode::retrieval, lang).pattern;
        if (p == expected) return bad("mutation accepted as fixed response: '" + v + "'");
        ++checked;
      }
    }
  }
  return ok("4 service bodies byte-identical; " + std::to_string(checked) + " mutations rejected");
}

// 6. Anomaly and grounding gates bypass the provider.
Outcome criterion6() {
  Harness h;
  const auto lex = Lexicon::defaults();
  std::mt19937 rng(6);
  const std::vector<std::string> frames_en{"I think there is {} near the stage.", "Help, {}!",
                                           "The instrument shows {} after the run.", "{} during measurement"};
  const std::vector<std::string> frames_ja{"{}\xE3\x81\x8C\xE3\x81\x82\xE3\x82\x8A\xE3\x81\xBE\xE3\x81\x99",
                                           "\xE8\xA3\x85\xE7\xBD\xAE\xE3\x81\xA7{}"};
  for (int i = 0; i < 100; ++i) {
    const bool ja = i % 4 == 3;
    const auto& terms = lex.anomaly.at(ja ? Language::ja : Language::en);
    const auto& frames = ja ? frames_ja : frames_en;
    auto q = frames[rng() % frames.size()];
    q.replace(q.find("{}"), 2, terms[rng() % terms.size()]);
    const auto a = h.ask(q);
    if (a["provider_calls"] != 0) return bad("anomaly query reached the provider: " + q);
    if (a["body"] != anomaly_response(ja ? Language::ja : Language::en)) return bad("wrong body for: " + q);
  }

  // Below-threshold retrieval, checked with an embedding index so the
  // score is compared against tau.
  auto embedder = std::make_shared<HashingEmbedder>();
  const auto kb = KnowledgeBase::build(load_manual_dir(fixture("manuals")), embedder.get());
  auto chat = std::make_shared<CannedChatProvider>(std::map<std::string, std::vector<std::string>>{},
                                                   "should never be returned");
  Assistant assistant(PromptTemplates::load(lastmile::testing::templates_dir()), lex, AssistantConfig{}, chat,
                      embedder);
  const std::vector<std::string> vocab{"wavelength", "vacuum", "laser", "magnet", "tungsten", "cryostat",
                                       "firmware", "licence", "calibration", "goniometer", "monochromator",
                                       "scintillator", "filament", "beryllium", "helium", "software"};
  std::size_t gated = 0;
  for (int i = 0; i < 200 && gated < 100; ++i) {
    std::string q = "Can I change the " + vocab[rng() % vocab.size()] + " " + vocab[rng() % vocab.size()] + "?";
    const auto hits = retrieve(q, kb->index, AssistantConfig{}.retrieval, embedder.get());
    if (!hits.empty() && hits.front().score >= AssistantConfig{}.retrieval.grounding_threshold) continue;
    const auto a = assistant.answer(Query::make(q), *kb);
    if (a.provider_calls != 0 || chat->calls() != 0) return bad("ungrounded query reached the provider: " + q);
    if (a.body != pattern_b(Language::en)) return bad("ungrounded query did not get Pattern B: " + q);
    ++gated;
  }
  if (gated < 20) return bad("too few below-threshold queries generated (" + std::to_string(gated) + ")");
  return ok("100 anomaly queries, " + std::to_string(gated) + " below-threshold queries, 0 provider calls");
}

// Independent Pattern A checks, deliberately not reusing the validator.
bool independently_pattern_a(const std::string& s, Language lang, std::string& why) {
  const auto lines = text::split_lines(s);
  std::size_t refs = 0, length = 0;
  for (const auto line : lines) {
    const auto t = text::trim(line);
    if (t.starts_with("\xF0\x9F\x94\x97 Reference:")) {
      ++refs;
      continue;
    }
    if (t.starts_with("- ") || t.starts_with("* ") || t.starts_with("\xE3\x83\xBB") ||
        t.starts_with("\xE2\x80\xA2")) {
      why = "bullet line";
      return false;
    }
    if (lang == Language::en) {
      std::istringstream in{std::string(t)};
      std::string w;
      while (in >> w) ++length;
    } else {
      for (char32_t c : text::decode_utf8(t))
        if (!text::is_unicode_space(c)) ++length;
    }
  }
  if (refs != 1) {
    why = std::to_string(refs) + " reference lines";
    return false;
  }
  if (length > (lang == Language::en ? kMaxWordsEn : kMaxCharsJa)) {
    why = "length " + std::to_string(length);
    return false;
  }
  return true;
}

// 7. Validator soundness.
Outcome criterion7() {
  std::mt19937 rng(7);
  const std::vector<std::string> words{"Press", "the", "door", "button", "then", "wait", "for", "the", "lamp.",
                                       "Close", "cover", "gently."};
  const std::vector<std::string> ja_chars{"\xE8\xA9\xA6", "\xE6\x96\x99", "\xE3\x82\x92", "\xE7\xBD\xAE",
                                          "\xE3\x81\x8F", "\xE3\x80\x82", " "};
  std::size_t accepted = 0, total = 0;
  for (int i = 0; i < 3000; ++i) {
    const auto lang = i % 3 == 2 ? Language::ja : Language::en;
    std::string body;
    const int parts = 1 + static_cast<int>(rng() % 3);
    for (int p = 0; p < parts; ++p) {
      if (p) body += rng() % 4 ? "\n" : "\n\n";
      if (rng() % 6 == 0) body += rng() % 2 ? "- " : "\xE3\x83\xBB";
      const int n = lang == Language::en ? 5 + static_cast<int>(rng() % 30) : 10 + static_cast<int>(rng() % 60);
      for (int k = 0; k < n; ++k) {
        if (lang == Language::en) body += (k ? " " : "") + words[rng() % words.size()];
        else body += ja_chars[rng() % ja_chars.size()];
      }
    }
    const int refs = rng() % 5 == 0 ? 0 : (rng() % 6 == 0 ? 2 : 1);
    for (int r = 0; r < refs; ++r) body += "\n\xF0\x9F\x94\x97 Reference: Miniflex.md";
    if (rng() % 8 == 0) body += "\nTrailing text.";
    ++total;
    const auto report = validate_response(body, ResponseMode::retrieval, lang);
    if (report.pattern != Pattern::A) continue;
    ++accepted;
    std::string why;
    if (!independently_pattern_a(body, lang, why)) return bad("validator accepted (" + why + "): " + body);
  }
  if (accepted < 100) return bad("only " + std::to_string(accepted) + " candidates classified as Pattern A");

  std::string advisory_detail;
  for (const char* file : {"advisory_report_en.txt", "advisory_report_ja.txt"}) {
    const auto raw = lastmile::testing::slurp(fixture(file));
    const auto r = validate_response(raw, ResponseMode::instructional, detect_language(raw));
    if (r.pattern != Pattern::advisory || r.has_hard_violation())
      return bad(std::string(file) + " failed advisory validation");
  }
  return ok(std::to_string(accepted) + "/" + std::to_string(total) +
            " generated strings classified A, all re-checked; both advisory reports pass");
}

// 8. Cosine properties, plus live spot checks on fixture rows 5 and 11.
Outcome criterion8() {
  std::mt19937 rng(8);
  std::uniform_real_distribution<double> u(-1.0, 1.0), scale(0.01, 100.0);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> a(1 + rng() % 64), b;
    for (auto& v : a) v = u(rng);
    if (std::all_of(a.begin(), a.end(), [](double v) { return v == 0; })) continue;
    b.resize(a.size());
    for (auto& v : b) v = u(rng);
    const double s = scale(rng);
    std::vector<double> as(a);
    for (auto& v : as) v *= s;
    if (std::abs(cosine_similarity(a, a) - 1.0) > 1e-9) return bad("self-similarity off");
    if (std::abs(cosine_similarity(as, b) - cosine_similarity(a, b)) > 1e-9) return bad("scale invariance off");
    if (std::abs(cosine_similarity(a, b) - cosine_similarity(b, a)) > 1e-9) return bad("symmetry off");
  }
  const std::string d = "1000 random vector pairs";
  auto embedder = live_embedder();
  if (!embedder) return skipped(d + " pass; live spot check needs LASTMILE_EMBED_URL");
  const auto data = load_dataset(fixture("table_s1.jsonl"));
  std::string live;
  bool good = true;
  for (const auto& [id, want] : {std::pair{5, 0.723}, std::pair{11, 0.127}}) {
    const auto it = std::find_if(data.begin(), data.end(), [&](const QAPair& p) { return p.id == id; });
    const double got = score_similarity(it->reference_answer, it->responses.at(Condition::rag).text, *embedder);
    live += " row " + std::to_string(id) + " " + fmt(got, 3) + " (want " + fmt(want, 3) + ")";
    good = good && std::abs(got - want) <= 0.02;
  }
  return good ? ok(d + ";" + live) : bad(d + ";" + live);
}

// 9. Manual round trip and version resolution.
Outcome criterion9() {
  std::mt19937 rng(9);
  const std::vector<std::string> words{"sample", "holder", "door", "X-ray", "(note)", "#tag", "10\xC2\xB0",
                                       "\xE8\xA9\xA6\xE6\x96\x99", "RUN/STOP"};
  for (int i = 0; i < 100; ++i) {
    ManualDocument d;
    d.source_file = "Doc" + std::to_string(i) + "_v" + std::to_string(rng() % 5) + ".md";
    const auto name = parse_manual_name(d.source_file);
    d.logical_name = name.logical_name;
    d.version = name.version;
    d.language = rng() % 2 ? Language::ja : Language::en;
    const int n = 1 + static_cast<int>(rng() % 5);
    for (int s = 0; s < n; ++s) {
      ManualSection sec;
      sec.id = std::to_string(s + 1) + "-1";
      sec.title = words[rng() % words.size()];
      if (rng() % 2) sec.tags = {"safety"};
      for (int w = 0; w < 1 + static_cast<int>(rng() % 10); ++w)
        sec.body += (w ? (rng() % 5 ? " " : "\n") : "") + words[rng() % words.size()];
      d.sections.push_back(sec);
    }
    if (parse_manual(serialize_manual(d), d.source_file) != d)
      return bad("round trip changed document " + d.source_file);
  }
  const auto v2 = parse_manual("## 1-1 Start\nOld.\n", "XRD_MiniFlex_Manual_v2.docx");
  const auto v3 = parse_manual("## 1-1 Start\nNew.\n", "XRD_MiniFlex_Manual_v3.docx");
  const auto cat = resolve_latest({v3, v2});
  const auto* latest = cat.latest("XRD_MiniFlex_Manual");
  if (latest == nullptr || latest->version != 3) return bad("resolve_latest did not pick v3");
  return ok("100 generated manuals round-trip; v3 selected over v2");
}

// 10. Rubric aggregation.
Outcome criterion10() {
  RubricScores s;
  s.entries = {{"E1", 4, 4}, {"E2", 3, 4}, {"E3", 3, 4}, {"E4", 3, 4}};
  const auto m = aggregate_rubric(s);
  const auto d = "utility " + fmt(m.utility_mean, 2) + ", safety " + fmt(m.safety_mean, 2);
  return std::abs(m.utility_mean - 3.25) < 1e-12 && std::abs(m.safety_mean - 4.0) < 1e-12 ? ok(d) : bad(d);
}

}  // namespace

int main() {
  const std::vector<std::function<Outcome()>> criteria{criterion1, criterion2, criterion3, criterion4,
                                                       criterion5, criterion6, criterion7, criterion8,
                                                       criterion9, criterion10};
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i]();
    } catch (const std::exception& e) {
      o = bad(std::string("exception: ") + e.what());
    }
    const char* tag = o.kind == Outcome::pass ? "PASS" : o.kind == Outcome::fail ? "FAIL" : "SKIP";
    if (o.kind == Outcome::fail) ++failed;
    std::cout << tag << " criterion " << (i + 1) << ": " << o.detail << "\n";
  }
  std::cout << (failed ? std::to_string(failed) + " criterion(s) failed" : "all criteria passed") << "\n";
  return failed ? 1 : 0;
}
