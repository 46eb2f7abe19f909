#include "lastmile/manual.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <regex>
#include <sstream>

#include "lastmile/errors.hpp"
#include "lastmile/text.hpp"

namespace lastmile {

namespace {

constexpr std::string_view kHeaderPrefix = "## ";
constexpr std::string_view kLanguageKey = "language:";

bool is_header(std::string_view line) { return text::starts_with(line, kHeaderPrefix); }

struct ParsedHeader {
  std::string id;
  std::string title;
  std::set<std::string> tags;
};

ParsedHeader parse_header(std::string_view line) {
  auto rest = text::trim(line.substr(kHeaderPrefix.size()));
  ParsedHeader h;
  const auto space = rest.find_first_of(" \t");
  h.id = std::string(rest.substr(0, space));
  auto title = space == std::string_view::npos ? std::string_view{} : text::trim(rest.substr(space));
  if (!title.empty() && title.back() == ']') {
    const auto open = title.rfind('[');
    if (open != std::string_view::npos) {
      auto inner = title.substr(open + 1, title.size() - open - 2);
      std::size_t start = 0;
      while (start <= inner.size()) {
        auto comma = inner.find(',', start);
        if (comma == std::string_view::npos) comma = inner.size();
        auto tag = text::trim(inner.substr(start, comma - start));
        if (!tag.empty()) h.tags.emplace(tag);
        start = comma + 1;
      }
      title = text::trim(title.substr(0, open));
    }
  }
  h.title = std::string(title);
  return h;
}

Language detect_document_language(const std::vector<ManualSection>& sections) {
  std::size_t letters = 0;
  std::size_t japanese = 0;
  for (const auto& s : sections) {
    for (const auto* part : {&s.title, &s.body}) {
      for (char32_t cp : text::decode_utf8(*part)) {
        if (!text::is_word_scalar(cp)) continue;
        ++letters;
        if (text::is_japanese_scalar(cp)) ++japanese;
      }
    }
  }
  return letters > 0 && japanese * 5 >= letters ? Language::ja : Language::en;
}

bool is_tag_char_ok(std::string_view tag) {
  return !tag.empty() && text::trim(tag) == tag &&
         tag.find_first_of(",[]\n\r") == std::string_view::npos;
}

}  // namespace

std::string_view to_string(Language lang) { return lang == Language::ja ? "ja" : "en"; }

Language language_from_string(std::string_view s) {
  if (s == "en") return Language::en;
  if (s == "ja") return Language::ja;
  throw Error("InvalidLanguage", "unknown language '" + std::string(s) + "'");
}

const ManualSection* ManualDocument::find_section(std::string_view id) const {
  auto it = std::find_if(sections.begin(), sections.end(),
                         [&](const ManualSection& s) { return s.id == id; });
  return it == sections.end() ? nullptr : &*it;
}

ManualName parse_manual_name(std::string_view source_file) {
  std::string base(source_file);
  if (auto slash = base.find_last_of("/\\"); slash != std::string::npos) base.erase(0, slash + 1);
  if (auto dot = base.rfind('.'); dot != std::string::npos && dot > 0) base.erase(dot);

  static const std::regex kVersioned(R"(^(.+)_[vV](\d+)$)");
  static const std::regex kTrailingDigits(R"(^(.*\D)(\d+)$)");
  std::smatch m;
  ManualName out;
  if (std::regex_match(base, m, kVersioned) || std::regex_match(base, m, kTrailingDigits)) {
    out.logical_name = m[1].str();
    out.version = static_cast<std::uint32_t>(std::stoul(m[2].str()));
  } else {
    out.logical_name = base;
  }
  while (!out.logical_name.empty() &&
         (out.logical_name.back() == '_' || out.logical_name.back() == '-' ||
          out.logical_name.back() == ' ')) {
    out.logical_name.pop_back();
  }
  if (out.logical_name.empty()) {
    out.logical_name = base;
    out.version = 0;
  }
  return out;
}

ManualDocument parse_manual(std::string_view raw, std::string_view source_file) {
  if (!text::is_valid_utf8(raw)) {
    throw MalformedManual(std::string(source_file) + ": text is not valid UTF-8");
  }
  ManualDocument doc;
  doc.source_file = std::string(source_file);
  const auto name = parse_manual_name(source_file);
  doc.logical_name = name.logical_name;
  doc.version = name.version;

  std::optional<Language> declared;
  std::vector<std::string_view> body_lines;
  std::optional<ParsedHeader> current;

  const auto close_section = [&] {
    if (!current) return;
    std::string body;
    for (std::size_t i = 0; i < body_lines.size(); ++i) {
      if (i) body.push_back('\n');
      body.append(body_lines[i]);
    }
    ManualSection section{current->id, current->title, std::string(text::trim(body)),
                          current->tags};
    if (section.body.empty()) {
      throw MalformedManual(doc.source_file + ": section '" + section.id + "' has an empty body");
    }
    if (doc.find_section(section.id) != nullptr) {
      throw DuplicateSectionId(doc.source_file + ": duplicate section id '" + section.id + "'");
    }
    doc.sections.push_back(std::move(section));
    body_lines.clear();
  };

  for (auto line : text::split_lines(raw)) {
    if (is_header(line)) {
      close_section();
      auto header = parse_header(line);
      if (header.id.empty()) {
        throw MalformedManual(doc.source_file + ": section header without an id");
      }
      current = std::move(header);
      continue;
    }
    if (current) {
      body_lines.push_back(line);
    } else {
      auto t = text::trim(line);
      if (text::starts_with(t, kLanguageKey)) {
        declared = language_from_string(text::trim(t.substr(kLanguageKey.size())));
      }
    }
  }
  close_section();

  if (doc.sections.empty()) {
    throw MalformedManual(doc.source_file + ": no '## <id> <title>' section headers found");
  }
  doc.language = declared.value_or(detect_document_language(doc.sections));
  return doc;
}

void check_document(const ManualDocument& doc) {
  const auto fail = [&](const std::string& why) {
    throw InvalidDocument(doc.source_file + ": " + why);
  };
  if (doc.sections.empty()) fail("document has no sections");
  const auto name = parse_manual_name(doc.source_file);
  if (name.logical_name != doc.logical_name || name.version != doc.version) {
    fail("logical name/version do not match the source file name");
  }
  std::set<std::string_view> ids;
  for (const auto& s : doc.sections) {
    if (s.id.empty() || s.id.find_first_of(" \t\r\n") != std::string::npos) {
      fail("section id '" + s.id + "' is empty or contains whitespace");
    }
    if (!ids.insert(s.id).second) fail("duplicate section id '" + s.id + "'");
    if (s.title.find_first_of("\r\n") != std::string::npos || text::trim(s.title) != s.title) {
      fail("section '" + s.id + "' title is not a trimmed single line");
    }
    if (!s.title.empty() && s.title.back() == ']') {
      fail("section '" + s.id + "' title ends with ']' and would read back as tags");
    }
    for (const auto& tag : s.tags) {
      if (!is_tag_char_ok(tag)) fail("section '" + s.id + "' has an invalid tag");
    }
    if (s.body.empty() || text::trim(s.body) != s.body) {
      fail("section '" + s.id + "' body is empty or not trimmed");
    }
    if (s.body.find('\r') != std::string::npos || !text::is_valid_utf8(s.body) ||
        !text::is_valid_utf8(s.title)) {
      fail("section '" + s.id + "' contains CR or invalid UTF-8");
    }
    for (auto line : text::split_lines(s.body)) {
      if (is_header(line)) fail("section '" + s.id + "' body contains a header line");
    }
  }
}

std::string serialize_manual(const ManualDocument& doc) {
  check_document(doc);
  std::ostringstream out;
  out << kLanguageKey << ' ' << to_string(doc.language) << "\n";
  for (const auto& s : doc.sections) {
    out << "\n" << kHeaderPrefix << s.id;
    if (!s.title.empty()) out << ' ' << s.title;
    if (!s.tags.empty()) {
      out << " [";
      bool first = true;
      for (const auto& t : s.tags) {
        if (!first) out << ',';
        out << t;
        first = false;
      }
      out << ']';
    }
    out << "\n" << s.body << "\n";
  }
  return out.str();
}

const ManualDocument* ManualCatalog::latest(std::string_view logical_name) const {
  auto it = resolved_.find(std::string(logical_name));
  return it == resolved_.end() ? nullptr : &it->second;
}

const ManualDocument* ManualCatalog::lookup_file(std::string_view cited_file) const {
  auto trimmed = text::trim(cited_file);
  if (trimmed.empty()) return nullptr;
  const auto name = parse_manual_name(trimmed);
  const auto* doc = latest(name.logical_name);
  if (doc == nullptr || doc->version != name.version) return nullptr;
  return doc;
}

nlohmann::json ManualCatalog::to_json() const {
  auto arr = nlohmann::json::array();
  for (const auto& [name, doc] : resolved_) {
    nlohmann::json ids = nlohmann::json::array();
    for (const auto& s : doc.sections) ids.push_back(s.id);
    arr.push_back({{"logical_name", name},
                   {"version", doc.version},
                   {"source_file", doc.source_file},
                   {"language", std::string(to_string(doc.language))},
                   {"sections", ids}});
  }
  return arr;
}

ManualCatalog resolve_latest(std::vector<ManualDocument> docs) {
  ManualCatalog cat;
  for (const auto& d : docs) {
    auto it = cat.resolved_.find(d.logical_name);
    if (it == cat.resolved_.end()) {
      cat.resolved_.emplace(d.logical_name, d);
      continue;
    }
    const auto& cur = it->second;
    if (d.version > cur.version || (d.version == cur.version && d.source_file > cur.source_file)) {
      it->second = d;
    }
  }
  cat.documents_ = std::move(docs);
  return cat;
}

std::vector<ManualDocument> load_manual_dir(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) {
    throw Error("ManualDirMissing", "manual directory '" + dir.string() + "' does not exist");
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto ext = entry.path().extension().string();
    if (ext == ".md" || ext == ".txt") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<ManualDocument> docs;
  docs.reserve(files.size());
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    docs.push_back(parse_manual(buf.str(), f.filename().string()));
  }
  return docs;
}

}  // namespace lastmile
