#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace lastmile {

enum class Language { en, ja };

std::string_view to_string(Language lang);
Language language_from_string(std::string_view s);

struct ManualSection {
  std::string id;
  std::string title;
  std::string body;
  std::set<std::string> tags;

  bool operator==(const ManualSection&) const = default;
};

struct ManualDocument {
  std::string logical_name;
  std::uint32_t version = 0;
  std::string source_file;
  Language language = Language::en;
  std::vector<ManualSection> sections;

  const ManualSection* find_section(std::string_view id) const;

  bool operator==(const ManualDocument&) const = default;
};

// Logical name and version encoded in a manual file name:
// "XRD_MiniFlex_Manual_v3.docx" -> {"XRD_MiniFlex_Manual", 3},
// "Manual2.md" -> {"Manual", 2}, "Miniflex.md" -> {"Miniflex", 0}.
// Directory components and a leading '/' are ignored.
struct ManualName {
  std::string logical_name;
  std::uint32_t version = 0;
};
ManualName parse_manual_name(std::string_view source_file);

// Manual text format:
//
//   language: en            (optional preamble, before the first header)
//   ## 4-2 Sample filling [sample,preparation]
//   body text until the next header ...
//
// Preamble lines other than `language:` are ignored. Without a language
// line the document is `ja` when at least 20% of its letters are Japanese.
ManualDocument parse_manual(std::string_view text, std::string_view source_file);

// Throws InvalidDocument for documents parse_manual could not reproduce.
std::string serialize_manual(const ManualDocument& doc);

// Throws InvalidDocument describing the first broken invariant.
void check_document(const ManualDocument& doc);

class ManualCatalog {
 public:
  ManualCatalog() = default;

  const std::vector<ManualDocument>& documents() const { return documents_; }
  const std::map<std::string, ManualDocument>& resolved() const { return resolved_; }

  bool empty() const { return resolved_.empty(); }
  std::size_t size() const { return resolved_.size(); }

  const ManualDocument* latest(std::string_view logical_name) const;

  // Resolves a cited file name ("/Miniflex.docx", "XRD_Manual_v3.docx")
  // against the latest documents. Returns nullptr for unknown names.
  const ManualDocument* lookup_file(std::string_view cited_file) const;

  // JSON export: [{logical_name, version, source_file, sections:[ids]}].
  nlohmann::json to_json() const;

 private:
  friend ManualCatalog resolve_latest(std::vector<ManualDocument> docs);

  std::vector<ManualDocument> documents_;
  std::map<std::string, ManualDocument> resolved_;
};

// Keeps, per logical name, the highest version; equal versions go to the
// lexicographically greatest source_file.
ManualCatalog resolve_latest(std::vector<ManualDocument> docs);

// Parses every *.md / *.txt file directly under `dir`, in file-name order.
std::vector<ManualDocument> load_manual_dir(const std::filesystem::path& dir);

}  // namespace lastmile
