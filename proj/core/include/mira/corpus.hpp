#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace mira {

// One retrievable document. Source order is fixed: title, url, anchor.
struct DocumentRecord {
  std::string doc_id;
  std::string title;
  std::string url;
  std::string anchor;
};

// One historical query-and-click for a document, deduplicated by
// normalized query key with frequencies summed.
struct ClickRecord {
  std::string doc_id;
  std::string query_text;  // normalized click key after load_clicks
  int64_t frequency = 0;
};

struct Judgment {
  std::string query_text;
  std::string doc_id;
  int rel = 0;  // in [1, 4]
};

using ClickMap = std::map<std::string, std::vector<ClickRecord>>;

// corpus.jsonl: {"doc_id": str, "title": str, "url": str, "anchor": str}
// per line. Duplicate doc_id raises Error("duplicate-doc(id)").
std::vector<DocumentRecord> load_corpus(const std::filesystem::path& path);
void save_corpus(const std::vector<DocumentRecord>& docs, const std::filesystem::path& path);

// Click identity used for intention groups and MICG edges: same
// normalization as tokenize, words rejoined with single spaces.
std::string normalize_click_key(std::string_view query_text);

// clicks.tsv: doc_id<TAB>query_text<TAB>frequency. Zero-frequency rows are
// dropped; per document, rows are deduplicated by normalized key (summing
// frequencies) and sorted by (frequency desc, key asc).
ClickMap load_clicks(const std::filesystem::path& path);
void save_clicks(const ClickMap& clicks, const std::filesystem::path& path);

// judgments.tsv: query_text<TAB>doc_id<TAB>rel with rel in [1,4].
std::vector<Judgment> load_judgments(const std::filesystem::path& path);
void save_judgments(const std::vector<Judgment>& judgments, const std::filesystem::path& path);

// doc_ids that appear in the click log but not in the corpus, sorted and
// unique. Callers are expected to report these rather than drop them.
std::vector<std::string> dangling_click_doc_ids(const std::vector<DocumentRecord>& docs,
                                                const ClickMap& clicks);

}  // namespace mira
