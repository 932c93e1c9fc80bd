#include "mira/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <unordered_set>

#include <json.hpp>

#include "mira/binio.hpp"
#include "mira/error.hpp"
#include "mira/text.hpp"

namespace mira {

namespace {

using nlohmann::json;

Error malformed(size_t line_no, const std::string& why) {
  return Error("malformed-line(" + std::to_string(line_no) + ")", why);
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  size_t start = 0;
  for (;;) {
    size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

int64_t parse_int(const std::string& s, size_t line_no) {
  int64_t value = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw malformed(line_no, "not an integer: '" + s + "'");
  return value;
}

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

}  // namespace

std::vector<DocumentRecord> load_corpus(const std::filesystem::path& path) {
  std::ifstream is = open_input(path);
  std::vector<DocumentRecord> docs;
  std::unordered_set<std::string> seen;
  std::string line;
  size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw malformed(line_no, "not a JSON object");
    DocumentRecord rec;
    try {
      rec.doc_id = j.at("doc_id").get<std::string>();
      rec.title = j.value("title", "");
      rec.url = j.value("url", "");
      rec.anchor = j.value("anchor", "");
    } catch (const json::exception& e) {
      throw malformed(line_no, e.what());
    }
    if (rec.doc_id.empty()) throw malformed(line_no, "empty doc_id");
    if (!seen.insert(rec.doc_id).second) throw Error("duplicate-doc(" + rec.doc_id + ")");
    docs.push_back(std::move(rec));
  }
  return docs;
}

void save_corpus(const std::vector<DocumentRecord>& docs, const std::filesystem::path& path) {
  atomic_write(path, [&](std::ostream& os) {
    for (const auto& d : docs) {
      json j;
      j["doc_id"] = d.doc_id;
      j["title"] = d.title;
      j["url"] = d.url;
      j["anchor"] = d.anchor;
      os << j.dump() << '\n';
    }
  });
}

std::string normalize_click_key(std::string_view query_text) {
  // normalize_text already yields single-space-joined words.
  return normalize_text(query_text);
}

ClickMap load_clicks(const std::filesystem::path& path) {
  std::ifstream is = open_input(path);
  std::map<std::string, std::map<std::string, int64_t>> acc;  // doc -> key -> freq
  std::string line;
  size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 3) throw malformed(line_no, "expected 3 tab-separated fields");
    if (fields[0].empty()) throw malformed(line_no, "empty doc_id");
    const int64_t freq = parse_int(fields[2], line_no);
    if (freq < 0) throw malformed(line_no, "negative frequency");
    if (freq == 0) continue;
    acc[fields[0]][normalize_click_key(fields[1])] += freq;
  }
  ClickMap out;
  for (auto& [doc_id, by_key] : acc) {
    auto& list = out[doc_id];
    list.reserve(by_key.size());
    for (auto& [key, freq] : by_key) list.push_back({doc_id, key, freq});
    std::stable_sort(list.begin(), list.end(), [](const ClickRecord& a, const ClickRecord& b) {
      if (a.frequency != b.frequency) return a.frequency > b.frequency;
      return a.query_text < b.query_text;
    });
  }
  return out;
}

void save_clicks(const ClickMap& clicks, const std::filesystem::path& path) {
  atomic_write(path, [&](std::ostream& os) {
    for (const auto& [doc_id, list] : clicks) {
      for (const auto& c : list) {
        os << doc_id << '\t' << c.query_text << '\t' << c.frequency << '\n';
      }
    }
  });
}

std::vector<Judgment> load_judgments(const std::filesystem::path& path) {
  std::ifstream is = open_input(path);
  std::vector<Judgment> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 3) throw malformed(line_no, "expected 3 tab-separated fields");
    const int64_t rel = parse_int(fields[2], line_no);
    if (rel < 1 || rel > 4) throw malformed(line_no, "rel out of [1,4]");
    out.push_back({fields[0], fields[1], static_cast<int>(rel)});
  }
  return out;
}

void save_judgments(const std::vector<Judgment>& judgments, const std::filesystem::path& path) {
  atomic_write(path, [&](std::ostream& os) {
    for (const auto& j : judgments) {
      os << j.query_text << '\t' << j.doc_id << '\t' << j.rel << '\n';
    }
  });
}

std::vector<std::string> dangling_click_doc_ids(const std::vector<DocumentRecord>& docs,
                                                const ClickMap& clicks) {
  std::unordered_set<std::string> known;
  for (const auto& d : docs) known.insert(d.doc_id);
  std::vector<std::string> dangling;
  for (const auto& [doc_id, list] : clicks) {
    (void)list;
    if (!known.count(doc_id)) dangling.push_back(doc_id);
  }
  return dangling;  // ClickMap iteration is already sorted
}

}  // namespace mira
