#include "mira/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <unordered_map>

#include "mira/binio.hpp"
#include "mira/error.hpp"
#include "mira/parallel.hpp"

namespace mira {

VectorIndex build_index(const std::vector<IndexInput>& inputs) {
  VectorIndex index;
  std::set<std::pair<std::string, int>> seen;
  for (const auto& in : inputs) {
    if (index.records.empty()) {
      index.dim = static_cast<int>(in.vector.size());
    } else if (static_cast<int>(in.vector.size()) != index.dim) {
      throw Error("dim-mismatch", in.doc_id);
    }
    const double norm = in.vector.norm();
    if (norm == 0.0)
      throw Error("zero-vector(" + in.doc_id + "," + std::to_string(in.group_id) + ")");
    if (!seen.insert({in.doc_id, in.group_id}).second)
      throw Error("duplicate-record(" + in.doc_id + "," + std::to_string(in.group_id) + ")");
    IndexRecord rec;
    rec.doc_id = in.doc_id;
    rec.group_id = in.group_id;
    rec.vector.resize(in.vector.size());
    for (Eigen::Index i = 0; i < in.vector.size(); ++i)
      rec.vector[static_cast<size_t>(i)] = static_cast<float>(in.vector(i) / norm);
    index.records.push_back(std::move(rec));
  }
  return index;
}

namespace {
constexpr char kIndexMagic[9] = "MIRAVEC1";
}

void save_index(const VectorIndex& index, const std::filesystem::path& path) {
  atomic_write(path, [&](std::ostream& os) {
    write_bytes(os, kIndexMagic, 8);
    write_le<uint32_t>(os, static_cast<uint32_t>(index.dim));
    for (const auto& rec : index.records) {
      write_string(os, rec.doc_id);
      write_le<uint32_t>(os, static_cast<uint32_t>(rec.group_id));
      for (float v : rec.vector) write_le<float>(os, v);
    }
  });
}

VectorIndex load_index(const std::filesystem::path& path) {
  std::ifstream is = open_input(path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::string_view(magic, 8) != std::string_view(kIndexMagic, 8))
    throw Error("bad-magic", path.string());
  VectorIndex index;
  index.dim = static_cast<int>(read_le<uint32_t>(is));
  while (is.peek() != std::char_traits<char>::eof()) {
    IndexRecord rec;
    rec.doc_id = read_string(is);
    rec.group_id = static_cast<int>(read_le<uint32_t>(is));
    rec.vector.resize(static_cast<size_t>(index.dim));
    for (int i = 0; i < index.dim; ++i) rec.vector[static_cast<size_t>(i)] = read_le<float>(is);
    index.records.push_back(std::move(rec));
  }
  return index;
}

RetrievalResult search(const VectorIndex& index, const Eigen::VectorXd& query, int k,
                       int threads) {
  if (k < 0) throw Error("bad-config", "k must be >= 0");
  const double norm = query.norm();
  if (norm == 0.0) throw Error("zero-vector");
  Eigen::VectorXd unit = query / norm;

  std::vector<double> scores(index.records.size());
  parallel_for(index.records.size(), threads, [&](size_t i) {
    const auto& rec = index.records[i];
    double dot = 0.0;
    for (int d = 0; d < index.dim; ++d)
      dot += unit(d) * static_cast<double>(rec.vector[static_cast<size_t>(d)]);
    scores[i] = dot;
  });

  // Per-document max over its group vectors, first-seen order irrelevant
  // because the final sort is by (score desc, doc_id asc).
  std::map<std::string, double> best;
  for (size_t i = 0; i < index.records.size(); ++i) {
    auto [it, inserted] = best.emplace(index.records[i].doc_id, scores[i]);
    if (!inserted) it->second = std::max(it->second, scores[i]);
  }
  std::vector<std::pair<std::string, double>> ranked(best.begin(), best.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (ranked.size() > static_cast<size_t>(k)) ranked.resize(static_cast<size_t>(k));

  RetrievalResult result;
  result.hits = std::move(ranked);
  return result;
}

std::vector<double> ncg_per_query(
    const std::vector<std::pair<std::string, RetrievalResult>>& results_per_query,
    const std::vector<Judgment>& judgments, int k) {
  std::unordered_map<std::string, std::unordered_map<std::string, int>> judged;
  for (const auto& j : judgments) judged[j.query_text][j.doc_id] = j.rel;

  std::vector<double> values;
  values.reserve(results_per_query.size());
  for (const auto& [query, result] : results_per_query) {
    auto it = judged.find(query);
    if (it == judged.end() || it->second.empty()) throw Error("no-judgments(" + query + ")");
    double total_gain = 0.0;
    for (const auto& [doc, rel] : it->second) {
      (void)doc;
      total_gain += std::pow(2.0, rel) - 1.0;
    }
    double recalled_gain = 0.0;
    const size_t top = std::min(result.hits.size(), static_cast<size_t>(k));
    for (size_t i = 0; i < top; ++i) {
      auto doc_it = it->second.find(result.hits[i].first);
      if (doc_it != it->second.end()) recalled_gain += std::pow(2.0, doc_it->second) - 1.0;
    }
    values.push_back(recalled_gain / total_gain);
  }
  return values;
}

double ncg_at_k(const std::vector<std::pair<std::string, RetrievalResult>>& results_per_query,
                const std::vector<Judgment>& judgments, int k) {
  const auto values = ncg_per_query(results_per_query, judgments, k);
  if (values.empty()) return 0.0;
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

}  // namespace mira
