#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mira/corpus.hpp"

namespace mira {

struct IndexInput {
  std::string doc_id;
  int group_id = 0;
  Eigen::VectorXd vector;
};

struct IndexRecord {
  std::string doc_id;
  int group_id = 0;
  std::vector<float> vector;  // unit norm
};

struct VectorIndex {
  int dim = 0;
  std::vector<IndexRecord> records;
};

// Ranked (doc_id, score) pairs, scores non-increasing, doc_ids unique.
struct RetrievalResult {
  std::vector<std::pair<std::string, double>> hits;
};

// Normalizes and stores one record per (doc_id, group_id). Throws
// Error("zero-vector(doc,group)") and Error("dim-mismatch").
VectorIndex build_index(const std::vector<IndexInput>& inputs);

// vectors.bin: magic "MIRAVEC1", u32 dim, then records as doc_id,
// u32 group_id, dim x f32 little-endian.
void save_index(const VectorIndex& index, const std::filesystem::path& path);
VectorIndex load_index(const std::filesystem::path& path);

// Brute-force cosine top-k: every record is scored by dot product with the
// normalized query, each document keeps its best group score, ties break
// by doc_id ascending.
RetrievalResult search(const VectorIndex& index, const Eigen::VectorXd& query, int k,
                       int threads = 1);

// Mean over queries of (gain of judged docs inside top-k) / (gain of all
// judged docs), gain = 2^rel - 1. Throws Error("no-judgments(query)").
double ncg_at_k(const std::vector<std::pair<std::string, RetrievalResult>>& results_per_query,
                const std::vector<Judgment>& judgments, int k);

// Per-query values, same order as results_per_query.
std::vector<double> ncg_per_query(
    const std::vector<std::pair<std::string, RetrievalResult>>& results_per_query,
    const std::vector<Judgment>& judgments, int k);

}  // namespace mira
