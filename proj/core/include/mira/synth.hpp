#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mira/corpus.hpp"

namespace mira {

// Synthetic retrieval benchmark: topics are disjoint token pools, each
// document carries a hidden word set from its topic(s), titles expose only
// part of it, clicks reflect it fully, and a configurable fraction of
// documents spans two topics (the multi-intention case). Judgments grade
// same-topic documents by query-token overlap with the hidden word set.
struct SynthConfig {
  int topics = 8;
  int vocab_per_topic = 40;
  int docs_per_topic = 50;
  double two_topic_fraction = 0.3;
  int queries_per_topic = 12;
  double click_noise = 0.1;  // probability a click row is swapped cross-topic
  uint64_t seed = 0;

  void validate() const;
};

struct SynthData {
  std::vector<DocumentRecord> documents;
  // Raw click rows (doc_id, query, frequency) before load_clicks dedup.
  std::vector<ClickRecord> clicks;
  std::vector<std::string> queries;
  std::vector<Judgment> judgments;
};

SynthData gen_synthetic_data(const SynthConfig& cfg);

// Writes corpus.jsonl, clicks.tsv, queries.txt and judgments.tsv into
// out_dir. Byte-identical for identical configs.
void gen_synthetic(const SynthConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace mira
