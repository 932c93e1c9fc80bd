#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mira/intent.hpp"

namespace mira {

// One (document, intention group) pair. click_keys holds the group's
// member keys in importance order; edge logic treats them as a set.
struct MicgNode {
  int64_t node_id = 0;
  std::string doc_id;
  int group_id = 0;
  std::vector<std::string> click_keys;
};

// Multi-intention co-click graph. Adjacency lists are sorted, symmetric,
// self-loop-free and duplicate-free.
struct Micg {
  std::vector<MicgNode> nodes;
  std::vector<std::vector<int64_t>> adjacency;

  int64_t node_count() const { return static_cast<int64_t>(nodes.size()); }
  int64_t edge_count() const;
  // -1 when (doc_id, group_id) is not a node.
  int64_t find_node(const std::string& doc_id, int group_id) const;
};

struct GraphBuildConfig {
  int64_t fanout_cap = 64;     // max documents connected per click key
  int neighbors_per_node = 2;  // neighbors sampled per node per layer
  int subgraph_depth = 2;      // sampled layers

  void validate() const;
};

struct GraphBuildReport {
  std::vector<std::string> capped_keys;  // keys whose node list hit fanout_cap
};

// Per-node sampled computation graph: layers[k] holds n^(k+1) slots, each
// a node_id or kPadSlot. Children of layers[k][i] occupy
// layers[k+1][i*n .. i*n+n).
struct NeighborSubgraph {
  static constexpr int64_t kPadSlot = -1;

  int64_t center = 0;
  std::vector<std::vector<int64_t>> layers;
  uint64_t rng_seed = 0;

  bool has_real_first_layer() const {
    for (int64_t s : layers.empty() ? std::vector<int64_t>{} : layers.front())
      if (s != kPadSlot) return true;
    return false;
  }
};

// Builds one node per (document, group) and connects every node pair that
// shares a normalized click key, capping each key's node list at
// fanout_cap entries in (doc_id, group_id) order. Deterministic for any
// thread count.
Micg build_micg(const std::vector<std::pair<std::string, std::vector<IntentionGroup>>>& groups_by_doc,
                const GraphBuildConfig& cfg, int threads = 1,
                GraphBuildReport* report = nullptr);

// Uniform sampling without replacement, layer by layer; PAD fills slots
// past a node's degree. Deterministic given (graph, center, cfg, seed).
NeighborSubgraph sample_subgraph(const Micg& g, int64_t center, const GraphBuildConfig& cfg,
                                 uint64_t seed);

struct GraphStats {
  int64_t node_count = 0;
  int64_t edge_count = 0;
  std::map<int64_t, int64_t> degree_histogram;
  int64_t distinct_click_keys = 0;
  int64_t co_click_keys = 0;  // keys shared by >= 2 nodes
  double node_coverage = 0.0; // fraction of nodes with >= 1 neighbor
  double doc_coverage = 0.0;  // fraction of documents with a connected node
};

GraphStats graph_stats(const Micg& g);

// micg.bin: magic "MICG0001", u64 node count, per node (doc_id, u32
// group_id, length-prefixed keys), u64 edge count, sorted (u64,u64) pairs
// with the smaller id first. Little-endian throughout.
void save_micg(const Micg& g, const std::filesystem::path& path);
Micg load_micg(const std::filesystem::path& path);

}  // namespace mira
