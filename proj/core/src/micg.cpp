#include "mira/micg.hpp"

#include <algorithm>
#include <unordered_map>

#include "mira/binio.hpp"
#include "mira/error.hpp"
#include "mira/parallel.hpp"
#include "mira/rng.hpp"

namespace mira {

void GraphBuildConfig::validate() const {
  if (fanout_cap < 2) throw Error("bad-config", "graph.fanout_cap must be >= 2");
  if (neighbors_per_node < 1) throw Error("bad-config", "graph.neighbors must be >= 1");
  if (subgraph_depth < 1) throw Error("bad-config", "graph.depth must be >= 1");
}

int64_t Micg::edge_count() const {
  int64_t twice = 0;
  for (const auto& adj : adjacency) twice += static_cast<int64_t>(adj.size());
  return twice / 2;
}

int64_t Micg::find_node(const std::string& doc_id, int group_id) const {
  for (const auto& n : nodes) {
    if (n.group_id == group_id && n.doc_id == doc_id) return n.node_id;
  }
  return -1;
}

Micg build_micg(const std::vector<std::pair<std::string, std::vector<IntentionGroup>>>& groups_by_doc,
                const GraphBuildConfig& cfg, int threads, GraphBuildReport* report) {
  cfg.validate();
  Micg g;
  for (const auto& [doc_id, groups] : groups_by_doc) {
    for (const auto& grp : groups) {
      MicgNode node;
      node.node_id = g.node_count();
      node.doc_id = doc_id;
      node.group_id = grp.group_id;
      node.click_keys = grp.members;
      g.nodes.push_back(std::move(node));
    }
  }
  g.adjacency.assign(g.nodes.size(), {});

  // Inverted index click key -> node ids. Node ids already follow
  // (doc input order, group_id); the cap below re-sorts by doc_id so hot
  // keys keep a deterministic prefix regardless of input order.
  std::map<std::string, std::vector<int64_t>> by_key;
  for (const auto& node : g.nodes) {
    for (const auto& key : node.click_keys) by_key[key].push_back(node.node_id);
  }

  std::vector<const std::pair<const std::string, std::vector<int64_t>>*> keys;
  keys.reserve(by_key.size());
  for (const auto& kv : by_key) keys.push_back(&kv);

  std::vector<std::vector<std::pair<int64_t, int64_t>>> edges_per_key(keys.size());
  std::vector<uint8_t> capped(keys.size(), 0);
  parallel_for(keys.size(), threads, [&](size_t ki) {
    std::vector<int64_t> ids = keys[ki]->second;
    std::sort(ids.begin(), ids.end(), [&](int64_t a, int64_t b) {
      const auto& na = g.nodes[static_cast<size_t>(a)];
      const auto& nb = g.nodes[static_cast<size_t>(b)];
      if (na.doc_id != nb.doc_id) return na.doc_id < nb.doc_id;
      return na.group_id < nb.group_id;
    });
    if (static_cast<int64_t>(ids.size()) > cfg.fanout_cap) {
      ids.resize(static_cast<size_t>(cfg.fanout_cap));
      capped[ki] = 1;
    }
    auto& out = edges_per_key[ki];
    for (size_t i = 0; i < ids.size(); ++i) {
      for (size_t j = i + 1; j < ids.size(); ++j) {
        out.emplace_back(std::min(ids[i], ids[j]), std::max(ids[i], ids[j]));
      }
    }
  });

  std::vector<std::pair<int64_t, int64_t>> edges;
  for (auto& part : edges_per_key) {
    edges.insert(edges.end(), part.begin(), part.end());
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

  for (const auto& [a, b] : edges) {
    g.adjacency[static_cast<size_t>(a)].push_back(b);
    g.adjacency[static_cast<size_t>(b)].push_back(a);
  }
  for (auto& adj : g.adjacency) std::sort(adj.begin(), adj.end());

  if (report) {
    for (size_t ki = 0; ki < keys.size(); ++ki) {
      if (capped[ki]) report->capped_keys.push_back(keys[ki]->first);
    }
  }
  return g;
}

NeighborSubgraph sample_subgraph(const Micg& g, int64_t center, const GraphBuildConfig& cfg,
                                 uint64_t seed) {
  cfg.validate();
  if (center < 0 || center >= g.node_count())
    throw Error("no-such-node", std::to_string(center));

  NeighborSubgraph sub;
  sub.center = center;
  sub.rng_seed = seed;
  Rng rng(Rng::mix(seed, static_cast<uint64_t>(center)));

  const size_t n = static_cast<size_t>(cfg.neighbors_per_node);
  std::vector<int64_t> parents{center};
  for (int depth = 0; depth < cfg.subgraph_depth; ++depth) {
    std::vector<int64_t> layer;
    layer.reserve(parents.size() * n);
    for (int64_t parent : parents) {
      if (parent == NeighborSubgraph::kPadSlot) {
        layer.insert(layer.end(), n, NeighborSubgraph::kPadSlot);
        continue;
      }
      const auto& adj = g.adjacency[static_cast<size_t>(parent)];
      const auto picks = rng.sample_without_replacement(adj.size(), n);
      for (size_t p : picks) layer.push_back(adj[p]);
      layer.insert(layer.end(), n - picks.size(), NeighborSubgraph::kPadSlot);
    }
    sub.layers.push_back(layer);
    parents = std::move(layer);
  }
  return sub;
}

GraphStats graph_stats(const Micg& g) {
  GraphStats s;
  s.node_count = g.node_count();
  s.edge_count = g.edge_count();
  int64_t connected_nodes = 0;
  std::map<std::string, int64_t> docs_seen;  // doc -> connected node count
  std::map<std::string, int64_t> keys_seen;
  for (const auto& node : g.nodes) {
    const auto degree = static_cast<int64_t>(g.adjacency[static_cast<size_t>(node.node_id)].size());
    s.degree_histogram[degree] += 1;
    if (degree > 0) ++connected_nodes;
    auto [it, inserted] = docs_seen.emplace(node.doc_id, 0);
    (void)inserted;
    if (degree > 0) it->second += 1;
    for (const auto& key : node.click_keys) keys_seen[key] += 1;
  }
  s.distinct_click_keys = static_cast<int64_t>(keys_seen.size());
  for (const auto& [key, count] : keys_seen) {
    (void)key;
    if (count >= 2) ++s.co_click_keys;
  }
  if (s.node_count > 0)
    s.node_coverage = static_cast<double>(connected_nodes) / static_cast<double>(s.node_count);
  if (!docs_seen.empty()) {
    int64_t covered = 0;
    for (const auto& [doc, cnt] : docs_seen) {
      (void)doc;
      if (cnt > 0) ++covered;
    }
    s.doc_coverage = static_cast<double>(covered) / static_cast<double>(docs_seen.size());
  }
  return s;
}

namespace {
constexpr char kMagic[9] = "MICG0001";
}

void save_micg(const Micg& g, const std::filesystem::path& path) {
  atomic_write(path, [&](std::ostream& os) {
    write_bytes(os, kMagic, 8);
    write_le<uint64_t>(os, static_cast<uint64_t>(g.nodes.size()));
    for (const auto& node : g.nodes) {
      write_string(os, node.doc_id);
      write_le<uint32_t>(os, static_cast<uint32_t>(node.group_id));
      write_le<uint32_t>(os, static_cast<uint32_t>(node.click_keys.size()));
      for (const auto& key : node.click_keys) write_string(os, key);
    }
    std::vector<std::pair<int64_t, int64_t>> edges;
    for (const auto& node : g.nodes) {
      for (int64_t nb : g.adjacency[static_cast<size_t>(node.node_id)]) {
        if (node.node_id < nb) edges.emplace_back(node.node_id, nb);
      }
    }
    std::sort(edges.begin(), edges.end());
    write_le<uint64_t>(os, static_cast<uint64_t>(edges.size()));
    for (const auto& [a, b] : edges) {
      write_le<uint64_t>(os, static_cast<uint64_t>(a));
      write_le<uint64_t>(os, static_cast<uint64_t>(b));
    }
  });
}

Micg load_micg(const std::filesystem::path& path) {
  std::ifstream is = open_input(path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::string_view(magic, 8) != std::string_view(kMagic, 8))
    throw Error("bad-magic", path.string());
  Micg g;
  const uint64_t node_count = read_le<uint64_t>(is);
  g.nodes.reserve(node_count);
  for (uint64_t i = 0; i < node_count; ++i) {
    MicgNode node;
    node.node_id = static_cast<int64_t>(i);
    node.doc_id = read_string(is);
    node.group_id = static_cast<int>(read_le<uint32_t>(is));
    const uint32_t key_count = read_le<uint32_t>(is);
    node.click_keys.reserve(key_count);
    for (uint32_t k = 0; k < key_count; ++k) node.click_keys.push_back(read_string(is));
    g.nodes.push_back(std::move(node));
  }
  g.adjacency.assign(g.nodes.size(), {});
  const uint64_t edge_count = read_le<uint64_t>(is);
  for (uint64_t e = 0; e < edge_count; ++e) {
    const auto a = static_cast<int64_t>(read_le<uint64_t>(is));
    const auto b = static_cast<int64_t>(read_le<uint64_t>(is));
    if (a >= b || b >= g.node_count()) throw Error("bad-edge", path.string());
    g.adjacency[static_cast<size_t>(a)].push_back(b);
    g.adjacency[static_cast<size_t>(b)].push_back(a);
  }
  for (auto& adj : g.adjacency) std::sort(adj.begin(), adj.end());
  return g;
}

}  // namespace mira
