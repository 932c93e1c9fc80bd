#include "mira/intent.hpp"

#include <algorithm>

#include <json.hpp>

#include "mira/binio.hpp"
#include "mira/error.hpp"

namespace mira {

void GroupingConfig::validate() const {
  if (!(jaccard_threshold >= 0.0 && jaccard_threshold <= 1.0))
    throw Error("bad-config", "grouping.jaccard_threshold must be in [0,1]");
  if (max_groups < 1) throw Error("bad-config", "grouping.max_groups must be >= 1");
}

double jaccard(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.empty() && b.empty()) return 0.0;
  size_t inter = 0;
  size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) {
      ++inter;
      ++i;
      ++j;
    } else if (a[i] < b[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  const size_t uni = a.size() + b.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

std::vector<int> token_set(const std::string& key, const Vocabulary& vocab) {
  TokenSequence seq = tokenize(key, vocab);
  std::sort(seq.ids.begin(), seq.ids.end());
  seq.ids.erase(std::unique(seq.ids.begin(), seq.ids.end()), seq.ids.end());
  return seq.ids;
}

void merge_into(std::vector<int>& dst, const std::vector<int>& src) {
  std::vector<int> merged;
  merged.reserve(dst.size() + src.size());
  std::set_union(dst.begin(), dst.end(), src.begin(), src.end(), std::back_inserter(merged));
  dst = std::move(merged);
}

}  // namespace

std::vector<IntentionGroup> group_clicks(const std::vector<ClickRecord>& clicks,
                                         const Vocabulary& vocab, const GroupingConfig& cfg) {
  cfg.validate();
  std::vector<IntentionGroup> groups;
  if (clicks.empty()) return groups;

  std::vector<std::vector<int>> tokens(clicks.size());
  for (size_t i = 0; i < clicks.size(); ++i) tokens[i] = token_set(clicks[i].query_text, vocab);

  std::vector<bool> grouped(clicks.size(), false);
  size_t remaining = clicks.size();
  while (remaining > 0 && static_cast<int>(groups.size()) < cfg.max_groups) {
    // Seed: highest-ranked ungrouped click (input keeps load_clicks order).
    size_t seed = 0;
    while (grouped[seed]) ++seed;
    IntentionGroup g;
    g.group_id = static_cast<int>(groups.size());
    g.main_click = clicks[seed].query_text;
    g.members.push_back(clicks[seed].query_text);
    g.overflow.push_back(false);
    g.token_union = tokens[seed];
    grouped[seed] = true;
    --remaining;
    for (size_t j = seed + 1; j < clicks.size(); ++j) {
      if (grouped[j]) continue;
      if (jaccard(tokens[seed], tokens[j]) >= cfg.jaccard_threshold) {
        g.members.push_back(clicks[j].query_text);
        g.overflow.push_back(false);
        merge_into(g.token_union, tokens[j]);
        grouped[j] = true;
        --remaining;
      }
    }
    groups.push_back(std::move(g));
  }

  // Leftovers once the group bound is hit: nearest seed wins, ties to the
  // lowest group_id; flagged so threshold soundness can exempt them.
  if (remaining > 0) {
    std::vector<std::vector<int>> seed_tokens;
    seed_tokens.reserve(groups.size());
    for (const auto& g : groups) seed_tokens.push_back(token_set(g.main_click, vocab));
    for (size_t j = 0; j < clicks.size(); ++j) {
      if (grouped[j]) continue;
      size_t best = 0;
      double best_sim = -1.0;
      for (size_t gi = 0; gi < groups.size(); ++gi) {
        const double sim = jaccard(seed_tokens[gi], tokens[j]);
        if (sim > best_sim) {
          best_sim = sim;
          best = gi;
        }
      }
      groups[best].members.push_back(clicks[j].query_text);
      groups[best].overflow.push_back(true);
      merge_into(groups[best].token_union, tokens[j]);
    }
  }
  return groups;
}

void save_groups(const std::vector<std::pair<std::string, std::vector<IntentionGroup>>>& by_doc,
                 const std::filesystem::path& path) {
  atomic_write(path, [&](std::ostream& os) {
    for (const auto& [doc_id, groups] : by_doc) {
      nlohmann::json j;
      j["doc_id"] = doc_id;
      auto arr = nlohmann::json::array();
      for (const auto& g : groups) arr.push_back(g.members);
      j["groups"] = arr;
      os << j.dump() << '\n';
    }
  });
}

}  // namespace mira
