#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mira/corpus.hpp"
#include "mira/text.hpp"

namespace mira {

// One cluster of a document's clicks sharing a search intention.
// Members are normalized click keys, seed first, in attachment order.
struct IntentionGroup {
  int group_id = 0;
  std::string main_click;             // the seed key
  std::vector<std::string> members;   // seed first
  std::vector<bool> overflow;         // parallel to members; true when the
                                      // member was attached past max_groups
  std::vector<int> token_union;       // sorted unique token ids over members
};

struct GroupingConfig {
  double jaccard_threshold = 0.5;
  int max_groups = 5;

  void validate() const;  // threshold in [0,1], max_groups >= 1
};

// |a ∩ b| / |a ∪ b| over sorted unique id vectors; 0 when both empty.
double jaccard(const std::vector<int>& a, const std::vector<int>& b);

// Iterative seed-and-attach grouping over an importance-sorted click list.
// Clicks left ungrouped once max_groups is reached are attached to the
// group whose seed is nearest by Jaccard (ties to the lowest group_id) and
// flagged as overflow members.
std::vector<IntentionGroup> group_clicks(const std::vector<ClickRecord>& clicks,
                                         const Vocabulary& vocab, const GroupingConfig& cfg);

// groups.jsonl: {"doc_id": str, "groups": [[key, ...], ...]}, group order
// equal to group_id order.
void save_groups(const std::vector<std::pair<std::string, std::vector<IntentionGroup>>>& by_doc,
                 const std::filesystem::path& path);

}  // namespace mira
