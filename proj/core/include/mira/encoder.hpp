#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mira/autodiff.hpp"
#include "mira/micg.hpp"
#include "mira/text.hpp"

namespace mira {

struct ModelConfig {
  int dim = 64;            // shared transformer/graph hidden size
  int layers = 2;          // transformer layers per stack
  int heads = 2;           // attention heads (transformer and graph)
  int graph_depth = 2;     // K: sampled subgraph layers
  int vocab_size = 0;      // set from the vocabulary
  int segments = 4;        // title, url, anchor, clicks
  int max_positions = 128;
  int ffn_multiplier = 4;
  double lambda_graph = 1.0;  // weight of the graph vector in v = v_b + lambda * v_g
  double leaky_slope = 0.2;
  std::string graph_activation = "gelu";  // gelu | elu, graph-side sigma only

  void validate() const;
};

// All trainable tensors, keyed by name (sorted map so checkpoint order and
// gradient iteration are stable). Biases are 1 x d rows; attention vectors
// are column matrices.
struct ParamStore {
  ModelConfig config;
  std::map<std::string, ad::Mat> tensors;

  const ad::Mat& at(const std::string& name) const;
  ad::Mat& at(const std::string& name);
};

// (name, rows, cols) for every tensor the config implies, sorted by name.
std::vector<std::pair<std::string, std::pair<int, int>>> tensor_shapes(const ModelConfig& cfg);

ParamStore init_params(const ModelConfig& cfg, uint64_t seed);

// Checkpoint: magic "MIRA0001"; u32 d, L, M, K, |V|, S_max, P_max; f64
// lambda; then per tensor: name, u32 rank, u64 dims, row-major f64 values,
// sorted by name. Written atomically.
void save_checkpoint(const ParamStore& params, const std::filesystem::path& path);
ParamStore load_checkpoint(const std::filesystem::path& path);

// Token/segment/position id triples ready for the embedding layer.
struct EncodedInput {
  std::vector<int> token_ids;
  std::vector<int> segment_ids;
  std::vector<int> position_ids;
  std::vector<uint8_t> attention_mask;  // all ones; PAD never enters sequences

  size_t length() const { return token_ids.size(); }
};

// The four text sources of one MICG node, fixed order. `clicks` holds the
// node's own intention-group keys joined by single spaces.
struct NodeText {
  std::string title;
  std::string url;
  std::string anchor;
  std::string clicks;
};

// [CLS] q. Truncates to max_positions.
EncodedInput build_query_input(const TokenSequence& query, const ModelConfig& cfg);
// [CLS] t [SEP] u [SEP] a [SEP] c [SEP]; segment ids 0..3 by source, each
// [SEP] carries its source's segment. Sources truncate proportionally.
EncodedInput build_document_input(const NodeText& text, const Vocabulary& vocab,
                                  const ModelConfig& cfg);
// Source concatenation without [CLS]/[SEP]; segment ids kept.
EncodedInput build_feature_input(const NodeText& text, const Vocabulary& vocab,
                                 const ModelConfig& cfg);

// Largest-remainder split of `budget` positions over source lengths.
std::vector<size_t> proportional_budget(const std::vector<size_t>& lens, size_t budget);

// ---- tape-level model (single implementation of all forward math) ----

struct ParamVars {
  const ModelConfig* config = nullptr;
  std::map<std::string, ad::Var> vars;

  ad::Var at(const std::string& name) const;
};

ParamVars register_params(ad::Tape& tape, const ParamStore& params);

ad::Var embed_sequence_t(ad::Tape& tape, const ParamVars& pv, const EncodedInput& input);
ad::Var encode_query_t(ad::Tape& tape, const ParamVars& pv, const EncodedInput& input);
ad::Var encode_document_text_t(ad::Tape& tape, const ParamVars& pv, const EncodedInput& input);
// conv_index selects which convolve layer's featurizer weights apply.
ad::Var featurize_node_t(ad::Tape& tape, const ParamVars& pv, const EncodedInput& input,
                         int conv_index);

// Mean per-head attention coefficients of the integration layer, by
// first-layer neighbor, for one encoded node.
struct AttentionExport {
  std::vector<int64_t> neighbor_ids;
  std::vector<double> mean_alpha;                // per neighbor
  std::vector<std::vector<double>> head_alpha;   // [head][neighbor]
};

// Pre-tokenized per-node inputs reused across steps.
struct EncodeContext {
  std::vector<EncodedInput> doc_inputs;      // indexed by node_id
  std::vector<EncodedInput> feature_inputs;  // indexed by node_id
};

EncodeContext build_encode_context(const Micg& g,
                                   const std::vector<DocumentRecord>& docs,
                                   const Vocabulary& vocab, const ModelConfig& cfg);

NodeText node_text(const MicgNode& node, const DocumentRecord* doc);

ad::Var encode_node_t(ad::Tape& tape, const ParamVars& pv, const EncodeContext& ctx,
                      const NeighborSubgraph& sub, AttentionExport* attention = nullptr);

// cosine similarity over 1xd tape vars
ad::Var cosine_t(ad::Tape& tape, ad::Var a, ad::Var b);

// ---- value-level operation surface ----

Eigen::MatrixXd embed_sequence(const EncodedInput& input, const ParamStore& params);
Eigen::VectorXd encode_query(const std::string& query_text, const Vocabulary& vocab,
                             const ParamStore& params);
Eigen::VectorXd encode_document_text(const NodeText& text, const Vocabulary& vocab,
                                     const ParamStore& params);
Eigen::VectorXd featurize_node(const NodeText& text, const Vocabulary& vocab,
                               const ParamStore& params, int conv_index = 0);

// Per-head attention weights; masked slots get weight 0. `block` is a
// tensor-name prefix such as "graph.conv0" or "graph.merge". Throws
// Error("no-neighbors") when every slot is masked.
std::vector<std::vector<double>> two_factor_attention_weights(
    const Eigen::VectorXd& center, const std::vector<Eigen::VectorXd>& neighbors,
    const std::vector<bool>& mask, const ParamStore& params, const std::string& block);

Eigen::VectorXd attention_convolve(const Eigen::VectorXd& center,
                                   const std::vector<Eigen::VectorXd>& neighbors,
                                   const std::vector<bool>& mask, const ParamStore& params,
                                   int conv_index = 0);

Eigen::VectorXd encode_node(const EncodeContext& ctx, const NeighborSubgraph& sub,
                            const ParamStore& params, AttentionExport* attention = nullptr);

double similarity(const Eigen::VectorXd& query_vec, const Eigen::VectorXd& doc_vec);

}  // namespace mira
