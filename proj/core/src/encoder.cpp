#include "mira/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mira/binio.hpp"
#include "mira/corpus.hpp"
#include "mira/error.hpp"
#include "mira/rng.hpp"

namespace mira {

using ad::Mat;
using ad::Tape;
using ad::Var;

void ModelConfig::validate() const {
  if (dim < 1) throw Error("bad-config", "model.dim must be >= 1");
  if (layers < 1) throw Error("bad-config", "model.layers must be >= 1");
  if (heads < 1 || dim % heads != 0)
    throw Error("bad-config", "model.heads must divide model.dim");
  if (graph_depth < 2) throw Error("bad-config", "model.graph_depth must be >= 2");
  if (vocab_size < 5) throw Error("bad-config", "model.vocab_size must be >= 5");
  if (segments < 4) throw Error("bad-config", "model.segments must be >= 4");
  if (max_positions < 8) throw Error("bad-config", "model.max_positions must be >= 8");
  if (ffn_multiplier < 1) throw Error("bad-config", "model.ffn_multiplier must be >= 1");
  if (graph_activation != "gelu" && graph_activation != "elu")
    throw Error("bad-config", "model.graph_activation must be gelu or elu");
}

const Mat& ParamStore::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw Error("internal", "missing tensor " + name);
  return it->second;
}

Mat& ParamStore::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw Error("internal", "missing tensor " + name);
  return it->second;
}

std::vector<std::pair<std::string, std::pair<int, int>>> tensor_shapes(const ModelConfig& cfg) {
  std::vector<std::pair<std::string, std::pair<int, int>>> shapes;
  const int d = cfg.dim;
  const int ffn = cfg.dim * cfg.ffn_multiplier;
  auto push = [&](const std::string& name, int r, int c) { shapes.push_back({name, {r, c}}); };

  push("embed.token", cfg.vocab_size, d);
  push("embed.segment", cfg.segments, d);
  push("embed.position", cfg.max_positions, d);

  for (const char* stack : {"query", "doc"}) {
    for (int l = 0; l < cfg.layers; ++l) {
      const std::string p = std::string(stack) + ".l" + std::to_string(l) + ".";
      for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) push(p + w, d, d);
      for (const char* b : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"}) push(p + b, 1, d);
      push(p + "ln1.gain", 1, d);
      push(p + "ln1.bias", 1, d);
      push(p + "ln2.gain", 1, d);
      push(p + "ln2.bias", 1, d);
      push(p + "ffn.w1", d, ffn);
      push(p + "ffn.b1", 1, ffn);
      push(p + "ffn.w2", ffn, d);
      push(p + "ffn.b2", 1, d);
    }
  }

  auto push_heads = [&](const std::string& prefix, int head_dim) {
    for (int m = 0; m < cfg.heads; ++m) {
      const std::string h = prefix + "head" + std::to_string(m) + ".";
      push(h + "attn_w", d, head_dim);
      push(h + "attn_c", 2 * head_dim, 1);
      push(h + "dot_w", d, head_dim);
      push(h + "value_w", d, head_dim);
    }
  };
  for (int j = 0; j + 1 < cfg.graph_depth; ++j) {
    const std::string p = "graph.conv" + std::to_string(j) + ".";
    push(p + "feat.w", d, d);
    push(p + "feat.b", 1, d);
    push_heads(p, d / cfg.heads);
    push(p + "combine.w", 2 * d, d);
    push(p + "combine.b", 1, d);
  }
  push_heads("graph.merge.", d);

  std::sort(shapes.begin(), shapes.end());
  return shapes;
}

namespace {

uint64_t name_hash(const std::string& name) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

bool is_bias_like(const std::string& name) {
  return name.ends_with(".b") || name.ends_with(".bias") || name.find(".attn.b") != std::string::npos ||
         name.ends_with(".b1") || name.ends_with(".b2");
}

}  // namespace

ParamStore init_params(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  ParamStore params;
  params.config = cfg;
  for (const auto& [name, shape] : tensor_shapes(cfg)) {
    const auto [rows, cols] = shape;
    Mat m = Mat::Zero(rows, cols);
    Rng rng(Rng::mix(seed, name_hash(name)));
    if (name.starts_with("embed.")) {
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = 0.1 * rng.normal();
    } else if (name.ends_with(".gain")) {
      m.setOnes();
    } else if (!is_bias_like(name)) {
      const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
          m(r, c) = limit * (2.0 * rng.next_double() - 1.0);
    }
    params.tensors.emplace(name, std::move(m));
  }
  return params;
}

namespace {
constexpr char kCheckpointMagic[9] = "MIRA0001";
}

void save_checkpoint(const ParamStore& params, const std::filesystem::path& path) {
  atomic_write(path, [&](std::ostream& os) {
    const ModelConfig& c = params.config;
    write_bytes(os, kCheckpointMagic, 8);
    for (int v : {c.dim, c.layers, c.heads, c.graph_depth, c.vocab_size, c.segments,
                  c.max_positions})
      write_le<uint32_t>(os, static_cast<uint32_t>(v));
    write_le<double>(os, c.lambda_graph);
    for (const auto& [name, tensor] : params.tensors) {
      write_string(os, name);
      write_le<uint32_t>(os, 2);
      write_le<uint64_t>(os, static_cast<uint64_t>(tensor.rows()));
      write_le<uint64_t>(os, static_cast<uint64_t>(tensor.cols()));
      for (Eigen::Index r = 0; r < tensor.rows(); ++r)
        for (Eigen::Index col = 0; col < tensor.cols(); ++col) write_le<double>(os, tensor(r, col));
    }
  });
}

ParamStore load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is = open_input(path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::string_view(magic, 8) != std::string_view(kCheckpointMagic, 8))
    throw Error("bad-magic", path.string());
  ParamStore params;
  ModelConfig& c = params.config;
  c.dim = static_cast<int>(read_le<uint32_t>(is));
  c.layers = static_cast<int>(read_le<uint32_t>(is));
  c.heads = static_cast<int>(read_le<uint32_t>(is));
  c.graph_depth = static_cast<int>(read_le<uint32_t>(is));
  c.vocab_size = static_cast<int>(read_le<uint32_t>(is));
  c.segments = static_cast<int>(read_le<uint32_t>(is));
  c.max_positions = static_cast<int>(read_le<uint32_t>(is));
  c.lambda_graph = read_le<double>(is);
  while (is.peek() != std::char_traits<char>::eof()) {
    const std::string name = read_string(is);
    const uint32_t rank = read_le<uint32_t>(is);
    if (rank != 2) throw Error("bad-checkpoint", "tensor rank != 2 for " + name);
    const auto rows = static_cast<Eigen::Index>(read_le<uint64_t>(is));
    const auto cols = static_cast<Eigen::Index>(read_le<uint64_t>(is));
    Mat m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index col = 0; col < cols; ++col) m(r, col) = read_le<double>(is);
    params.tensors.emplace(name, std::move(m));
  }
  // ffn width is recoverable from the first layer's shape.
  auto it = params.tensors.find("query.l0.ffn.w1");
  if (it != params.tensors.end() && c.dim > 0)
    c.ffn_multiplier = static_cast<int>(it->second.cols()) / c.dim;
  const auto expected = tensor_shapes(c);
  if (expected.size() != params.tensors.size())
    throw Error("bad-checkpoint", "tensor count mismatch");
  for (const auto& [name, shape] : expected) {
    auto found = params.tensors.find(name);
    if (found == params.tensors.end()) throw Error("bad-checkpoint", "missing tensor " + name);
    if (found->second.rows() != shape.first || found->second.cols() != shape.second)
      throw Error("bad-checkpoint", "shape mismatch for " + name);
  }
  return params;
}

std::vector<size_t> proportional_budget(const std::vector<size_t>& lens, size_t budget) {
  const size_t total = std::accumulate(lens.begin(), lens.end(), size_t{0});
  if (total <= budget) return lens;
  std::vector<size_t> keep(lens.size(), 0);
  std::vector<std::pair<uint64_t, size_t>> remainder_order;
  size_t assigned = 0;
  for (size_t i = 0; i < lens.size(); ++i) {
    const uint64_t scaled = static_cast<uint64_t>(budget) * lens[i];
    keep[i] = static_cast<size_t>(scaled / total);
    assigned += keep[i];
    remainder_order.push_back({scaled % total, i});
  }
  std::sort(remainder_order.begin(), remainder_order.end(),
            [](const auto& a, const auto& b) {
              if (a.first != b.first) return a.first > b.first;
              return a.second < b.second;
            });
  size_t left = budget - assigned;
  while (left > 0) {
    for (const auto& [rem, i] : remainder_order) {
      (void)rem;
      if (left == 0) break;
      if (keep[i] < lens[i]) {
        ++keep[i];
        --left;
      }
    }
  }
  return keep;
}

namespace {

std::array<std::string_view, 4> source_views(const NodeText& t) {
  return {t.title, t.url, t.anchor, t.clicks};
}

}  // namespace

EncodedInput build_query_input(const TokenSequence& query, const ModelConfig& cfg) {
  EncodedInput input;
  const size_t budget = static_cast<size_t>(cfg.max_positions) - 1;
  const size_t keep = std::min(query.ids.size(), budget);
  input.token_ids.push_back(Vocabulary::kCls);
  input.token_ids.insert(input.token_ids.end(), query.ids.begin(),
                         query.ids.begin() + static_cast<std::ptrdiff_t>(keep));
  input.segment_ids.assign(input.token_ids.size(), 0);
  for (size_t i = 0; i < input.token_ids.size(); ++i)
    input.position_ids.push_back(static_cast<int>(i));
  input.attention_mask.assign(input.token_ids.size(), 1);
  return input;
}

EncodedInput build_document_input(const NodeText& text, const Vocabulary& vocab,
                                  const ModelConfig& cfg) {
  std::array<std::vector<int>, 4> ids;
  std::vector<size_t> lens(4);
  const auto sources = source_views(text);
  for (size_t s = 0; s < 4; ++s) {
    ids[s] = tokenize(sources[s], vocab).ids;
    lens[s] = ids[s].size();
  }
  const auto keep = proportional_budget(lens, static_cast<size_t>(cfg.max_positions) - 5);

  EncodedInput input;
  input.token_ids.push_back(Vocabulary::kCls);
  input.segment_ids.push_back(0);
  for (size_t s = 0; s < 4; ++s) {
    for (size_t i = 0; i < keep[s]; ++i) {
      input.token_ids.push_back(ids[s][i]);
      input.segment_ids.push_back(static_cast<int>(s));
    }
    input.token_ids.push_back(Vocabulary::kSep);
    input.segment_ids.push_back(static_cast<int>(s));
  }
  for (size_t i = 0; i < input.token_ids.size(); ++i)
    input.position_ids.push_back(static_cast<int>(i));
  input.attention_mask.assign(input.token_ids.size(), 1);
  return input;
}

EncodedInput build_feature_input(const NodeText& text, const Vocabulary& vocab,
                                 const ModelConfig& cfg) {
  std::array<std::vector<int>, 4> ids;
  std::vector<size_t> lens(4);
  const auto sources = source_views(text);
  for (size_t s = 0; s < 4; ++s) {
    ids[s] = tokenize(sources[s], vocab).ids;
    lens[s] = ids[s].size();
  }
  const auto keep = proportional_budget(lens, static_cast<size_t>(cfg.max_positions));

  EncodedInput input;
  for (size_t s = 0; s < 4; ++s) {
    for (size_t i = 0; i < keep[s]; ++i) {
      input.token_ids.push_back(ids[s][i]);
      input.segment_ids.push_back(static_cast<int>(s));
    }
  }
  for (size_t i = 0; i < input.token_ids.size(); ++i)
    input.position_ids.push_back(static_cast<int>(i));
  input.attention_mask.assign(input.token_ids.size(), 1);
  return input;
}

Var ParamVars::at(const std::string& name) const {
  auto it = vars.find(name);
  if (it == vars.end()) throw Error("internal", "missing tensor var " + name);
  return it->second;
}

ParamVars register_params(Tape& tape, const ParamStore& params) {
  ParamVars pv;
  pv.config = &params.config;
  for (const auto& [name, tensor] : params.tensors) pv.vars.emplace(name, tape.leaf(tensor));
  return pv;
}

namespace {

void check_input_bounds(const EncodedInput& input, const ModelConfig& cfg) {
  for (int id : input.token_ids)
    if (id < 0 || id >= cfg.vocab_size) throw Error("bad-id", "token id " + std::to_string(id));
  for (int s : input.segment_ids)
    if (s < 0 || s >= cfg.segments) throw Error("bad-id", "segment id " + std::to_string(s));
  for (int p : input.position_ids)
    if (p < 0 || p >= cfg.max_positions) throw Error("bad-id", "position id " + std::to_string(p));
}

Var graph_sigma(Tape& tape, const ModelConfig& cfg, Var x) {
  return cfg.graph_activation == "elu" ? tape.elu(x) : tape.gelu(x);
}

// Shared two-factor multi-head attention. Returns per-head aggregated
// vectors and fills alpha[m][j] with the softmax weights.
std::vector<Var> attention_heads_t(Tape& tape, const ParamVars& pv, const std::string& prefix,
                                   Var z_center, const std::vector<Var>& neighbors,
                                   std::vector<std::vector<double>>* alpha_out) {
  const ModelConfig& cfg = *pv.config;
  Var stacked = neighbors[0];
  for (size_t i = 1; i < neighbors.size(); ++i) stacked = tape.concat_rows(stacked, neighbors[i]);

  std::vector<Var> head_vectors;
  if (alpha_out) alpha_out->assign(static_cast<size_t>(cfg.heads), {});
  for (int m = 0; m < cfg.heads; ++m) {
    const std::string h = prefix + "head" + std::to_string(m) + ".";
    const Var attn_w = pv.at(h + "attn_w");
    const Var attn_c = pv.at(h + "attn_c");
    const Var dot_w = pv.at(h + "dot_w");
    const Var value_w = pv.at(h + "value_w");
    const int head_dim = static_cast<int>(tape.val(attn_w).cols());

    // interaction factor: LeakyReLU(c^T [W z_center || W z_j])
    const Var zc_proj = tape.matmul(z_center, attn_w);          // 1 x dh
    const Var nb_proj = tape.matmul(stacked, attn_w);           // n x dh
    const Var c_self = tape.rows_range(attn_c, 0, head_dim);    // dh x 1
    const Var c_nb = tape.rows_range(attn_c, head_dim, head_dim);
    const Var self_score = tape.matmul(zc_proj, c_self);        // 1 x 1
    const Var nb_scores = tape.matmul(nb_proj, c_nb);           // n x 1
    const Var interaction =
        tape.leaky_relu(tape.add_scalar(nb_scores, self_score), cfg.leaky_slope);

    // dot-product factor: Tanh((W_d z_center) . (W_d z_j))
    const Var zc_dot = tape.matmul(z_center, dot_w);            // 1 x dh
    const Var nb_dot = tape.matmul(stacked, dot_w);             // n x dh
    const Var term_match = tape.tanh_(tape.matmul(nb_dot, tape.transpose(zc_dot)));

    const Var scores = tape.add(interaction, term_match);       // n x 1
    const Var alpha = tape.softmax_rows(tape.transpose(scores));  // 1 x n

    if (alpha_out) {
      auto& row = (*alpha_out)[static_cast<size_t>(m)];
      for (size_t j = 0; j < neighbors.size(); ++j)
        row.push_back(tape.val(alpha)(0, static_cast<Eigen::Index>(j)));
    }

    const Var values = tape.matmul(stacked, value_w);           // n x dh
    head_vectors.push_back(graph_sigma(tape, cfg, tape.matmul(alpha, values)));
  }
  return head_vectors;
}

Var transformer_stack_t(Tape& tape, const ParamVars& pv, const std::string& stack, Var x) {
  const ModelConfig& cfg = *pv.config;
  const int head_dim = cfg.dim / cfg.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = stack + ".l" + std::to_string(l) + ".";
    const Var normed = tape.layer_norm(x, pv.at(p + "ln1.gain"), pv.at(p + "ln1.bias"));
    const Var q = tape.add_rowvec(tape.matmul(normed, pv.at(p + "attn.wq")), pv.at(p + "attn.bq"));
    const Var k = tape.add_rowvec(tape.matmul(normed, pv.at(p + "attn.wk")), pv.at(p + "attn.bk"));
    const Var v = tape.add_rowvec(tape.matmul(normed, pv.at(p + "attn.wv")), pv.at(p + "attn.bv"));
    Var ctx{-1};
    for (int m = 0; m < cfg.heads; ++m) {
      const int off = m * head_dim;
      const Var qh = tape.cols_range(q, off, head_dim);
      const Var kh = tape.cols_range(k, off, head_dim);
      const Var vh = tape.cols_range(v, off, head_dim);
      const Var scores = tape.scale(tape.matmul(qh, tape.transpose(kh)), inv_sqrt);
      const Var ctx_h = tape.matmul(tape.softmax_rows(scores), vh);
      ctx = m == 0 ? ctx_h : tape.concat_cols(ctx, ctx_h);
    }
    const Var attn = tape.add_rowvec(tape.matmul(ctx, pv.at(p + "attn.wo")), pv.at(p + "attn.bo"));
    x = tape.add(x, attn);
    const Var normed2 = tape.layer_norm(x, pv.at(p + "ln2.gain"), pv.at(p + "ln2.bias"));
    const Var hidden =
        tape.gelu(tape.add_rowvec(tape.matmul(normed2, pv.at(p + "ffn.w1")), pv.at(p + "ffn.b1")));
    const Var ffn = tape.add_rowvec(tape.matmul(hidden, pv.at(p + "ffn.w2")), pv.at(p + "ffn.b2"));
    x = tape.add(x, ffn);
  }
  return x;
}

}  // namespace

Var embed_sequence_t(Tape& tape, const ParamVars& pv, const EncodedInput& input) {
  check_input_bounds(input, *pv.config);
  const Var tok = tape.gather_rows(pv.at("embed.token"), input.token_ids);
  const Var seg = tape.gather_rows(pv.at("embed.segment"), input.segment_ids);
  const Var pos = tape.gather_rows(pv.at("embed.position"), input.position_ids);
  return tape.add(tape.add(tok, seg), pos);
}

Var encode_query_t(Tape& tape, const ParamVars& pv, const EncodedInput& input) {
  const Var embedded = embed_sequence_t(tape, pv, input);
  return tape.row(transformer_stack_t(tape, pv, "query", embedded), 0);
}

Var encode_document_text_t(Tape& tape, const ParamVars& pv, const EncodedInput& input) {
  const Var embedded = embed_sequence_t(tape, pv, input);
  return tape.row(transformer_stack_t(tape, pv, "doc", embedded), 0);
}

Var featurize_node_t(Tape& tape, const ParamVars& pv, const EncodedInput& input, int conv_index) {
  const ModelConfig& cfg = *pv.config;
  const std::string p = "graph.conv" + std::to_string(conv_index) + ".";
  Var pooled{-1};
  if (input.length() == 0) {
    pooled = tape.leaf(Mat::Zero(1, cfg.dim));
  } else {
    pooled = tape.row_mean(embed_sequence_t(tape, pv, input));
  }
  return tape.gelu(tape.add_rowvec(tape.matmul(pooled, pv.at(p + "feat.w")), pv.at(p + "feat.b")));
}

EncodeContext build_encode_context(const Micg& g, const std::vector<DocumentRecord>& docs,
                                   const Vocabulary& vocab, const ModelConfig& cfg) {
  std::map<std::string, const DocumentRecord*> by_id;
  for (const auto& d : docs) by_id[d.doc_id] = &d;
  EncodeContext ctx;
  ctx.doc_inputs.reserve(g.nodes.size());
  ctx.feature_inputs.reserve(g.nodes.size());
  for (const auto& node : g.nodes) {
    auto it = by_id.find(node.doc_id);
    const NodeText text = node_text(node, it == by_id.end() ? nullptr : it->second);
    ctx.doc_inputs.push_back(build_document_input(text, vocab, cfg));
    ctx.feature_inputs.push_back(build_feature_input(text, vocab, cfg));
  }
  return ctx;
}

NodeText node_text(const MicgNode& node, const DocumentRecord* doc) {
  NodeText text;
  if (doc) {
    text.title = doc->title;
    text.url = doc->url;
    text.anchor = doc->anchor;
  }
  std::string clicks;
  for (const auto& key : node.click_keys) {
    if (!clicks.empty()) clicks.push_back(' ');
    clicks += key;
  }
  text.clicks = std::move(clicks);
  return text;
}

Var encode_node_t(Tape& tape, const ParamVars& pv, const EncodeContext& ctx,
                  const NeighborSubgraph& sub, AttentionExport* attention) {
  const ModelConfig& cfg = *pv.config;
  const Var v_base = encode_document_text_t(tape, pv, ctx.doc_inputs[static_cast<size_t>(sub.center)]);
  if (cfg.lambda_graph == 0.0) return v_base;  // base-model reduction, bit-exact
  if (static_cast<int>(sub.layers.size()) != cfg.graph_depth)
    throw Error("internal", "subgraph depth does not match model graph_depth");
  if (!sub.has_real_first_layer()) return v_base;  // gamma = 0

  // r vectors are shared when the same node is consumed at the same
  // convolve layer more than once.
  std::map<std::pair<int64_t, int>, Var> features;
  auto featurize = [&](int64_t node_id, int conv_index) {
    auto key = std::make_pair(node_id, conv_index);
    auto it = features.find(key);
    if (it != features.end()) return it->second;
    const Var r =
        featurize_node_t(tape, pv, ctx.feature_inputs[static_cast<size_t>(node_id)], conv_index);
    features.emplace(key, r);
    return r;
  };

  const int depth = cfg.graph_depth;
  // Bottom layer: raw features, attributed to the convolve that consumes them.
  std::vector<std::optional<Var>> current;
  for (int64_t slot : sub.layers[static_cast<size_t>(depth - 1)]) {
    if (slot == NeighborSubgraph::kPadSlot) {
      current.emplace_back(std::nullopt);
    } else {
      current.emplace_back(featurize(slot, depth - 2));
    }
  }

  for (int layer = depth - 1; layer >= 1; --layer) {
    const auto& slots = sub.layers[static_cast<size_t>(layer - 1)];
    const size_t fanout = current.size() / slots.size();
    std::vector<std::optional<Var>> up(slots.size());
    for (size_t i = 0; i < slots.size(); ++i) {
      if (slots[i] == NeighborSubgraph::kPadSlot) continue;
      std::vector<Var> children;
      for (size_t t = 0; t < fanout; ++t) {
        const auto& child = current[i * fanout + t];
        if (child) children.push_back(*child);
      }
      const int conv = layer - 1;
      const std::string p = "graph.conv" + std::to_string(conv) + ".";
      const Var r_center = featurize(slots[i], conv);
      Var aggregated{-1};
      if (children.empty()) {
        aggregated = tape.leaf(Mat::Zero(1, cfg.dim));  // pad all-zeros vector
      } else {
        const auto heads = attention_heads_t(tape, pv, p, r_center, children, nullptr);
        aggregated = heads[0];
        for (size_t m = 1; m < heads.size(); ++m)
          aggregated = tape.concat_cols(aggregated, heads[m]);
      }
      const Var cat = tape.concat_cols(aggregated, r_center);
      up[i] = graph_sigma(
          tape, cfg,
          tape.add_rowvec(tape.matmul(cat, pv.at(p + "combine.w")), pv.at(p + "combine.b")));
    }
    current = std::move(up);
  }

  std::vector<Var> first_layer;
  std::vector<int64_t> first_ids;
  for (size_t i = 0; i < current.size(); ++i) {
    if (current[i]) {
      first_layer.push_back(*current[i]);
      first_ids.push_back(sub.layers[0][i]);
    }
  }

  std::vector<std::vector<double>> alpha;
  const auto heads = attention_heads_t(tape, pv, "graph.merge.", v_base, first_layer, &alpha);
  Var v_graph = tape.add_many(heads);
  v_graph = tape.scale(v_graph, 1.0 / static_cast<double>(cfg.heads));

  if (attention) {
    attention->neighbor_ids = first_ids;
    attention->head_alpha = alpha;
    attention->mean_alpha.assign(first_layer.size(), 0.0);
    for (const auto& row : alpha)
      for (size_t j = 0; j < row.size(); ++j) attention->mean_alpha[j] += row[j];
    for (auto& a : attention->mean_alpha) a /= static_cast<double>(cfg.heads);
  }

  return tape.add(v_base, tape.scale(v_graph, cfg.lambda_graph));
}

Var cosine_t(Tape& tape, Var a, Var b) {
  const Var num = tape.dot(a, b);
  const Var inv_a = tape.rsqrt(tape.dot(a, a));
  const Var inv_b = tape.rsqrt(tape.dot(b, b));
  return tape.cmul(tape.cmul(num, inv_a), inv_b);
}

// ---- value-level wrappers ----

Eigen::MatrixXd embed_sequence(const EncodedInput& input, const ParamStore& params) {
  check_input_bounds(input, params.config);
  Tape tape;
  const ParamVars pv = register_params(tape, params);
  if (input.length() == 0) return Mat::Zero(0, params.config.dim);
  return tape.val(embed_sequence_t(tape, pv, input));
}

Eigen::VectorXd encode_query(const std::string& query_text, const Vocabulary& vocab,
                             const ParamStore& params) {
  Tape tape;
  const ParamVars pv = register_params(tape, params);
  const EncodedInput input = build_query_input(tokenize(query_text, vocab), params.config);
  return tape.val(encode_query_t(tape, pv, input)).row(0).transpose();
}

Eigen::VectorXd encode_document_text(const NodeText& text, const Vocabulary& vocab,
                                     const ParamStore& params) {
  Tape tape;
  const ParamVars pv = register_params(tape, params);
  const EncodedInput input = build_document_input(text, vocab, params.config);
  return tape.val(encode_document_text_t(tape, pv, input)).row(0).transpose();
}

Eigen::VectorXd featurize_node(const NodeText& text, const Vocabulary& vocab,
                               const ParamStore& params, int conv_index) {
  Tape tape;
  const ParamVars pv = register_params(tape, params);
  const EncodedInput input = build_feature_input(text, vocab, params.config);
  return tape.val(featurize_node_t(tape, pv, input, conv_index)).row(0).transpose();
}

namespace {

std::vector<Var> leaf_rows(Tape& tape, const std::vector<Eigen::VectorXd>& vectors,
                           const std::vector<bool>& mask, std::vector<size_t>* kept) {
  std::vector<Var> out;
  for (size_t i = 0; i < vectors.size(); ++i) {
    if (i < mask.size() && mask[i]) continue;
    out.push_back(tape.leaf(vectors[i].transpose()));
    if (kept) kept->push_back(i);
  }
  return out;
}

}  // namespace

std::vector<std::vector<double>> two_factor_attention_weights(
    const Eigen::VectorXd& center, const std::vector<Eigen::VectorXd>& neighbors,
    const std::vector<bool>& mask, const ParamStore& params, const std::string& block) {
  Tape tape;
  const ParamVars pv = register_params(tape, params);
  std::vector<size_t> kept;
  const std::vector<Var> nb = leaf_rows(tape, neighbors, mask, &kept);
  if (nb.empty()) throw Error("no-neighbors");
  const Var zc = tape.leaf(center.transpose());
  std::vector<std::vector<double>> alpha;
  attention_heads_t(tape, pv, block + ".", zc, nb, &alpha);
  std::vector<std::vector<double>> full(alpha.size(),
                                        std::vector<double>(neighbors.size(), 0.0));
  for (size_t m = 0; m < alpha.size(); ++m)
    for (size_t j = 0; j < kept.size(); ++j) full[m][kept[j]] = alpha[m][j];
  return full;
}

Eigen::VectorXd attention_convolve(const Eigen::VectorXd& center,
                                   const std::vector<Eigen::VectorXd>& neighbors,
                                   const std::vector<bool>& mask, const ParamStore& params,
                                   int conv_index) {
  const ModelConfig& cfg = params.config;
  Tape tape;
  const ParamVars pv = register_params(tape, params);
  const Var r_center = tape.leaf(center.transpose());
  const std::vector<Var> nb = leaf_rows(tape, neighbors, mask, nullptr);
  const std::string p = "graph.conv" + std::to_string(conv_index) + ".";
  Var aggregated{-1};
  if (nb.empty()) {
    aggregated = tape.leaf(Mat::Zero(1, cfg.dim));
  } else {
    const auto heads = attention_heads_t(tape, pv, p, r_center, nb, nullptr);
    aggregated = heads[0];
    for (size_t m = 1; m < heads.size(); ++m) aggregated = tape.concat_cols(aggregated, heads[m]);
  }
  const Var cat = tape.concat_cols(aggregated, r_center);
  const Var out = graph_sigma(
      tape, cfg, tape.add_rowvec(tape.matmul(cat, pv.at(p + "combine.w")), pv.at(p + "combine.b")));
  return tape.val(out).row(0).transpose();
}

Eigen::VectorXd encode_node(const EncodeContext& ctx, const NeighborSubgraph& sub,
                            const ParamStore& params, AttentionExport* attention) {
  Tape tape;
  const ParamVars pv = register_params(tape, params);
  return tape.val(encode_node_t(tape, pv, ctx, sub, attention)).row(0).transpose();
}

double similarity(const Eigen::VectorXd& query_vec, const Eigen::VectorXd& doc_vec) {
  const double nq = query_vec.norm();
  const double nd = doc_vec.norm();
  if (nq == 0.0 || nd == 0.0) throw Error("zero-vector");
  return query_vec.dot(doc_vec) / (nq * nd);
}

}  // namespace mira
