#include "mira/train.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "mira/error.hpp"
#include "mira/parallel.hpp"
#include "mira/retrieval.hpp"

namespace mira {

using ad::Mat;
using ad::Tape;
using ad::Var;

void TrainConfig::validate() const {
  if (psi <= 0.0) throw Error("bad-config", "train.psi must be > 0");
  if (batch_size < 2) throw Error("bad-config", "train.batch_size must be >= 2");
  if (learning_rate < 0.0) throw Error("bad-config", "train.learning_rate must be >= 0");
  if (epochs < 1) throw Error("bad-config", "train.epochs must be >= 1");
  if (neg_temperature <= 0.0) throw Error("bad-config", "train.neg_temperature must be > 0");
  if (negatives_per_positive < 1)
    throw Error("bad-config", "train.negatives_per_positive must be >= 1");
}

double loss(double s, int y, double psi, double tau) {
  const double x = psi * s - tau;
  // softplus(-x) for y=1, softplus(x) for y=0
  return y == 1 ? ad::softplus_value(-x) : ad::softplus_value(x);
}

double loss_similarity_gradient(double s, int y, double psi, double tau) {
  return psi * (ad::sigmoid_value(psi * s - tau) - static_cast<double>(y));
}

std::vector<int> sample_in_batch_negatives(const Eigen::MatrixXd& sims, double temperature,
                                           Rng& rng) {
  const auto batch = sims.rows();
  if (batch < 2) throw Error("bad-config", "in-batch negatives need batch_size >= 2");
  std::vector<int> negatives(static_cast<size_t>(batch));
  std::vector<double> weights(static_cast<size_t>(batch));
  for (Eigen::Index i = 0; i < batch; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < batch; ++j) {
      if (j != i) mx = std::max(mx, sims(i, j));
    }
    double total = 0.0;
    for (Eigen::Index j = 0; j < batch; ++j) {
      weights[static_cast<size_t>(j)] =
          j == i ? 0.0 : std::exp((sims(i, j) - mx) / temperature);
      total += weights[static_cast<size_t>(j)];
    }
    const double u = rng.next_double() * total;
    double acc = 0.0;
    int pick = i == 0 ? 1 : 0;
    for (Eigen::Index j = 0; j < batch; ++j) {
      if (j == i) continue;
      acc += weights[static_cast<size_t>(j)];
      if (u < acc) {
        pick = static_cast<int>(j);
        break;
      }
    }
    negatives[static_cast<size_t>(i)] = pick;
  }
  return negatives;
}

std::vector<TrainPair> make_training_pairs(const ClickMap& clicks, const Micg& g) {
  std::unordered_map<std::string, std::unordered_map<std::string, int64_t>> key_to_node;
  for (const auto& node : g.nodes) {
    auto& by_key = key_to_node[node.doc_id];
    for (const auto& key : node.click_keys) by_key.emplace(key, node.node_id);
  }
  std::vector<TrainPair> pairs;
  for (const auto& [doc_id, list] : clicks) {
    auto doc_it = key_to_node.find(doc_id);
    if (doc_it == key_to_node.end()) continue;
    for (const auto& click : list) {
      auto node_it = doc_it->second.find(click.query_text);
      if (node_it == doc_it->second.end()) continue;
      pairs.push_back({click.query_text, node_it->second});
    }
  }
  return pairs;
}

Var batch_loss_t(Tape& tape, const ParamVars& pv, const EncodeContext& ctx,
                 const FixedBatch& batch, const TrainConfig& cfg) {
  const size_t n = batch.queries.size();
  std::vector<Var> query_vecs(n), doc_vecs(n);
  for (size_t i = 0; i < n; ++i) {
    query_vecs[i] = encode_query_t(tape, pv, batch.queries[i]);
    doc_vecs[i] = encode_node_t(tape, pv, ctx, batch.subgraphs[i]);
  }
  std::vector<Var> terms;
  terms.reserve(2 * n);
  for (size_t i = 0; i < n; ++i) {
    const Var s_pos = cosine_t(tape, query_vecs[i], doc_vecs[i]);
    terms.push_back(tape.softplus(tape.affine(s_pos, -cfg.psi, cfg.tau)));
  }
  for (size_t i = 0; i < n; ++i) {
    const Var s_neg =
        cosine_t(tape, query_vecs[i], doc_vecs[static_cast<size_t>(batch.negatives[i])]);
    terms.push_back(tape.softplus(tape.affine(s_neg, cfg.psi, -cfg.tau)));
  }
  return tape.scale(tape.add_many(terms), 1.0 / static_cast<double>(terms.size()));
}

double batch_loss_value(const ParamStore& params, const EncodeContext& ctx,
                        const FixedBatch& batch, const TrainConfig& cfg) {
  Tape tape;
  const ParamVars pv = register_params(tape, params);
  return tape.val(batch_loss_t(tape, pv, ctx, batch, cfg))(0, 0);
}

double grad_check(const ParamStore& params, const EncodeContext& ctx, const FixedBatch& batch,
                  const TrainConfig& cfg, double epsilon) {
  std::map<std::string, Mat> analytic;
  {
    Tape tape;
    const ParamVars pv = register_params(tape, params);
    const Var total = batch_loss_t(tape, pv, ctx, batch, cfg);
    if (!std::isfinite(tape.val(total)(0, 0))) throw Error("numerical-blowup");
    tape.backward(total);
    for (const auto& [name, var] : pv.vars) analytic.emplace(name, tape.grad(var));
  }
  double worst = 0.0;
  ParamStore probe = params;
  for (auto& [name, tensor] : probe.tensors) {
    const Mat& grad = analytic.at(name);
    for (Eigen::Index r = 0; r < tensor.rows(); ++r) {
      for (Eigen::Index c = 0; c < tensor.cols(); ++c) {
        const double saved = tensor(r, c);
        tensor(r, c) = saved + epsilon;
        const double up = batch_loss_value(probe, ctx, batch, cfg);
        tensor(r, c) = saved - epsilon;
        const double down = batch_loss_value(probe, ctx, batch, cfg);
        tensor(r, c) = saved;
        if (!std::isfinite(up) || !std::isfinite(down)) throw Error("numerical-blowup");
        const double fd = (up - down) / (2.0 * epsilon);
        const double ga = grad(r, c);
        const double rel = std::abs(ga - fd) / std::max(1e-8, std::abs(ga) + std::abs(fd));
        worst = std::max(worst, rel);
      }
    }
  }
  return worst;
}

AdamOptimizer::AdamOptimizer(ParamStore* params, const TrainConfig& cfg)
    : params_(params), cfg_(cfg) {
  for (const auto& [name, tensor] : params->tensors) {
    m_.emplace(name, Mat::Zero(tensor.rows(), tensor.cols()));
    v_.emplace(name, Mat::Zero(tensor.rows(), tensor.cols()));
  }
}

void AdamOptimizer::apply(const std::map<std::string, Mat>& grads) {
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.adam_beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.adam_beta2, static_cast<double>(step_));
  for (auto& [name, tensor] : params_->tensors) {
    bool frozen = false;
    for (const auto& prefix : cfg_.frozen) {
      if (name.starts_with(prefix)) {
        frozen = true;
        break;
      }
    }
    if (frozen) continue;
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Mat& g = git->second;
    Mat& m = m_.at(name);
    Mat& v = v_.at(name);
    m = cfg_.adam_beta1 * m + (1.0 - cfg_.adam_beta1) * g;
    v = cfg_.adam_beta2 * v + (1.0 - cfg_.adam_beta2) * g.cwiseProduct(g);
    const Mat m_hat = m / bc1;
    const Mat v_hat = v / bc2;
    tensor -= cfg_.learning_rate *
              m_hat.cwiseQuotient((v_hat.cwiseSqrt().array() + cfg_.adam_eps).matrix());
  }
}

std::vector<Eigen::VectorXd> encode_all_nodes(const ParamStore& params, const EncodeContext& ctx,
                                              const Micg& g, const GraphBuildConfig& graph_cfg,
                                              uint64_t seed, int threads,
                                              std::vector<AttentionExport>* exports) {
  const size_t n = static_cast<size_t>(g.node_count());
  std::vector<Eigen::VectorXd> vectors(n);
  if (exports) exports->assign(n, {});
  constexpr size_t kChunk = 16;
  const size_t chunks = (n + kChunk - 1) / kChunk;
  parallel_for(chunks, threads, [&](size_t chunk) {
    const size_t begin = chunk * kChunk;
    const size_t end = std::min(n, begin + kChunk);
    Tape tape;
    const ParamVars pv = register_params(tape, params);
    for (size_t i = begin; i < end; ++i) {
      const auto node_id = static_cast<int64_t>(i);
      const NeighborSubgraph sub = sample_subgraph(g, node_id, graph_cfg, seed);
      AttentionExport* ex = exports ? &(*exports)[i] : nullptr;
      vectors[i] = tape.val(encode_node_t(tape, pv, ctx, sub, ex)).row(0).transpose();
    }
  });
  return vectors;
}

std::vector<Eigen::VectorXd> encode_queries(const ParamStore& params, const Vocabulary& vocab,
                                            const std::vector<std::string>& queries, int threads) {
  std::vector<Eigen::VectorXd> vectors(queries.size());
  constexpr size_t kChunk = 32;
  const size_t chunks = (queries.size() + kChunk - 1) / kChunk;
  parallel_for(chunks, threads, [&](size_t chunk) {
    const size_t begin = chunk * kChunk;
    const size_t end = std::min(queries.size(), begin + kChunk);
    Tape tape;
    const ParamVars pv = register_params(tape, params);
    for (size_t i = begin; i < end; ++i) {
      const EncodedInput input = build_query_input(tokenize(queries[i], vocab), params.config);
      vectors[i] = tape.val(encode_query_t(tape, pv, input)).row(0).transpose();
    }
  });
  return vectors;
}

namespace {

double validation_ncg(const ParamStore& params, const TrainData& data,
                      const GraphBuildConfig& graph_cfg, uint64_t seed, int threads) {
  const auto vectors = encode_all_nodes(params, *data.ctx, *data.graph, graph_cfg, seed, threads);
  std::vector<IndexInput> inputs;
  inputs.reserve(vectors.size());
  for (size_t i = 0; i < vectors.size(); ++i) {
    const auto& node = data.graph->nodes[i];
    inputs.push_back({node.doc_id, node.group_id, vectors[i]});
  }
  const VectorIndex index = build_index(inputs);
  std::vector<std::string> queries;
  for (const auto& j : *data.judgments) {
    if (queries.empty() || queries.back() != j.query_text) queries.push_back(j.query_text);
  }
  std::sort(queries.begin(), queries.end());
  queries.erase(std::unique(queries.begin(), queries.end()), queries.end());
  const auto query_vecs = encode_queries(params, *data.vocab, queries, threads);
  std::vector<std::pair<std::string, RetrievalResult>> results;
  results.reserve(queries.size());
  for (size_t i = 0; i < queries.size(); ++i) {
    results.push_back({queries[i], search(index, query_vecs[i], data.validation_k, threads)});
  }
  return ncg_at_k(results, *data.judgments, data.validation_k);
}

}  // namespace

FitResult fit(const TrainData& data, ParamStore initial, const TrainConfig& cfg,
              const GraphBuildConfig& graph_cfg, int threads) {
  cfg.validate();
  FitResult result;
  result.params = std::move(initial);
  if (data.pairs.empty()) throw Error("no-training-pairs");

  // Tokenize every distinct query once.
  std::unordered_map<std::string, size_t> query_index;
  std::vector<EncodedInput> query_inputs;
  std::vector<size_t> pair_query(data.pairs.size());
  for (size_t i = 0; i < data.pairs.size(); ++i) {
    auto [it, inserted] = query_index.emplace(data.pairs[i].query_text, query_inputs.size());
    if (inserted) {
      query_inputs.push_back(
          build_query_input(tokenize(data.pairs[i].query_text, *data.vocab),
                            result.params.config));
    }
    pair_query[i] = it->second;
  }

  AdamOptimizer optimizer(&result.params, cfg);
  Rng negative_rng(Rng::mix(cfg.seed, 0x6e656761746976ULL));

  ParamStore best_params = result.params;
  double best_ncg = -1.0;
  int best_epoch = -1;
  int stale_epochs = 0;
  uint64_t global_step = 0;

  std::vector<size_t> order(data.pairs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(Rng::mix(cfg.seed, 0x73687566666cULL + static_cast<uint64_t>(epoch)));
    for (size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.uniform_below(i)]);
    }
    for (size_t start = 0; start + 2 <= order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      const size_t b = std::min(static_cast<size_t>(cfg.batch_size), order.size() - start);
      if (b < 2) break;
      ++global_step;

      FixedBatch batch;
      batch.queries.reserve(b);
      batch.subgraphs.reserve(b);
      const uint64_t step_seed = Rng::mix(cfg.seed, 0x737465700000ULL + global_step);
      for (size_t k = 0; k < b; ++k) {
        const TrainPair& pair = data.pairs[order[start + k]];
        batch.queries.push_back(query_inputs[pair_query[order[start + k]]]);
        batch.subgraphs.push_back(sample_subgraph(*data.graph, pair.node_id, graph_cfg, step_seed));
      }

      Tape tape;
      const ParamVars pv = register_params(tape, result.params);
      std::vector<Var> query_vecs(b), doc_vecs(b);
      for (size_t k = 0; k < b; ++k) {
        query_vecs[k] = encode_query_t(tape, pv, batch.queries[k]);
        doc_vecs[k] = encode_node_t(tape, pv, *data.ctx, batch.subgraphs[k]);
      }

      // Negatives are sampled from the already-encoded batch similarities.
      Eigen::MatrixXd sims(b, b);
      for (size_t i = 0; i < b; ++i) {
        const Eigen::RowVectorXd qi = tape.val(query_vecs[i]).row(0);
        for (size_t j = 0; j < b; ++j) {
          const Eigen::RowVectorXd dj = tape.val(doc_vecs[j]).row(0);
          const double denom = qi.norm() * dj.norm();
          sims(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
              denom == 0.0 ? 0.0 : qi.dot(dj) / denom;
        }
      }
      batch.negatives = sample_in_batch_negatives(sims, cfg.neg_temperature, negative_rng);

      std::vector<Var> terms;
      terms.reserve(2 * b);
      for (size_t k = 0; k < b; ++k) {
        const Var s_pos = cosine_t(tape, query_vecs[k], doc_vecs[k]);
        terms.push_back(tape.softplus(tape.affine(s_pos, -cfg.psi, cfg.tau)));
      }
      for (size_t k = 0; k < b; ++k) {
        const Var s_neg =
            cosine_t(tape, query_vecs[k], doc_vecs[static_cast<size_t>(batch.negatives[k])]);
        terms.push_back(tape.softplus(tape.affine(s_neg, cfg.psi, -cfg.tau)));
      }
      const Var total = tape.scale(tape.add_many(terms), 1.0 / static_cast<double>(terms.size()));
      const double loss_value = tape.val(total)(0, 0);
      if (!std::isfinite(loss_value)) throw Error("numerical-blowup");
      result.loss_trace.push_back(loss_value);

      if (cfg.learning_rate > 0.0) {
        tape.backward(total);
        std::map<std::string, Mat> grads;
        for (const auto& [name, var] : pv.vars) grads.emplace(name, tape.grad(var));
        optimizer.apply(grads);
      }
    }

    if (data.judgments != nullptr) {
      const double ncg = validation_ncg(result.params, data, graph_cfg,
                                        Rng::mix(cfg.seed, 0x76616c69646174ULL), threads);
      result.validation_ncg.push_back(ncg);
      if (ncg > best_ncg) {
        best_ncg = ncg;
        best_epoch = epoch;
        best_params = result.params;
        stale_epochs = 0;
      } else {
        ++stale_epochs;
        if (stale_epochs >= cfg.patience) break;
      }
    }
  }

  if (data.judgments != nullptr && best_epoch >= 0) {
    result.params = std::move(best_params);
    result.best_epoch = best_epoch;
  }
  return result;
}

}  // namespace mira
