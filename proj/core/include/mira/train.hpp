#pragma once

#include <set>
#include <string>
#include <vector>

#include "mira/corpus.hpp"
#include "mira/encoder.hpp"
#include "mira/micg.hpp"
#include "mira/rng.hpp"

namespace mira {

struct TrainConfig {
  double psi = 5.0;   // logit scale in sigmoid cross entropy
  double tau = 2.5;   // logit shift
  double learning_rate = 8e-5;
  int batch_size = 32;
  int epochs = 5;
  double neg_temperature = 1.0;
  uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int negatives_per_positive = 1;
  int patience = 2;  // early-stopping patience when validation data is given
  std::set<std::string> frozen;  // tensor-name prefixes excluded from updates

  void validate() const;
};

// Sigmoid cross entropy on the scaled similarity: -y log s(psi*s - tau)
// - (1-y) log(1 - s(...)), evaluated in softplus form so it is finite for
// all inputs.
double loss(double s, int y, double psi, double tau);

// Closed form d(loss)/ds = psi * (sigmoid(psi*s - tau) - y).
double loss_similarity_gradient(double s, int y, double psi, double tau);

// For each row i, samples j != i with probability proportional to
// exp(sims(i, j) / temperature). One rng draw per row.
std::vector<int> sample_in_batch_negatives(const Eigen::MatrixXd& sims, double temperature,
                                           Rng& rng);

// (query text, positive node) built from the click log: one pair per
// deduplicated click, matched to the node whose intention group holds the
// click key. Clicks of documents absent from the graph are skipped.
struct TrainPair {
  std::string query_text;
  int64_t node_id = 0;
};

std::vector<TrainPair> make_training_pairs(const ClickMap& clicks, const Micg& g);

// A fully materialized batch: inputs, subgraphs and the sampled negative
// document index per query. Fixing the structure makes the batch loss a
// smooth function of the parameters.
struct FixedBatch {
  std::vector<EncodedInput> queries;
  std::vector<NeighborSubgraph> subgraphs;
  std::vector<int> negatives;
};

ad::Var batch_loss_t(ad::Tape& tape, const ParamVars& pv, const EncodeContext& ctx,
                     const FixedBatch& batch, const TrainConfig& cfg);

double batch_loss_value(const ParamStore& params, const EncodeContext& ctx,
                        const FixedBatch& batch, const TrainConfig& cfg);

// Max over parameter elements of |g_analytic - g_fd| /
// max(1e-8, |g_analytic| + |g_fd|), with central differences of width
// 2*epsilon. Throws Error("numerical-blowup") on a non-finite loss.
double grad_check(const ParamStore& params, const EncodeContext& ctx, const FixedBatch& batch,
                  const TrainConfig& cfg, double epsilon = 1e-5);

class AdamOptimizer {
 public:
  AdamOptimizer(ParamStore* params, const TrainConfig& cfg);

  // One update from accumulated gradients keyed by tensor name. Tensors
  // matching a frozen prefix are left untouched.
  void apply(const std::map<std::string, ad::Mat>& grads);

  int64_t steps() const { return step_; }

 private:
  ParamStore* params_;
  TrainConfig cfg_;
  std::map<std::string, ad::Mat> m_;
  std::map<std::string, ad::Mat> v_;
  int64_t step_ = 0;
};

struct TrainData {
  const Micg* graph = nullptr;
  const EncodeContext* ctx = nullptr;
  const Vocabulary* vocab = nullptr;
  std::vector<TrainPair> pairs;
  // Optional validation set for early stopping on NCG@k.
  const std::vector<Judgment>* judgments = nullptr;
  int validation_k = 5;
};

struct FitResult {
  ParamStore params;
  std::vector<double> loss_trace;  // mean loss per step
  std::vector<double> validation_ncg;  // per epoch, when judgments given
  int best_epoch = -1;
};

// Mini-batch Adam training with in-batch negatives. Deterministic for a
// fixed seed; the document embedding of each batch item is reused as the
// negative for the sampled peers.
FitResult fit(const TrainData& data, ParamStore initial, const TrainConfig& cfg,
              const GraphBuildConfig& graph_cfg, int threads = 1);

// Chunked full-graph node encoding (inference only).
std::vector<Eigen::VectorXd> encode_all_nodes(const ParamStore& params, const EncodeContext& ctx,
                                              const Micg& g, const GraphBuildConfig& graph_cfg,
                                              uint64_t seed, int threads,
                                              std::vector<AttentionExport>* exports = nullptr);

std::vector<Eigen::VectorXd> encode_queries(const ParamStore& params, const Vocabulary& vocab,
                                            const std::vector<std::string>& queries, int threads);

}  // namespace mira
