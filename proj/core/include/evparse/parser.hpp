#pragma once

#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "evparse/archive.hpp"
#include "evparse/embeddings.hpp"
#include "evparse/graph.hpp"
#include "evparse/nn.hpp"

namespace evparse {

class ParserError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ParserConfig {
  GraphFlavor flavor = GraphFlavor::node_centric;
  std::size_t d_embed = 64;          // contextual embedding width
  std::size_t d_query = 64;          // query width h
  std::size_t queries_per_token = 1;
  std::size_t n_query_layers = 2;
  std::size_t n_heads = 4;
  double anchor_threshold = 0.5;
  double edge_threshold = 0.5;
  double loss_node = 1.0;
  double loss_anchor = 1.0;
  double loss_edge_presence = 1.0;
  double loss_edge_label = 1.0;
  std::uint64_t seed = 42;

  // Schedule / training knobs.
  double learning_rate = 1e-3;  // 6e-5 is a better default for archives
  double lr_decay = 1.0;        // multiplicative per epoch
  std::size_t warmup_steps = 0;
  std::size_t batch_size = 32;
  std::size_t epochs = 20;
  double dropout = 0.1;

  // labeled_edge classifies queries as node/not-node and labels edges with
  // the seven roles; node-centric flavors label nodes directly.
  std::size_t node_label_count() const {
    return flavor == GraphFlavor::labeled_edge ? 2 : kNumRoles + 1;
  }
  std::size_t null_label_index() const { return node_label_count() - 1; }
  std::size_t edge_label_count() const {
    return flavor == GraphFlavor::labeled_edge ? kNumRoles : 0;
  }

  std::vector<std::string> validate() const;
};

// Gold node id -> query index: the query of the first token of the node's
// first span (slot 0), the virtual root -> the dedicated root query at n*q.
std::unordered_map<int, int> assign_targets(const EventGraph& gold,
                                            std::size_t n_tokens,
                                            std::size_t queries_per_token);

struct TrainingExample {
  const AnnotatedSentence* sentence = nullptr;
  EventGraph gold;
  const EmbeddingMatrix* embedding = nullptr;  // null -> toy encoder path
};

struct LossBreakdown {
  double total = 0.0;
  double node = 0.0;
  double anchor = 0.0;
  double edge_presence = 0.0;
  double edge_label = 0.0;

  bool finite() const;
};

struct PredictedGraph {
  EventGraph graph;
  std::unordered_map<int, double> node_scores;            // by node id
  std::map<std::pair<int, int>, double> edge_scores;      // by (source, target)
};

// Eval-mode tensors for one sentence, exposed for inspection and tests.
struct EvalOutputs {
  Eigen::MatrixXd embeddings;   // n x d_embed
  Eigen::MatrixXd queries;      // (n*q [+ root]) x h
  Eigen::MatrixXd node_probs;   // rows sum to 1
  Eigen::MatrixXd anchor_probs; // (n*q [+ root]) x n, entries in (0,1)
};

struct SentenceForward {
  ad::Var embeddings;
  ad::Var queries;
  std::size_t n_tokens = 0;
  bool has_root_query = false;
};

// The query-based graph parser: contextual embeddings are projected onto
// latent queries, contextualized by a transformer stack, then classified
// into nodes, anchored to tokens by a biaffine head, and connected by
// biaffine edge presence / edge label heads.
class ParserModel {
 public:
  // Trainable toy-encoder provider.
  ParserModel(ParserConfig config, ToyEncoderConfig encoder_config,
              Vocabulary vocab);
  // External-embedding provider (precomputed archives).
  explicit ParserModel(ParserConfig config);

  const ParserConfig& config() const { return config_; }
  bool has_toy_encoder() const { return encoder_.has_value(); }
  const Vocabulary& vocab() const { return vocab_; }
  const ToyEncoderConfig* encoder_config() const {
    return encoder_ ? &encoder_->config() : nullptr;
  }
  std::mt19937_64& rng() { return rng_; }

  SentenceForward forward(ad::Tape& tape, const AnnotatedSentence& sentence,
                          const EmbeddingMatrix* external, bool train);
  ad::Var node_logits(ad::Tape& tape, ad::Var queries);
  ad::Var anchor_logits(ad::Tape& tape, ad::Var queries, ad::Var embeddings);
  ad::Var edge_presence_logits(ad::Tape& tape, ad::Var query_rows);
  // (pairs, edge_label_count) logits for row-aligned source/target queries.
  ad::Var edge_label_logits(ad::Tape& tape, ad::Var source_rows,
                            ad::Var target_rows);

  EvalOutputs evaluate(const AnnotatedSentence& sentence,
                       const EmbeddingMatrix* external = nullptr);

  // Mean weighted loss over the batch; gradients (scaled by 1/batch size)
  // are accumulated into the parameters when accumulate_gradients is set.
  LossBreakdown compute_loss(std::span<const TrainingExample> batch,
                             bool train, bool accumulate_gradients);

  PredictedGraph predict(const AnnotatedSentence& sentence,
                         const EmbeddingMatrix* external = nullptr);

  std::vector<ad::Parameter*> parameters();

 private:
  ParserConfig config_;
  std::mt19937_64 rng_;
  Vocabulary vocab_;
  std::optional<ToyEncoder> encoder_;

  ad::Parameter w_query_, b_query_;
  ad::Parameter slot_offset_;  // queries_per_token x h
  ad::Parameter root_query_;   // 1 x h, labeled_edge only
  std::vector<nn::TransformerBlock> query_blocks_;
  ad::Parameter w_node_, b_node_;
  nn::Biaffine anchor_;
  nn::Biaffine edge_presence_;
  std::vector<nn::Biaffine> edge_label_;  // one per role, labeled_edge only

  void init_parameters();
  struct SentenceLoss;
  SentenceLoss sentence_loss(ad::Tape& tape, const TrainingExample& example,
                             bool train);
};

}  // namespace evparse
