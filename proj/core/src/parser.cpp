#include "evparse/parser.hpp"

#include <algorithm>
#include <cmath>

namespace evparse {

namespace {

constexpr std::size_t kTriggerIndex = static_cast<std::size_t>(Role::trigger);

std::vector<TokenSpan> spans_from_tokens(const std::vector<std::size_t>& tokens) {
  std::vector<TokenSpan> spans;
  for (std::size_t i = 0; i < tokens.size();) {
    std::size_t j = i + 1;
    while (j < tokens.size() && tokens[j] == tokens[j - 1] + 1) ++j;
    spans.push_back({tokens[i], tokens[j - 1] + 1});
    i = j;
  }
  return spans;
}

}  // namespace

std::vector<std::string> ParserConfig::validate() const {
  std::vector<std::string> errors;
  if (d_embed == 0) errors.push_back("d_embed must be > 0");
  if (d_query == 0) errors.push_back("d_query must be > 0");
  if (queries_per_token == 0) errors.push_back("queries_per_token must be > 0");
  if (n_heads == 0 || d_query % n_heads != 0)
    errors.push_back("d_query must be divisible by n_heads");
  if (anchor_threshold <= 0.0 || anchor_threshold >= 1.0)
    errors.push_back("anchor_threshold must be in (0, 1)");
  if (edge_threshold <= 0.0 || edge_threshold >= 1.0)
    errors.push_back("edge_threshold must be in (0, 1)");
  for (auto [name, value] :
       {std::pair{"loss_node", loss_node}, {"loss_anchor", loss_anchor},
        {"loss_edge_presence", loss_edge_presence},
        {"loss_edge_label", loss_edge_label}}) {
    if (value < 0.0) errors.push_back(std::string(name) + " must be >= 0");
  }
  if (learning_rate <= 0.0) errors.push_back("learning_rate must be > 0");
  if (lr_decay <= 0.0 || lr_decay > 1.0)
    errors.push_back("lr_decay must be in (0, 1]");
  if (batch_size == 0) errors.push_back("batch_size must be > 0");
  if (dropout < 0.0 || dropout >= 1.0)
    errors.push_back("dropout must be in [0, 1)");
  return errors;
}

std::unordered_map<int, int> assign_targets(const EventGraph& gold,
                                            std::size_t n_tokens,
                                            std::size_t queries_per_token) {
  std::unordered_map<int, int> map;
  for (const auto& node : gold.nodes) {
    if (node.is_root) {
      map[node.id] = static_cast<int>(n_tokens * queries_per_token);
    } else {
      map[node.id] = static_cast<int>(node.anchor->spans.front().start *
                                      queries_per_token);
    }
  }
  return map;
}

bool LossBreakdown::finite() const {
  return std::isfinite(total) && std::isfinite(node) && std::isfinite(anchor) &&
         std::isfinite(edge_presence) && std::isfinite(edge_label);
}

ParserModel::ParserModel(ParserConfig config, ToyEncoderConfig encoder_config,
                         Vocabulary vocab)
    : config_(config), rng_(config.seed), vocab_(std::move(vocab)) {
  auto errors = config_.validate();
  if (!errors.empty()) throw ParserError(errors.front());
  encoder_config.vocab_size = vocab_.size();
  encoder_config.dim = config_.d_embed;
  encoder_.emplace(encoder_config, rng_);
  init_parameters();
}

ParserModel::ParserModel(ParserConfig config)
    : config_(config), rng_(config.seed) {
  auto errors = config_.validate();
  if (!errors.empty()) throw ParserError(errors.front());
  init_parameters();
}

void ParserModel::init_parameters() {
  const auto d = static_cast<Eigen::Index>(config_.d_embed);
  const auto h = static_cast<Eigen::Index>(config_.d_query);
  w_query_ = nn::glorot("query.w", d, h, rng_);
  b_query_ = nn::zeros("query.b", 1, h);
  slot_offset_ = nn::glorot("query.slot_offset",
                            static_cast<Eigen::Index>(config_.queries_per_token),
                            h, rng_);
  root_query_ = nn::glorot("query.root", 1, h, rng_);
  query_blocks_.reserve(config_.n_query_layers);
  for (std::size_t i = 0; i < config_.n_query_layers; ++i) {
    query_blocks_.push_back(nn::TransformerBlock::create(
        "query.block" + std::to_string(i), config_.d_query, config_.n_heads,
        rng_));
  }
  w_node_ = nn::glorot("node.w", h,
                       static_cast<Eigen::Index>(config_.node_label_count()),
                       rng_);
  b_node_ = nn::zeros("node.b", 1,
                      static_cast<Eigen::Index>(config_.node_label_count()));
  anchor_ = nn::Biaffine::create("anchor", config_.d_query, config_.d_embed, rng_);
  edge_presence_ =
      nn::Biaffine::create("edge_presence", config_.d_query, config_.d_query, rng_);
  if (config_.flavor == GraphFlavor::labeled_edge) {
    for (Role role : all_roles()) {
      edge_label_.push_back(nn::Biaffine::create(
          "edge_label." + std::string(role_name(role)), config_.d_query,
          config_.d_query, rng_));
    }
  }
}

std::vector<ad::Parameter*> ParserModel::parameters() {
  std::vector<ad::Parameter*> out;
  if (encoder_) encoder_->collect_parameters(out);
  out.push_back(&w_query_);
  out.push_back(&b_query_);
  out.push_back(&slot_offset_);
  out.push_back(&root_query_);
  for (auto& block : query_blocks_) block.collect(out);
  out.push_back(&w_node_);
  out.push_back(&b_node_);
  anchor_.collect(out);
  edge_presence_.collect(out);
  for (auto& biaffine : edge_label_) biaffine.collect(out);
  return out;
}

SentenceForward ParserModel::forward(ad::Tape& tape,
                                     const AnnotatedSentence& sentence,
                                     const EmbeddingMatrix* external,
                                     bool train) {
  const std::size_t n = sentence.tokens.size();
  if (n == 0) throw ParserError("sentence \"" + sentence.id + "\" is empty");

  ad::Var embeddings;
  if (external) {
    if (static_cast<std::size_t>(external->values.rows()) != n) {
      throw ParserError("sentence \"" + sentence.id + "\": embedding has " +
                        std::to_string(external->values.rows()) +
                        " rows for " + std::to_string(n) + " tokens");
    }
    if (static_cast<std::size_t>(external->values.cols()) != config_.d_embed) {
      throw ParserError("sentence \"" + sentence.id +
                        "\": embedding dimension " +
                        std::to_string(external->values.cols()) +
                        " does not match configured d_embed " +
                        std::to_string(config_.d_embed));
    }
    embeddings = tape.constant(external->values.cast<double>());
  } else {
    if (!encoder_) {
      throw ParserError("no toy encoder configured and no embedding supplied "
                        "for sentence \"" + sentence.id + "\"");
    }
    try {
      embeddings =
          encoder_->forward(tape, token_ids(sentence.tokens, vocab_), train, rng_);
    } catch (const EmbeddingError& e) {
      throw ParserError("sentence \"" + sentence.id + "\": " + e.what());
    }
  }

  ad::Var projected = tape.add_row_broadcast(tape.matmul(embeddings, tape.param(w_query_)),
                                             tape.param(b_query_));
  const std::size_t q = config_.queries_per_token;
  ad::Var queries;
  if (q == 1) {
    queries = tape.add_row_broadcast(projected, tape.param(slot_offset_));
  } else {
    std::vector<int> token_rows(n * q);
    std::vector<int> slot_rows(n * q);
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t s = 0; s < q; ++s) {
        token_rows[t * q + s] = static_cast<int>(t);
        slot_rows[t * q + s] = static_cast<int>(s);
      }
    }
    queries = tape.add(tape.gather_rows(projected, std::move(token_rows)),
                       tape.gather_rows(tape.param(slot_offset_),
                                        std::move(slot_rows)));
  }

  bool has_root = config_.flavor == GraphFlavor::labeled_edge;
  if (has_root) queries = tape.vstack({queries, tape.param(root_query_)});

  for (auto& block : query_blocks_) {
    queries = block.forward(tape, queries, config_.dropout, train, rng_);
  }
  return {embeddings, queries, n, has_root};
}

ad::Var ParserModel::node_logits(ad::Tape& tape, ad::Var queries) {
  return tape.add_row_broadcast(tape.matmul(queries, tape.param(w_node_)),
                                tape.param(b_node_));
}

ad::Var ParserModel::anchor_logits(ad::Tape& tape, ad::Var queries,
                                   ad::Var embeddings) {
  return anchor_.pairwise(tape, queries, embeddings);
}

ad::Var ParserModel::edge_presence_logits(ad::Tape& tape, ad::Var query_rows) {
  return edge_presence_.pairwise(tape, query_rows, query_rows);
}

ad::Var ParserModel::edge_label_logits(ad::Tape& tape, ad::Var source_rows,
                                       ad::Var target_rows) {
  if (edge_label_.empty())
    throw ParserError("edge labels are only defined for labeled-edge parsing");
  std::vector<ad::Var> columns;
  columns.reserve(edge_label_.size());
  for (auto& biaffine : edge_label_) {
    columns.push_back(biaffine.paired(tape, source_rows, target_rows));
  }
  return tape.hstack(columns);
}

EvalOutputs ParserModel::evaluate(const AnnotatedSentence& sentence,
                                  const EmbeddingMatrix* external) {
  ad::Tape tape;
  auto fwd = forward(tape, sentence, external, /*train=*/false);
  EvalOutputs out;
  out.embeddings = tape.value(fwd.embeddings);
  out.queries = tape.value(fwd.queries);
  out.node_probs = tape.value(tape.softmax_rows(node_logits(tape, fwd.queries)));
  out.anchor_probs = tape.value(
      tape.sigmoid(anchor_logits(tape, fwd.queries, fwd.embeddings)));
  return out;
}

struct ParserModel::SentenceLoss {
  ad::Var total;
  double node = 0.0;
  double anchor = 0.0;
  double edge_presence = 0.0;
  double edge_label = 0.0;
};

ParserModel::SentenceLoss ParserModel::sentence_loss(
    ad::Tape& tape, const TrainingExample& example, bool train) {
  const AnnotatedSentence& sentence = *example.sentence;
  const EventGraph& gold = example.gold;
  auto fwd = forward(tape, sentence, example.embedding, train);

  const std::size_t n = fwd.n_tokens;
  const std::size_t q = config_.queries_per_token;
  const std::size_t total_queries = n * q + (fwd.has_root_query ? 1 : 0);
  auto targets = assign_targets(gold, n, q);

  // Node presence/label term over every query.
  std::vector<int> node_target(total_queries,
                               static_cast<int>(config_.null_label_index()));
  for (const auto& node : gold.nodes) {
    int query = targets.at(node.id);
    if (config_.flavor == GraphFlavor::labeled_edge) {
      node_target[query] = 0;  // the "node" class
    } else {
      node_target[query] = static_cast<int>(*node.label);
    }
  }
  ad::Var loss_node =
      tape.softmax_cross_entropy(node_logits(tape, fwd.queries), node_target);

  SentenceLoss result;
  result.node = tape.scalar(loss_node);
  std::vector<std::pair<double, ad::Var>> terms{{config_.loss_node, loss_node}};

  // Anchor term over the rows of assigned queries (the root row trains
  // towards an empty anchor set).
  if (!gold.nodes.empty()) {
    ad::Mat anchor_target = ad::Mat::Zero(total_queries, n);
    ad::Mat anchor_mask = ad::Mat::Zero(total_queries, n);
    for (const auto& node : gold.nodes) {
      int query = targets.at(node.id);
      anchor_mask.row(query).setOnes();
      if (node.anchor) {
        for (const auto& span : node.anchor->spans) {
          for (std::size_t t = span.start; t < span.end; ++t) {
            anchor_target(query, static_cast<Eigen::Index>(t)) = 1.0;
          }
        }
      }
    }
    ad::Var loss_anchor =
        tape.sigmoid_bce(anchor_logits(tape, fwd.queries, fwd.embeddings),
                         anchor_target, anchor_mask);
    result.anchor = tape.scalar(loss_anchor);
    terms.push_back({config_.loss_anchor, loss_anchor});
  }

  // Edge presence over ordered pairs of gold-node queries (teacher forcing).
  if (gold.nodes.size() >= 2) {
    std::vector<int> rows;
    std::unordered_map<int, int> position;
    rows.reserve(gold.nodes.size());
    for (const auto& node : gold.nodes) {
      position[node.id] = static_cast<int>(rows.size());
      rows.push_back(targets.at(node.id));
    }
    const auto m = static_cast<Eigen::Index>(rows.size());
    ad::Mat adjacency = ad::Mat::Zero(m, m);
    for (const auto& edge : gold.edges) {
      adjacency(position.at(edge.source), position.at(edge.target)) = 1.0;
    }
    ad::Mat mask = ad::Mat::Ones(m, m) - ad::Mat::Identity(m, m);
    ad::Var presence = edge_presence_logits(
        tape, tape.gather_rows(fwd.queries, std::move(rows)));
    ad::Var loss_presence = tape.sigmoid_bce(presence, adjacency, mask);
    result.edge_presence = tape.scalar(loss_presence);
    terms.push_back({config_.loss_edge_presence, loss_presence});
  }

  // Edge label term on gold edges.
  if (config_.flavor == GraphFlavor::labeled_edge && !gold.edges.empty()) {
    std::vector<int> source_rows;
    std::vector<int> target_rows;
    std::vector<int> label_target;
    for (const auto& edge : gold.edges) {
      source_rows.push_back(targets.at(edge.source));
      target_rows.push_back(targets.at(edge.target));
      label_target.push_back(static_cast<int>(*edge.label));
    }
    ad::Var logits = edge_label_logits(
        tape, tape.gather_rows(fwd.queries, std::move(source_rows)),
        tape.gather_rows(fwd.queries, std::move(target_rows)));
    ad::Var loss_label = tape.softmax_cross_entropy(logits, label_target);
    result.edge_label = tape.scalar(loss_label);
    terms.push_back({config_.loss_edge_label, loss_label});
  }

  result.total = tape.weighted_sum(terms);
  return result;
}

LossBreakdown ParserModel::compute_loss(std::span<const TrainingExample> batch,
                                        bool train, bool accumulate_gradients) {
  LossBreakdown sums;
  if (batch.empty()) return sums;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const auto& example : batch) {
    ad::Tape tape;
    auto sl = sentence_loss(tape, example, train);
    sums.total += tape.scalar(sl.total);
    sums.node += sl.node;
    sums.anchor += sl.anchor;
    sums.edge_presence += sl.edge_presence;
    sums.edge_label += sl.edge_label;
    if (accumulate_gradients) {
      tape.backward(tape.scale(sl.total, inv));
    }
  }
  sums.total *= inv;
  sums.node *= inv;
  sums.anchor *= inv;
  sums.edge_presence *= inv;
  sums.edge_label *= inv;
  return sums;
}

PredictedGraph ParserModel::predict(const AnnotatedSentence& sentence,
                                    const EmbeddingMatrix* external) {
  ad::Tape tape;
  auto fwd = forward(tape, sentence, external, /*train=*/false);
  const ad::Mat node_probs =
      tape.value(tape.softmax_rows(node_logits(tape, fwd.queries)));
  const ad::Mat anchor_probs = tape.value(
      tape.sigmoid(anchor_logits(tape, fwd.queries, fwd.embeddings)));

  const std::size_t n = fwd.n_tokens;
  const std::size_t n_queries = n * config_.queries_per_token;
  const auto null_index = static_cast<Eigen::Index>(config_.null_label_index());

  struct Candidate {
    int query = 0;
    double score = 0.0;
    std::size_t label = 0;
    std::vector<TokenSpan> spans;
    std::vector<std::size_t> tokens;
  };
  std::vector<Candidate> candidates;
  for (std::size_t qi = 0; qi < n_queries; ++qi) {
    Eigen::Index best = 0;
    double score = node_probs.row(static_cast<Eigen::Index>(qi)).maxCoeff(&best);
    if (best == null_index) continue;
    Candidate cand;
    cand.query = static_cast<int>(qi);
    cand.score = score;
    cand.label = static_cast<std::size_t>(best);
    for (std::size_t t = 0; t < n; ++t) {
      if (anchor_probs(static_cast<Eigen::Index>(qi),
                       static_cast<Eigen::Index>(t)) > config_.anchor_threshold) {
        cand.tokens.push_back(t);
      }
    }
    if (cand.tokens.empty()) continue;
    cand.spans = spans_from_tokens(cand.tokens);
    candidates.push_back(std::move(cand));
  }

  PredictedGraph out;
  out.graph.sentence_id = sentence.id;
  out.graph.flavor = config_.flavor;
  out.graph.n_tokens = n;

  // Prediction-time node material before ids are assigned.
  struct Proto {
    std::optional<Role> label;
    std::vector<TokenSpan> spans;
    int query = 0;
    double score = 0.0;
    bool is_trigger = false;
  };
  std::vector<Proto> protos;

  auto edge_probabilities = [&](const std::vector<int>& rows) {
    return tape.value(tape.sigmoid(edge_presence_logits(
        tape, tape.gather_rows(fwd.queries, rows))));
  };

  switch (config_.flavor) {
    case GraphFlavor::node_centric: {
      const Candidate* best_trigger = nullptr;
      std::vector<std::size_t> trigger_tokens;
      double trigger_score = 0.0;
      for (const auto& cand : candidates) {
        if (cand.label != kTriggerIndex) continue;
        trigger_tokens.insert(trigger_tokens.end(), cand.tokens.begin(),
                              cand.tokens.end());
        if (!best_trigger || cand.score > best_trigger->score) {
          best_trigger = &cand;
        }
        trigger_score = std::max(trigger_score, cand.score);
      }
      if (best_trigger) {
        std::sort(trigger_tokens.begin(), trigger_tokens.end());
        trigger_tokens.erase(
            std::unique(trigger_tokens.begin(), trigger_tokens.end()),
            trigger_tokens.end());
        protos.push_back({Role::trigger, spans_from_tokens(trigger_tokens),
                          best_trigger->query, trigger_score, true});
      }
      for (const auto& cand : candidates) {
        if (cand.label == kTriggerIndex) continue;
        protos.push_back({static_cast<Role>(cand.label), cand.spans, cand.query,
                          cand.score, false});
      }
      break;
    }
    case GraphFlavor::node_centric_split: {
      for (const auto& cand : candidates) {
        if (cand.label == kTriggerIndex) {
          // One node per contiguous predicted trigger span.
          for (const auto& span : cand.spans) {
            protos.push_back({Role::trigger, {span}, cand.query, cand.score, true});
          }
        } else {
          protos.push_back({static_cast<Role>(cand.label), cand.spans,
                            cand.query, cand.score, false});
        }
      }
      break;
    }
    case GraphFlavor::labeled_edge: {
      out.graph.nodes.push_back({0, std::nullopt, std::nullopt, true});
      if (candidates.empty()) return out;

      const int root_row = static_cast<int>(n_queries);
      std::vector<int> rows{root_row};
      for (const auto& cand : candidates) rows.push_back(cand.query);
      ad::Mat presence = edge_probabilities(rows);

      // Label distributions for every ordered pair of scoring rows.
      const auto m = static_cast<int>(rows.size());
      std::vector<int> pair_src, pair_tgt;
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) {
          if (i == j) continue;
          pair_src.push_back(rows[i]);
          pair_tgt.push_back(rows[j]);
        }
      }
      ad::Mat labels = tape.value(tape.softmax_rows(edge_label_logits(
          tape, tape.gather_rows(fwd.queries, pair_src),
          tape.gather_rows(fwd.queries, pair_tgt))));
      auto label_row = [&](int i, int j) {
        return i * (m - 1) + (j > i ? j - 1 : j);
      };

      // The trigger is the candidate whose root edge is present and argmax
      // labeled "trigger"; of those, the one the root most strongly selects.
      int trigger = -1;
      for (int k = 1; k < m; ++k) {
        if (presence(0, k) <= config_.edge_threshold) continue;
        Eigen::Index best = 0;
        labels.row(label_row(0, k)).maxCoeff(&best);
        if (static_cast<std::size_t>(best) != kTriggerIndex) continue;
        if (trigger == -1 || presence(0, k) > presence(0, trigger)) trigger = k;
      }

      auto argmax_role_excluding_trigger = [&](int i, int j) {
        Eigen::Index best = -1;
        double best_value = -1.0;
        const auto row = labels.row(label_row(i, j));
        for (Eigen::Index l = 0; l < row.size(); ++l) {
          if (static_cast<std::size_t>(l) == kTriggerIndex) continue;
          if (row(l) > best_value) {
            best_value = row(l);
            best = l;
          }
        }
        return static_cast<Role>(best);
      };

      // Survivors and their attachment; candidates the graph cannot reach
      // above threshold are dropped to keep the schema valid.
      struct Attachment {
        int candidate;       // index into candidates
        bool from_root;
        Role role;
        double presence_score;
      };
      std::vector<Attachment> attachments;
      for (int k = 1; k < m; ++k) {
        int cand_index = k - 1;
        if (k == trigger) {
          attachments.push_back({cand_index, true, Role::trigger, presence(0, k)});
          continue;
        }
        int source = trigger != -1 ? trigger : 0;
        if (presence(source, k) <= config_.edge_threshold) continue;
        attachments.push_back({cand_index, source == 0,
                               argmax_role_excluding_trigger(source, k),
                               presence(source, k)});
      }

      // Assign ids in first-token order.
      std::sort(attachments.begin(), attachments.end(),
                [&](const Attachment& a, const Attachment& b) {
                  auto fa = candidates[a.candidate].spans.front().start;
                  auto fb = candidates[b.candidate].spans.front().start;
                  if (fa != fb) return fa < fb;
                  return candidates[a.candidate].query <
                         candidates[b.candidate].query;
                });
      int trigger_node_id = -1;
      std::unordered_map<int, int> node_of_candidate;
      int next_id = 1;
      for (const auto& att : attachments) {
        const Candidate& cand = candidates[att.candidate];
        GraphNode node;
        node.id = next_id++;
        node.anchor = Anchor{cand.spans};
        out.graph.nodes.push_back(std::move(node));
        node_of_candidate[att.candidate] = out.graph.nodes.back().id;
        out.node_scores[out.graph.nodes.back().id] = cand.score;
        if (att.role == Role::trigger) trigger_node_id = out.graph.nodes.back().id;
      }
      for (const auto& att : attachments) {
        int target = node_of_candidate.at(att.candidate);
        int source = att.from_root ? 0 : trigger_node_id;
        out.graph.edges.push_back({source, target, att.role});
        out.edge_scores[{source, target}] = att.presence_score;
      }
      std::sort(out.graph.edges.begin(), out.graph.edges.end());
      return out;
    }
  }

  // Shared assembly for the node-centric flavors.
  std::sort(protos.begin(), protos.end(), [](const Proto& a, const Proto& b) {
    auto fa = a.spans.front().start;
    auto fb = b.spans.front().start;
    if (fa != fb) return fa < fb;
    return a.query < b.query;
  });
  std::vector<int> trigger_ids;
  std::vector<int> argument_ids;
  std::vector<int> rows;
  std::unordered_map<int, int> row_of_node;
  int next_id = 0;
  for (const auto& proto : protos) {
    GraphNode node;
    node.id = next_id++;
    node.label = proto.label;
    node.anchor = Anchor{proto.spans};
    out.graph.nodes.push_back(std::move(node));
    out.node_scores[out.graph.nodes.back().id] = proto.score;
    row_of_node[out.graph.nodes.back().id] = static_cast<int>(rows.size());
    rows.push_back(proto.query);
    (proto.is_trigger ? trigger_ids : argument_ids)
        .push_back(out.graph.nodes.back().id);
  }

  // Edges are structural in node-centric graphs (trigger -> every argument);
  // the presence head contributes the scores.
  if (!trigger_ids.empty() && !argument_ids.empty()) {
    ad::Mat presence = edge_probabilities(rows);
    for (int t : trigger_ids) {
      for (int a : argument_ids) {
        out.graph.edges.push_back({t, a, std::nullopt});
        out.edge_scores[{t, a}] = presence(row_of_node.at(t), row_of_node.at(a));
      }
    }
  }
  std::sort(out.graph.edges.begin(), out.graph.edges.end());
  return out;
}

}  // namespace evparse
