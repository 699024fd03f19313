#include "evparse/embeddings.hpp"

#include <cmath>

namespace evparse {

Vocabulary::Vocabulary() {
  tokens_.emplace_back(kUnkToken);
  ids_.emplace(std::string(kUnkToken), kUnkId);
}

Vocabulary Vocabulary::build(std::span<const AnnotatedSentence> corpus) {
  Vocabulary vocab;
  for (const auto& sentence : corpus) {
    for (const auto& token : sentence.tokens) {
      if (vocab.ids_.emplace(token, static_cast<int>(vocab.tokens_.size())).second) {
        vocab.tokens_.push_back(token);
      }
    }
  }
  return vocab;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  if (tokens.empty() || tokens.front() != kUnkToken) {
    throw EmbeddingError("vocabulary must start with " + std::string(kUnkToken));
  }
  Vocabulary vocab;
  vocab.tokens_ = std::move(tokens);
  vocab.ids_.clear();
  for (std::size_t i = 0; i < vocab.tokens_.size(); ++i) {
    if (!vocab.ids_.emplace(vocab.tokens_[i], static_cast<int>(i)).second) {
      throw EmbeddingError("duplicate vocabulary token \"" + vocab.tokens_[i] +
                           "\"");
    }
  }
  return vocab;
}

int Vocabulary::id_of(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnkId : it->second;
}

std::vector<int> token_ids(std::span<const std::string> tokens,
                           const Vocabulary& vocab) {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& token : tokens) ids.push_back(vocab.id_of(token));
  return ids;
}

std::vector<std::string> ToyEncoderConfig::validate() const {
  std::vector<std::string> errors;
  if (vocab_size == 0) errors.push_back("toy encoder: vocab_size must be > 0");
  if (dim == 0) errors.push_back("toy encoder: dim must be > 0");
  if (n_heads == 0 || dim % n_heads != 0)
    errors.push_back("toy encoder: dim must be divisible by n_heads");
  if (dropout < 0.0 || dropout >= 1.0)
    errors.push_back("toy encoder: dropout must be in [0, 1)");
  if (max_len == 0) errors.push_back("toy encoder: max_len must be > 0");
  return errors;
}

ToyEncoder::ToyEncoder(ToyEncoderConfig config, std::mt19937_64& rng)
    : config_(config) {
  auto errors = config_.validate();
  if (!errors.empty()) throw EmbeddingError(errors.front());
  token_embedding_ = nn::glorot("encoder.token_embedding",
                                static_cast<Eigen::Index>(config_.vocab_size),
                                static_cast<Eigen::Index>(config_.dim), rng);
  blocks_.reserve(config_.n_layers);
  for (std::size_t i = 0; i < config_.n_layers; ++i) {
    blocks_.push_back(nn::TransformerBlock::create(
        "encoder.block" + std::to_string(i), config_.dim, config_.n_heads, rng));
  }
}

ad::Mat ToyEncoder::positional_encoding(std::size_t n) const {
  const auto d = static_cast<Eigen::Index>(config_.dim);
  ad::Mat pe(n, d);
  for (Eigen::Index pos = 0; pos < static_cast<Eigen::Index>(n); ++pos) {
    for (Eigen::Index i = 0; i < d; i += 2) {
      double angle = static_cast<double>(pos) /
                     std::pow(10000.0, static_cast<double>(i) /
                                           static_cast<double>(d));
      pe(pos, i) = std::sin(angle);
      if (i + 1 < d) pe(pos, i + 1) = std::cos(angle);
    }
  }
  return pe;
}

ad::Var ToyEncoder::forward(ad::Tape& tape, std::span<const int> token_ids,
                            bool train, std::mt19937_64& rng) {
  if (token_ids.size() > config_.max_len) {
    throw EmbeddingError("sentence of " + std::to_string(token_ids.size()) +
                         " tokens exceeds max_len " +
                         std::to_string(config_.max_len));
  }
  std::vector<int> ids(token_ids.begin(), token_ids.end());
  ad::Var emb = tape.gather_rows(tape.param(token_embedding_), std::move(ids));
  emb = tape.scale(emb, std::sqrt(static_cast<double>(config_.dim)));
  ad::Var x = tape.add(emb, tape.constant(positional_encoding(token_ids.size())));
  x = tape.dropout(x, config_.dropout, rng, train);
  for (auto& block : blocks_) {
    x = block.forward(tape, x, config_.dropout, train, rng);
  }
  return x;
}

EmbeddingMatrix ToyEncoder::encode(std::string_view sentence_id,
                                   std::span<const std::string> tokens,
                                   const Vocabulary& vocab) {
  if (tokens.size() > config_.max_len) {
    throw EmbeddingError("sentence \"" + std::string(sentence_id) + "\" has " +
                         std::to_string(tokens.size()) +
                         " tokens, above max_len " +
                         std::to_string(config_.max_len));
  }
  ad::Tape tape;
  std::mt19937_64 rng(0);  // unused: eval mode runs without dropout
  ad::Var out = forward(tape, token_ids(tokens, vocab), /*train=*/false, rng);
  EmbeddingMatrix result;
  result.sentence_id = std::string(sentence_id);
  result.values = tape.value(out).cast<float>();
  return result;
}

void ToyEncoder::collect_parameters(std::vector<ad::Parameter*>& out) {
  out.push_back(&token_embedding_);
  for (auto& block : blocks_) block.collect(out);
}

}  // namespace evparse
