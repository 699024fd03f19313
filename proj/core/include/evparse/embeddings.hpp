#pragma once

#include <Eigen/Dense>

#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "evparse/corpus.hpp"
#include "evparse/nn.hpp"

namespace evparse {

// One contextual embedding row per task token, float32.
struct EmbeddingMatrix {
  std::string sentence_id;
  Eigen::MatrixXf values;  // n_tokens x dim
};

class EmbeddingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Token -> id map with id 0 reserved for unknowns. Ids follow first
// occurrence order over the build corpus, so construction is deterministic.
class Vocabulary {
 public:
  Vocabulary();

  static Vocabulary build(std::span<const AnnotatedSentence> corpus);
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  int id_of(std::string_view token) const;  // 0 when unknown
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  static constexpr int kUnkId = 0;
  static constexpr std::string_view kUnkToken = "<unk>";

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

struct ToyEncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t dim = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  double dropout = 0.1;
  std::size_t max_len = 512;

  std::vector<std::string> validate() const;
};

// Desk-scale contextual encoder: token embedding + sinusoidal positions +
// pre-norm self-attention blocks. Stands in for a pretrained model behind
// the same per-token embedding contract.
class ToyEncoder {
 public:
  ToyEncoder(ToyEncoderConfig config, std::mt19937_64& rng);

  const ToyEncoderConfig& config() const { return config_; }

  // Differentiable forward over token ids, (n, dim).
  ad::Var forward(ad::Tape& tape, std::span<const int> token_ids, bool train,
                  std::mt19937_64& rng);

  // Deterministic eval-mode encoding of one sentence.
  EmbeddingMatrix encode(std::string_view sentence_id,
                         std::span<const std::string> tokens,
                         const Vocabulary& vocab);

  void collect_parameters(std::vector<ad::Parameter*>& out);

 private:
  ToyEncoderConfig config_;
  ad::Parameter token_embedding_;  // vocab_size x dim
  std::vector<nn::TransformerBlock> blocks_;

  ad::Mat positional_encoding(std::size_t n) const;
};

std::vector<int> token_ids(std::span<const std::string> tokens,
                           const Vocabulary& vocab);

}  // namespace evparse
