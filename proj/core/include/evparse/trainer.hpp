#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "evparse/parser.hpp"
#include "evparse/scorer.hpp"

namespace evparse {

struct TrainOptions {
  std::filesystem::path output_dir;  // empty: no checkpoints / metrics files
  bool write_checkpoints = true;
  std::ostream* log = nullptr;
  // Stop once dev macro-F1 (fraction) reaches this value.
  std::optional<double> early_stop_macro;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  LossBreakdown train_loss;
  std::optional<double> dev_macro_f1;  // fraction
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  double best_dev_macro = 0.0;
  std::size_t best_epoch = 0;
};

// Epochs of shuffled minibatch Adam over the training corpus, with per-epoch
// dev evaluation (span macro-F1 of decoded predictions), checkpoints and a
// metrics.jsonl log when output_dir is set. Deterministic given the config
// seed; single-threaded.
TrainResult train_model(ParserModel& model,
                        std::span<const AnnotatedSentence> train,
                        std::span<const AnnotatedSentence> dev,
                        const EmbeddingArchive* archive,
                        const TrainOptions& options);

// Dev-set prediction + scoring used by the trainer and the predict command.
ScoreReport evaluate_model(ParserModel& model,
                           std::span<const AnnotatedSentence> sentences,
                           const EmbeddingArchive* archive);

std::vector<BioTag> predict_tags(ParserModel& model,
                                 const AnnotatedSentence& sentence,
                                 const EmbeddingArchive* archive);

}  // namespace evparse
