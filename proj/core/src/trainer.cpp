#include "evparse/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <numeric>
#include <ostream>

#include "json.hpp"

#include "evparse/checkpoint.hpp"
#include "evparse/graph.hpp"

namespace evparse {

namespace {

const EmbeddingMatrix* lookup_embedding(const EmbeddingArchive* archive,
                                        const AnnotatedSentence& sentence) {
  if (!archive) return nullptr;
  const EmbeddingMatrix* found = archive->find(sentence.id);
  if (!found) {
    throw ParserError("no embedding record for sentence \"" + sentence.id +
                      "\"");
  }
  return found;
}

}  // namespace

std::vector<BioTag> predict_tags(ParserModel& model,
                                 const AnnotatedSentence& sentence,
                                 const EmbeddingArchive* archive) {
  PredictedGraph predicted =
      model.predict(sentence, lookup_embedding(archive, sentence));
  return decode_to_bio(predicted.graph, &predicted.node_scores).tags;
}

ScoreReport evaluate_model(ParserModel& model,
                           std::span<const AnnotatedSentence> sentences,
                           const EmbeddingArchive* archive) {
  std::vector<std::vector<BioTag>> predictions;
  predictions.reserve(sentences.size());
  for (const auto& sentence : sentences) {
    predictions.push_back(predict_tags(model, sentence, archive));
  }
  return score(sentences, predictions);
}

TrainResult train_model(ParserModel& model,
                        std::span<const AnnotatedSentence> train,
                        std::span<const AnnotatedSentence> dev,
                        const EmbeddingArchive* archive,
                        const TrainOptions& options) {
  if (train.empty()) throw ParserError("training corpus is empty");
  const ParserConfig& config = model.config();

  std::vector<TrainingExample> examples;
  examples.reserve(train.size());
  for (const auto& sentence : train) {
    TrainingExample example;
    example.sentence = &sentence;
    example.gold = encode(sentence, config.flavor);
    example.embedding = lookup_embedding(archive, sentence);
    examples.push_back(std::move(example));
  }

  nn::AdamOptimizer optimizer(model.parameters(), config.learning_rate);
  std::ofstream metrics_file;
  if (!options.output_dir.empty()) {
    std::filesystem::create_directories(options.output_dir);
    metrics_file.open(options.output_dir / "metrics.jsonl");
  }

  TrainResult result;
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t global_step = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    auto epoch_start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), model.rng());

    LossBreakdown epoch_loss;
    std::size_t n_batches = 0;
    for (std::size_t at = 0; at < order.size(); at += config.batch_size) {
      std::size_t batch_len = std::min(config.batch_size, order.size() - at);
      std::vector<TrainingExample> batch;
      batch.reserve(batch_len);
      for (std::size_t i = 0; i < batch_len; ++i) {
        batch.push_back(examples[order[at + i]]);
      }

      optimizer.zero_grad();
      LossBreakdown loss = model.compute_loss(batch, /*train=*/true,
                                              /*accumulate_gradients=*/true);
      if (!loss.finite()) {
        throw ParserError("non-finite loss in batch " +
                          std::to_string(n_batches) + " of epoch " +
                          std::to_string(epoch));
      }
      ++global_step;
      double lr = config.learning_rate *
                  std::pow(config.lr_decay, static_cast<double>(epoch - 1));
      if (config.warmup_steps > 0 && global_step < config.warmup_steps) {
        lr *= static_cast<double>(global_step) /
              static_cast<double>(config.warmup_steps);
      }
      optimizer.set_learning_rate(lr);
      optimizer.step();

      epoch_loss.total += loss.total;
      epoch_loss.node += loss.node;
      epoch_loss.anchor += loss.anchor;
      epoch_loss.edge_presence += loss.edge_presence;
      epoch_loss.edge_label += loss.edge_label;
      ++n_batches;
    }
    const double inv = 1.0 / static_cast<double>(n_batches);
    epoch_loss.total *= inv;
    epoch_loss.node *= inv;
    epoch_loss.anchor *= inv;
    epoch_loss.edge_presence *= inv;
    epoch_loss.edge_label *= inv;

    EpochMetrics metrics;
    metrics.epoch = epoch;
    metrics.train_loss = epoch_loss;
    if (!dev.empty()) {
      metrics.dev_macro_f1 = evaluate_model(model, dev, archive).macro_f1;
    }
    metrics.seconds = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - epoch_start)
                          .count();

    if (metrics.dev_macro_f1 &&
        (result.history.empty() || *metrics.dev_macro_f1 > result.best_dev_macro)) {
      result.best_dev_macro = *metrics.dev_macro_f1;
      result.best_epoch = epoch;
      if (!options.output_dir.empty() && options.write_checkpoints) {
        save_checkpoint(options.output_dir / "checkpoint-best.bin", model, epoch);
      }
    }
    if (!options.output_dir.empty() && options.write_checkpoints) {
      save_checkpoint(options.output_dir /
                          ("checkpoint-epoch-" + std::to_string(epoch) + ".bin"),
                      model, epoch);
    }
    if (metrics_file.is_open()) {
      nlohmann::ordered_json j;
      j["epoch"] = epoch;
      j["loss"] = {{"total", epoch_loss.total},
                   {"node", epoch_loss.node},
                   {"anchor", epoch_loss.anchor},
                   {"edge_presence", epoch_loss.edge_presence},
                   {"edge_label", epoch_loss.edge_label}};
      if (metrics.dev_macro_f1) j["dev_macro_f1"] = *metrics.dev_macro_f1 * 100.0;
      j["seconds"] = metrics.seconds;
      metrics_file << j.dump() << "\n" << std::flush;
    }
    if (options.log) {
      *options.log << "epoch " << epoch << " loss " << epoch_loss.total;
      if (metrics.dev_macro_f1) {
        *options.log << " dev-macro-f1 " << *metrics.dev_macro_f1 * 100.0;
      }
      *options.log << " (" << metrics.seconds << "s)" << std::endl;
    }
    result.history.push_back(metrics);

    if (options.early_stop_macro && metrics.dev_macro_f1 &&
        *metrics.dev_macro_f1 >= *options.early_stop_macro) {
      break;
    }
  }
  return result;
}

}  // namespace evparse
