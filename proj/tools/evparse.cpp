// Command-line front end: convert / roundtrip-check / stats / train /
// predict / score over the corpus, graph, parser and scorer modules.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "evparse/checkpoint.hpp"
#include "evparse/corpus.hpp"
#include "evparse/graph.hpp"
#include "evparse/parser.hpp"
#include "evparse/scorer.hpp"
#include "evparse/trainer.hpp"

namespace {

using namespace evparse;
using nlohmann::json;
using nlohmann::ordered_json;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

class ValidationFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

CorpusFormat parse_format(const std::string& name) {
  auto format = corpus_format_from_name(name);
  if (!format) {
    throw ValidationFailure("unknown format \"" + name +
                            "\" (expected conll or jsonl)");
  }
  return *format;
}

GraphFlavor parse_flavor(const std::string& name) {
  auto flavor = flavor_from_name(name);
  if (!flavor) {
    throw ValidationFailure(
        "unknown flavor \"" + name +
        "\" (expected labeled-edge, node-centric or node-centric-split)");
  }
  return *flavor;
}

std::vector<AnnotatedSentence> load_with_warning(const std::string& path,
                                                 CorpusFormat format) {
  LoadResult result = load_corpus(path, format);
  if (result.repaired_tags > 0) {
    std::cerr << path << ": repaired " << result.repaired_tags
              << " stray I-tag(s)\n";
  }
  return std::move(result.sentences);
}

std::string thousands(std::size_t value) {
  std::string digits = std::to_string(value);
  std::string out;
  int count = 0;
  for (auto it = digits.rbegin(); it != digits.rend(); ++it) {
    if (count > 0 && count % 3 == 0) out.push_back(',');
    out.push_back(*it);
    ++count;
  }
  return {out.rbegin(), out.rend()};
}

// ---------------------------------------------------------------------------
// Run configuration: JSON config file, overridable by flags (flags win).

struct RunConfig {
  std::string train_path;
  std::string dev_path;
  std::string output_dir = "run";
  std::string embeddings_path;
  std::string provider = "toy";  // "toy" | "archive"
  CorpusFormat format = CorpusFormat::conll;
  ParserConfig parser;
  ToyEncoderConfig encoder;
};

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

RunConfig load_run_config(const std::string& path,
                          std::vector<std::string>& errors) {
  RunConfig config;
  if (path.empty()) return config;
  std::ifstream in(path);
  if (!in) {
    errors.push_back("cannot open config file \"" + path + "\"");
    return config;
  }
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    errors.push_back("config file \"" + path + "\": " + e.what());
    return config;
  }

  try {
    if (j.contains("flavor"))
      config.parser.flavor = parse_flavor(j.at("flavor").get<std::string>());
    if (j.contains("format"))
      config.format = parse_format(j.at("format").get<std::string>());
    if (j.contains("paths")) {
      const json& p = j.at("paths");
      read_field(p, "train", config.train_path);
      read_field(p, "dev", config.dev_path);
      read_field(p, "output_dir", config.output_dir);
      read_field(p, "embeddings", config.embeddings_path);
    }
    if (j.contains("embeddings")) {
      const json& e = j.at("embeddings");
      read_field(e, "provider", config.provider);
      read_field(e, "dim", config.encoder.dim);
      read_field(e, "layers", config.encoder.n_layers);
      read_field(e, "heads", config.encoder.n_heads);
      read_field(e, "max_len", config.encoder.max_len);
    }
    if (j.contains("model")) {
      const json& m = j.at("model");
      read_field(m, "d_query", config.parser.d_query);
      read_field(m, "queries_per_token", config.parser.queries_per_token);
      read_field(m, "query_layers", config.parser.n_query_layers);
      read_field(m, "heads", config.parser.n_heads);
      read_field(m, "anchor_threshold", config.parser.anchor_threshold);
      read_field(m, "edge_threshold", config.parser.edge_threshold);
      if (m.contains("loss_weights")) {
        const json& w = m.at("loss_weights");
        read_field(w, "node", config.parser.loss_node);
        read_field(w, "anchor", config.parser.loss_anchor);
        read_field(w, "edge_presence", config.parser.loss_edge_presence);
        read_field(w, "edge_label", config.parser.loss_edge_label);
      }
    }
    if (j.contains("training")) {
      const json& t = j.at("training");
      read_field(t, "epochs", config.parser.epochs);
      read_field(t, "batch_size", config.parser.batch_size);
      read_field(t, "learning_rate", config.parser.learning_rate);
      read_field(t, "lr_decay", config.parser.lr_decay);
      read_field(t, "warmup_steps", config.parser.warmup_steps);
      read_field(t, "dropout", config.parser.dropout);
      read_field(t, "seed", config.parser.seed);
    }
  } catch (const ValidationFailure& e) {
    errors.push_back(e.what());
  } catch (const json::exception& e) {
    errors.push_back("config file \"" + path + "\": " + e.what());
  }
  return config;
}

// ---------------------------------------------------------------------------
// Subcommands.

int run_convert(const std::string& in_path, const std::string& out_path,
                const std::string& format_name, const std::string& flavor_name) {
  CorpusFormat format = parse_format(format_name);
  GraphFlavor flavor = parse_flavor(flavor_name);
  auto sentences = load_with_warning(in_path, format);
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write \"" + out_path + "\"");
  for (const auto& sentence : sentences) {
    out << serialize_graph(encode(sentence, flavor)) << "\n";
  }
  std::cout << "wrote " << sentences.size() << " graphs to " << out_path
            << "\n";
  return kExitOk;
}

int run_roundtrip_check(const std::string& in_path,
                        const std::string& format_name) {
  auto sentences = load_with_warning(in_path, parse_format(format_name));
  for (const auto& sentence : sentences) {
    for (GraphFlavor flavor :
         {GraphFlavor::labeled_edge, GraphFlavor::node_centric,
          GraphFlavor::node_centric_split}) {
      auto decoded = decode_to_bio(encode(sentence, flavor));
      if (decoded.tags != sentence.tags) {
        std::cerr << "roundtrip failure: sentence \"" << sentence.id
                  << "\" flavor " << evparse::flavor_name(flavor) << "\n";
        return kExitValidation;
      }
    }
  }
  std::cout << "roundtrip ok: " << sentences.size()
            << " sentences x 3 flavors\n";
  return kExitOk;
}

int run_stats(const std::string& in_path, const std::string& format_name,
              const std::string& json_path) {
  auto sentences = load_with_warning(in_path, parse_format(format_name));
  CorpusStats stats = compute_stats(sentences);
  std::cout << "articles (sentences): " << thousands(stats.n_articles) << " ("
            << thousands(stats.n_sentences) << ")\n";
  for (Role role : all_roles()) {
    char line[64];
    std::snprintf(line, sizeof(line), "%-12s %10s\n",
                  std::string(role_name(role)).c_str(),
                  thousands(stats.chunk_counts[static_cast<std::size_t>(role)])
                      .c_str());
    std::cout << line;
  }
  if (!json_path.empty()) {
    ordered_json j;
    j["articles"] = stats.n_articles;
    j["sentences"] = stats.n_sentences;
    for (Role role : all_roles()) {
      j["chunks"][std::string(role_name(role))] =
          stats.chunk_counts[static_cast<std::size_t>(role)];
    }
    std::ofstream out(json_path);
    if (!out) throw std::runtime_error("cannot write \"" + json_path + "\"");
    out << j.dump(2) << "\n";
  }
  return kExitOk;
}

int run_train(const RunConfig& config) {
  std::vector<std::string> errors;
  if (config.train_path.empty()) {
    errors.push_back("paths.train is required");
  } else if (!std::filesystem::exists(config.train_path)) {
    errors.push_back("paths.train \"" + config.train_path + "\" does not exist");
  }
  if (!config.dev_path.empty() && !std::filesystem::exists(config.dev_path)) {
    errors.push_back("paths.dev \"" + config.dev_path + "\" does not exist");
  }
  if (config.provider != "toy" && config.provider != "archive") {
    errors.push_back("embeddings.provider must be \"toy\" or \"archive\"");
  }
  if (config.provider == "archive") {
    if (config.embeddings_path.empty()) {
      errors.push_back("paths.embeddings is required for the archive provider");
    } else if (!std::filesystem::exists(config.embeddings_path)) {
      errors.push_back("paths.embeddings \"" + config.embeddings_path +
                       "\" does not exist");
    }
  }
  ParserConfig parser_config = config.parser;
  if (config.provider == "toy") {
    parser_config.d_embed = config.encoder.dim;
    // vocab_size comes from the training corpus later.
    ToyEncoderConfig check = config.encoder;
    check.vocab_size = 1;
    for (const auto& e : check.validate()) errors.push_back(e);
  }
  for (const auto& e : parser_config.validate()) errors.push_back(e);
  if (!errors.empty()) {
    for (const auto& e : errors) std::cerr << "config error: " << e << "\n";
    return kExitValidation;
  }

  auto train = load_with_warning(config.train_path, config.format);
  std::vector<AnnotatedSentence> dev;
  if (!config.dev_path.empty()) {
    dev = load_with_warning(config.dev_path, config.format);
  }

  std::optional<EmbeddingArchive> archive;
  std::optional<ParserModel> model;
  if (config.provider == "archive") {
    archive = EmbeddingArchive::open(config.embeddings_path);
    parser_config.d_embed = archive->dim();
    model.emplace(parser_config);
  } else {
    model.emplace(parser_config, config.encoder, Vocabulary::build(train));
  }

  TrainOptions options;
  options.output_dir = config.output_dir;
  options.log = &std::cout;
  TrainResult result = train_model(*model, train, dev,
                                   archive ? &*archive : nullptr, options);

  ordered_json summary;
  summary["epochs_run"] = result.history.size();
  summary["best_epoch"] = result.best_epoch;
  summary["best_dev_macro_f1"] = result.best_dev_macro * 100.0;
  std::ofstream summary_out(std::filesystem::path(config.output_dir) /
                            "train_summary.json");
  summary_out << summary.dump(2) << "\n";
  std::cout << "best dev macro-F1 " << result.best_dev_macro * 100.0
            << " at epoch " << result.best_epoch << "\n";
  return kExitOk;
}

int run_predict(const std::string& checkpoint_path, const std::string& in_path,
                const std::string& out_path, const std::string& format_name,
                const std::string& graphs_path,
                const std::string& embeddings_path) {
  CorpusFormat format = parse_format(format_name);
  LoadedCheckpoint loaded = load_checkpoint(checkpoint_path);
  ParserModel& model = loaded.model;

  std::optional<EmbeddingArchive> archive;
  if (!model.has_toy_encoder()) {
    if (embeddings_path.empty()) {
      throw ValidationFailure(
          "checkpoint uses the archive provider: --embeddings is required");
    }
    archive = EmbeddingArchive::open(embeddings_path);
  }

  auto sentences = load_with_warning(in_path, format);
  std::ofstream graphs_out;
  if (!graphs_path.empty()) {
    graphs_out.open(graphs_path);
    if (!graphs_out)
      throw std::runtime_error("cannot write \"" + graphs_path + "\"");
  }

  std::vector<AnnotatedSentence> predicted = sentences;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    const EmbeddingMatrix* external = nullptr;
    if (archive) {
      external = archive->find(sentences[i].id);
      if (!external) {
        throw std::runtime_error("no embedding record for sentence \"" +
                                 sentences[i].id + "\"");
      }
    }
    PredictedGraph graph = model.predict(sentences[i], external);
    predicted[i].tags = decode_to_bio(graph.graph, &graph.node_scores).tags;
    if (graphs_out.is_open()) {
      graphs_out << serialize_graph(graph.graph) << "\n";
    }
  }
  save_corpus(out_path, predicted, format);
  std::cout << "wrote predictions for " << predicted.size() << " sentences to "
            << out_path << "\n";
  return kExitOk;
}

int run_score(const std::string& gold_path, const std::string& pred_path,
              const std::string& format_name, const std::string& pred_format_name,
              const std::string& json_path, const std::string& macro_mode) {
  CorpusFormat gold_format = parse_format(format_name);
  CorpusFormat pred_format =
      pred_format_name.empty() ? gold_format : parse_format(pred_format_name);
  MacroAveraging averaging;
  if (macro_mode == "observed") {
    averaging = MacroAveraging::observed_roles;
  } else if (macro_mode == "all") {
    averaging = MacroAveraging::all_roles;
  } else {
    throw ValidationFailure("unknown --macro mode \"" + macro_mode +
                            "\" (expected observed or all)");
  }

  auto gold = load_with_warning(gold_path, gold_format);
  auto pred = load_with_warning(pred_path, pred_format);
  ScoreReport report = score(gold, pred, averaging);
  std::cout << report_table(report);
  if (!json_path.empty()) {
    std::ofstream out(json_path);
    if (!out) throw std::runtime_error("cannot write \"" + json_path + "\"");
    out << report_json(report) << "\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"token-level event extraction as graph parsing"};
  app.require_subcommand(1);

  std::string format = "conll";
  std::string flavor = "node-centric";

  auto* convert = app.add_subcommand(
      "convert", "encode a BIO corpus as event-graph JSON lines");
  std::string convert_in, convert_out;
  convert->add_option("input", convert_in, "corpus file")->required();
  convert->add_option("output", convert_out, "graph JSONL file")->required();
  convert->add_option("--format", format, "corpus format (conll|jsonl)");
  convert->add_option("--flavor", flavor,
                      "graph flavor (labeled-edge|node-centric|node-centric-split)");

  auto* roundtrip = app.add_subcommand(
      "roundtrip-check", "verify decode(encode(s)) == s for all flavors");
  std::string roundtrip_in;
  roundtrip->add_option("input", roundtrip_in, "corpus file")->required();
  roundtrip->add_option("--format", format, "corpus format (conll|jsonl)");

  auto* stats = app.add_subcommand("stats", "corpus statistics");
  std::string stats_in, stats_json;
  stats->add_option("input", stats_in, "corpus file")->required();
  stats->add_option("--format", format, "corpus format (conll|jsonl)");
  stats->add_option("--json", stats_json, "also write statistics as JSON");

  auto* train = app.add_subcommand("train", "train a parser");
  std::string config_path;
  std::string train_in, dev_in, output_dir, embeddings_path, provider;
  std::optional<std::size_t> epochs, batch_size, seed, query_layers, dim;
  std::optional<double> learning_rate, dropout;
  bool flavor_set = false, format_set = false;
  train->add_option("--config", config_path, "JSON run configuration");
  train->add_option("--train", train_in, "training corpus (overrides config)");
  train->add_option("--dev", dev_in, "development corpus (overrides config)");
  train->add_option("--output-dir", output_dir, "run output directory");
  train->add_option("--embeddings", embeddings_path, "embedding archive path");
  train->add_option("--provider", provider, "embedding provider (toy|archive)");
  train->add_option("--flavor", flavor, "graph flavor")
      ->each([&](const std::string&) { flavor_set = true; });
  train->add_option("--format", format, "corpus format")
      ->each([&](const std::string&) { format_set = true; });
  train->add_option("--epochs", epochs, "training epochs");
  train->add_option("--batch-size", batch_size, "minibatch size");
  train->add_option("--lr", learning_rate, "learning rate");
  train->add_option("--dropout", dropout, "dropout rate");
  train->add_option("--seed", seed, "random seed");
  train->add_option("--dim", dim, "toy encoder / query width");
  train->add_option("--query-layers", query_layers, "query transformer layers");

  auto* predict = app.add_subcommand("predict", "tag a corpus with a checkpoint");
  std::string ckpt_path, predict_in, predict_out, graphs_out, predict_emb;
  predict->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  predict->add_option("input", predict_in, "corpus file")->required();
  predict->add_option("output", predict_out, "predictions file")->required();
  predict->add_option("--format", format, "corpus format (conll|jsonl)");
  predict->add_option("--graphs", graphs_out, "also write predicted graphs");
  predict->add_option("--embeddings", predict_emb,
                      "embedding archive (archive-backed checkpoints)");

  auto* score_cmd = app.add_subcommand("score", "span P/R/F1 of predictions");
  std::string gold_path, pred_path, pred_format, score_json;
  std::string macro_mode = "observed";
  score_cmd->add_option("gold", gold_path, "gold corpus")->required();
  score_cmd->add_option("pred", pred_path, "predicted corpus")->required();
  score_cmd->add_option("--format", format, "corpus format of both files");
  score_cmd->add_option("--pred-format", pred_format,
                        "corpus format of the prediction file, when different");
  score_cmd->add_option("--json", score_json, "also write the report as JSON");
  score_cmd->add_option("--macro", macro_mode,
                        "macro averaging set: observed|all");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*convert) return run_convert(convert_in, convert_out, format, flavor);
    if (*roundtrip) return run_roundtrip_check(roundtrip_in, format);
    if (*stats) return run_stats(stats_in, format, stats_json);
    if (*train) {
      std::vector<std::string> errors;
      RunConfig config = load_run_config(config_path, errors);
      if (!errors.empty()) {
        for (const auto& e : errors) std::cerr << "config error: " << e << "\n";
        return kExitValidation;
      }
      if (!train_in.empty()) config.train_path = train_in;
      if (!dev_in.empty()) config.dev_path = dev_in;
      if (!output_dir.empty()) config.output_dir = output_dir;
      if (!embeddings_path.empty()) config.embeddings_path = embeddings_path;
      if (!provider.empty()) config.provider = provider;
      if (flavor_set) config.parser.flavor = parse_flavor(flavor);
      if (format_set) config.format = parse_format(format);
      if (epochs) config.parser.epochs = *epochs;
      if (batch_size) config.parser.batch_size = *batch_size;
      if (learning_rate) config.parser.learning_rate = *learning_rate;
      if (dropout) {
        config.parser.dropout = *dropout;
        config.encoder.dropout = *dropout;
      }
      if (seed) config.parser.seed = *seed;
      if (dim) {
        config.encoder.dim = *dim;
        config.parser.d_query = *dim;
      }
      if (query_layers) config.parser.n_query_layers = *query_layers;
      return run_train(config);
    }
    if (*predict) {
      return run_predict(ckpt_path, predict_in, predict_out, format, graphs_out,
                         predict_emb);
    }
    if (*score_cmd) {
      return run_score(gold_path, pred_path, format, pred_format, score_json,
                       macro_mode);
    }
  } catch (const ValidationFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
