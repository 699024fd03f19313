#include <random>
#include <set>
#include <thread>

#include "doctest.h"

#include "evparse/checkpoint.hpp"
#include "evparse/parser.hpp"
#include "evparse/trainer.hpp"
#include "testutil.hpp"

using namespace evparse;

namespace {

ParserConfig small_config(GraphFlavor flavor, std::uint64_t seed = 42) {
  ParserConfig config;
  config.flavor = flavor;
  config.d_embed = 16;
  config.d_query = 16;
  config.n_query_layers = 1;
  config.n_heads = 2;
  config.dropout = 0.0;
  config.seed = seed;
  return config;
}

ToyEncoderConfig small_encoder() {
  ToyEncoderConfig config;
  config.dim = 16;
  config.n_layers = 1;
  config.n_heads = 2;
  config.dropout = 0.0;
  return config;
}

ParserModel toy_model(GraphFlavor flavor,
                      std::span<const AnnotatedSentence> corpus,
                      std::uint64_t seed = 42) {
  return ParserModel(small_config(flavor, seed), small_encoder(),
                     Vocabulary::build(corpus));
}

std::vector<AnnotatedSentence> tiny_corpus() {
  return testutil::template_corpus(12, 99, "u");
}

// All-zero parameters expose the additive structure of the heads.
void zero_parameters(ParserModel& model) {
  for (ad::Parameter* p : model.parameters()) p->value.setZero();
}

}  // namespace

TEST_CASE("query projection shapes") {
  auto corpus = tiny_corpus();
  const auto& sentence = corpus.front();
  const std::size_t n = sentence.tokens.size();

  SUBCASE("node-centric has n*q rows") {
    auto model = toy_model(GraphFlavor::node_centric, corpus);
    EvalOutputs out = model.evaluate(sentence);
    CHECK(out.embeddings.rows() == static_cast<Eigen::Index>(n));
    CHECK(out.embeddings.cols() == 16);
    CHECK(out.queries.rows() == static_cast<Eigen::Index>(n));
    CHECK(out.queries.cols() == 16);
    CHECK(out.anchor_probs.rows() == static_cast<Eigen::Index>(n));
    CHECK(out.anchor_probs.cols() == static_cast<Eigen::Index>(n));
  }

  SUBCASE("labeled-edge appends the root query") {
    auto model = toy_model(GraphFlavor::labeled_edge, corpus);
    EvalOutputs out = model.evaluate(sentence);
    CHECK(out.queries.rows() == static_cast<Eigen::Index>(n + 1));
  }

  SUBCASE("two queries per token") {
    auto config = small_config(GraphFlavor::node_centric);
    config.queries_per_token = 2;
    ParserModel model(config, small_encoder(), Vocabulary::build(corpus));
    EvalOutputs out = model.evaluate(sentence);
    CHECK(out.queries.rows() == static_cast<Eigen::Index>(2 * n));
  }
}

TEST_CASE("zero query layers leave projected queries untouched") {
  auto corpus = tiny_corpus();
  auto config = small_config(GraphFlavor::node_centric);
  config.n_query_layers = 0;
  ParserModel model(config, small_encoder(), Vocabulary::build(corpus));
  EvalOutputs out = model.evaluate(corpus.front());

  // Recompute E * W + b + slot offset directly from the parameters.
  ad::Mat expected = out.embeddings;
  ad::Parameter* w = nullptr;
  ad::Parameter* b = nullptr;
  ad::Parameter* slot = nullptr;
  for (ad::Parameter* p : model.parameters()) {
    if (p->name == "query.w") w = p;
    if (p->name == "query.b") b = p;
    if (p->name == "query.slot_offset") slot = p;
  }
  REQUIRE(w);
  REQUIRE(b);
  REQUIRE(slot);
  ad::Mat q = expected * w->value;
  q.rowwise() += b->value.row(0);
  q.rowwise() += slot->value.row(0);
  CHECK((out.queries - q).cwiseAbs().maxCoeff() < 1e-12);

  auto layered_config = small_config(GraphFlavor::node_centric);
  layered_config.n_query_layers = 2;
  ParserModel layered(layered_config, small_encoder(), Vocabulary::build(corpus));
  EvalOutputs out2 = layered.evaluate(corpus.front());
  CHECK((out2.queries - out2.embeddings * w->value).cwiseAbs().maxCoeff() > 1e-9);
}

TEST_CASE("node distributions are normalized; anchors live in (0,1)") {
  auto corpus = tiny_corpus();
  auto model = toy_model(GraphFlavor::node_centric, corpus);
  EvalOutputs out = model.evaluate(corpus.front());
  CHECK(out.node_probs.cols() == 8);  // 7 roles + null
  for (Eigen::Index r = 0; r < out.node_probs.rows(); ++r) {
    CHECK(out.node_probs.row(r).sum() == doctest::Approx(1.0).epsilon(1e-6));
  }
  CHECK(out.anchor_probs.minCoeff() > 0.0);
  CHECK(out.anchor_probs.maxCoeff() < 1.0);
}

TEST_CASE("zero parameters give uniform node and half anchor probabilities") {
  auto corpus = tiny_corpus();
  auto model = toy_model(GraphFlavor::node_centric, corpus);
  zero_parameters(model);
  EvalOutputs out = model.evaluate(corpus.front());
  CHECK(out.node_probs.minCoeff() == doctest::Approx(0.125).epsilon(1e-9));
  CHECK(out.node_probs.maxCoeff() == doctest::Approx(0.125).epsilon(1e-9));
  CHECK(out.anchor_probs.minCoeff() == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(out.anchor_probs.maxCoeff() == doctest::Approx(0.5).epsilon(1e-9));

  // Edge presence before any masking is sigmoid(0) = 0.5 as well.
  ad::Tape tape;
  auto fwd = model.forward(tape, corpus.front(), nullptr, false);
  std::vector<int> rows{0, 1, 2};
  ad::Mat presence = tape.value(tape.sigmoid(model.edge_presence_logits(
      tape, tape.gather_rows(fwd.queries, rows))));
  CHECK(presence.minCoeff() == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(presence.maxCoeff() == doctest::Approx(0.5).epsilon(1e-9));

  // An all-zero model predicts nothing but still yields a schema-valid graph.
  PredictedGraph predicted = model.predict(corpus.front());
  CHECK(validate_graph(predicted.graph).empty());
  CHECK(predicted.graph.nodes.empty());
}

TEST_CASE("output shapes follow the configuration on random configs") {
  std::mt19937_64 rng(97);
  auto corpus = tiny_corpus();
  std::uniform_int_distribution<std::size_t> dim_pick(1, 4);
  std::uniform_int_distribution<std::size_t> q_pick(1, 3);
  std::uniform_int_distribution<std::size_t> layers_pick(0, 2);
  std::uniform_int_distribution<int> flavor_pick(0, 2);
  for (int it = 0; it < 8; ++it) {
    ParserConfig config;
    config.flavor = static_cast<GraphFlavor>(flavor_pick(rng));
    config.n_heads = dim_pick(rng);
    config.d_query = config.n_heads * 4 * dim_pick(rng);
    config.queries_per_token = q_pick(rng);
    config.n_query_layers = layers_pick(rng);
    config.dropout = 0.0;
    config.seed = 200 + it;
    ToyEncoderConfig encoder;
    encoder.n_heads = 2;
    encoder.dim = 8 * dim_pick(rng);
    encoder.n_layers = layers_pick(rng);
    encoder.dropout = 0.0;
    config.d_embed = encoder.dim;
    ParserModel model(config, encoder, Vocabulary::build(corpus));
    const auto& sentence = corpus[it % corpus.size()];
    const auto n = static_cast<Eigen::Index>(sentence.tokens.size());
    const auto q = static_cast<Eigen::Index>(config.queries_per_token);
    const Eigen::Index root = config.flavor == GraphFlavor::labeled_edge ? 1 : 0;
    EvalOutputs out = model.evaluate(sentence);
    CAPTURE(it);
    CHECK(out.embeddings.rows() == n);
    CHECK(out.embeddings.cols() == static_cast<Eigen::Index>(encoder.dim));
    CHECK(out.queries.rows() == n * q + root);
    CHECK(out.queries.cols() == static_cast<Eigen::Index>(config.d_query));
    CHECK(out.node_probs.rows() == n * q + root);
    CHECK(out.node_probs.cols() ==
          static_cast<Eigen::Index>(config.node_label_count()));
    CHECK(out.anchor_probs.rows() == n * q + root);
    CHECK(out.anchor_probs.cols() == n);
  }
}

TEST_CASE("assign_targets follows the first-token rule") {
  AnnotatedSentence s;
  s.id = "t";
  s.tokens = {"a", "b", "c", "d", "e"};
  s.tags = {BioTag::outside(), BioTag::begin(Role::trigger), BioTag::outside(),
            BioTag::begin(Role::trigger), BioTag::begin(Role::place)};

  SUBCASE("merged trigger maps to its first span's first token") {
    EventGraph g = encode(s, GraphFlavor::node_centric);
    auto targets = assign_targets(g, 5, 1);
    const GraphNode* trigger = nullptr;
    for (const auto& n : g.nodes) {
      if (n.label == Role::trigger) trigger = &n;
    }
    REQUIRE(trigger);
    CHECK(targets.at(trigger->id) == 1);
  }

  SUBCASE("root maps to the extra query at n*q") {
    EventGraph g = encode(s, GraphFlavor::labeled_edge);
    auto targets = assign_targets(g, 5, 1);
    CHECK(targets.at(0) == 5);
    auto targets_q2 = assign_targets(g, 5, 2);
    CHECK(targets_q2.at(0) == 10);
  }

  SUBCASE("injectivity on random gold graphs") {
    std::mt19937_64 rng(7);
    for (int it = 0; it < 1000; ++it) {
      auto sentence = testutil::random_sentence(rng, "i" + std::to_string(it));
      for (GraphFlavor f :
           {GraphFlavor::labeled_edge, GraphFlavor::node_centric,
            GraphFlavor::node_centric_split}) {
        EventGraph g = encode(sentence, f);
        auto targets = assign_targets(g, sentence.tokens.size(), 1);
        std::set<int> queries;
        for (const auto& [node, query] : targets) queries.insert(query);
        CHECK(queries.size() == targets.size());
      }
    }
  }
}

TEST_CASE("loss behaviour") {
  auto corpus = tiny_corpus();

  SUBCASE("zero loss weights give zero total") {
    auto config = small_config(GraphFlavor::node_centric);
    config.loss_node = 0.0;
    config.loss_anchor = 0.0;
    config.loss_edge_presence = 0.0;
    config.loss_edge_label = 0.0;
    ParserModel model(config, small_encoder(), Vocabulary::build(corpus));
    auto examples = testutil::make_examples(corpus, config.flavor);
    LossBreakdown loss = model.compute_loss(examples, false, false);
    CHECK(loss.total == 0.0);
  }

  SUBCASE("loss is finite and positive on all flavors") {
    for (GraphFlavor f : {GraphFlavor::labeled_edge, GraphFlavor::node_centric,
                          GraphFlavor::node_centric_split}) {
      CAPTURE(flavor_name(f));
      auto model = toy_model(f, corpus);
      auto examples = testutil::make_examples(corpus, f);
      LossBreakdown loss = model.compute_loss(examples, false, false);
      CHECK(loss.finite());
      CHECK(loss.total > 0.0);
      CHECK(loss.node > 0.0);
    }
  }

  SUBCASE("determinism: same seed, same first loss") {
    for (int run = 0; run < 2; ++run) {
      static double first = 0.0;
      auto model = toy_model(GraphFlavor::node_centric, corpus, 123);
      auto examples = testutil::make_examples(corpus, GraphFlavor::node_centric);
      double total = model.compute_loss(examples, false, false).total;
      if (run == 0) {
        first = total;
      } else {
        CHECK(total == first);
      }
    }
  }
}

TEST_CASE("gradients match finite differences on small instances") {
  // Quick per-flavor sanity pass; the acceptance suite runs the full battery.
  std::mt19937_64 rng(31);
  for (GraphFlavor f : {GraphFlavor::labeled_edge, GraphFlavor::node_centric,
                        GraphFlavor::node_centric_split}) {
    CAPTURE(flavor_name(f));
    std::vector<AnnotatedSentence> sentences;
    for (int i = 0; i < 2; ++i) {
      sentences.push_back(
          testutil::random_sentence(rng, "g" + std::to_string(i), 2, 5, 2));
    }
    ParserConfig config;
    config.flavor = f;
    config.d_embed = 8;
    config.d_query = 8;
    config.n_query_layers = 1;
    config.n_heads = 2;
    config.dropout = 0.0;
    ToyEncoderConfig encoder;
    encoder.dim = 8;
    encoder.n_layers = 1;
    encoder.n_heads = 2;
    encoder.dropout = 0.0;
    ParserModel model(config, encoder, Vocabulary::build(sentences));
    auto examples = testutil::make_examples(sentences, f);
    auto result = testutil::finite_difference_check(model, examples, 1e-5, 20);
    CAPTURE(result.worst_parameter);
    CHECK(result.max_rel_err < 1e-4);
  }
}

TEST_CASE("predictions satisfy the flavor schema under random parameters") {
  std::mt19937_64 rng(53);
  auto corpus = tiny_corpus();
  for (GraphFlavor f : {GraphFlavor::labeled_edge, GraphFlavor::node_centric,
                        GraphFlavor::node_centric_split}) {
    CAPTURE(flavor_name(f));
    for (std::uint64_t seed = 1; seed <= 6; ++seed) {
      auto model = toy_model(f, corpus, seed);
      // Random larger-scale heads so node/anchor decisions vary.
      for (ad::Parameter* p : model.parameters()) p->value *= 3.0;
      for (const auto& sentence : corpus) {
        PredictedGraph predicted = model.predict(sentence);
        auto violations = validate_graph(predicted.graph);
        CAPTURE(sentence.id);
        CAPTURE(serialize_graph(predicted.graph));
        CHECK(violations.empty());
        for (const auto& [id, score] : predicted.node_scores) {
          CHECK(score >= 0.0);
          CHECK(score <= 1.0);
        }
        for (const auto& [pair, score] : predicted.edge_scores) {
          CHECK(score >= 0.0);
          CHECK(score <= 1.0);
        }
        // Contract chaining: decoding a prediction yields valid BIO of the
        // right length.
        auto decoded = decode_to_bio(predicted.graph, &predicted.node_scores);
        CHECK(decoded.tags.size() == sentence.tokens.size());
      }
    }
  }
}

TEST_CASE("edge probabilities respect the constraint mask at decode") {
  // Whatever the presence head says, node-centric decoded edges only run
  // trigger -> argument.
  auto corpus = tiny_corpus();
  auto model = toy_model(GraphFlavor::node_centric, corpus, 7);
  for (const auto& sentence : corpus) {
    PredictedGraph predicted = model.predict(sentence);
    const GraphNode* trigger = nullptr;
    for (const auto& n : predicted.graph.nodes) {
      if (n.label == Role::trigger) trigger = &n;
    }
    for (const auto& e : predicted.graph.edges) {
      REQUIRE(trigger != nullptr);
      CHECK(e.source == trigger->id);
      CHECK(e.target != trigger->id);
    }
  }
}

TEST_CASE("concurrent prediction over distinct sentences matches sequential") {
  auto corpus = testutil::template_corpus(24, 61, "th");
  auto model = toy_model(GraphFlavor::node_centric, corpus, 9);

  std::vector<EventGraph> sequential;
  for (const auto& sentence : corpus) {
    sequential.push_back(model.predict(sentence).graph);
  }

  std::vector<EventGraph> parallel(corpus.size());
  std::vector<std::thread> workers;
  const std::size_t n_workers = 4;
  for (std::size_t w = 0; w < n_workers; ++w) {
    workers.emplace_back([&, w] {
      for (std::size_t i = w; i < corpus.size(); i += n_workers) {
        parallel[i] = model.predict(corpus[i]).graph;
      }
    });
  }
  for (auto& worker : workers) worker.join();

  for (std::size_t i = 0; i < corpus.size(); ++i) {
    CHECK(structurally_equal(sequential[i], parallel[i]));
  }
}

TEST_CASE("archive rows behave like the toy encoder that produced them") {
  // Provider interchangeability: feeding the toy encoder's own outputs back
  // through the archive path must reproduce the head probabilities up to
  // float32 storage rounding.
  auto corpus = tiny_corpus();
  auto model = toy_model(GraphFlavor::node_centric, corpus);

  std::vector<EmbeddingMatrix> records;
  // Rebuild encode output through the public eval path.
  for (const auto& sentence : corpus) {
    EvalOutputs out = model.evaluate(sentence);
    EmbeddingMatrix m;
    m.sentence_id = sentence.id;
    m.values = out.embeddings.cast<float>();
    records.push_back(std::move(m));
  }
  auto dir = std::filesystem::temp_directory_path() / "evparse-tests";
  std::filesystem::create_directories(dir);
  auto path = dir / "provider.egemb";
  write_archive(path, records);
  EmbeddingArchive archive = EmbeddingArchive::open(path);

  for (std::size_t i = 0; i < corpus.size(); ++i) {
    EvalOutputs toy_out = model.evaluate(corpus[i]);
    EvalOutputs archive_out = model.evaluate(corpus[i], archive.find(corpus[i].id));
    CHECK((toy_out.node_probs - archive_out.node_probs).cwiseAbs().maxCoeff() <
          1e-4);
    CHECK((toy_out.anchor_probs - archive_out.anchor_probs)
              .cwiseAbs()
              .maxCoeff() < 1e-4);
  }
}

TEST_CASE("two queries per token train and predict within schema") {
  auto corpus = tiny_corpus();
  auto config = small_config(GraphFlavor::node_centric, 77);
  config.queries_per_token = 2;
  ParserModel model(config, small_encoder(), Vocabulary::build(corpus));
  auto examples = testutil::make_examples(corpus, config.flavor);

  auto fd = testutil::finite_difference_check(model, {&examples[0], 1}, 1e-5, 10);
  CAPTURE(fd.worst_parameter);
  CHECK(fd.max_rel_err < 1e-4);

  for (ad::Parameter* p : model.parameters()) p->value *= 3.0;
  for (const auto& sentence : corpus) {
    PredictedGraph predicted = model.predict(sentence);
    CHECK(validate_graph(predicted.graph).empty());
  }
}

TEST_CASE("decode clips spans that overrun the sentence") {
  EventGraph g;
  g.flavor = GraphFlavor::node_centric;
  g.n_tokens = 3;
  g.nodes.push_back({0, Role::place, Anchor{{{1, 9}}}, false});
  auto decoded = decode_to_bio(g);
  CHECK(decoded.tags ==
        std::vector<BioTag>{BioTag::outside(), BioTag::begin(Role::place),
                            BioTag::inside(Role::place)});
}

TEST_CASE("checkpointed models predict identically") {
  auto corpus = tiny_corpus();
  auto model = toy_model(GraphFlavor::node_centric, corpus);
  auto dir = std::filesystem::temp_directory_path() / "evparse-tests";
  std::filesystem::create_directories(dir);
  auto path = dir / "model.ckpt";

  // A couple of training steps so parameters deviate from init.
  auto examples = testutil::make_examples(corpus, GraphFlavor::node_centric);
  nn::AdamOptimizer adam(model.parameters(), 1e-3);
  for (int step = 0; step < 3; ++step) {
    adam.zero_grad();
    model.compute_loss(examples, true, true);
    adam.step();
  }

  save_checkpoint(path, model, 3);
  LoadedCheckpoint loaded = load_checkpoint(path);
  CHECK(loaded.epoch == 3);
  CHECK(loaded.model.config().flavor == GraphFlavor::node_centric);
  CHECK(loaded.model.vocab().size() == model.vocab().size());

  // float32 storage rounds both sides the same way only if we compare the
  // reloaded model against a save/load round trip of itself.
  save_checkpoint(path, loaded.model, 3);
  LoadedCheckpoint twice = load_checkpoint(path);
  for (const auto& sentence : corpus) {
    PredictedGraph a = loaded.model.predict(sentence);
    PredictedGraph b = twice.model.predict(sentence);
    CHECK(structurally_equal(a.graph, b.graph));
  }
}
