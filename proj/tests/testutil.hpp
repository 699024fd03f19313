#pragma once

#include <random>
#include <span>
#include <vector>

#include "evparse/corpus.hpp"
#include "evparse/parser.hpp"
#include "evparse/scorer.hpp"

namespace evparse::testutil {

// Random valid BIO sequence: length in [min_len, max_len], at most
// max_triggers trigger chunks, any of the seven roles, chunks may touch.
std::vector<BioTag> random_bio(std::mt19937_64& rng, std::size_t min_len = 1,
                               std::size_t max_len = 60, int max_triggers = 4);

AnnotatedSentence random_sentence(std::mt19937_64& rng, std::string id,
                                  std::size_t min_len = 1,
                                  std::size_t max_len = 60,
                                  int max_triggers = 4);

// Deterministic synthetic protest-report corpus: templated trigger verbs
// with participant/target/place/etime arguments over a ~200 word vocabulary.
std::vector<AnnotatedSentence> template_corpus(std::size_t n_sentences,
                                               std::uint64_t seed,
                                               const std::string& id_prefix);

// Perturbed copy of gold tags (dropped / moved / relabeled / spurious
// chunks) for scorer tests.
std::vector<BioTag> perturb_tags(std::span<const BioTag> gold,
                                 std::mt19937_64& rng);

// Independent chunk scorer: O(n^2) span enumeration and explicit set
// intersection, sharing no code with scorer.cpp.
ScoreReport brute_force_score(std::span<const AnnotatedSentence> gold,
                              std::span<const std::vector<BioTag>> predicted);

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  std::string worst_parameter;
};

// Central finite differences of the batch loss against analytic gradients.
// Coordinates where both gradients are below 1e-6 are compared absolutely;
// max_coords_per_param = 0 checks every coordinate.
GradCheckResult finite_difference_check(ParserModel& model,
                                        std::span<const TrainingExample> batch,
                                        double step = 1e-5,
                                        std::size_t max_coords_per_param = 0,
                                        std::uint64_t sample_seed = 7);

// Batch over sentences with gold graphs in the model's flavor (toy path).
std::vector<TrainingExample> make_examples(
    std::span<const AnnotatedSentence> sentences, GraphFlavor flavor);

}  // namespace evparse::testutil
