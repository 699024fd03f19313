#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "evparse/roles.hpp"

namespace evparse {

enum class Language : std::uint8_t { en = 0, es, pt };

std::string_view language_code(Language lang);
std::optional<Language> language_from_code(std::string_view code);

// One pre-tokenized sentence with per-token role tags.
struct AnnotatedSentence {
  std::string id;
  std::string doc_id;  // empty when absent
  std::optional<Language> language;
  std::vector<std::string> tokens;
  std::vector<BioTag> tags;

  bool operator==(const AnnotatedSentence&) const = default;
};

enum class CorpusFormat : std::uint8_t { conll = 0, jsonl };

std::string_view corpus_format_name(CorpusFormat format);
std::optional<CorpusFormat> corpus_format_from_name(std::string_view name);

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Rewrites every I-tag whose predecessor is not B/I of the same role to a
// B-tag. Returns the number of rewritten tags.
std::size_t repair_bio(std::vector<BioTag>& tags);

struct LoadResult {
  std::vector<AnnotatedSentence> sentences;
  std::size_t repaired_tags = 0;  // warning tally from ingestion repair
};

// Readers validate tokens/tags, repair stray I-tags and keep input order.
// Malformed records raise CorpusError with a <source>:<line> position.
LoadResult load_corpus(const std::filesystem::path& path, CorpusFormat format);
LoadResult read_corpus(std::istream& in, CorpusFormat format,
                       std::string_view source_name = "<stream>");

void save_corpus(const std::filesystem::path& path,
                 std::span<const AnnotatedSentence> sentences,
                 CorpusFormat format);
void write_corpus(std::ostream& out,
                  std::span<const AnnotatedSentence> sentences,
                  CorpusFormat format);

struct CorpusStats {
  std::size_t n_articles = 0;   // distinct non-empty doc ids
  std::size_t n_sentences = 0;
  std::array<std::size_t, kNumRoles> chunk_counts{};

  bool operator==(const CorpusStats&) const = default;
};

// Chunk counts use the same chunk extraction as the scorer.
CorpusStats compute_stats(std::span<const AnnotatedSentence> corpus);

}  // namespace evparse
