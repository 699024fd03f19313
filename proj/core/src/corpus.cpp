#include "evparse/corpus.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "evparse/scorer.hpp"

namespace evparse {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

std::string position(std::string_view source, std::size_t line) {
  return std::string(source) + ":" + std::to_string(line);
}

[[noreturn]] void fail(std::string_view source, std::size_t line,
                       const std::string& message) {
  throw CorpusError(position(source, line) + ": " + message);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

// Parses "<key> = <value>" comment payloads ("# id = s1", "# doc = d7").
std::optional<std::string> comment_value(std::string_view body,
                                         std::string_view key) {
  body = trim(body);
  if (body.substr(0, key.size()) != key) return std::nullopt;
  body.remove_prefix(key.size());
  body = trim(body);
  if (body.empty() || body.front() != '=') return std::nullopt;
  body.remove_prefix(1);
  return std::string(trim(body));
}

BioTag parse_tag_or_fail(std::string_view text, std::string_view source,
                         std::size_t line) {
  auto tag = bio_tag_from_string(text);
  if (!tag) fail(source, line, "unknown tag \"" + std::string(text) + "\"");
  return *tag;
}

LoadResult read_conll(std::istream& in, std::string_view source) {
  LoadResult result;
  std::vector<std::string> tokens;
  std::vector<BioTag> tags;
  std::optional<std::string> pending_id;
  std::string pending_doc;
  std::size_t line_no = 0;
  std::size_t first_line = 0;

  auto flush = [&] {
    if (tokens.empty()) return;
    AnnotatedSentence sentence;
    sentence.id = pending_id ? *pending_id
                             : "s" + std::to_string(result.sentences.size());
    sentence.doc_id = pending_doc;
    sentence.tokens = std::move(tokens);
    sentence.tags = std::move(tags);
    result.repaired_tags += repair_bio(sentence.tags);
    result.sentences.push_back(std::move(sentence));
    tokens.clear();
    tags.clear();
    pending_id.reset();
    pending_doc.clear();
  };

  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

    if (line.empty()) {
      flush();
      continue;
    }
    // A comment line starts with '#' and carries no tab; "#<TAB>O" is a token.
    if (line.front() == '#' && line.find('\t') == std::string_view::npos) {
      std::string_view body = line.substr(1);
      if (auto id = comment_value(body, "id")) {
        pending_id = *id;
      } else if (auto doc = comment_value(body, "doc")) {
        pending_doc = *doc;
      }
      continue;
    }
    if (tokens.empty()) first_line = line_no;
    auto tab = line.find('\t');
    if (tab == std::string_view::npos) {
      // Token-only line: unannotated input (prediction time), tag defaults to O.
      tokens.emplace_back(line);
      tags.push_back(BioTag::outside());
      continue;
    }
    std::string_view token = line.substr(0, tab);
    std::string_view tag_text = trim(line.substr(tab + 1));
    if (token.empty()) fail(source, line_no, "empty token");
    if (tag_text.empty()) fail(source, line_no, "missing tag");
    tokens.emplace_back(token);
    tags.push_back(parse_tag_or_fail(tag_text, source, line_no));
  }
  (void)first_line;
  flush();
  return result;
}

LoadResult read_jsonl(std::istream& in, std::string_view source) {
  LoadResult result;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = trim(raw);
    if (line.empty()) continue;

    json record;
    try {
      record = json::parse(line);
    } catch (const json::exception& e) {
      fail(source, line_no, std::string("malformed JSON: ") + e.what());
    }
    if (!record.is_object()) fail(source, line_no, "record is not an object");

    AnnotatedSentence sentence;
    if (!record.contains("id") || !record["id"].is_string())
      fail(source, line_no, "missing string field \"id\"");
    sentence.id = record["id"].get<std::string>();

    if (record.contains("doc")) {
      if (!record["doc"].is_string())
        fail(source, line_no, "field \"doc\" must be a string");
      sentence.doc_id = record["doc"].get<std::string>();
    }
    if (record.contains("lang")) {
      if (!record["lang"].is_string())
        fail(source, line_no, "field \"lang\" must be a string");
      auto lang = language_from_code(record["lang"].get<std::string>());
      if (!lang)
        fail(source, line_no,
             "unknown language \"" + record["lang"].get<std::string>() + "\"");
      sentence.language = lang;
    }

    if (!record.contains("tokens") || !record["tokens"].is_array())
      fail(source, line_no, "missing array field \"tokens\"");
    for (const auto& tok : record["tokens"]) {
      if (!tok.is_string() || tok.get<std::string>().empty())
        fail(source, line_no, "tokens must be non-empty strings");
      sentence.tokens.push_back(tok.get<std::string>());
    }
    if (sentence.tokens.empty()) fail(source, line_no, "empty token list");

    if (record.contains("labels")) {
      if (!record["labels"].is_array())
        fail(source, line_no, "field \"labels\" must be an array");
      for (const auto& label : record["labels"]) {
        if (!label.is_string())
          fail(source, line_no, "labels must be strings");
        sentence.tags.push_back(
            parse_tag_or_fail(label.get<std::string>(), source, line_no));
      }
      if (sentence.tags.size() != sentence.tokens.size())
        fail(source, line_no,
             "token/label length mismatch (" +
                 std::to_string(sentence.tokens.size()) + " tokens, " +
                 std::to_string(sentence.tags.size()) + " labels)");
    } else {
      // Unannotated input (prediction time).
      sentence.tags.assign(sentence.tokens.size(), BioTag::outside());
    }

    result.repaired_tags += repair_bio(sentence.tags);
    result.sentences.push_back(std::move(sentence));
  }
  return result;
}

void write_conll(std::ostream& out,
                 std::span<const AnnotatedSentence> sentences) {
  for (const auto& sentence : sentences) {
    out << "# id = " << sentence.id << "\n";
    if (!sentence.doc_id.empty()) out << "# doc = " << sentence.doc_id << "\n";
    for (std::size_t i = 0; i < sentence.tokens.size(); ++i) {
      out << sentence.tokens[i] << '\t' << to_string(sentence.tags[i]) << "\n";
    }
    out << "\n";
  }
}

void write_jsonl(std::ostream& out,
                 std::span<const AnnotatedSentence> sentences) {
  for (const auto& sentence : sentences) {
    ordered_json record;
    record["id"] = sentence.id;
    if (!sentence.doc_id.empty()) record["doc"] = sentence.doc_id;
    if (sentence.language)
      record["lang"] = std::string(language_code(*sentence.language));
    record["tokens"] = sentence.tokens;
    json labels = json::array();
    for (const auto& tag : sentence.tags) labels.push_back(to_string(tag));
    record["labels"] = std::move(labels);
    out << record.dump() << "\n";
  }
}

}  // namespace

std::string_view language_code(Language lang) {
  switch (lang) {
    case Language::en: return "en";
    case Language::es: return "es";
    case Language::pt: return "pt";
  }
  return "en";
}

std::optional<Language> language_from_code(std::string_view code) {
  if (code == "en") return Language::en;
  if (code == "es") return Language::es;
  if (code == "pt") return Language::pt;
  return std::nullopt;
}

std::string_view corpus_format_name(CorpusFormat format) {
  return format == CorpusFormat::conll ? "conll" : "jsonl";
}

std::optional<CorpusFormat> corpus_format_from_name(std::string_view name) {
  if (name == "conll") return CorpusFormat::conll;
  if (name == "jsonl") return CorpusFormat::jsonl;
  return std::nullopt;
}

std::size_t repair_bio(std::vector<BioTag>& tags) {
  std::size_t repaired = 0;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (tags[i].kind != BioTag::Kind::I) continue;
    bool continues = i > 0 && !tags[i - 1].is_outside() &&
                     tags[i - 1].role == tags[i].role;
    if (!continues) {
      tags[i].kind = BioTag::Kind::B;
      ++repaired;
    }
  }
  return repaired;
}

LoadResult load_corpus(const std::filesystem::path& path, CorpusFormat format) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open \"" + path.string() + "\"");
  return read_corpus(in, format, path.string());
}

LoadResult read_corpus(std::istream& in, CorpusFormat format,
                       std::string_view source_name) {
  return format == CorpusFormat::conll ? read_conll(in, source_name)
                                       : read_jsonl(in, source_name);
}

void save_corpus(const std::filesystem::path& path,
                 std::span<const AnnotatedSentence> sentences,
                 CorpusFormat format) {
  std::ofstream out(path);
  if (!out) throw CorpusError("cannot write \"" + path.string() + "\"");
  write_corpus(out, sentences, format);
}

void write_corpus(std::ostream& out,
                  std::span<const AnnotatedSentence> sentences,
                  CorpusFormat format) {
  if (format == CorpusFormat::conll) {
    write_conll(out, sentences);
  } else {
    write_jsonl(out, sentences);
  }
}

CorpusStats compute_stats(std::span<const AnnotatedSentence> corpus) {
  CorpusStats stats;
  stats.n_sentences = corpus.size();
  std::set<std::string> docs;
  for (const auto& sentence : corpus) {
    if (!sentence.doc_id.empty()) docs.insert(sentence.doc_id);
    for (const auto& chunk : extract_chunks(sentence.tags)) {
      ++stats.chunk_counts[static_cast<std::size_t>(chunk.role)];
    }
  }
  stats.n_articles = docs.size();
  return stats;
}

}  // namespace evparse
