#include "evparse/scorer.hpp"

#include <cstdio>
#include <set>
#include <tuple>

#include "json.hpp"

namespace evparse {

namespace {

constexpr std::array<Role, kNumRoles> kReportOrder = {
    Role::trigger,   Role::target, Role::place, Role::participant,
    Role::organizer, Role::fname,  Role::etime};

double safe_div(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

double f1_of(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

void finalize(RoleScore& s) {
  s.precision = safe_div(static_cast<double>(s.correct),
                         static_cast<double>(s.pred_support));
  s.recall = safe_div(static_cast<double>(s.correct),
                      static_cast<double>(s.gold_support));
  s.f1 = f1_of(s.precision, s.recall);
}

std::string two_decimals(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", fraction * 100.0);
  return buf;
}

}  // namespace

std::vector<RoleChunk> extract_chunks(std::span<const BioTag> tags) {
  std::vector<RoleChunk> chunks;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const BioTag& tag = tags[i];
    if (tag.is_outside()) continue;
    bool continues = tag.kind == BioTag::Kind::I && i > 0 &&
                     !tags[i - 1].is_outside() && tags[i - 1].role == tag.role;
    if (continues) {
      chunks.back().end = i + 1;
    } else {
      chunks.push_back({tag.role, i, i + 1});
    }
  }
  return chunks;
}

ScoreReport score(std::span<const AnnotatedSentence> gold,
                  std::span<const std::vector<BioTag>> predicted,
                  MacroAveraging averaging) {
  if (gold.size() != predicted.size()) {
    throw ScoreError("gold has " + std::to_string(gold.size()) +
                     " sentences, prediction has " +
                     std::to_string(predicted.size()));
  }
  ScoreReport report;
  report.averaging = averaging;
  for (std::size_t s = 0; s < gold.size(); ++s) {
    if (gold[s].tokens.size() != predicted[s].size()) {
      throw ScoreError("sentence \"" + gold[s].id + "\": length mismatch (" +
                       std::to_string(gold[s].tokens.size()) + " gold tokens, " +
                       std::to_string(predicted[s].size()) + " predicted tags)");
    }
    auto gold_chunks = extract_chunks(gold[s].tags);
    auto pred_chunks = extract_chunks(predicted[s]);
    std::set<RoleChunk> gold_set(gold_chunks.begin(), gold_chunks.end());
    for (const auto& chunk : gold_chunks) {
      ++report.per_role[static_cast<std::size_t>(chunk.role)].gold_support;
    }
    for (const auto& chunk : pred_chunks) {
      auto& row = report.per_role[static_cast<std::size_t>(chunk.role)];
      ++row.pred_support;
      if (gold_set.contains(chunk)) ++row.correct;
    }
  }

  double f1_sum = 0.0;
  std::size_t f1_count = 0;
  for (std::size_t r = 0; r < kNumRoles; ++r) {
    auto& row = report.per_role[r];
    finalize(row);
    report.micro.gold_support += row.gold_support;
    report.micro.pred_support += row.pred_support;
    report.micro.correct += row.correct;
    bool observed = row.gold_support + row.pred_support > 0;
    if (averaging == MacroAveraging::all_roles || observed) {
      f1_sum += row.f1;
      ++f1_count;
    }
  }
  finalize(report.micro);
  report.macro_f1 = safe_div(f1_sum, static_cast<double>(f1_count));
  return report;
}

ScoreReport score(std::span<const AnnotatedSentence> gold,
                  std::span<const AnnotatedSentence> predicted,
                  MacroAveraging averaging) {
  if (gold.size() != predicted.size()) {
    throw ScoreError("gold has " + std::to_string(gold.size()) +
                     " sentences, prediction has " +
                     std::to_string(predicted.size()));
  }
  std::vector<std::vector<BioTag>> tags;
  tags.reserve(predicted.size());
  for (std::size_t s = 0; s < predicted.size(); ++s) {
    if (gold[s].id != predicted[s].id) {
      throw ScoreError("sentence id mismatch at position " + std::to_string(s) +
                       ": gold \"" + gold[s].id + "\" vs predicted \"" +
                       predicted[s].id + "\"");
    }
    tags.push_back(predicted[s].tags);
  }
  return score(gold, tags, averaging);
}

std::span<const Role> report_role_order() { return kReportOrder; }

std::string report_table(const ScoreReport& report) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof(line), "%-12s %8s %8s %8s %7s %7s %8s\n", "role",
                "P", "R", "F1", "gold", "pred", "correct");
  out += line;
  for (Role role : kReportOrder) {
    const auto& row = report.per_role[static_cast<std::size_t>(role)];
    std::snprintf(line, sizeof(line), "%-12s %8s %8s %8s %7zu %7zu %8zu\n",
                  std::string(role_name(role)).c_str(),
                  two_decimals(row.precision).c_str(),
                  two_decimals(row.recall).c_str(), two_decimals(row.f1).c_str(),
                  row.gold_support, row.pred_support, row.correct);
    out += line;
  }
  std::snprintf(line, sizeof(line), "%-12s %8s %8s %8s\n", "macro", "", "",
                two_decimals(report.macro_f1).c_str());
  out += line;
  std::snprintf(line, sizeof(line), "%-12s %8s %8s %8s %7zu %7zu %8zu\n",
                "micro", two_decimals(report.micro.precision).c_str(),
                two_decimals(report.micro.recall).c_str(),
                two_decimals(report.micro.f1).c_str(), report.micro.gold_support,
                report.micro.pred_support, report.micro.correct);
  out += line;
  return out;
}

std::string report_json(const ScoreReport& report) {
  nlohmann::ordered_json j;
  for (Role role : kReportOrder) {
    const auto& row = report.per_role[static_cast<std::size_t>(role)];
    nlohmann::ordered_json entry;
    entry["precision"] = row.precision * 100.0;
    entry["recall"] = row.recall * 100.0;
    entry["f1"] = row.f1 * 100.0;
    entry["gold_support"] = row.gold_support;
    entry["pred_support"] = row.pred_support;
    entry["correct"] = row.correct;
    j["roles"][std::string(role_name(role))] = std::move(entry);
  }
  j["macro_f1"] = report.macro_f1 * 100.0;
  j["micro"] = {{"precision", report.micro.precision * 100.0},
                {"recall", report.micro.recall * 100.0},
                {"f1", report.micro.f1 * 100.0},
                {"gold_support", report.micro.gold_support},
                {"pred_support", report.micro.pred_support},
                {"correct", report.micro.correct}};
  j["macro_averaging"] = report.averaging == MacroAveraging::observed_roles
                             ? "observed"
                             : "all";
  return j.dump(2);
}

}  // namespace evparse
