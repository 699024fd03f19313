#pragma once

#include <array>
#include <compare>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "evparse/corpus.hpp"
#include "evparse/roles.hpp"

namespace evparse {

// A maximal same-role token span, [start, end).
struct RoleChunk {
  Role role = Role::trigger;
  std::size_t start = 0;
  std::size_t end = 0;

  auto operator<=>(const RoleChunk&) const = default;
};

// conlleval chunking: a chunk opens at B-role, or at I-role whose predecessor
// is O, sentence start, or a different role; it extends through consecutive
// I-role of the same role.
std::vector<RoleChunk> extract_chunks(std::span<const BioTag> tags);

struct RoleScore {
  double precision = 0.0;  // fractions in [0, 1]
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t gold_support = 0;
  std::size_t pred_support = 0;
  std::size_t correct = 0;
};

enum class MacroAveraging : std::uint8_t {
  observed_roles,  // average F1 over roles with gold_support + pred_support > 0
  all_roles,       // average F1 over all seven roles
};

struct ScoreReport {
  std::array<RoleScore, kNumRoles> per_role{};
  double macro_f1 = 0.0;
  RoleScore micro{};  // pooled over all chunks
  MacroAveraging averaging = MacroAveraging::observed_roles;
};

class ScoreError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A predicted chunk is correct iff a gold chunk of the same sentence has the
// identical (role, start, end). Alignment is positional; sentence lengths
// must match (the id overload also checks ids).
ScoreReport score(std::span<const AnnotatedSentence> gold,
                  std::span<const std::vector<BioTag>> predicted,
                  MacroAveraging averaging = MacroAveraging::observed_roles);
ScoreReport score(std::span<const AnnotatedSentence> gold,
                  std::span<const AnnotatedSentence> predicted,
                  MacroAveraging averaging = MacroAveraging::observed_roles);

// Per-role rows in the dev-table order (trigger, target, place, participant,
// organizer, fname, etime) plus macro and micro rows, percentages with two
// decimals.
std::string report_table(const ScoreReport& report);

// The same report as a JSON object (percent values).
std::string report_json(const ScoreReport& report);

// Row order used by report_table.
std::span<const Role> report_role_order();

}  // namespace evparse
