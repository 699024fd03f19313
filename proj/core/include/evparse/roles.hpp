#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace evparse {

// The seven event-component roles of the token-level extraction task.
// Order matches the corpus statistics table and is used as the canonical
// label index everywhere (classifiers, reports, stats).
enum class Role : std::uint8_t {
  trigger = 0,
  participant,
  place,
  target,
  organizer,
  etime,
  fname,
};

inline constexpr std::size_t kNumRoles = 7;

constexpr std::array<Role, kNumRoles> all_roles() {
  return {Role::trigger,   Role::participant, Role::place, Role::target,
          Role::organizer, Role::etime,       Role::fname};
}

std::string_view role_name(Role role);
std::optional<Role> role_from_name(std::string_view name);

// A per-token tag: "O", "B-<role>" or "I-<role>".
struct BioTag {
  enum class Kind : std::uint8_t { O = 0, B, I };

  Kind kind = Kind::O;
  Role role = Role::trigger;  // meaningful only when kind != O

  static BioTag outside() { return {}; }
  static BioTag begin(Role r) { return {Kind::B, r}; }
  static BioTag inside(Role r) { return {Kind::I, r}; }

  bool is_outside() const { return kind == Kind::O; }

  // Factories normalize the role of O tags, so default comparison is sound.
  bool operator==(const BioTag&) const = default;
};

std::string to_string(const BioTag& tag);
std::optional<BioTag> bio_tag_from_string(std::string_view text);

}  // namespace evparse
