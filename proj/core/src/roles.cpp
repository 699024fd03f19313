#include "evparse/roles.hpp"

namespace evparse {

namespace {

constexpr std::array<std::string_view, kNumRoles> kRoleNames = {
    "trigger", "participant", "place", "target", "organizer", "etime", "fname"};

}  // namespace

std::string_view role_name(Role role) {
  return kRoleNames[static_cast<std::size_t>(role)];
}

std::optional<Role> role_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kNumRoles; ++i) {
    if (kRoleNames[i] == name) return static_cast<Role>(i);
  }
  return std::nullopt;
}

std::string to_string(const BioTag& tag) {
  switch (tag.kind) {
    case BioTag::Kind::O:
      return "O";
    case BioTag::Kind::B:
      return "B-" + std::string(role_name(tag.role));
    case BioTag::Kind::I:
      return "I-" + std::string(role_name(tag.role));
  }
  return "O";
}

std::optional<BioTag> bio_tag_from_string(std::string_view text) {
  if (text == "O") return BioTag::outside();
  if (text.size() < 3 || text[1] != '-') return std::nullopt;
  auto role = role_from_name(text.substr(2));
  if (!role) return std::nullopt;
  if (text[0] == 'B') return BioTag::begin(*role);
  if (text[0] == 'I') return BioTag::inside(*role);
  return std::nullopt;
}

}  // namespace evparse
