#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <vector>

#include "json.hpp"

namespace sidforge {

// L discrete tokens, one per semantic level, each in [0, K).
struct SidSequence {
  std::vector<int> tokens;

  std::size_t size() const { return tokens.size(); }
  int operator[](std::size_t l) const { return tokens[l]; }
  auto operator<=>(const SidSequence&) const = default;
};

void validate_sid(const SidSequence& sid, int levels, int codebook_size);

struct SidTable {
  int levels = 3;
  int codebook_size = 16;
  std::map<std::int64_t, SidSequence> sids;

  const SidSequence& at(std::int64_t id) const;
  bool operator==(const SidTable&) const = default;
};

struct CollisionStats {
  double collision_rate = 0.0;                   // items sharing their full SID with another item
  std::vector<std::size_t> distinct_prefixes;    // per level l: distinct (s1..sl) prefixes
};

CollisionStats collision_rate(const SidTable& table);

nlohmann::json sid_table_to_json(const SidTable& table);
SidTable sid_table_from_json(const nlohmann::json& doc);

}  // namespace sidforge
