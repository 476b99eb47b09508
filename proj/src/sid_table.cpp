#include "sidforge/sid_table.hpp"

#include <set>
#include <string>

#include "sidforge/errors.hpp"

namespace sidforge {

void validate_sid(const SidSequence& sid, int levels, int codebook_size) {
  if (static_cast<int>(sid.size()) != levels) {
    throw InputError("sid", "SID length " + std::to_string(sid.size()) + " != L=" + std::to_string(levels));
  }
  for (int t : sid.tokens) {
    if (t < 0 || t >= codebook_size) throw InputError("sid", "token " + std::to_string(t) + " outside [0, K)");
  }
}

const SidSequence& SidTable::at(std::int64_t id) const {
  auto it = sids.find(id);
  if (it == sids.end()) throw InputError("sid", "no SID for item " + std::to_string(id));
  return it->second;
}

CollisionStats collision_rate(const SidTable& table) {
  CollisionStats stats;
  std::map<SidSequence, std::size_t> counts;
  for (const auto& [id, sid] : table.sids) ++counts[sid];
  std::size_t colliding = 0;
  for (const auto& [sid, n] : counts) {
    if (n > 1) colliding += n;
  }
  stats.collision_rate = table.sids.empty() ? 0.0 : static_cast<double>(colliding) / static_cast<double>(table.sids.size());
  for (int l = 1; l <= table.levels; ++l) {
    std::set<std::vector<int>> prefixes;
    for (const auto& [id, sid] : table.sids) {
      prefixes.emplace(sid.tokens.begin(), sid.tokens.begin() + l);
    }
    stats.distinct_prefixes.push_back(prefixes.size());
  }
  return stats;
}

nlohmann::json sid_table_to_json(const SidTable& table) {
  nlohmann::json sids = nlohmann::json::object();
  for (const auto& [id, sid] : table.sids) sids[std::to_string(id)] = sid.tokens;
  return {{"L", table.levels}, {"K", table.codebook_size}, {"sids", std::move(sids)}};
}

SidTable sid_table_from_json(const nlohmann::json& doc) {
  try {
    SidTable table;
    table.levels = doc.at("L").get<int>();
    table.codebook_size = doc.at("K").get<int>();
    for (const auto& [key, value] : doc.at("sids").items()) {
      SidSequence sid{value.get<std::vector<int>>()};
      validate_sid(sid, table.levels, table.codebook_size);
      table.sids.emplace(std::stoll(key), std::move(sid));
    }
    return table;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("sid", std::string("malformed SID table: ") + e.what());
  }
}

}  // namespace sidforge
