#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "mbsvd/error.hpp"

namespace mbsvd {

enum class Role : std::uint8_t { train, valid, test };

inline std::string_view to_string(Role r) {
  switch (r) {
    case Role::train: return "train";
    case Role::valid: return "valid";
    case Role::test: return "test";
  }
  return "train";
}

inline Role parse_role(std::string_view s) {
  if (s == "train") return Role::train;
  if (s == "valid") return Role::valid;
  if (s == "test") return Role::test;
  throw ParseError("unknown role '" + std::string(s) + "'", 0);
}

struct InteractionRecord {
  std::uint32_t user = 0;
  std::uint32_t item = 0;
  std::uint32_t behavior = 0;
  Role role = Role::train;

  friend bool operator==(const InteractionRecord&, const InteractionRecord&) = default;
};

/// Interaction triples over dense ids. `user_ids[u]` / `item_ids[i]` hold the
/// original identifiers, so compaction can always be undone.
struct InteractionDataset {
  std::vector<InteractionRecord> records;
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::size_t num_behaviors = 0;
  std::optional<std::uint32_t> target_behavior;
  std::vector<std::string> behavior_names;
  std::vector<std::uint64_t> user_ids;
  std::vector<std::uint64_t> item_ids;

  std::uint32_t behavior_index(std::string_view name) const {
    auto it = std::find(behavior_names.begin(), behavior_names.end(), name);
    if (it == behavior_names.end()) throw UnknownBehaviorError(std::string(name), ExitCode::config_error);
    return static_cast<std::uint32_t>(it - behavior_names.begin());
  }

  std::uint32_t target() const {
    if (!target_behavior) throw ConfigError("target behavior not set");
    return *target_behavior;
  }

  std::size_t count(Role r) const {
    return static_cast<std::size_t>(
        std::count_if(records.begin(), records.end(), [r](const InteractionRecord& x) { return x.role == r; }));
  }

  friend bool operator==(const InteractionDataset&, const InteractionDataset&) = default;
};

struct SplitSpec {
  std::size_t min_target_interactions = 5;
  std::size_t holdout_per_user = 2;
  std::uint64_t seed = 0;
};

struct SplitOutcome {
  InteractionDataset dataset;
  std::size_t qualified_users = 0;
  bool degenerate() const noexcept { return qualified_users == 0; }
};

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::uint64_t parse_id(std::string_view field, const char* what, std::size_t line) {
  std::uint64_t v = 0;
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (field.empty() || ec != std::errc() || ptr != end)
    throw ParseError(std::string(what) + " id '" + std::string(field) + "' is not a non-negative integer", line);
  return v;
}

inline void sort_records(std::vector<InteractionRecord>& recs) {
  std::sort(recs.begin(), recs.end(), [](const InteractionRecord& a, const InteractionRecord& b) {
    return std::tie(a.user, a.item, a.behavior) < std::tie(b.user, b.item, b.behavior);
  });
}

}  // namespace detail

/// Parses "user<TAB>item<TAB>behavior" lines. Blank lines and lines starting
/// with '#' are skipped. Ids are compacted in ascending order of the original
/// value, behaviors are indexed by their position in `behavior_names`, and
/// duplicate triples collapse to one record.
inline InteractionDataset parse_interactions(std::istream& in, const std::vector<std::string>& behavior_names) {
  struct Raw {
    std::uint64_t user, item;
    std::uint32_t behavior;
  };
  std::vector<Raw> raw;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view sv(line);
    if (!sv.empty() && sv.back() == '\r') sv.remove_suffix(1);
    if (sv.empty() || sv.front() == '#') continue;
    const auto fields = detail::split_tabs(sv);
    if (fields.size() != 3)
      throw ParseError("expected 3 tab-separated fields, got " + std::to_string(fields.size()), lineno);
    const auto u = detail::parse_id(fields[0], "user", lineno);
    const auto i = detail::parse_id(fields[1], "item", lineno);
    auto it = std::find(behavior_names.begin(), behavior_names.end(), fields[2]);
    if (it == behavior_names.end()) throw UnknownBehaviorError(std::string(fields[2]));
    raw.push_back({u, i, static_cast<std::uint32_t>(it - behavior_names.begin())});
  }
  if (raw.empty()) throw EmptyDatasetError();

  InteractionDataset ds;
  ds.behavior_names = behavior_names;
  ds.num_behaviors = behavior_names.size();
  for (const auto& r : raw) {
    ds.user_ids.push_back(r.user);
    ds.item_ids.push_back(r.item);
  }
  auto uniq = [](std::vector<std::uint64_t>& v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  };
  uniq(ds.user_ids);
  uniq(ds.item_ids);
  ds.num_users = ds.user_ids.size();
  ds.num_items = ds.item_ids.size();

  auto dense = [](const std::vector<std::uint64_t>& ids, std::uint64_t v) {
    return static_cast<std::uint32_t>(std::lower_bound(ids.begin(), ids.end(), v) - ids.begin());
  };
  ds.records.reserve(raw.size());
  for (const auto& r : raw)
    ds.records.push_back({dense(ds.user_ids, r.user), dense(ds.item_ids, r.item), r.behavior, Role::train});
  detail::sort_records(ds.records);
  ds.records.erase(std::unique(ds.records.begin(), ds.records.end()), ds.records.end());
  return ds;
}

inline void validate(const SplitSpec& spec) {
  if (spec.holdout_per_user != 0 && spec.holdout_per_user != 2)
    throw ConfigError("holdout_per_user must be 0 or 2");
  if (spec.min_target_interactions < spec.holdout_per_user + 1)
    throw ConfigError("min_target_interactions must exceed holdout_per_user");
}

/// Holds out one validation and one test target record, chosen uniformly at
/// random, for every user with enough target records. Everything else stays
/// in train.
inline SplitOutcome split(const InteractionDataset& input, const SplitSpec& spec) {
  validate(spec);
  const std::uint32_t target = input.target();
  SplitOutcome out{input, 0};
  auto& recs = out.dataset.records;
  for (auto& r : recs) r.role = Role::train;
  if (spec.holdout_per_user == 0) return out;

  std::vector<std::vector<std::size_t>> per_user(input.num_users);
  for (std::size_t idx = 0; idx < recs.size(); ++idx)
    if (recs[idx].behavior == target) per_user[recs[idx].user].push_back(idx);

  std::mt19937_64 rng(spec.seed);
  for (const auto& idxs : per_user) {
    if (idxs.size() < spec.min_target_interactions) continue;
    std::uniform_int_distribution<std::size_t> first(0, idxs.size() - 1);
    std::uniform_int_distribution<std::size_t> second(0, idxs.size() - 2);
    const std::size_t a = first(rng);
    std::size_t b = second(rng);
    if (b >= a) ++b;
    recs[idxs[a]].role = Role::valid;
    recs[idxs[b]].role = Role::test;
    ++out.qualified_users;
  }
  return out;
}

/// Reads the role-annotated form written by `write_split_dataset`.
inline std::vector<InteractionRecord> parse_split_records(std::istream& in, const InteractionDataset& meta) {
  std::vector<InteractionRecord> recs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view sv(line);
    if (sv.empty() || sv.front() == '#') continue;
    const auto f = detail::split_tabs(sv);
    if (f.size() != 4) throw ParseError("expected 4 tab-separated fields, got " + std::to_string(f.size()), lineno);
    InteractionRecord r;
    r.user = static_cast<std::uint32_t>(detail::parse_id(f[0], "user", lineno));
    r.item = static_cast<std::uint32_t>(detail::parse_id(f[1], "item", lineno));
    r.behavior = meta.behavior_index(f[2]);
    r.role = parse_role(f[3]);
    if (r.user >= meta.num_users || r.item >= meta.num_items)
      throw ParseError("id out of range for dataset manifest", lineno);
    recs.push_back(r);
  }
  return recs;
}

inline void write_split_records(std::ostream& out, const InteractionDataset& ds) {
  out << "# user\titem\tbehavior\trole\n";
  for (const auto& r : ds.records)
    out << r.user << '\t' << r.item << '\t' << ds.behavior_names[r.behavior] << '\t' << to_string(r.role) << '\n';
}

/// {M, N, K, target_behavior, counts per behavior, split sizes} plus the
/// behavior names and reverse id maps needed to reload the dataset.
inline nlohmann::json dataset_manifest(const InteractionDataset& ds) {
  nlohmann::json counts = nlohmann::json::object();
  std::vector<std::size_t> per(ds.num_behaviors, 0);
  for (const auto& r : ds.records) ++per[r.behavior];
  for (std::size_t k = 0; k < ds.num_behaviors; ++k) counts[ds.behavior_names[k]] = per[k];
  nlohmann::json j;
  j["M"] = ds.num_users;
  j["N"] = ds.num_items;
  j["K"] = ds.num_behaviors;
  j["target_behavior"] = ds.target_behavior ? nlohmann::json(ds.behavior_names[*ds.target_behavior]) : nlohmann::json();
  j["behavior_names"] = ds.behavior_names;
  j["counts"] = counts;
  j["split_sizes"] = {{"train", ds.count(Role::train)}, {"valid", ds.count(Role::valid)}, {"test", ds.count(Role::test)}};
  j["user_ids"] = ds.user_ids;
  j["item_ids"] = ds.item_ids;
  return j;
}

inline InteractionDataset dataset_from_manifest(const nlohmann::json& j) {
  InteractionDataset ds;
  try {
    ds.num_users = j.at("M").get<std::size_t>();
    ds.num_items = j.at("N").get<std::size_t>();
    ds.num_behaviors = j.at("K").get<std::size_t>();
    ds.behavior_names = j.at("behavior_names").get<std::vector<std::string>>();
    ds.user_ids = j.at("user_ids").get<std::vector<std::uint64_t>>();
    ds.item_ids = j.at("item_ids").get<std::vector<std::uint64_t>>();
    if (!j.at("target_behavior").is_null())
      ds.target_behavior = ds.behavior_index(j.at("target_behavior").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw StateError(std::string("invalid dataset manifest: ") + e.what());
  }
  if (ds.behavior_names.size() != ds.num_behaviors || ds.user_ids.size() != ds.num_users ||
      ds.item_ids.size() != ds.num_items)
    throw StateError("dataset manifest counts disagree with id maps");
  return ds;
}

/// Table-1 style summary: users, items, interactions, behavior types.
inline nlohmann::json dataset_stats(const InteractionDataset& ds) {
  return {{"users", ds.num_users},
          {"items", ds.num_items},
          {"interactions", ds.records.size()},
          {"behavior_types", ds.behavior_names}};
}

/// Removes one behavior and re-indexes the rest in their original order.
inline InteractionDataset drop_behavior(const InteractionDataset& ds, std::string_view name) {
  const std::uint32_t k = ds.behavior_index(name);
  if (ds.num_behaviors <= 1) throw ConfigError("cannot drop the only behavior '" + std::string(name) + "'");
  if (ds.target_behavior && *ds.target_behavior == k)
    throw ConfigError("cannot drop the target behavior '" + std::string(name) + "'");
  InteractionDataset out = ds;
  out.records.clear();
  for (auto r : ds.records) {
    if (r.behavior == k) continue;
    if (r.behavior > k) --r.behavior;
    out.records.push_back(r);
  }
  out.behavior_names.erase(out.behavior_names.begin() + k);
  out.num_behaviors -= 1;
  if (out.target_behavior && *out.target_behavior > k) --*out.target_behavior;
  return out;
}

}  // namespace mbsvd
