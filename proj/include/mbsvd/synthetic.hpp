#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mbsvd/dataio.hpp"

namespace mbsvd {

/// Users and items are split into clusters (id modulo `clusters`). Each user
/// buys `target_per_user` distinct items of its own cluster and views
/// `aux_per_user` distinct items, each drawn from its own cluster with
/// probability `aux_correlation` and uniformly otherwise.
struct PlantedSpec {
  std::size_t num_users = 60;
  std::size_t num_items = 40;
  std::size_t clusters = 4;
  std::size_t target_per_user = 6;
  std::size_t aux_per_user = 10;
  double aux_correlation = 0.8;
  std::uint64_t seed = 7;
};

inline const std::vector<std::string> kPlantedBehaviors{"view", "purchase"};

/// Tab-separated "user item behavior" lines for the planted dataset.
inline std::string planted_preference_tsv(const PlantedSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  std::vector<std::vector<std::uint32_t>> by_cluster(spec.clusters);
  for (std::uint32_t i = 0; i < spec.num_items; ++i) by_cluster[i % spec.clusters].push_back(i);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<std::uint32_t> any_item(0, static_cast<std::uint32_t>(spec.num_items - 1));

  std::ostringstream out;
  for (std::uint32_t u = 0; u < spec.num_users; ++u) {
    const auto& own = by_cluster[u % spec.clusters];
    std::vector<std::uint32_t> pool = own;
    std::shuffle(pool.begin(), pool.end(), rng);
    const std::size_t buys = std::min(spec.target_per_user, pool.size());
    for (std::size_t n = 0; n < buys; ++n) out << u << '\t' << pool[n] << "\tpurchase\n";

    std::set<std::uint32_t> viewed;
    std::uniform_int_distribution<std::size_t> in_cluster(0, own.size() - 1);
    const std::size_t views =
        std::min(spec.aux_per_user, spec.aux_correlation >= 1.0 ? own.size() : spec.num_items);
    while (viewed.size() < views) viewed.insert(coin(rng) < spec.aux_correlation ? own[in_cluster(rng)] : any_item(rng));
    for (auto i : viewed) out << u << '\t' << i << "\tview\n";
  }
  return out.str();
}

inline InteractionDataset planted_preference_dataset(const PlantedSpec& spec) {
  std::istringstream in(planted_preference_tsv(spec));
  InteractionDataset ds = parse_interactions(in, kPlantedBehaviors);
  ds.target_behavior = ds.behavior_index("purchase");
  return ds;
}

}  // namespace mbsvd
