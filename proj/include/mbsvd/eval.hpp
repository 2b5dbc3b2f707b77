#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mbsvd/dataio.hpp"
#include "mbsvd/error.hpp"
#include "mbsvd/graph.hpp"
#include "mbsvd/model.hpp"

namespace mbsvd {

inline const std::vector<std::size_t> kDefaultKValues{10, 40, 80};

struct RankingMetrics {
  std::vector<std::size_t> k_values;
  std::map<std::size_t, double> recall_at;
  std::map<std::size_t, double> ndcg_at;
  std::size_t num_evaluated_users = 0;
  std::size_t skipped_users = 0;
};

/// One list of scores per user; masked items carry -infinity.
using ScoreTable = std::vector<std::vector<double>>;
using TruthTable = std::vector<std::vector<std::uint32_t>>;

/// Dot product of the user's fused vector with every item's fused vector.
/// The user's train target items are set to -infinity.
inline std::vector<double> score_all(const ForwardCache& c, const BehaviorGraph& g, std::size_t user, ScoreView view) {
  const DenseMatrix& users = c.final_view(Side::user, view);
  const DenseMatrix& items = c.final_view(Side::item, view);
  if (user >= users.rows()) throw IndexError("user " + std::to_string(user) + " of " + std::to_string(users.rows()));
  std::vector<double> s(items.rows());
  const auto u = users.row(user);
  for (std::size_t i = 0; i < items.rows(); ++i) s[i] = dot(u, items.row(i));
  for (auto col : g.adjacency[g.target_behavior].row(user).cols) s[col] = -std::numeric_limits<double>::infinity();
  return s;
}

namespace detail {

inline bool ranks_before(const std::vector<double>& s, std::uint32_t a, std::uint32_t b) {
  return s[a] > s[b] || (s[a] == s[b] && a < b);
}

inline std::vector<std::size_t> checked_k_values(std::vector<std::size_t> ks) {
  if (ks.empty()) throw ConfigError("no cutoff values given");
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  if (ks.front() == 0) throw ConfigError("cutoff K must be >= 1");
  return ks;
}

inline double ideal_dcg(std::size_t relevant, std::size_t k) {
  double s = 0.0;
  for (std::size_t r = 1; r <= std::min(relevant, k); ++r) s += 1.0 / std::log2(static_cast<double>(r) + 1.0);
  return s;
}

// Adds one user's contribution given its ranked list prefix (item ids in rank order).
inline void accumulate_user(const std::vector<std::uint32_t>& ranked, const std::vector<std::uint32_t>& truth,
                            const std::vector<std::size_t>& ks, RankingMetrics& m) {
  std::vector<std::uint32_t> sorted_truth = truth;
  std::sort(sorted_truth.begin(), sorted_truth.end());
  for (std::size_t k : ks) {
    double hits = 0.0, dcg = 0.0;
    for (std::size_t pos = 0; pos < std::min(k, ranked.size()); ++pos) {
      if (std::binary_search(sorted_truth.begin(), sorted_truth.end(), ranked[pos])) {
        hits += 1.0;
        dcg += 1.0 / std::log2(static_cast<double>(pos + 1) + 1.0);
      }
    }
    m.recall_at[k] += hits / static_cast<double>(truth.size());
    m.ndcg_at[k] += dcg / ideal_dcg(truth.size(), k);
  }
}

inline void finalize(RankingMetrics& m) {
  for (std::size_t k : m.k_values) {
    if (m.num_evaluated_users == 0) {
      m.recall_at[k] = 0.0;
      m.ndcg_at[k] = 0.0;
    } else {
      m.recall_at[k] /= static_cast<double>(m.num_evaluated_users);
      m.ndcg_at[k] /= static_cast<double>(m.num_evaluated_users);
    }
  }
}

}  // namespace detail

/// Recall@K and NDCG@K over full item rankings, averaged across users with
/// non-empty truth. Ties break toward the smaller item id.
inline RankingMetrics metrics(const ScoreTable& scores, const TruthTable& truth, std::vector<std::size_t> k_values) {
  if (scores.size() != truth.size()) throw ShapeError("score and truth tables cover different users");
  RankingMetrics m;
  m.k_values = detail::checked_k_values(std::move(k_values));
  for (std::size_t k : m.k_values) m.recall_at[k] = m.ndcg_at[k] = 0.0;
  const std::size_t kmax = m.k_values.back();
  std::vector<std::uint32_t> ids;
  for (std::size_t u = 0; u < scores.size(); ++u) {
    if (truth[u].empty()) {
      ++m.skipped_users;
      continue;
    }
    const auto& s = scores[u];
    ids.resize(s.size());
    std::iota(ids.begin(), ids.end(), 0u);
    const std::size_t top = std::min(kmax, ids.size());
    std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(top), ids.end(),
                      [&](std::uint32_t a, std::uint32_t b) { return detail::ranks_before(s, a, b); });
    ids.resize(top);
    detail::accumulate_user(ids, truth[u], m.k_values, m);
    ++m.num_evaluated_users;
  }
  detail::finalize(m);
  return m;
}

/// Reference path for `metrics`: stable-sorts every item by descending score
/// (stability keeps ascending ids among ties) and reads the cutoffs off the
/// full ranking.
inline RankingMetrics oracle_metrics(const ScoreTable& scores, const TruthTable& truth,
                                     std::vector<std::size_t> k_values) {
  if (scores.size() != truth.size()) throw ShapeError("score and truth tables cover different users");
  RankingMetrics m;
  m.k_values = detail::checked_k_values(std::move(k_values));
  for (std::size_t k : m.k_values) m.recall_at[k] = m.ndcg_at[k] = 0.0;
  for (std::size_t u = 0; u < scores.size(); ++u) {
    if (truth[u].empty()) {
      ++m.skipped_users;
      continue;
    }
    const auto& s = scores[u];
    std::vector<std::uint32_t> order(s.size());
    for (std::uint32_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) { return s[a] > s[b]; });
    std::vector<std::size_t> ranks;
    for (auto item : truth[u]) {
      const auto it = std::find(order.begin(), order.end(), item);
      ranks.push_back(static_cast<std::size_t>(it - order.begin()) + 1);
    }
    std::sort(ranks.begin(), ranks.end());
    for (std::size_t k : m.k_values) {
      double hits = 0.0, dcg = 0.0, idcg = 0.0;
      for (std::size_t r : ranks) {
        if (r > k) break;
        hits += 1.0;
        dcg += 1.0 / std::log2(static_cast<double>(r) + 1.0);
      }
      for (std::size_t r = 1; r <= truth[u].size() && r <= k; ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 1.0);
      m.recall_at[k] += hits / static_cast<double>(truth[u].size());
      m.ndcg_at[k] += dcg / idcg;
    }
    ++m.num_evaluated_users;
  }
  detail::finalize(m);
  return m;
}

/// Held-out target items per user for the given split.
inline TruthTable truth_for(const InteractionDataset& ds, Role role) {
  TruthTable t(ds.num_users);
  const auto target = ds.target();
  for (const auto& r : ds.records)
    if (r.role == role && r.behavior == target) t[r.user].push_back(r.item);
  return t;
}

inline RankingMetrics evaluate(const ForwardCache& c, const BehaviorGraph& g, const TruthTable& truth,
                               const std::vector<std::size_t>& k_values, ScoreView view) {
  ScoreTable scores(truth.size());
  for (std::size_t u = 0; u < truth.size(); ++u)
    if (!truth[u].empty()) scores[u] = score_all(c, g, u, view);
  return metrics(scores, truth, k_values);
}

inline nlohmann::json metrics_to_json(const RankingMetrics& m, ScoreView view) {
  nlohmann::json recall = nlohmann::json::object(), ndcg = nlohmann::json::object();
  for (std::size_t k : m.k_values) {
    recall[std::to_string(k)] = m.recall_at.at(k);
    ndcg[std::to_string(k)] = m.ndcg_at.at(k);
  }
  return {{"k_values", m.k_values},
          {"recall_at", recall},
          {"ndcg_at", ndcg},
          {"num_evaluated_users", m.num_evaluated_users},
          {"skipped_users", m.skipped_users},
          {"score_view", std::string(to_string(view))}};
}

}  // namespace mbsvd
