#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <gtest/gtest.h>

#include "mbsvd/eval.hpp"
#include "support.hpp"

using namespace mbsvd;
using mbsvd::testing::Gen;
using mbsvd::testing::small_model;

namespace {

// Rank of `item` by counting the items placed before it.
std::size_t rank_of(const std::vector<double>& s, std::uint32_t item) {
  std::size_t r = 1;
  for (std::uint32_t j = 0; j < s.size(); ++j)
    if (s[j] > s[item] || (s[j] == s[item] && j < item)) ++r;
  return r;
}

// Independent oracle built directly from the metric definitions.
std::pair<double, double> counted_metrics(const ScoreTable& scores, const TruthTable& truth, std::size_t k) {
  double recall = 0.0, ndcg = 0.0;
  std::size_t users = 0;
  for (std::size_t u = 0; u < scores.size(); ++u) {
    if (truth[u].empty()) continue;
    ++users;
    double hits = 0.0, dcg = 0.0, idcg = 0.0;
    for (auto item : truth[u]) {
      const auto r = rank_of(scores[u], item);
      if (r <= k) {
        hits += 1.0;
        dcg += 1.0 / std::log2(r + 1.0);
      }
    }
    for (std::size_t r = 1; r <= std::min(k, truth[u].size()); ++r) idcg += 1.0 / std::log2(r + 1.0);
    recall += hits / truth[u].size();
    ndcg += dcg / idcg;
  }
  return users == 0 ? std::pair{0.0, 0.0} : std::pair{recall / users, ndcg / users};
}

struct Instance {
  ScoreTable scores;
  TruthTable truth;
};

Instance random_instance(Gen& gen, std::size_t users, std::size_t items, bool ties) {
  Instance in;
  in.scores.resize(users);
  in.truth.resize(users);
  for (std::size_t u = 0; u < users; ++u) {
    in.scores[u].resize(items);
    for (auto& s : in.scores[u]) s = ties ? static_cast<double>(gen.index(0, 5)) : gen.normal();
    for (std::size_t i = 0; i < items; ++i)
      if (gen.coin(0.05)) in.scores[u][i] = -std::numeric_limits<double>::infinity();
    if (gen.coin(0.1)) continue;
    const std::size_t n = gen.index(1, std::min<std::size_t>(items, 6));
    std::vector<std::uint32_t> all(items);
    std::iota(all.begin(), all.end(), 0u);
    std::shuffle(all.begin(), all.end(), gen.engine());
    in.truth[u].assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n));
  }
  return in;
}

}  // namespace

TEST(Metrics, SingleRelevantAtRankOne) {
  const auto m = metrics({{0.9, 0.1, 0.5}}, {{0}}, {1, 10});
  EXPECT_DOUBLE_EQ(m.recall_at.at(1), 1.0);
  EXPECT_DOUBLE_EQ(m.ndcg_at.at(1), 1.0);
  EXPECT_DOUBLE_EQ(m.ndcg_at.at(10), 1.0);
}

TEST(Metrics, SingleRelevantAtRankThreeHasHalfGain) {
  const auto m = metrics({{0.9, 0.8, 0.5, 0.1}}, {{2}}, {10});
  EXPECT_DOUBLE_EQ(m.recall_at.at(10), 1.0);
  EXPECT_DOUBLE_EQ(m.ndcg_at.at(10), 0.5);
}

TEST(Metrics, RankElevenMissesTopTen) {
  std::vector<double> s(20);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = 100.0 - static_cast<double>(i);
  const auto m = metrics({s}, {{10}}, {10, 11});
  EXPECT_EQ(m.recall_at.at(10), 0.0);
  EXPECT_EQ(m.ndcg_at.at(10), 0.0);
  EXPECT_DOUBLE_EQ(m.recall_at.at(11), 1.0);
  EXPECT_NEAR(m.ndcg_at.at(11), 1.0 / std::log2(12.0), 1e-15);
}

TEST(Metrics, TiesBreakTowardSmallerId) {
  const auto first = metrics({{1.0, 1.0, 1.0}}, {{0}}, {1});
  EXPECT_DOUBLE_EQ(first.recall_at.at(1), 1.0);
  const auto last = metrics({{1.0, 1.0, 1.0}}, {{2}}, {1, 2});
  EXPECT_EQ(last.recall_at.at(1), 0.0);
  EXPECT_EQ(last.recall_at.at(2), 0.0);
}

TEST(Metrics, EmptyTruthUsersAreSkipped) {
  const auto m = metrics({{0.1, 0.2}, {0.3, 0.1}, {0.0, 0.0}}, {{}, {0}, {}}, {1});
  EXPECT_EQ(m.num_evaluated_users, 1u);
  EXPECT_EQ(m.skipped_users, 2u);
  EXPECT_DOUBLE_EQ(m.recall_at.at(1), 1.0);
  const auto none = metrics({{0.1}}, {{}}, {5});
  EXPECT_EQ(none.num_evaluated_users, 0u);
  EXPECT_EQ(none.recall_at.at(5), 0.0);
}

TEST(Metrics, KLargerThanItemCount) {
  const auto m = metrics({{0.1, 0.7}}, {{0, 1}}, {80});
  EXPECT_DOUBLE_EQ(m.recall_at.at(80), 1.0);
  EXPECT_DOUBLE_EQ(m.ndcg_at.at(80), 1.0);
}

TEST(Metrics, ValidatesInput) {
  EXPECT_THROW(metrics({{0.1}}, {{0}}, {}), ConfigError);
  EXPECT_THROW(metrics({{0.1}}, {{0}}, {0, 5}), ConfigError);
  EXPECT_THROW(metrics({{0.1}}, {{0}, {0}}, {5}), ShapeError);
  const auto m = metrics({{0.1, 0.2}}, {{1}}, {40, 10, 40});
  EXPECT_EQ(m.k_values, (std::vector<std::size_t>{10, 40}));
}

TEST(Metrics, AgreesWithCountedOracleProperty) {
  Gen gen(91);
  for (int c = 0; c < 100; ++c) {
    const auto in = random_instance(gen, gen.index(1, 20), gen.index(1, 60), gen.coin(0.5));
    const std::vector<std::size_t> ks{1, 5, 10, 40};
    const auto m = metrics(in.scores, in.truth, ks);
    const auto o = oracle_metrics(in.scores, in.truth, ks);
    for (auto k : ks) {
      const auto [r, n] = counted_metrics(in.scores, in.truth, k);
      EXPECT_NEAR(m.recall_at.at(k), r, 1e-12);
      EXPECT_NEAR(m.ndcg_at.at(k), n, 1e-12);
      EXPECT_NEAR(o.recall_at.at(k), r, 1e-12);
      EXPECT_NEAR(o.ndcg_at.at(k), n, 1e-12);
    }
    EXPECT_EQ(m.num_evaluated_users, o.num_evaluated_users);
  }
}

TEST(Metrics, RecallMonotoneInKProperty) {
  Gen gen(92);
  for (int c = 0; c < 100; ++c) {
    const auto in = random_instance(gen, gen.index(1, 15), gen.index(2, 100), gen.coin(0.3));
    std::vector<std::size_t> ks;
    for (std::size_t k = 1; k <= 100; k += gen.index(1, 9)) ks.push_back(k);
    const auto m = metrics(in.scores, in.truth, ks);
    for (std::size_t n = 1; n < ks.size(); ++n) EXPECT_LE(m.recall_at.at(ks[n - 1]), m.recall_at.at(ks[n]) + 1e-15);
    for (auto k : ks) {
      EXPECT_GE(m.recall_at.at(k), 0.0);
      EXPECT_LE(m.recall_at.at(k), 1.0);
      EXPECT_GE(m.ndcg_at.at(k), 0.0);
      EXPECT_LE(m.ndcg_at.at(k), 1.0 + 1e-12);
    }
  }
}

TEST(Metrics, SingleHeldOutItemGivesBinaryRecallProperty) {
  Gen gen(93);
  for (int c = 0; c < 100; ++c) {
    const std::size_t items = gen.index(1, 50);
    std::vector<double> s(items);
    for (auto& v : s) v = gen.normal();
    const TruthTable t{{static_cast<std::uint32_t>(gen.index(0, items - 1))}};
    const std::size_t k = gen.index(1, 50);
    const double r = metrics({s}, t, {k}).recall_at.at(k);
    EXPECT_TRUE(r == 0.0 || r == 1.0);
    EXPECT_EQ(r == 1.0, rank_of(s, t[0][0]) <= k);
  }
}

TEST(Metrics, InvariantUnderItemRelabelingProperty) {
  Gen gen(94);
  for (int c = 0; c < 100; ++c) {
    auto in = random_instance(gen, gen.index(1, 10), gen.index(2, 40), false);
    // Masked entries tie at -inf and would be reordered by the relabeling.
    for (auto& row : in.scores)
      for (auto& v : row)
        if (std::isinf(v)) v = -1e6 - gen.real(0.0, 1.0);
    const std::size_t items = in.scores[0].size();
    std::vector<std::uint32_t> perm(items);
    std::iota(perm.begin(), perm.end(), 0u);
    std::shuffle(perm.begin(), perm.end(), gen.engine());
    Instance moved = in;
    for (std::size_t u = 0; u < in.scores.size(); ++u) {
      for (std::size_t i = 0; i < items; ++i) moved.scores[u][perm[i]] = in.scores[u][i];
      for (auto& t : moved.truth[u]) t = perm[t];
    }
    bool tie_free = true;
    for (std::size_t u = 0; u < in.scores.size() && tie_free; ++u) {
      auto s = in.scores[u];
      std::sort(s.begin(), s.end());
      for (std::size_t i = 1; i < s.size(); ++i)
        if (s[i] == s[i - 1]) tie_free = false;
    }
    if (!tie_free) continue;
    const std::vector<std::size_t> ks{1, 3, 10};
    const auto a = metrics(in.scores, in.truth, ks);
    const auto b = metrics(moved.scores, moved.truth, ks);
    for (auto k : ks) {
      EXPECT_NEAR(a.recall_at.at(k), b.recall_at.at(k), 1e-12);
      EXPECT_NEAR(a.ndcg_at.at(k), b.ndcg_at.at(k), 1e-12);
    }
  }
}

TEST(ScoreAll, MasksTrainTargetItemsOnly) {
  std::istringstream in("0\t0\tbuy\n0\t1\tview\n1\t2\tbuy\n0\t2\tbuy\n");
  auto ds = parse_interactions(in, {"view", "buy"});
  ds.target_behavior = 1;
  for (auto& r : ds.records)
    if (r.user == 0 && r.item == 2) r.role = Role::test;
  const auto g = build_graph(ds);
  const auto mc = small_model(3, 1, 1);
  const auto factors = compute_factors(g, mc);
  const auto c = forward(g, factors, init_params(mc, 2, 3, 2), mc);
  const auto s = score_all(c, g, 0, ScoreView::F);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[0], -std::numeric_limits<double>::infinity());
  EXPECT_TRUE(std::isfinite(s[1]));
  EXPECT_TRUE(std::isfinite(s[2]));
  EXPECT_NEAR(s[1], dot(c.f_user.out.row(0), c.f_item.out.row(1)), 1e-15);
  const auto se = score_all(c, g, 0, ScoreView::E);
  EXPECT_NEAR(se[2], dot(c.e_user.out.row(0), c.e_item.out.row(2)), 1e-15);
  EXPECT_THROW(score_all(c, g, 2, ScoreView::F), IndexError);
}

TEST(ScoreAll, MaskedCountMatchesTrainDegreeProperty) {
  Gen gen(95);
  for (int c = 0; c < 100; ++c) {
    const auto g = gen.graph(gen.index(1, 8), gen.index(1, 8), gen.index(1, 2), 0.3);
    const auto mc = small_model(2, 1, 1);
    const auto cache = forward(g, compute_factors(g, mc), init_params(mc, g.num_users, g.num_items, g.num_behaviors()), mc);
    for (std::size_t u = 0; u < g.num_users; ++u) {
      const auto s = score_all(cache, g, u, ScoreView::F);
      const auto masked = std::count(s.begin(), s.end(), -std::numeric_limits<double>::infinity());
      EXPECT_EQ(static_cast<std::size_t>(masked), g.adjacency[g.target_behavior].row(u).nnz());
    }
  }
}

TEST(MetricsJson, CarriesEveryCutoff) {
  const auto m = metrics({{0.9, 0.1}}, {{0}}, kDefaultKValues);
  const auto j = metrics_to_json(m, ScoreView::E);
  EXPECT_EQ(j["score_view"], "E");
  for (const char* k : {"10", "40", "80"}) {
    EXPECT_TRUE(j["recall_at"].contains(k));
    EXPECT_TRUE(j["ndcg_at"].contains(k));
  }
  EXPECT_EQ(j["num_evaluated_users"], 1);
}
