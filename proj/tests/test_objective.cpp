#include <cmath>
#include <limits>
#include <numeric>

#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "mbsvd/objective.hpp"
#include "support.hpp"

using namespace mbsvd;
using mbsvd::testing::Gen;
using mbsvd::testing::small_model;

namespace {

std::vector<std::uint32_t> iota_ids(std::size_t n) {
  std::vector<std::uint32_t> v(n);
  std::iota(v.begin(), v.end(), 0u);
  return v;
}

struct Instance {
  BehaviorGraph graph;
  ModelConfig model;
  std::vector<SvdFactors> factors;
  ModelParams params;
  TripletBatch batch;
  ContrastBatch contrast;
};

// Random graph, params and batch; every user has a target edge and a free item.
Instance make_instance(Gen& gen, std::size_t m, std::size_t n, std::size_t kk, std::size_t d, std::size_t layers,
                       std::size_t q) {
  Instance in;
  in.graph = gen.graph(m, n, kk, 0.35);
  in.model = small_model(d, layers, q, gen.index(0, 1000));
  in.factors = compute_factors(in.graph, in.model);
  in.params = init_params(in.model, m, n, kk);
  for (auto& w : in.params.behavior_w) w = gen.real(-0.5, 0.5);
  for (auto& b : in.params.fuse_user_bias) b = gen.real(0.0, 0.3);
  for (auto& b : in.params.fuse_item_bias) b = gen.real(0.0, 0.3);
  const auto& target = in.graph.adjacency[in.graph.target_behavior];
  for (std::uint32_t u = 0; u < m; ++u) {
    const auto row = target.row(u);
    if (row.nnz() == 0 || row.nnz() == n) continue;
    std::uint32_t neg = 0;
    while (std::binary_search(row.cols.begin(), row.cols.end(), neg)) ++neg;
    in.batch.triples.push_back({u, row.cols[gen.index(0, row.nnz() - 1)], neg});
  }
  in.contrast.users = iota_ids(m);
  in.contrast.items = iota_ids(n);
  return in;
}

ObjectiveConfig objective_config(double lambda, double beta, double tau) {
  ObjectiveConfig oc;
  oc.lambda = lambda;
  oc.beta = beta;
  oc.tau = tau;
  return oc;
}

}  // namespace

TEST(Cosine, BoundedProperty) {
  Gen gen(61);
  for (int c = 0; c < 200; ++c) {
    const auto m = gen.dense(2, gen.index(1, 6), -10.0, 10.0);
    const double s = cosine(m.row(0), m.row(1));
    EXPECT_GE(s, -1.0 - 1e-9);
    EXPECT_LE(s, 1.0 + 1e-9);
  }
  const DenseMatrix z(1, 3);
  EXPECT_EQ(cosine(z.row(0), z.row(0)), 0.0);
}

TEST(Infonce, SingleNodeBatchIsZeroProperty) {
  Gen gen(62);
  for (int c = 0; c < 100; ++c) {
    const auto a = gen.dense(5, 3), b = gen.dense(5, 3);
    const std::vector<std::uint32_t> one{static_cast<std::uint32_t>(gen.index(0, 4))};
    EXPECT_NEAR(infonce(a, b, gen.real(0.05, 2.0), one, false), 0.0, 1e-12);
  }
}

TEST(Infonce, SharedUnitVectorGivesLogBatchSize) {
  const std::size_t m = 7;
  DenseMatrix a(m, 3);
  for (std::size_t r = 0; r < m; ++r) a(r, 1) = 1.0;
  EXPECT_NEAR(infonce(a, a, 0.2, iota_ids(m), false), m * std::log(static_cast<double>(m)), 1e-12);
}

TEST(Infonce, InfiniteTemperatureLimit) {
  Gen gen(63);
  const auto a = gen.dense(6, 4), b = gen.dense(6, 4);
  const std::vector<std::uint32_t> batch{0, 2, 3, 5};
  EXPECT_NEAR(infonce(a, b, 1e9, batch, false), 4 * std::log(4.0), 1e-8);
}

TEST(Infonce, NonNegativeProperty) {
  Gen gen(64);
  for (int c = 0; c < 100; ++c) {
    const std::size_t n = gen.index(1, 10);
    const auto a = gen.dense(n, 3), b = gen.dense(n, 3);
    EXPECT_GE(infonce(a, b, gen.real(0.05, 2.0), iota_ids(n), gen.coin(0.5)), 0.0);
  }
}

TEST(Infonce, GradientMatchesFiniteDifferences) {
  Gen gen(65);
  for (int c = 0; c < 20; ++c) {
    const std::size_t n = gen.index(2, 6), d = gen.index(1, 4);
    const auto a = gen.dense(n, d), b = gen.dense(n, d);
    const bool full = gen.coin(0.5);
    std::vector<std::uint32_t> batch;
    for (std::uint32_t i = 0; i < n; ++i)
      if (gen.coin(0.7)) batch.push_back(i);
    DenseMatrix ga(n, d), gb(n, d);
    infonce(a, b, 0.3, batch, full, &ga, &gb);
    const double h = 1e-5;
    for (std::size_t i = 0; i < a.size(); ++i) {
      auto ap = a, am = a, bp = b, bm = b;
      ap.values()[i] += h;
      am.values()[i] -= h;
      bp.values()[i] += h;
      bm.values()[i] -= h;
      const double na = (infonce(ap, b, 0.3, batch, full) - infonce(am, b, 0.3, batch, full)) / (2 * h);
      const double nb = (infonce(a, bp, 0.3, batch, full) - infonce(a, bm, 0.3, batch, full)) / (2 * h);
      EXPECT_LT(mbsvd::testing::relative_error(ga.values()[i], na, 1e-6), 1e-5);
      EXPECT_LT(mbsvd::testing::relative_error(gb.values()[i], nb, 1e-6), 1e-5);
    }
  }
}

TEST(Infonce, ZeroRowsUseNormFloor) {
  DenseMatrix a(3, 2), b(3, 2, 1.0);
  DenseMatrix ga(3, 2), gb(3, 2);
  std::size_t hits = 0;
  const double l = infonce(a, b, 0.2, iota_ids(3), false, &ga, &gb, &hits);
  EXPECT_TRUE(std::isfinite(l));
  EXPECT_GT(hits, 0u);
  EXPECT_TRUE(all_finite(ga.values()));
  EXPECT_TRUE(all_finite(gb.values()));
}

TEST(Infonce, RejectsBadInput) {
  DenseMatrix a(2, 2);
  EXPECT_THROW(infonce(a, DenseMatrix(3, 2), 0.2, iota_ids(2), false), ShapeError);
  EXPECT_THROW(infonce(a, a, 0.0, iota_ids(2), false), ConfigError);
  EXPECT_THROW(infonce(a, a, 0.2, iota_ids(3), false), IndexError);
}

TEST(Bpr, ZeroGapIsLogTwoPerTripleProperty) {
  Gen gen(66);
  for (int c = 0; c < 100; ++c) {
    const std::size_t d = gen.index(1, 5), triples = gen.index(1, 20);
    const auto users = gen.dense(4, d);
    DenseMatrix items(6, d);
    TripletBatch b;
    for (std::size_t t = 0; t < triples; ++t) {
      const auto u = static_cast<std::uint32_t>(gen.index(0, 3));
      b.triples.push_back({u, 0, 1});
    }
    const auto shared = gen.dense(1, d);
    for (std::size_t j = 0; j < d; ++j) items(0, j) = items(1, j) = shared(0, j);
    EXPECT_NEAR(bpr(users, items, b), triples * std::log(2.0), 1e-12);
  }
}

TEST(Bpr, LogThreeGapAndLimits) {
  DenseMatrix users(1, 1, 1.0), items(2, 1);
  items(0, 0) = std::log(3.0);
  TripletBatch b{{{0, 0, 1}}};
  EXPECT_NEAR(bpr(users, items, b), std::log(4.0 / 3.0), 1e-15);
  items(0, 0) = 800.0;
  EXPECT_NEAR(bpr(users, items, b), 0.0, 1e-300);
  items(0, 0) = -800.0;
  EXPECT_NEAR(bpr(users, items, b), 800.0, 1e-9);
  EXPECT_EQ(bpr(users, items, TripletBatch{}), 0.0);
}

TEST(L2Penalty, HandValuesAndGradient) {
  auto p = init_params(small_model(2, 1, 1), 2, 2, 1);
  EXPECT_EQ(l2_penalty(p, 0.0), 0.0);
  auto z = ModelParams::zeros_like(p);
  z.behavior_w[0] = 3.0;
  EXPECT_NEAR(l2_penalty(z, 0.1), 0.9, 1e-15);
  auto g = ModelParams::zeros_like(p);
  const double beta = 0.37;
  l2_penalty(p, beta, &g);
  auto expect = p;
  expect.for_each_tensor([&](const std::string&, std::span<double> s) {
    for (auto& v : s) v *= 2 * beta;
  });
  EXPECT_EQ(g, expect);
}

TEST(TotalLoss, RegularizerOnlyWhenOtherTermsEmpty) {
  Gen gen(67);
  auto in = make_instance(gen, 5, 4, 2, 3, 2, 2);
  const auto oc = objective_config(0.0, 0.05, 0.2);
  const auto r = total_loss_and_grads(in.graph, in.factors, in.params, in.model, oc, {}, {});
  EXPECT_NEAR(r.report.total, l2_penalty(in.params, 0.05), 1e-15);
  auto expect = ModelParams::zeros_like(in.params);
  l2_penalty(in.params, 0.05, &expect);
  EXPECT_EQ(r.grads, expect);
}

TEST(TotalLoss, LinearInLambda) {
  Gen gen(68);
  auto in = make_instance(gen, 6, 5, 2, 3, 2, 2);
  const auto r1 = total_loss(in.graph, in.factors, in.params, in.model, objective_config(0.3, 0.01, 0.2), in.batch, in.contrast);
  const auto r2 = total_loss(in.graph, in.factors, in.params, in.model, objective_config(0.6, 0.01, 0.2), in.batch, in.contrast);
  EXPECT_NEAR(r2.total - r2.l_r - r2.l_reg, 2.0 * (r1.total - r1.l_r - r1.l_reg), 1e-10);
}

TEST(TotalLoss, DecompositionIdentityProperty) {
  Gen gen(69);
  for (int c = 0; c < 100; ++c) {
    auto in = make_instance(gen, gen.index(2, 7), gen.index(2, 7), gen.index(1, 3), gen.index(1, 4), gen.index(1, 2), 1);
    const auto oc = objective_config(gen.real(0.0, 2.0), gen.real(0.0, 1.0), gen.real(0.1, 1.0));
    const auto r = total_loss_and_grads(in.graph, in.factors, in.params, in.model, oc, in.batch, in.contrast).report;
    EXPECT_NEAR(r.total, r.l_r + r.lambda * (r.l_us + r.l_vs) + r.l_reg, 1e-10);
    EXPECT_GE(r.l_r, 0.0);
    EXPECT_GE(r.l_us, 0.0);
    EXPECT_GE(r.l_vs, 0.0);
    EXPECT_GE(r.l_reg, 0.0);
  }
}

TEST(TotalLoss, UniformFusedRowsGiveClosedFormContrast) {
  Gen gen(70);
  auto in = make_instance(gen, 6, 5, 2, 3, 2, 2);
  in.params.fuse_user_weight.fill(0.0);
  in.params.fuse_item_weight.fill(0.0);
  in.params.fuse_user_bias = {0.0, 0.6, 0.8};
  in.params.fuse_item_bias = {0.6, 0.0, 0.8};
  const auto r = total_loss(in.graph, in.factors, in.params, in.model, objective_config(1.0, 0.0, 0.2), {}, in.contrast);
  EXPECT_NEAR(r.l_us, 3 * 6 * std::log(6.0), 1e-10);
  EXPECT_NEAR(r.l_vs, 3 * 5 * std::log(5.0), 1e-10);
}

TEST(TotalLoss, AblationSwitchesRemoveTerms) {
  Gen gen(71);
  auto in = make_instance(gen, 6, 5, 2, 3, 2, 2);
  auto oc = objective_config(0.5, 0.01, 0.2);
  oc.use_contrastive_loss = false;
  auto r = total_loss_and_grads(in.graph, in.factors, in.params, in.model, oc, in.batch, in.contrast).report;
  EXPECT_EQ(r.l_us + r.l_vs, 0.0);
  EXPECT_GT(r.l_r, 0.0);
  oc.use_contrastive_loss = true;
  oc.use_ranking_loss = false;
  r = total_loss_and_grads(in.graph, in.factors, in.params, in.model, oc, in.batch, in.contrast).report;
  EXPECT_EQ(r.l_r, 0.0);
  EXPECT_GT(r.l_us, 0.0);
}

TEST(TotalLoss, NonFiniteTermNamed) {
  Gen gen(72);
  auto in = make_instance(gen, 5, 4, 1, 2, 1, 1);
  in.params.user_embeds[0].fill(std::numeric_limits<double>::quiet_NaN());
  try {
    total_loss_and_grads(in.graph, in.factors, in.params, in.model, objective_config(0.2, 0.0, 0.2), in.batch,
                         in.contrast);
    FAIL() << "expected a numeric error";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("l_r"), std::string::npos);
    EXPECT_EQ(e.code(), ExitCode::numerical_error);
  }
}

namespace {

void expect_gradients_match(const Instance& in, const ObjectiveConfig& oc, const DropoutMasks& masks = {}) {
  const auto lg = total_loss_and_grads(in.graph, in.factors, in.params, in.model, oc, in.batch, in.contrast, masks);
  const auto res = mbsvd::testing::gradcheck(
      in.params, lg.grads,
      [&](const ModelParams& p) {
        return total_loss(in.graph, in.factors, p, in.model, oc, in.batch, in.contrast, masks).total;
      },
      1e-5, 1e-4);
  EXPECT_TRUE(res.failures.empty()) << res.failures.size() << " of " << res.checked << " components off; worst "
                                    << res.worst.tensor << "[" << res.worst.index << "] analytic "
                                    << res.worst.analytic << " numeric " << res.worst.numeric;
}

}  // namespace

TEST(Gradients, PerLayerContrastMatchesFiniteDifferences) {
  Gen gen(73);
  for (int c = 0; c < 5; ++c) expect_gradients_match(make_instance(gen, 6, 5, 2, 4, 2, 2), objective_config(0.2, 0.05, 0.2));
}

TEST(Gradients, FinalOnlyAndFullDenominator) {
  Gen gen(74);
  auto oc = objective_config(0.7, 0.01, 0.5);
  oc.contrast_mode = ContrastMode::final_only;
  expect_gradients_match(make_instance(gen, 6, 5, 2, 3, 2, 2), oc);
  oc.contrast_mode = ContrastMode::per_layer;
  oc.full_denominator = true;
  auto in = make_instance(gen, 7, 6, 3, 3, 3, 2);
  in.contrast.users = {1, 4};
  in.contrast.items = {0, 2, 5};
  expect_gradients_match(in, oc);
}

TEST(Gradients, FrozenDropoutMasks) {
  Gen gen(75);
  auto in = make_instance(gen, 6, 5, 2, 3, 2, 2);
  std::mt19937_64 rng(3);
  const auto masks = sample_dropout_masks(in.graph, 2, 0.4, rng);
  in.model.edge_dropout_rate = 0.4;
  expect_gradients_match(in, objective_config(0.2, 0.05, 0.2), masks);
}

TEST(ObjectiveConfig, Validation) {
  EXPECT_THROW(objective_config(0.2, 0.05, 0.0).validate(), ConfigError);
  EXPECT_THROW(objective_config(-1.0, 0.05, 0.2).validate(), ConfigError);
  EXPECT_THROW(objective_config(0.2, -0.1, 0.2).validate(), ConfigError);
}

TEST(LossLog, LineHasSpecifiedKeys) {
  LossReport r;
  r.l_r = 1;
  r.total = 2;
  const auto j = loss_log_line(7, r);
  for (const char* k : {"step", "l_r", "l_us", "l_vs", "l_reg", "total"}) EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_EQ(j.size(), 6u);
  EXPECT_EQ(j["step"], 7);
}
