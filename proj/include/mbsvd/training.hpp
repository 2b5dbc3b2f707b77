#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mbsvd/dataio.hpp"
#include "mbsvd/error.hpp"
#include "mbsvd/eval.hpp"
#include "mbsvd/graph.hpp"
#include "mbsvd/model.hpp"
#include "mbsvd/objective.hpp"

namespace mbsvd {

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 2048;
  double lambda = 0.2;
  double beta = 0.05;
  double tau = 0.2;
  std::size_t epochs = 100;
  std::size_t patience = 10;
  std::uint64_t seed = 0;
  // Cap on contrasted nodes per side and step; 0 keeps every batch node.
  std::size_t infonce_batch_nodes = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  ContrastMode contrast_mode = ContrastMode::per_layer;
  bool infonce_full_denominator = false;
  bool use_ranking_loss = true;
  bool use_contrastive_loss = true;
  ScoreView score_view = ScoreView::F;
  // When false, history lines carry elapsed_ms = 0 so logs are byte-stable.
  bool log_elapsed = true;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(beta >= 0.0) || !(lambda >= 0.0)) throw ConfigError("lambda and beta must be >= 0");
  }

  ObjectiveConfig objective() const {
    return {lambda, beta, tau, contrast_mode, infonce_full_denominator, use_ranking_loss, use_contrastive_loss};
  }
};

// ---------------------------------------------------------------------------
// Negative sampling

/// Observed train target edges plus, per user, every target item in any split.
struct TrainingData {
  std::size_t num_items = 0;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> positives;
  std::vector<std::vector<std::uint32_t>> user_target_items;  // sorted

  bool is_target_edge(std::uint32_t u, std::uint32_t i) const {
    const auto& v = user_target_items[u];
    return std::binary_search(v.begin(), v.end(), i);
  }
};

inline TrainingData make_training_data(const InteractionDataset& ds, const BehaviorGraph& g) {
  TrainingData t;
  t.num_items = g.num_items;
  const auto& adj = g.adjacency[g.target_behavior];
  for (std::size_t u = 0; u < adj.num_rows(); ++u)
    for (auto i : adj.row(u).cols) t.positives.push_back({static_cast<std::uint32_t>(u), i});
  t.user_target_items.resize(ds.num_users);
  for (const auto& r : ds.records)
    if (r.behavior == ds.target()) t.user_target_items[r.user].push_back(r.item);
  for (auto& v : t.user_target_items) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  }
  return t;
}

/// Draws (u, i) uniformly from train target edges and j uniformly among
/// items that are not target items of u in any split. Rejection sampling runs
/// for num_items draws, then the free items are listed and one is picked
/// directly. A user with no free item is skipped and counted in `skipped`.
inline TripletBatch sample_triplets(const TrainingData& data, std::size_t batch_size, std::mt19937_64& rng,
                                    std::size_t* skipped = nullptr) {
  if (data.positives.empty()) throw StateError("no train target edges to sample from");
  TripletBatch b;
  b.triples.reserve(batch_size);
  std::uniform_int_distribution<std::size_t> pick_edge(0, data.positives.size() - 1);
  std::uniform_int_distribution<std::uint32_t> pick_item(0, static_cast<std::uint32_t>(data.num_items - 1));
  for (std::size_t n = 0; n < batch_size; ++n) {
    const auto [u, i] = data.positives[pick_edge(rng)];
    std::optional<std::uint32_t> neg;
    for (std::size_t attempt = 0; attempt < data.num_items; ++attempt) {
      const auto j = pick_item(rng);
      if (!data.is_target_edge(u, j)) {
        neg = j;
        break;
      }
    }
    if (!neg) {
      const auto& taken = data.user_target_items[u];
      const std::size_t free = data.num_items - taken.size();
      if (free == 0) {
        if (skipped) ++*skipped;
        continue;
      }
      auto nth = std::uniform_int_distribution<std::size_t>(0, free - 1)(rng);
      for (std::uint32_t j = 0;; ++j)
        if (!data.is_target_edge(u, j) && nth-- == 0) {
          neg = j;
          break;
        }
    }
    b.triples.push_back({u, i, *neg});
  }
  return b;
}

/// Distinct users and items (positive and negative) of a triplet batch,
/// optionally subsampled to `cap` per side.
inline ContrastBatch contrast_batch_from(const TripletBatch& b, std::size_t cap, std::mt19937_64& rng) {
  ContrastBatch c;
  for (const auto& t : b.triples) {
    c.users.push_back(t.user);
    c.items.push_back(t.pos_item);
    c.items.push_back(t.neg_item);
  }
  auto finish = [&](std::vector<std::uint32_t>& v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    if (cap > 0 && v.size() > cap) {
      std::shuffle(v.begin(), v.end(), rng);
      v.resize(cap);
      std::sort(v.begin(), v.end());
    }
  };
  finish(c.users);
  finish(c.items);
  return c;
}

// ---------------------------------------------------------------------------
// Adam

struct OptimizerState {
  ModelParams first_moment;
  ModelParams second_moment;
  std::size_t step_count = 0;

  static OptimizerState for_params(const ModelParams& p) {
    return {ModelParams::zeros_like(p), ModelParams::zeros_like(p), 0};
  }
  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

/// One bias-corrected Adam update, elementwise over every tensor.
inline void adam_step(ModelParams& params, const ModelParams& grads, OptimizerState& state, const TrainConfig& cfg) {
  std::vector<std::pair<std::string, std::span<const double>>> g;
  grads.for_each_tensor([&](const std::string& name, std::span<const double> s) { g.push_back({name, s}); });
  for (const auto& [name, s] : g)
    if (!all_finite(s)) throw NumericError("non-finite gradient in tensor " + name);

  std::vector<std::span<double>> m, v;
  state.first_moment.for_each_tensor([&](const std::string&, std::span<double> s) { m.push_back(s); });
  state.second_moment.for_each_tensor([&](const std::string&, std::span<double> s) { v.push_back(s); });
  std::size_t t = 0;
  bool shapes_ok = m.size() == g.size() && v.size() == g.size();
  params.for_each_tensor([&](const std::string&, std::span<double> p) {
    if (t < g.size() && (p.size() != g[t].second.size() || p.size() != m[t].size() || p.size() != v[t].size()))
      shapes_ok = false;
    ++t;
  });
  if (!shapes_ok || t != g.size()) throw ShapeError("adam_step: parameter, gradient and moment shapes differ");

  ++state.step_count;
  const double step = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(cfg.adam_beta1, step);
  const double c2 = 1.0 - std::pow(cfg.adam_beta2, step);
  t = 0;
  params.for_each_tensor([&](const std::string&, std::span<double> p) {
    const auto gs = g[t].second;
    auto ms = m[t], vs = v[t];
    for (std::size_t i = 0; i < p.size(); ++i) {
      ms[i] = cfg.adam_beta1 * ms[i] + (1.0 - cfg.adam_beta1) * gs[i];
      vs[i] = cfg.adam_beta2 * vs[i] + (1.0 - cfg.adam_beta2) * gs[i] * gs[i];
      p[i] -= cfg.learning_rate * (ms[i] / c1) / (std::sqrt(vs[i] / c2) + cfg.adam_eps);
    }
    ++t;
  });
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_total = 0.0;
  double mean_l_r = 0.0;
  double mean_l_us = 0.0;
  double mean_l_vs = 0.0;
  double val_recall10 = 0.0;
  double val_ndcg10 = 0.0;
  std::int64_t elapsed_ms = 0;
};

inline nlohmann::json to_json(const EpochRecord& e) {
  nlohmann::json j;
  j["epoch"] = e.epoch;
  j["mean_total"] = e.mean_total;
  j["mean_l_r"] = e.mean_l_r;
  j["mean_l_us"] = e.mean_l_us;
  j["mean_l_vs"] = e.mean_l_vs;
  j["val_recall@10"] = e.val_recall10;
  j["val_ndcg@10"] = e.val_ndcg10;
  j["elapsed_ms"] = e.elapsed_ms;
  return j;
}

inline std::string rng_state_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline std::mt19937_64 rng_from_string(const std::string& s) {
  std::mt19937_64 rng;
  std::istringstream is(s);
  is >> rng;
  if (!is) throw StateError("invalid rng state");
  return rng;
}

/// Snapshot taken at the best validation epoch.
struct Checkpoint {
  ModelParams params;
  OptimizerState optimizer;
  std::string rng_state;
  std::size_t epoch = 0;
  double val_recall10 = -1.0;
};

struct TrainResult {
  Checkpoint best;
  std::vector<EpochRecord> history;
  std::size_t skipped_triples = 0;
  bool diverged = false;
  std::string divergence_message;
};

using ObjectiveFn = std::function<LossAndGrads(const ModelParams&, const TripletBatch&, const ContrastBatch&,
                                               const DropoutMasks&)>;

/// The model's own joint objective bound to a graph and its factors.
inline ObjectiveFn model_objective(const BehaviorGraph& g, const std::vector<SvdFactors>& factors,
                                   const ModelConfig& mc, const ObjectiveConfig& oc) {
  return [&g, &factors, mc, oc](const ModelParams& p, const TripletBatch& b, const ContrastBatch& c,
                                const DropoutMasks& m) { return total_loss_and_grads(g, factors, p, mc, oc, b, c, m); };
}

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  std::function<void(std::size_t, const LossReport&)> on_step;
};

/// Validation Recall@10 / NDCG@10 of `params`.
inline std::pair<double, double> validation_metrics(const InteractionDataset& ds, const BehaviorGraph& g,
                                                    const std::vector<SvdFactors>& factors, const ModelParams& p,
                                                    const ModelConfig& mc, ScoreView view) {
  const ForwardCache c = forward(g, factors, p, mc);
  const RankingMetrics m = evaluate(c, g, truth_for(ds, Role::valid), {10}, view);
  return {m.recall_at.at(10), m.ndcg_at.at(10)};
}

/// Epoch loop with best-on-validation checkpointing and patience-based
/// early stopping. A non-finite loss stops training; the best checkpoint so
/// far is kept and `diverged` is set.
inline TrainResult train_loop(const InteractionDataset& ds, const BehaviorGraph& g,
                              const std::vector<SvdFactors>& factors, const TrainConfig& cfg, const ModelConfig& mc,
                              const ObjectiveFn& objective, const TrainHooks& hooks = {}) {
  cfg.validate();
  mc.validate();
  const TrainingData data = make_training_data(ds, g);
  std::mt19937_64 rng(cfg.seed);
  ModelParams params = init_params(mc, g.num_users, g.num_items, g.num_behaviors());
  OptimizerState opt = OptimizerState::for_params(params);

  TrainResult result;
  result.best.params = params;
  result.best.optimizer = opt;
  result.best.rng_state = rng_state_string(rng);

  const std::size_t steps_per_epoch = std::max<std::size_t>(1, (data.positives.size() + cfg.batch_size - 1) / cfg.batch_size);
  std::size_t since_best = 0, global_step = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t steps = 0;
    try {
      for (std::size_t s = 0; s < steps_per_epoch; ++s) {
        const TripletBatch batch = sample_triplets(data, cfg.batch_size, rng, &result.skipped_triples);
        const ContrastBatch contrast = contrast_batch_from(batch, cfg.infonce_batch_nodes, rng);
        const DropoutMasks masks = sample_dropout_masks(g, mc.num_layers, mc.edge_dropout_rate, rng);
        LossAndGrads lg = objective(params, batch, contrast, masks);
        if (!std::isfinite(lg.report.total)) throw NumericError("non-finite total loss");
        adam_step(params, lg.grads, opt, cfg);
        rec.mean_total += lg.report.total;
        rec.mean_l_r += lg.report.l_r;
        rec.mean_l_us += lg.report.l_us;
        rec.mean_l_vs += lg.report.l_vs;
        ++steps;
        ++global_step;
        if (hooks.on_step) hooks.on_step(global_step, lg.report);
      }
    } catch (const NumericError& e) {
      result.diverged = true;
      result.divergence_message = "epoch " + std::to_string(epoch) + ": " + e.what();
      break;
    }
    const double denom = static_cast<double>(steps);
    rec.mean_total /= denom;
    rec.mean_l_r /= denom;
    rec.mean_l_us /= denom;
    rec.mean_l_vs /= denom;
    std::tie(rec.val_recall10, rec.val_ndcg10) = validation_metrics(ds, g, factors, params, mc, cfg.score_view);
    if (cfg.log_elapsed)
      rec.elapsed_ms =
          std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);

    if (rec.val_recall10 > result.best.val_recall10) {
      result.best = {params, opt, rng_state_string(rng), epoch, rec.val_recall10};
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return result;
}

inline TrainResult train_loop(const InteractionDataset& ds, const BehaviorGraph& g,
                              const std::vector<SvdFactors>& factors, const TrainConfig& cfg, const ModelConfig& mc,
                              const TrainHooks& hooks = {}) {
  return train_loop(ds, g, factors, cfg, mc, model_objective(g, factors, mc, cfg.objective()), hooks);
}

}  // namespace mbsvd
