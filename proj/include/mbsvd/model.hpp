#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mbsvd/error.hpp"
#include "mbsvd/graph.hpp"
#include "mbsvd/linalg/dense.hpp"
#include "mbsvd/linalg/sparse.hpp"
#include "mbsvd/linalg/svd.hpp"

namespace mbsvd {

struct ModelConfig {
  std::size_t embed_dim = 64;
  std::size_t num_layers = 2;
  std::size_t rank = 5;
  double edge_dropout_rate = 0.0;
  std::uint64_t seed = 0;
  std::size_t oversampling = 5;
  std::size_t power_iters = 2;

  void validate() const {
    if (embed_dim < 1) throw ConfigError("embed_dim must be >= 1");
    if (num_layers < 1) throw ConfigError("num_layers must be >= 1");
    if (rank < 1) throw ConfigError("rank must be >= 1");
    if (!(edge_dropout_rate >= 0.0 && edge_dropout_rate < 1.0))
      throw ConfigError("edge_dropout_rate must lie in [0, 1)");
  }
};

enum class Side { user, item };

/// Every trainable tensor. Gradients reuse this type.
struct ModelParams {
  std::vector<DenseMatrix> user_embeds;  // K tables, M x d
  std::vector<DenseMatrix> item_embeds;  // K tables, N x d
  std::vector<double> behavior_w;        // K
  DenseMatrix fuse_user_weight;          // d x d
  DenseMatrix fuse_item_weight;          // d x d
  std::vector<double> fuse_user_bias;    // d
  std::vector<double> fuse_item_bias;    // d

  std::size_t num_behaviors() const noexcept { return behavior_w.size(); }
  std::size_t embed_dim() const noexcept { return fuse_user_bias.size(); }

  /// Calls f(name, span) on every tensor in a fixed order.
  template <class F>
  void for_each_tensor(F&& f) {
    for (std::size_t k = 0; k < user_embeds.size(); ++k) f("user_embeds." + std::to_string(k), user_embeds[k].values());
    for (std::size_t k = 0; k < item_embeds.size(); ++k) f("item_embeds." + std::to_string(k), item_embeds[k].values());
    f(std::string("behavior_w"), std::span<double>(behavior_w));
    f(std::string("fuse_user_weight"), fuse_user_weight.values());
    f(std::string("fuse_item_weight"), fuse_item_weight.values());
    f(std::string("fuse_user_bias"), std::span<double>(fuse_user_bias));
    f(std::string("fuse_item_bias"), std::span<double>(fuse_item_bias));
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    const_cast<ModelParams*>(this)->for_each_tensor(
        [&](const std::string& name, std::span<double> s) { f(name, std::span<const double>(s)); });
  }

  static ModelParams zeros_like(const ModelParams& p) {
    ModelParams z = p;
    z.for_each_tensor([](const std::string&, std::span<double> s) { std::fill(s.begin(), s.end(), 0.0); });
    return z;
  }

  std::size_t num_values() const {
    std::size_t n = 0;
    for_each_tensor([&](const std::string&, std::span<const double> s) { n += s.size(); });
    return n;
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Glorot-uniform embeddings and fusion weights, zero biases, unit behavior
/// weights. Deterministic in `config.seed`.
inline ModelParams init_params(const ModelConfig& config, std::size_t num_users, std::size_t num_items,
                               std::size_t num_behaviors) {
  config.validate();
  if (num_users == 0 || num_items == 0 || num_behaviors == 0) throw ConfigError("init_params: empty dimension");
  const std::size_t d = config.embed_dim;
  std::mt19937_64 rng(config.seed);
  auto glorot = [&](std::size_t rows, std::size_t cols) {
    const double s = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> dist(-s, s);
    DenseMatrix m(rows, cols);
    for (auto& v : m.values()) v = dist(rng);
    return m;
  };
  ModelParams p;
  for (std::size_t k = 0; k < num_behaviors; ++k) p.user_embeds.push_back(glorot(num_users, d));
  for (std::size_t k = 0; k < num_behaviors; ++k) p.item_embeds.push_back(glorot(num_items, d));
  p.behavior_w.assign(num_behaviors, 1.0);
  p.fuse_user_weight = glorot(d, d);
  p.fuse_item_weight = glorot(d, d);
  p.fuse_user_bias.assign(d, 0.0);
  p.fuse_item_bias.assign(d, 0.0);
  return p;
}

inline void check_params_match(const ModelParams& p, const BehaviorGraph& g) {
  const std::size_t kk = g.num_behaviors(), d = p.embed_dim();
  if (p.user_embeds.size() != kk || p.item_embeds.size() != kk || p.behavior_w.size() != kk)
    throw ShapeError("parameters hold " + std::to_string(p.behavior_w.size()) + " behaviors, graph has " +
                     std::to_string(kk));
  for (std::size_t k = 0; k < kk; ++k) {
    if (p.user_embeds[k].rows() != g.num_users || p.user_embeds[k].cols() != d)
      throw ShapeError("user_embeds." + std::to_string(k) + " is " + p.user_embeds[k].shape_string());
    if (p.item_embeds[k].rows() != g.num_items || p.item_embeds[k].cols() != d)
      throw ShapeError("item_embeds." + std::to_string(k) + " is " + p.item_embeds[k].shape_string());
  }
  if (p.fuse_user_weight.rows() != d || p.fuse_user_weight.cols() != d || p.fuse_item_weight.rows() != d ||
      p.fuse_item_weight.cols() != d || p.fuse_item_bias.size() != d)
    throw ShapeError("fusion parameters do not match embedding dimension " + std::to_string(d));
}

// ---------------------------------------------------------------------------
// Behavior-aware weights and fusion

/// Row-wise softmax of w_k * n_k over behaviors, one row per user (or item).
inline DenseMatrix behavior_weights(const std::vector<std::vector<std::uint32_t>>& counts,
                                    std::span<const double> w) {
  const std::size_t kk = w.size();
  DenseMatrix a(counts.size(), kk);
  for (std::size_t r = 0; r < counts.size(); ++r) {
    if (counts[r].size() != kk) throw ShapeError("count row width differs from behavior weights");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < kk; ++k) mx = std::max(mx, w[k] * counts[r][k]);
    double z = 0.0;
    for (std::size_t k = 0; k < kk; ++k) z += (a(r, k) = std::exp(w[k] * counts[r][k] - mx));
    for (std::size_t k = 0; k < kk; ++k) a(r, k) /= z;
  }
  return a;
}

/// Softmax of an arbitrary logit matrix, row-wise, with max subtraction.
inline DenseMatrix softmax_rows(const DenseMatrix& logits) {
  DenseMatrix a(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto row = logits.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t k = 0; k < row.size(); ++k) z += (a(r, k) = std::exp(row[k] - mx));
    for (std::size_t k = 0; k < row.size(); ++k) a(r, k) /= z;
  }
  return a;
}

inline DenseMatrix behavior_weights(const BehaviorGraph& g, const ModelParams& p, Side side) {
  return behavior_weights(side == Side::user ? g.user_counts : g.item_counts, p.behavior_w);
}

struct FusedView {
  DenseMatrix mixed;  // sum_k a_k * state_k, before the affine map
  DenseMatrix out;    // ReLU(mixed W^T + b)
};

using StateRefs = std::vector<const DenseMatrix*>;

/// out[r] = ReLU(W (sum_k a[r][k] * state_k[r]) + b)
inline FusedView fuse(const StateRefs& states, const DenseMatrix& a, const DenseMatrix& w, std::span<const double> b) {
  if (states.empty() || states.size() != a.cols()) throw ShapeError("fuse: behavior count mismatch");
  const std::size_t rows = states[0]->rows(), d = states[0]->cols();
  if (a.rows() != rows || w.rows() != d || w.cols() != d || b.size() != d)
    throw ShapeError("fuse: weights " + a.shape_string() + ", W " + w.shape_string() + " for states " +
                     states[0]->shape_string());
  FusedView v{DenseMatrix(rows, d), DenseMatrix()};
  for (std::size_t k = 0; k < states.size(); ++k) {
    if (!states[k]->same_shape(*states[0])) throw ShapeError("fuse: state shapes differ");
    for (std::size_t r = 0; r < rows; ++r) {
      const double ark = a(r, k);
      auto src = states[k]->row(r);
      auto dst = v.mixed.row(r);
      for (std::size_t j = 0; j < d; ++j) dst[j] += ark * src[j];
    }
  }
  v.out = matmul_nt(v.mixed, w);
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = v.out.row(r);
    for (std::size_t j = 0; j < d; ++j) row[j] = std::max(0.0, row[j] + b[j]);
  }
  return v;
}

// ---------------------------------------------------------------------------
// Propagation

/// Per-edge multipliers for one behavior and layer (CSR order). Empty means
/// no dropout.
using EdgeMask = std::vector<double>;

/// masks[k][l - 1] is applied at layer l of behavior k.
struct DropoutMasks {
  std::vector<std::vector<EdgeMask>> per_behavior;
  bool empty() const noexcept { return per_behavior.empty(); }
  std::span<const double> at(std::size_t k, std::size_t layer) const {
    if (per_behavior.empty()) return {};
    return per_behavior[k][layer - 1];
  }
  friend bool operator==(const DropoutMasks&, const DropoutMasks&) = default;
};

/// Inverted edge dropout: each stored edge survives with probability
/// 1 - rate and survivors are scaled by 1 / (1 - rate).
inline DropoutMasks sample_dropout_masks(const BehaviorGraph& g, std::size_t num_layers, double rate,
                                         std::mt19937_64& rng) {
  DropoutMasks m;
  if (rate <= 0.0) return m;
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  m.per_behavior.resize(g.num_behaviors());
  for (std::size_t k = 0; k < g.num_behaviors(); ++k) {
    for (std::size_t l = 0; l < num_layers; ++l) {
      EdgeMask e(g.adjacency[k].nnz());
      for (auto& v : e) v = keep(rng) ? scale : 0.0;
      m.per_behavior[k].push_back(std::move(e));
    }
  }
  return m;
}

struct LayerStep {
  DenseMatrix user_prop;  // x^(l) = ReLU(drop(A) Y^(l-1))
  DenseMatrix item_prop;  // y^(l) = ReLU(drop(A)^T X^(l-1))
  DenseMatrix user_next;  // X^(l) = X^(l-1) + x^(l)
  DenseMatrix item_next;  // Y^(l) = Y^(l-1) + y^(l)
};

/// One graph-convolution layer with residual connection.
inline LayerStep forward_layer(const SparseAdjacency& adj, const DenseMatrix& user_prev, const DenseMatrix& item_prev,
                               std::span<const double> edge_mask = {}) {
  if (adj.num_rows() != user_prev.rows() || adj.num_cols() != item_prev.rows() ||
      user_prev.cols() != item_prev.cols())
    throw ShapeError("forward_layer: adjacency " + std::to_string(adj.num_rows()) + "x" +
                     std::to_string(adj.num_cols()) + " with states " + user_prev.shape_string() + ", " +
                     item_prev.shape_string());
  LayerStep s;
  s.user_prop = spmm(adj, item_prev, edge_mask);
  relu_inplace(s.user_prop);
  s.item_prop = spmm_transposed(adj, user_prev, edge_mask);
  relu_inplace(s.item_prop);
  s.user_next = user_prev + s.user_prop;
  s.item_next = item_prev + s.item_prop;
  return s;
}

/// States of one behavior branch. Index l in *_layers is layer l (0..L);
/// index l-1 in *_prop is the propagation output of layer l.
struct BehaviorStates {
  std::vector<DenseMatrix> user_layers, item_layers;
  std::vector<DenseMatrix> user_prop, item_prop;
  // Low-rank view: svd_*_prop[l-1] = ReLU(A_hat * previous original state);
  // svd_*_layers[l] = previous original state + svd_*_prop[l-1], layer 0
  // shared with the original view.
  std::vector<DenseMatrix> svd_user_prop, svd_item_prop;
  std::vector<DenseMatrix> svd_user_layers, svd_item_layers;
  DenseMatrix user_acc, item_acc;
  DenseMatrix svd_user_acc, svd_item_acc;
};

inline DenseMatrix sum_layers(const std::vector<DenseMatrix>& layers) {
  DenseMatrix acc = layers.front();
  for (std::size_t l = 1; l < layers.size(); ++l) acc += layers[l];
  return acc;
}

/// Sum over l = 0..L of the layer states of behavior k.
inline std::pair<DenseMatrix, DenseMatrix> accumulate_layers(const BehaviorStates& s) {
  return {sum_layers(s.user_layers), sum_layers(s.item_layers)};
}

/// Fills the low-rank view of one behavior from its already-propagated
/// original-view states. No dropout in this branch.
inline void svd_view(const SvdFactors& factors, BehaviorStates& s) {
  const std::size_t layers = s.user_layers.size() - 1;
  s.svd_user_prop.clear();
  s.svd_item_prop.clear();
  s.svd_user_layers.assign(1, s.user_layers[0]);
  s.svd_item_layers.assign(1, s.item_layers[0]);
  for (std::size_t l = 1; l <= layers; ++l) {
    DenseMatrix gu = low_rank_propagate(factors, s.item_layers[l - 1], false);
    relu_inplace(gu);
    DenseMatrix gv = low_rank_propagate(factors, s.user_layers[l - 1], true);
    relu_inplace(gv);
    s.svd_user_layers.push_back(s.user_layers[l - 1] + gu);
    s.svd_item_layers.push_back(s.item_layers[l - 1] + gv);
    s.svd_user_prop.push_back(std::move(gu));
    s.svd_item_prop.push_back(std::move(gv));
  }
  s.svd_user_acc = sum_layers(s.svd_user_layers);
  s.svd_item_acc = sum_layers(s.svd_item_layers);
}

/// Which fused representation scores and contrasts use.
enum class ScoreView { F, E };

inline std::string_view to_string(ScoreView v) { return v == ScoreView::F ? "F" : "E"; }
inline ScoreView parse_score_view(std::string_view s) {
  if (s == "F" || s == "f") return ScoreView::F;
  if (s == "E" || s == "e") return ScoreView::E;
  throw ConfigError("score view must be F or E, got '" + std::string(s) + "'");
}

struct ForwardCache {
  std::vector<BehaviorStates> behaviors;
  DenseMatrix a_user, a_item;
  // Per-layer fusions, l = 0..L, with the shared W/b.
  std::vector<FusedView> e_user_layers, e_item_layers, f_user_layers, f_item_layers;
  FusedView e_user, e_item, f_user, f_item;
  DropoutMasks masks;

  std::size_t num_layers() const { return e_user_layers.size() - 1; }

  const DenseMatrix& final_view(Side side, ScoreView view) const {
    if (side == Side::user) return view == ScoreView::F ? f_user.out : e_user.out;
    return view == ScoreView::F ? f_item.out : e_item.out;
  }
};

/// Rank-q factors of every behavior's adjacency, computed once per run.
inline std::vector<SvdFactors> compute_factors(const BehaviorGraph& g, const ModelConfig& config) {
  std::vector<SvdFactors> f;
  for (std::size_t k = 0; k < g.num_behaviors(); ++k)
    f.push_back(rsvd(g.adjacency[k], {config.rank, config.oversampling, config.power_iters, config.seed + k}));
  return f;
}

/// Full forward pass. Empty `masks` is evaluation mode.
inline ForwardCache forward(const BehaviorGraph& g, const std::vector<SvdFactors>& factors, const ModelParams& p,
                            const ModelConfig& config, DropoutMasks masks = {}) {
  check_params_match(p, g);
  const std::size_t kk = g.num_behaviors(), layers = config.num_layers;
  if (factors.size() != kk)
    throw StateError("svd factors available for " + std::to_string(factors.size()) + " of " + std::to_string(kk) +
                     " behaviors");
  if (!masks.empty() && (masks.per_behavior.size() != kk || masks.per_behavior[0].size() != layers))
    throw ShapeError("dropout masks do not match behaviors x layers");

  ForwardCache c;
  c.masks = std::move(masks);
  c.behaviors.resize(kk);
  for (std::size_t k = 0; k < kk; ++k) {
    auto& s = c.behaviors[k];
    s.user_layers.push_back(p.user_embeds[k]);
    s.item_layers.push_back(p.item_embeds[k]);
    for (std::size_t l = 1; l <= layers; ++l) {
      LayerStep step = forward_layer(g.adjacency[k], s.user_layers[l - 1], s.item_layers[l - 1], c.masks.at(k, l));
      s.user_prop.push_back(std::move(step.user_prop));
      s.item_prop.push_back(std::move(step.item_prop));
      s.user_layers.push_back(std::move(step.user_next));
      s.item_layers.push_back(std::move(step.item_next));
    }
    std::tie(s.user_acc, s.item_acc) = accumulate_layers(s);
    svd_view(factors[k], s);
  }

  c.a_user = behavior_weights(g, p, Side::user);
  c.a_item = behavior_weights(g, p, Side::item);

  auto refs = [&](auto member) {
    StateRefs r;
    for (const auto& s : c.behaviors) r.push_back(&member(s));
    return r;
  };
  for (std::size_t l = 0; l <= layers; ++l) {
    c.e_user_layers.push_back(fuse(refs([l](const BehaviorStates& s) -> const DenseMatrix& { return s.user_layers[l]; }),
                                   c.a_user, p.fuse_user_weight, p.fuse_user_bias));
    c.e_item_layers.push_back(fuse(refs([l](const BehaviorStates& s) -> const DenseMatrix& { return s.item_layers[l]; }),
                                   c.a_item, p.fuse_item_weight, p.fuse_item_bias));
    c.f_user_layers.push_back(
        fuse(refs([l](const BehaviorStates& s) -> const DenseMatrix& { return s.svd_user_layers[l]; }), c.a_user,
             p.fuse_user_weight, p.fuse_user_bias));
    c.f_item_layers.push_back(
        fuse(refs([l](const BehaviorStates& s) -> const DenseMatrix& { return s.svd_item_layers[l]; }), c.a_item,
             p.fuse_item_weight, p.fuse_item_bias));
  }
  c.e_user = fuse(refs([](const BehaviorStates& s) -> const DenseMatrix& { return s.user_acc; }), c.a_user,
                  p.fuse_user_weight, p.fuse_user_bias);
  c.e_item = fuse(refs([](const BehaviorStates& s) -> const DenseMatrix& { return s.item_acc; }), c.a_item,
                  p.fuse_item_weight, p.fuse_item_bias);
  c.f_user = fuse(refs([](const BehaviorStates& s) -> const DenseMatrix& { return s.svd_user_acc; }), c.a_user,
                  p.fuse_user_weight, p.fuse_user_bias);
  c.f_item = fuse(refs([](const BehaviorStates& s) -> const DenseMatrix& { return s.svd_item_acc; }), c.a_item,
                  p.fuse_item_weight, p.fuse_item_bias);
  return c;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json params_to_json(const ModelParams& p, std::uint64_t seed) {
  nlohmann::json tensors = nlohmann::json::object();
  nlohmann::json shapes = nlohmann::json::object();
  auto shape_of = [&](const std::string& name) -> std::vector<std::size_t> {
    if (name.rfind("user_embeds.", 0) == 0) {
      const auto& m = p.user_embeds[std::stoul(name.substr(12))];
      return {m.rows(), m.cols()};
    }
    if (name.rfind("item_embeds.", 0) == 0) {
      const auto& m = p.item_embeds[std::stoul(name.substr(12))];
      return {m.rows(), m.cols()};
    }
    if (name == "fuse_user_weight" || name == "fuse_item_weight") return {p.embed_dim(), p.embed_dim()};
    if (name == "behavior_w") return {p.behavior_w.size()};
    return {p.embed_dim()};
  };
  p.for_each_tensor([&](const std::string& name, std::span<const double> s) {
    tensors[name] = std::vector<double>(s.begin(), s.end());
    shapes[name] = shape_of(name);
  });
  return {{"seed", seed},
          {"num_behaviors", p.num_behaviors()},
          {"embed_dim", p.embed_dim()},
          {"shapes", shapes},
          {"tensors", tensors}};
}

inline ModelParams params_from_json(const nlohmann::json& j) {
  try {
    const std::size_t kk = j.at("num_behaviors").get<std::size_t>();
    const std::size_t d = j.at("embed_dim").get<std::size_t>();
    const auto& shapes = j.at("shapes");
    const auto& tensors = j.at("tensors");
    ModelParams p;
    for (std::size_t k = 0; k < kk; ++k) {
      const auto us = shapes.at("user_embeds." + std::to_string(k)).get<std::vector<std::size_t>>();
      const auto is = shapes.at("item_embeds." + std::to_string(k)).get<std::vector<std::size_t>>();
      p.user_embeds.emplace_back(us.at(0), us.at(1));
      p.item_embeds.emplace_back(is.at(0), is.at(1));
    }
    p.behavior_w.assign(kk, 0.0);
    p.fuse_user_weight = DenseMatrix(d, d);
    p.fuse_item_weight = DenseMatrix(d, d);
    p.fuse_user_bias.assign(d, 0.0);
    p.fuse_item_bias.assign(d, 0.0);
    p.for_each_tensor([&](const std::string& name, std::span<double> s) {
      const auto values = tensors.at(name).get<std::vector<double>>();
      if (values.size() != s.size()) throw StateError("tensor " + name + " has wrong length");
      std::copy(values.begin(), values.end(), s.begin());
    });
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw StateError(std::string("invalid parameter container: ") + e.what());
  } catch (const std::logic_error& e) {
    throw StateError(std::string("invalid parameter container: ") + e.what());
  }
}

}  // namespace mbsvd
