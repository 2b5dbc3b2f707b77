#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mbsvd/error.hpp"
#include "mbsvd/model.hpp"

namespace mbsvd {

struct Triple {
  std::uint32_t user;
  std::uint32_t pos_item;
  std::uint32_t neg_item;
  friend bool operator==(const Triple&, const Triple&) = default;
};

struct TripletBatch {
  std::vector<Triple> triples;
  friend bool operator==(const TripletBatch&, const TripletBatch&) = default;
};

/// Nodes whose two views are contrasted in one step. Ids must be distinct.
struct ContrastBatch {
  std::vector<std::uint32_t> users;
  std::vector<std::uint32_t> items;
};

enum class ContrastMode { per_layer, final_only };

struct ObjectiveConfig {
  double lambda = 0.2;
  double beta = 0.05;
  double tau = 0.2;
  ContrastMode contrast_mode = ContrastMode::per_layer;
  // Negatives over every node instead of the batch members.
  bool full_denominator = false;
  bool use_ranking_loss = true;
  bool use_contrastive_loss = true;

  void validate() const {
    if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
    if (!(beta >= 0.0)) throw ConfigError("beta must be >= 0");
    if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  }
};

struct LossReport {
  double l_r = 0.0;
  double l_us = 0.0;
  double l_vs = 0.0;
  double l_reg = 0.0;
  double total = 0.0;
  double lambda = 0.0;
  double beta = 0.0;
  double tau = 0.0;
  std::size_t norm_floor_hits = 0;
};

/// {step, l_r, l_us, l_vs, l_reg, total}
inline nlohmann::json loss_log_line(std::size_t step, const LossReport& r) {
  return {{"step", step}, {"l_r", r.l_r}, {"l_us", r.l_us}, {"l_vs", r.l_vs}, {"l_reg", r.l_reg}, {"total", r.total}};
}

inline constexpr double kCosineNormFloor = 1e-12;

/// Cosine similarity with the norm floored at 1e-12.
inline double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = std::max(norm2(a), kCosineNormFloor);
  const double nb = std::max(norm2(b), kCosineNormFloor);
  return dot(a, b) / (na * nb);
}

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

// Logistic function without overflow for large |x|.
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// InfoNCE between two views of the same nodes:
///   sum_{i in batch} -log softmax_j( cos(view_a[i], view_b[j]) / tau )[i]
/// with j over the batch, or over every row when `full_denominator`.
/// Gradients are accumulated into grad_a / grad_b when non-null.
inline double infonce(const DenseMatrix& view_a, const DenseMatrix& view_b, double tau,
                      std::span<const std::uint32_t> batch, bool full_denominator, DenseMatrix* grad_a = nullptr,
                      DenseMatrix* grad_b = nullptr, std::size_t* floor_hits = nullptr) {
  if (!view_a.same_shape(view_b)) throw ShapeError("infonce views " + view_a.shape_string() + " vs " + view_b.shape_string());
  if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
  const std::size_t d = view_a.cols();
  std::vector<std::uint32_t> candidates;
  if (full_denominator) {
    candidates.resize(view_a.rows());
    for (std::size_t r = 0; r < candidates.size(); ++r) candidates[r] = static_cast<std::uint32_t>(r);
  } else {
    candidates.assign(batch.begin(), batch.end());
  }
  for (auto id : candidates)
    if (id >= view_a.rows()) throw IndexError("infonce node " + std::to_string(id));
  for (auto id : batch)
    if (id >= view_a.rows()) throw IndexError("infonce node " + std::to_string(id));

  auto unit = [&](const DenseMatrix& m, std::uint32_t r, std::vector<double>& out) {
    const auto row = m.row(r);
    const double n = norm2(row);
    if (n < kCosineNormFloor && floor_hits) ++*floor_hits;
    const double nf = std::max(n, kCosineNormFloor);
    out.resize(d);
    for (std::size_t j = 0; j < d; ++j) out[j] = row[j] / nf;
    return std::pair{nf, n >= kCosineNormFloor};
  };

  std::vector<std::vector<double>> b_unit(candidates.size());
  std::vector<double> b_norm(candidates.size());
  std::vector<bool> b_regular(candidates.size());
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    auto [nf, regular] = unit(view_b, candidates[c], b_unit[c]);
    b_norm[c] = nf;
    b_regular[c] = regular;
  }

  double total = 0.0;
  std::vector<double> a_unit, logits(candidates.size()), prob(candidates.size()), cosv(candidates.size());
  for (std::size_t bi = 0; bi < batch.size(); ++bi) {
    const std::uint32_t node = batch[bi];
    auto [a_norm, a_regular] = unit(view_a, node, a_unit);
    std::size_t pos = candidates.size();
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      if (candidates[c] == node) pos = c;
      cosv[c] = dot(a_unit, b_unit[c]);
      logits[c] = cosv[c] / tau;
      mx = std::max(mx, logits[c]);
    }
    if (pos == candidates.size()) throw IndexError("infonce batch node missing from candidates");
    double z = 0.0;
    for (std::size_t c = 0; c < candidates.size(); ++c) z += (prob[c] = std::exp(logits[c] - mx));
    for (auto& p : prob) p /= z;
    total += (mx + std::log(z)) - logits[pos];

    if (!grad_a && !grad_b) continue;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      const double coef = (prob[c] - (c == pos ? 1.0 : 0.0)) / tau;
      if (coef == 0.0) continue;
      if (grad_a) {
        auto ga = grad_a->row(node);
        for (std::size_t j = 0; j < d; ++j)
          ga[j] += coef * (b_unit[c][j] - (a_regular ? cosv[c] * a_unit[j] : 0.0)) / a_norm;
      }
      if (grad_b) {
        auto gb = grad_b->row(candidates[c]);
        for (std::size_t j = 0; j < d; ++j)
          gb[j] += coef * (a_unit[j] - (b_regular[c] ? cosv[c] * b_unit[c][j] : 0.0)) / b_norm[c];
      }
    }
  }
  return total;
}

/// sum over triples of -log sigmoid(s_ui - s_uj), s = dot product.
inline double bpr(const DenseMatrix& users, const DenseMatrix& items, const TripletBatch& batch,
                  DenseMatrix* grad_users = nullptr, DenseMatrix* grad_items = nullptr) {
  if (users.cols() != items.cols()) throw ShapeError("bpr embedding widths differ");
  const std::size_t d = users.cols();
  double total = 0.0;
  for (const auto& t : batch.triples) {
    if (t.user >= users.rows() || t.pos_item >= items.rows() || t.neg_item >= items.rows())
      throw IndexError("bpr triple out of range");
    const auto u = users.row(t.user), pi = items.row(t.pos_item), ni = items.row(t.neg_item);
    const double gap = dot(u, pi) - dot(u, ni);
    total += softplus(-gap);
    if (!grad_users && !grad_items) continue;
    const double g = -sigmoid(-gap);
    if (grad_users) {
      auto gu = grad_users->row(t.user);
      for (std::size_t j = 0; j < d; ++j) gu[j] += g * (pi[j] - ni[j]);
    }
    if (grad_items) {
      auto gp = grad_items->row(t.pos_item);
      for (std::size_t j = 0; j < d; ++j) gp[j] += g * u[j];
      auto gn = grad_items->row(t.neg_item);
      for (std::size_t j = 0; j < d; ++j) gn[j] -= g * u[j];
    }
  }
  return total;
}

/// beta * ||params||^2, gradient 2 * beta * params.
inline double l2_penalty(const ModelParams& p, double beta, ModelParams* grads = nullptr) {
  double ss = 0.0;
  p.for_each_tensor([&](const std::string&, std::span<const double> s) {
    for (double v : s) ss += v * v;
  });
  if (grads) {
    std::vector<std::span<const double>> src;
    p.for_each_tensor([&](const std::string&, std::span<const double> s) { src.push_back(s); });
    std::size_t t = 0;
    grads->for_each_tensor([&](const std::string&, std::span<double> g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * beta * src[t][i];
      ++t;
    });
  }
  return beta * ss;
}

/// Upstream gradients with respect to fused outputs. Empty matrices are zero.
struct FusedGrads {
  DenseMatrix f_user, f_item, e_user, e_item;
  std::vector<DenseMatrix> f_user_layers, f_item_layers, e_user_layers, e_item_layers;

  static FusedGrads zeros(const ForwardCache& c) {
    FusedGrads g;
    const auto zu = DenseMatrix(c.f_user.out.rows(), c.f_user.out.cols());
    const auto zi = DenseMatrix(c.f_item.out.rows(), c.f_item.out.cols());
    g.f_user = g.e_user = zu;
    g.f_item = g.e_item = zi;
    g.f_user_layers.assign(c.num_layers() + 1, zu);
    g.e_user_layers.assign(c.num_layers() + 1, zu);
    g.f_item_layers.assign(c.num_layers() + 1, zi);
    g.e_item_layers.assign(c.num_layers() + 1, zi);
    return g;
  }

  void add_scaled(const FusedGrads& o, double s) {
    auto add = [s](DenseMatrix& a, const DenseMatrix& b) { a += b * s; };
    add(f_user, o.f_user);
    add(f_item, o.f_item);
    add(e_user, o.e_user);
    add(e_item, o.e_item);
    for (std::size_t l = 0; l < f_user_layers.size(); ++l) {
      add(f_user_layers[l], o.f_user_layers[l]);
      add(f_item_layers[l], o.f_item_layers[l]);
      add(e_user_layers[l], o.e_user_layers[l]);
      add(e_item_layers[l], o.e_item_layers[l]);
    }
  }
};

namespace detail {

inline bool is_zero(const DenseMatrix& m) {
  return std::all_of(m.values().begin(), m.values().end(), [](double v) { return v == 0.0; });
}

// Backpropagates one fusion. States gradients land in state_grads[k].
inline void fuse_backward(const FusedView& v, const DenseMatrix& grad_out, const StateRefs& states,
                          const DenseMatrix& a, const DenseMatrix& w, std::vector<DenseMatrix*> state_grads,
                          DenseMatrix& grad_a, DenseMatrix& grad_w, std::vector<double>& grad_b) {
  if (grad_out.empty() || is_zero(grad_out)) return;
  DenseMatrix pre_grad = grad_out;
  for (std::size_t i = 0; i < pre_grad.size(); ++i)
    if (!(v.out.values()[i] > 0.0)) pre_grad.values()[i] = 0.0;
  grad_w += matmul_tn(pre_grad, v.mixed);
  for (std::size_t r = 0; r < pre_grad.rows(); ++r) {
    auto row = pre_grad.row(r);
    for (std::size_t j = 0; j < row.size(); ++j) grad_b[j] += row[j];
  }
  const DenseMatrix mixed_grad = matmul(pre_grad, w);
  const std::size_t d = mixed_grad.cols();
  for (std::size_t k = 0; k < states.size(); ++k) {
    for (std::size_t r = 0; r < mixed_grad.rows(); ++r) {
      const auto mg = mixed_grad.row(r);
      const auto st = states[k]->row(r);
      auto sg = state_grads[k]->row(r);
      const double ark = a(r, k);
      double da = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        sg[j] += ark * mg[j];
        da += mg[j] * st[j];
      }
      grad_a(r, k) += da;
    }
  }
}

// d/dw of row-softmax(w * n) given upstream grad on the softmax output.
inline void behavior_weights_backward(const DenseMatrix& a, const DenseMatrix& grad_a,
                                      const std::vector<std::vector<std::uint32_t>>& counts,
                                      std::vector<double>& grad_w) {
  const std::size_t kk = a.cols();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    double inner = 0.0;
    for (std::size_t m = 0; m < kk; ++m) inner += a(r, m) * grad_a(r, m);
    for (std::size_t k = 0; k < kk; ++k) grad_w[k] += a(r, k) * (grad_a(r, k) - inner) * counts[r][k];
  }
}

inline DenseMatrix masked(const DenseMatrix& grad, const DenseMatrix& activation) {
  DenseMatrix out = grad;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!(activation.values()[i] > 0.0)) out.values()[i] = 0.0;
  return out;
}

}  // namespace detail

/// Reverse-mode pass through fusion, behavior weights, both propagation
/// views and the residual chain. SVD factors and dropout masks are constants.
inline ModelParams backward(const BehaviorGraph& g, const std::vector<SvdFactors>& factors, const ModelParams& p,
                            const ForwardCache& c, const FusedGrads& up) {
  const std::size_t kk = g.num_behaviors(), layers = c.num_layers();
  ModelParams grads = ModelParams::zeros_like(p);
  DenseMatrix grad_a_user(c.a_user.rows(), kk), grad_a_item(c.a_item.rows(), kk);

  auto zeros_like_layers = [](const std::vector<DenseMatrix>& ls) {
    std::vector<DenseMatrix> out;
    for (const auto& l : ls) out.emplace_back(l.rows(), l.cols());
    return out;
  };
  struct Buffers {
    std::vector<DenseMatrix> user, item, svd_user, svd_item;
  };
  std::vector<Buffers> buf(kk);
  for (std::size_t k = 0; k < kk; ++k) {
    const auto& s = c.behaviors[k];
    buf[k] = {zeros_like_layers(s.user_layers), zeros_like_layers(s.item_layers),
              zeros_like_layers(s.svd_user_layers), zeros_like_layers(s.svd_item_layers)};
  }

  auto refs = [&](auto&& pick) {
    StateRefs r;
    for (std::size_t k = 0; k < kk; ++k) r.push_back(&pick(c.behaviors[k]));
    return r;
  };
  auto grefs = [&](auto&& pick) {
    std::vector<DenseMatrix*> r;
    for (std::size_t k = 0; k < kk; ++k) r.push_back(&pick(buf[k]));
    return r;
  };

  for (std::size_t l = 0; l <= layers; ++l) {
    if (l < up.e_user_layers.size())
      detail::fuse_backward(c.e_user_layers[l], up.e_user_layers[l],
                            refs([l](const BehaviorStates& s) -> const DenseMatrix& { return s.user_layers[l]; }),
                            c.a_user, p.fuse_user_weight,
                            grefs([l](Buffers& b) -> DenseMatrix& { return b.user[l]; }), grad_a_user,
                            grads.fuse_user_weight, grads.fuse_user_bias);
    if (l < up.e_item_layers.size())
      detail::fuse_backward(c.e_item_layers[l], up.e_item_layers[l],
                            refs([l](const BehaviorStates& s) -> const DenseMatrix& { return s.item_layers[l]; }),
                            c.a_item, p.fuse_item_weight,
                            grefs([l](Buffers& b) -> DenseMatrix& { return b.item[l]; }), grad_a_item,
                            grads.fuse_item_weight, grads.fuse_item_bias);
    if (l < up.f_user_layers.size())
      detail::fuse_backward(c.f_user_layers[l], up.f_user_layers[l],
                            refs([l](const BehaviorStates& s) -> const DenseMatrix& { return s.svd_user_layers[l]; }),
                            c.a_user, p.fuse_user_weight,
                            grefs([l](Buffers& b) -> DenseMatrix& { return b.svd_user[l]; }), grad_a_user,
                            grads.fuse_user_weight, grads.fuse_user_bias);
    if (l < up.f_item_layers.size())
      detail::fuse_backward(c.f_item_layers[l], up.f_item_layers[l],
                            refs([l](const BehaviorStates& s) -> const DenseMatrix& { return s.svd_item_layers[l]; }),
                            c.a_item, p.fuse_item_weight,
                            grefs([l](Buffers& b) -> DenseMatrix& { return b.svd_item[l]; }), grad_a_item,
                            grads.fuse_item_weight, grads.fuse_item_bias);
  }

  // Final fusions read the layer sums, so their state gradient fans out to every layer.
  std::vector<DenseMatrix> acc_user(kk), acc_item(kk), acc_svd_user(kk), acc_svd_item(kk);
  for (std::size_t k = 0; k < kk; ++k) {
    const auto& s = c.behaviors[k];
    acc_user[k] = DenseMatrix(s.user_acc.rows(), s.user_acc.cols());
    acc_item[k] = DenseMatrix(s.item_acc.rows(), s.item_acc.cols());
    acc_svd_user[k] = acc_user[k];
    acc_svd_item[k] = acc_item[k];
  }
  auto ptrs = [](std::vector<DenseMatrix>& v) {
    std::vector<DenseMatrix*> r;
    for (auto& m : v) r.push_back(&m);
    return r;
  };
  detail::fuse_backward(c.e_user, up.e_user, refs([](const BehaviorStates& s) -> const DenseMatrix& { return s.user_acc; }),
                        c.a_user, p.fuse_user_weight, ptrs(acc_user), grad_a_user, grads.fuse_user_weight,
                        grads.fuse_user_bias);
  detail::fuse_backward(c.e_item, up.e_item, refs([](const BehaviorStates& s) -> const DenseMatrix& { return s.item_acc; }),
                        c.a_item, p.fuse_item_weight, ptrs(acc_item), grad_a_item, grads.fuse_item_weight,
                        grads.fuse_item_bias);
  detail::fuse_backward(c.f_user, up.f_user,
                        refs([](const BehaviorStates& s) -> const DenseMatrix& { return s.svd_user_acc; }), c.a_user,
                        p.fuse_user_weight, ptrs(acc_svd_user), grad_a_user, grads.fuse_user_weight,
                        grads.fuse_user_bias);
  detail::fuse_backward(c.f_item, up.f_item,
                        refs([](const BehaviorStates& s) -> const DenseMatrix& { return s.svd_item_acc; }), c.a_item,
                        p.fuse_item_weight, ptrs(acc_svd_item), grad_a_item, grads.fuse_item_weight,
                        grads.fuse_item_bias);

  detail::behavior_weights_backward(c.a_user, grad_a_user, g.user_counts, grads.behavior_w);
  detail::behavior_weights_backward(c.a_item, grad_a_item, g.item_counts, grads.behavior_w);

  for (std::size_t k = 0; k < kk; ++k) {
    const auto& s = c.behaviors[k];
    auto& b = buf[k];
    const auto& adj = g.adjacency[k];
    for (std::size_t l = 0; l <= layers; ++l) {
      b.user[l] += acc_user[k];
      b.item[l] += acc_item[k];
      b.svd_user[l] += acc_svd_user[k];
      b.svd_item[l] += acc_svd_item[k];
    }
    for (std::size_t l = layers; l >= 1; --l) {
      // Low-rank view: H_u = X^(l-1) + ReLU(S Y^(l-1)), H_v = Y^(l-1) + ReLU(S^T X^(l-1)).
      b.user[l - 1] += b.svd_user[l];
      b.item[l - 1] += low_rank_propagate(factors[k], detail::masked(b.svd_user[l], s.svd_user_prop[l - 1]), true);
      b.item[l - 1] += b.svd_item[l];
      b.user[l - 1] += low_rank_propagate(factors[k], detail::masked(b.svd_item[l], s.svd_item_prop[l - 1]), false);
      // Original view with residual.
      const auto mask = c.masks.at(k, l);
      b.user[l - 1] += b.user[l];
      b.item[l - 1] += spmm_transposed(adj, detail::masked(b.user[l], s.user_prop[l - 1]), mask);
      b.item[l - 1] += b.item[l];
      b.user[l - 1] += spmm(adj, detail::masked(b.item[l], s.item_prop[l - 1]), mask);
    }
    b.user[0] += b.svd_user[0];
    b.item[0] += b.svd_item[0];
    grads.user_embeds[k] = std::move(b.user[0]);
    grads.item_embeds[k] = std::move(b.item[0]);
  }
  return grads;
}

struct LossAndGrads {
  LossReport report;
  ModelParams grads;
};

/// Contrastive loss for one side; accumulates upstream gradients into `up`.
inline double contrastive_term(const ForwardCache& c, const ObjectiveConfig& oc, Side side,
                               std::span<const std::uint32_t> nodes, FusedGrads* up, std::size_t* floor_hits) {
  double loss = 0.0;
  const bool user = side == Side::user;
  if (oc.contrast_mode == ContrastMode::final_only) {
    const FusedView& f = user ? c.f_user : c.f_item;
    const FusedView& e = user ? c.e_user : c.e_item;
    DenseMatrix* gf = up ? (user ? &up->f_user : &up->f_item) : nullptr;
    DenseMatrix* ge = up ? (user ? &up->e_user : &up->e_item) : nullptr;
    return infonce(f.out, e.out, oc.tau, nodes, oc.full_denominator, gf, ge, floor_hits);
  }
  for (std::size_t l = 0; l <= c.num_layers(); ++l) {
    const FusedView& f = user ? c.f_user_layers[l] : c.f_item_layers[l];
    const FusedView& e = user ? c.e_user_layers[l] : c.e_item_layers[l];
    DenseMatrix* gf = up ? &(user ? up->f_user_layers : up->f_item_layers)[l] : nullptr;
    DenseMatrix* ge = up ? &(user ? up->e_user_layers : up->e_item_layers)[l] : nullptr;
    loss += infonce(f.out, e.out, oc.tau, nodes, oc.full_denominator, gf, ge, floor_hits);
  }
  return loss;
}

/// L = L_r + lambda (L_us + L_vs) + beta ||Theta||^2 and its exact gradient.
/// Disabled terms contribute neither loss nor gradient.
inline LossAndGrads total_loss_and_grads(const BehaviorGraph& g, const std::vector<SvdFactors>& factors,
                                         const ModelParams& p, const ModelConfig& mc, const ObjectiveConfig& oc,
                                         const TripletBatch& batch, const ContrastBatch& contrast,
                                         const DropoutMasks& masks = {}) {
  oc.validate();
  const ForwardCache c = forward(g, factors, p, mc, masks);
  FusedGrads up = FusedGrads::zeros(c);
  LossReport r;
  r.lambda = oc.lambda;
  r.beta = oc.beta;
  r.tau = oc.tau;
  if (oc.use_ranking_loss) r.l_r = bpr(c.f_user.out, c.f_item.out, batch, &up.f_user, &up.f_item);
  if (oc.use_contrastive_loss) {
    FusedGrads cl = FusedGrads::zeros(c);
    r.l_us = contrastive_term(c, oc, Side::user, contrast.users, &cl, &r.norm_floor_hits);
    r.l_vs = contrastive_term(c, oc, Side::item, contrast.items, &cl, &r.norm_floor_hits);
    up.add_scaled(cl, oc.lambda);
  }

  ModelParams grads = backward(g, factors, p, c, up);
  r.l_reg = l2_penalty(p, oc.beta, &grads);
  r.total = r.l_r + oc.lambda * (r.l_us + r.l_vs) + r.l_reg;

  const std::pair<const char*, double> terms[] = {{"l_r", r.l_r}, {"l_us", r.l_us}, {"l_vs", r.l_vs}, {"l_reg", r.l_reg}};
  for (const auto& [name, v] : terms)
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite loss term ") + name);
  return {r, std::move(grads)};
}

/// Loss only (no gradient), used by finite-difference checks.
inline LossReport total_loss(const BehaviorGraph& g, const std::vector<SvdFactors>& factors, const ModelParams& p,
                             const ModelConfig& mc, const ObjectiveConfig& oc, const TripletBatch& batch,
                             const ContrastBatch& contrast, const DropoutMasks& masks = {}) {
  const ForwardCache c = forward(g, factors, p, mc, masks);
  LossReport r;
  r.lambda = oc.lambda;
  r.beta = oc.beta;
  r.tau = oc.tau;
  if (oc.use_ranking_loss) r.l_r = bpr(c.f_user.out, c.f_item.out, batch);
  if (oc.use_contrastive_loss) {
    r.l_us = contrastive_term(c, oc, Side::user, contrast.users, nullptr, &r.norm_floor_hits);
    r.l_vs = contrastive_term(c, oc, Side::item, contrast.items, nullptr, &r.norm_floor_hits);
  }
  r.l_reg = l2_penalty(p, oc.beta);
  r.total = r.l_r + oc.lambda * (r.l_us + r.l_vs) + r.l_reg;
  return r;
}

}  // namespace mbsvd
