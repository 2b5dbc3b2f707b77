#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "mbsvd/dataio.hpp"
#include "mbsvd/error.hpp"
#include "mbsvd/linalg/sparse.hpp"

namespace mbsvd {

/// Per-behavior normalized adjacency D_u^{-1/2} A_k D_v^{-1/2} (users x items)
/// over train edges, plus raw per-node edge counts.
struct BehaviorGraph {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::uint32_t target_behavior = 0;
  std::vector<SparseAdjacency> adjacency;
  std::vector<std::vector<std::uint32_t>> user_counts;  // [u][k]
  std::vector<std::vector<std::uint32_t>> item_counts;  // [v][k]

  std::size_t num_behaviors() const noexcept { return adjacency.size(); }

  friend bool operator==(const BehaviorGraph&, const BehaviorGraph&) = default;
};

/// Builds the graph from train records. Any (user, item) pair held out for
/// validation or test is excluded from every behavior, auxiliary ones included.
inline BehaviorGraph build_graph(const InteractionDataset& ds) {
  const std::size_t m = ds.num_users, n = ds.num_items, kk = ds.num_behaviors;
  std::set<std::pair<std::uint32_t, std::uint32_t>> held_out;
  for (const auto& r : ds.records)
    if (r.role != Role::train) held_out.insert({r.user, r.item});

  BehaviorGraph g;
  g.num_users = m;
  g.num_items = n;
  g.target_behavior = ds.target_behavior.value_or(0);
  g.user_counts.assign(m, std::vector<std::uint32_t>(kk, 0));
  g.item_counts.assign(n, std::vector<std::uint32_t>(kk, 0));

  std::vector<std::vector<std::pair<std::uint32_t, std::uint32_t>>> edges(kk);
  for (const auto& r : ds.records) {
    if (r.role != Role::train || held_out.count({r.user, r.item})) continue;
    edges[r.behavior].push_back({r.user, r.item});
    ++g.user_counts[r.user][r.behavior];
    ++g.item_counts[r.item][r.behavior];
  }
  g.adjacency.reserve(kk);
  for (std::size_t k = 0; k < kk; ++k) {
    std::vector<Triplet> t;
    t.reserve(edges[k].size());
    for (auto [u, v] : edges[k]) {
      const double du = g.user_counts[u][k], dv = g.item_counts[v][k];
      t.push_back({u, v, 1.0 / std::sqrt(du * dv)});
    }
    g.adjacency.push_back(SparseAdjacency::from_triplets(m, n, std::move(t)));
  }
  return g;
}

/// Row u of the behavior-k adjacency, as a view into the stored matrix.
inline SparseRow normalized_row(const BehaviorGraph& g, std::size_t behavior, std::size_t user) {
  if (behavior >= g.num_behaviors())
    throw IndexError("behavior " + std::to_string(behavior) + " of " + std::to_string(g.num_behaviors()));
  if (user >= g.num_users) throw IndexError("user " + std::to_string(user) + " of " + std::to_string(g.num_users));
  return g.adjacency[behavior].row(user);
}

// Binary cache layout: magic, version, then little-endian raw fields. Doubles
// are written as their bit patterns so a reload is bit-exact.
namespace detail {
inline constexpr char kGraphMagic[8] = {'M', 'B', 'S', 'V', 'D', 'G', 'R', '1'};

template <class T>
void put(std::ostream& o, const T& v) {
  o.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
void put_vec(std::ostream& o, const std::vector<T>& v) {
  put<std::uint64_t>(o, v.size());
  o.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
}
template <class T>
T get(std::istream& i) {
  T v{};
  if (!i.read(reinterpret_cast<char*>(&v), sizeof(T))) throw StateError("graph cache truncated");
  return v;
}
template <class T>
std::vector<T> get_vec(std::istream& i, std::uint64_t max_len) {
  const auto n = get<std::uint64_t>(i);
  if (n > max_len) throw StateError("graph cache corrupt: implausible array length");
  std::vector<T> v(n);
  if (!i.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T))))
    throw StateError("graph cache truncated");
  return v;
}
}  // namespace detail

inline void save_graph(const BehaviorGraph& g, const std::string& path) {
  std::ofstream o(path, std::ios::binary | std::ios::trunc);
  if (!o) throw StateError("cannot write graph cache " + path);
  o.write(detail::kGraphMagic, sizeof(detail::kGraphMagic));
  detail::put<std::uint64_t>(o, g.num_users);
  detail::put<std::uint64_t>(o, g.num_items);
  detail::put<std::uint64_t>(o, g.num_behaviors());
  detail::put<std::uint32_t>(o, g.target_behavior);
  for (const auto& a : g.adjacency) {
    detail::put_vec(o, std::vector<std::uint64_t>(a.row_ptr().begin(), a.row_ptr().end()));
    detail::put_vec(o, a.col_idx());
    detail::put_vec(o, a.values());
  }
  for (const auto& c : g.user_counts) detail::put_vec(o, c);
  for (const auto& c : g.item_counts) detail::put_vec(o, c);
  if (!o) throw StateError("failed writing graph cache " + path);
}

inline BehaviorGraph load_graph(const std::string& path) {
  std::ifstream i(path, std::ios::binary);
  if (!i) throw StateError("cannot open graph cache " + path);
  char magic[sizeof(detail::kGraphMagic)];
  if (!i.read(magic, sizeof(magic)) || std::memcmp(magic, detail::kGraphMagic, sizeof(magic)) != 0)
    throw StateError("not a graph cache: " + path);
  constexpr std::uint64_t limit = 1ull << 34;
  BehaviorGraph g;
  g.num_users = detail::get<std::uint64_t>(i);
  g.num_items = detail::get<std::uint64_t>(i);
  const auto kk = detail::get<std::uint64_t>(i);
  g.target_behavior = detail::get<std::uint32_t>(i);
  if (kk > 1024) throw StateError("graph cache corrupt: behavior count");
  for (std::uint64_t k = 0; k < kk; ++k) {
    auto rp = detail::get_vec<std::uint64_t>(i, limit);
    auto ci = detail::get_vec<std::uint32_t>(i, limit);
    auto va = detail::get_vec<double>(i, limit);
    g.adjacency.push_back(SparseAdjacency::from_csr(g.num_users, g.num_items,
                                                    std::vector<std::size_t>(rp.begin(), rp.end()), std::move(ci),
                                                    std::move(va)));
  }
  for (std::size_t u = 0; u < g.num_users; ++u) g.user_counts.push_back(detail::get_vec<std::uint32_t>(i, kk));
  for (std::size_t v = 0; v < g.num_items; ++v) g.item_counts.push_back(detail::get_vec<std::uint32_t>(i, kk));
  return g;
}

}  // namespace mbsvd
