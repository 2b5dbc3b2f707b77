#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mbsvd/dataio.hpp"
#include "mbsvd/graph.hpp"
#include "mbsvd/linalg/dense.hpp"
#include "mbsvd/linalg/sparse.hpp"
#include "mbsvd/model.hpp"

namespace mbsvd::testing {

// Small seeded generator used by the property tests.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  std::size_t index(std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_); }
  double real(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(rng_); }
  bool coin(double p) { return std::bernoulli_distribution(p)(rng_); }
  std::mt19937_64& engine() { return rng_; }

  DenseMatrix dense(std::size_t rows, std::size_t cols, double lo = -1.0, double hi = 1.0) {
    DenseMatrix m(rows, cols);
    for (auto& v : m.values()) v = real(lo, hi);
    return m;
  }

  SparseAdjacency sparse(std::size_t rows, std::size_t cols, double density) {
    std::vector<Triplet> t;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c)
        if (coin(density)) t.push_back({r, c, real(-1.0, 1.0)});
    return SparseAdjacency::from_triplets(rows, cols, std::move(t));
  }

  // Every user and item gets at least one edge so ids stay dense.
  InteractionDataset dataset(std::size_t users, std::size_t items, std::size_t behaviors, double density) {
    std::ostringstream tsv;
    std::vector<std::string> names;
    for (std::size_t k = 0; k < behaviors; ++k) names.push_back("b" + std::to_string(k));
    for (std::size_t u = 0; u < users; ++u) tsv << u << '\t' << (u % items) << '\t' << names.back() << '\n';
    for (std::size_t i = 0; i < items; ++i) tsv << (i % users) << '\t' << i << '\t' << names.front() << '\n';
    for (std::size_t u = 0; u < users; ++u)
      for (std::size_t i = 0; i < items; ++i)
        for (std::size_t k = 0; k < behaviors; ++k)
          if (coin(density)) tsv << u << '\t' << i << '\t' << names[k] << '\n';
    std::istringstream in(tsv.str());
    InteractionDataset ds = parse_interactions(in, names);
    ds.target_behavior = static_cast<std::uint32_t>(behaviors - 1);
    return ds;
  }

  BehaviorGraph graph(std::size_t users, std::size_t items, std::size_t behaviors, double density) {
    return build_graph(dataset(users, items, behaviors, density));
  }

 private:
  std::mt19937_64 rng_;
};

inline ModelConfig small_model(std::size_t d, std::size_t layers, std::size_t rank, std::uint64_t seed = 3) {
  ModelConfig c;
  c.embed_dim = d;
  c.num_layers = layers;
  c.rank = rank;
  c.oversampling = 0;
  c.seed = seed;
  return c;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("mbsvd_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace mbsvd::testing
