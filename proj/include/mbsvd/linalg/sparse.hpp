#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "mbsvd/error.hpp"
#include "mbsvd/linalg/dense.hpp"

namespace mbsvd {

struct Triplet {
  std::size_t row;
  std::size_t col;
  double value;
};

/// View of one sparse row: parallel column-index and value spans.
struct SparseRow {
  std::span<const std::uint32_t> cols;
  std::span<const double> values;
  std::size_t nnz() const noexcept { return cols.size(); }
};

/// Compressed sparse row matrix. Columns within a row are strictly increasing.
class SparseAdjacency {
 public:
  SparseAdjacency() = default;
  SparseAdjacency(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), row_ptr_(rows + 1, 0) {}

  /// Builds from unordered triplets. Duplicate coordinates, out-of-range
  /// indices and non-finite values are rejected.
  static SparseAdjacency from_triplets(std::size_t rows, std::size_t cols, std::vector<Triplet> entries) {
    std::sort(entries.begin(), entries.end(),
              [](const Triplet& a, const Triplet& b) { return std::tie(a.row, a.col) < std::tie(b.row, b.col); });
    SparseAdjacency m(rows, cols);
    m.col_idx_.reserve(entries.size());
    m.values_.reserve(entries.size());
    for (std::size_t e = 0; e < entries.size(); ++e) {
      const auto& t = entries[e];
      if (t.row >= rows || t.col >= cols) {
        throw IndexError("entry (" + std::to_string(t.row) + ", " + std::to_string(t.col) + ") in " +
                         std::to_string(rows) + "x" + std::to_string(cols) + " matrix");
      }
      if (e > 0 && entries[e - 1].row == t.row && entries[e - 1].col == t.col) {
        throw ValueError("duplicate sparse entry (" + std::to_string(t.row) + ", " + std::to_string(t.col) + ")");
      }
      if (!std::isfinite(t.value)) throw ValueError("non-finite sparse entry");
      ++m.row_ptr_[t.row + 1];
      m.col_idx_.push_back(static_cast<std::uint32_t>(t.col));
      m.values_.push_back(t.value);
    }
    for (std::size_t r = 0; r < rows; ++r) m.row_ptr_[r + 1] += m.row_ptr_[r];
    return m;
  }

  /// Reassembles from raw CSR arrays (cache loading). Structure is validated.
  static SparseAdjacency from_csr(std::size_t rows, std::size_t cols, std::vector<std::size_t> row_ptr,
                                  std::vector<std::uint32_t> col_idx, std::vector<double> values) {
    if (row_ptr.size() != rows + 1 || row_ptr.front() != 0 || row_ptr.back() != col_idx.size() ||
        col_idx.size() != values.size()) {
      throw StateError("inconsistent CSR arrays");
    }
    for (std::size_t r = 0; r < rows; ++r) {
      if (row_ptr[r] > row_ptr[r + 1]) throw StateError("CSR row pointer not monotone");
      for (std::size_t p = row_ptr[r]; p < row_ptr[r + 1]; ++p) {
        if (col_idx[p] >= cols || (p > row_ptr[r] && col_idx[p] <= col_idx[p - 1]))
          throw StateError("CSR column indices invalid in row " + std::to_string(r));
      }
    }
    SparseAdjacency m;
    m.rows_ = rows;
    m.cols_ = cols;
    m.row_ptr_ = std::move(row_ptr);
    m.col_idx_ = std::move(col_idx);
    m.values_ = std::move(values);
    return m;
  }

  static SparseAdjacency from_dense(const DenseMatrix& d) {
    std::vector<Triplet> t;
    for (std::size_t r = 0; r < d.rows(); ++r)
      for (std::size_t c = 0; c < d.cols(); ++c)
        if (d(r, c) != 0.0) t.push_back({r, c, d(r, c)});
    return from_triplets(d.rows(), d.cols(), std::move(t));
  }

  std::size_t num_rows() const noexcept { return rows_; }
  std::size_t num_cols() const noexcept { return cols_; }
  std::size_t nnz() const noexcept { return values_.size(); }

  SparseRow row(std::size_t r) const {
    if (r >= rows_) throw IndexError("row " + std::to_string(r) + " of " + std::to_string(rows_));
    const auto b = row_ptr_[r], e = row_ptr_[r + 1];
    return {std::span(col_idx_).subspan(b, e - b), std::span(values_).subspan(b, e - b)};
  }

  const std::vector<std::size_t>& row_ptr() const noexcept { return row_ptr_; }
  const std::vector<std::uint32_t>& col_idx() const noexcept { return col_idx_; }
  const std::vector<double>& values() const noexcept { return values_; }

  DenseMatrix to_dense() const {
    DenseMatrix d(rows_, cols_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t p = row_ptr_[r]; p < row_ptr_[r + 1]; ++p) d(r, col_idx_[p]) = values_[p];
    return d;
  }

  friend bool operator==(const SparseAdjacency&, const SparseAdjacency&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::size_t> row_ptr_{0};
  std::vector<std::uint32_t> col_idx_;
  std::vector<double> values_;
};

namespace detail {
inline void check_edge_scale(const SparseAdjacency& a, std::span<const double> edge_scale) {
  if (!edge_scale.empty() && edge_scale.size() != a.nnz())
    throw ShapeError("edge scale of length " + std::to_string(edge_scale.size()) + " for " +
                     std::to_string(a.nnz()) + " nonzeros");
}
}  // namespace detail

/// adjacency * dense. `edge_scale`, when non-empty, multiplies each stored
/// nonzero (in CSR order) before the product; this is how dropout masks apply.
inline DenseMatrix spmm(const SparseAdjacency& a, const DenseMatrix& dense,
                        std::span<const double> edge_scale = {}) {
  if (a.num_cols() != dense.rows())
    throw ShapeError("spmm " + std::to_string(a.num_rows()) + "x" + std::to_string(a.num_cols()) + " * " +
                     dense.shape_string());
  detail::check_edge_scale(a, edge_scale);
  DenseMatrix out(a.num_rows(), dense.cols());
  const auto& rp = a.row_ptr();
  const auto& ci = a.col_idx();
  const auto& va = a.values();
  for (std::size_t r = 0; r < a.num_rows(); ++r) {
    auto orow = out.row(r);
    for (std::size_t p = rp[r]; p < rp[r + 1]; ++p) {
      const double w = edge_scale.empty() ? va[p] : va[p] * edge_scale[p];
      if (w == 0.0) continue;
      auto drow = dense.row(ci[p]);
      for (std::size_t j = 0; j < dense.cols(); ++j) orow[j] += w * drow[j];
    }
  }
  return out;
}

/// adjacency^T * dense, computed by scattering rows in CSR order.
inline DenseMatrix spmm_transposed(const SparseAdjacency& a, const DenseMatrix& dense,
                                   std::span<const double> edge_scale = {}) {
  if (a.num_rows() != dense.rows())
    throw ShapeError("spmm_transposed " + std::to_string(a.num_rows()) + "x" + std::to_string(a.num_cols()) +
                     "^T * " + dense.shape_string());
  detail::check_edge_scale(a, edge_scale);
  DenseMatrix out(a.num_cols(), dense.cols());
  const auto& rp = a.row_ptr();
  const auto& ci = a.col_idx();
  const auto& va = a.values();
  for (std::size_t r = 0; r < a.num_rows(); ++r) {
    auto drow = dense.row(r);
    for (std::size_t p = rp[r]; p < rp[r + 1]; ++p) {
      const double w = edge_scale.empty() ? va[p] : va[p] * edge_scale[p];
      if (w == 0.0) continue;
      auto orow = out.row(ci[p]);
      for (std::size_t j = 0; j < dense.cols(); ++j) orow[j] += w * drow[j];
    }
  }
  return out;
}

}  // namespace mbsvd
