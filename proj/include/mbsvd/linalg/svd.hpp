#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "mbsvd/error.hpp"
#include "mbsvd/linalg/dense.hpp"
#include "mbsvd/linalg/sparse.hpp"

namespace mbsvd {

/// Truncated singular factors A ~ U diag(s) V^T, U is rows x q, V is cols x q.
struct SvdFactors {
  DenseMatrix u_factor;
  std::vector<double> singular_values;
  DenseMatrix v_factor;
  std::size_t rank_q = 0;

  DenseMatrix reconstruct() const {
    DenseMatrix us = u_factor;
    for (std::size_t r = 0; r < us.rows(); ++r)
      for (std::size_t c = 0; c < rank_q; ++c) us(r, c) *= singular_values[c];
    return matmul_nt(us, v_factor);
  }

  friend bool operator==(const SvdFactors&, const SvdFactors&) = default;
};

/// Parameters of the randomized range finder.
struct RsvdOptions {
  std::size_t rank = 5;
  std::size_t oversampling = 5;
  std::size_t power_iters = 2;
  std::uint64_t seed = 0;
};

inline constexpr std::size_t kExactSvdMaxDim = 2000;

namespace detail {

// One-sided (Hestenes) Jacobi on a tall matrix: rotates column pairs of `w`
// until all are mutually orthogonal, accumulating the rotations into `v`.
inline void jacobi_orthogonalize(DenseMatrix& w, DenseMatrix& v) {
  const std::size_t m = w.rows(), n = w.cols();
  constexpr double tol = 1e-15;
  constexpr int max_sweeps = 100;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          const double wp = w(i, p), wq = w(i, q);
          alpha += wp * wp;
          beta += wq * wq;
          gamma += wp * wq;
        }
        if (gamma == 0.0 || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double wp = w(i, p), wq = w(i, q);
          w(i, p) = c * wp - s * wq;
          w(i, q) = s * wp + c * wq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vp = v(i, p), vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) return;
  }
}

// Replaces the listed columns of `u` by unit vectors orthogonal to every other
// column, drawn from the standard basis by Gram-Schmidt.
inline void complete_orthonormal_columns(DenseMatrix& u, const std::vector<bool>& needs) {
  const std::size_t m = u.rows(), n = u.cols();
  std::size_t candidate = 0;
  for (std::size_t j = 0; j < n; ++j) {
    if (!needs[j]) continue;
    for (; candidate < m; ++candidate) {
      std::vector<double> e(m, 0.0);
      e[candidate] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t o = 0; o < n; ++o) {
          if (o == j || (needs[o] && o > j)) continue;
          double proj = 0.0;
          for (std::size_t i = 0; i < m; ++i) proj += u(i, o) * e[i];
          for (std::size_t i = 0; i < m; ++i) e[i] -= proj * u(i, o);
        }
      }
      const double nrm = norm2(e);
      if (nrm > 0.5) {
        for (std::size_t i = 0; i < m; ++i) u(i, j) = e[i] / nrm;
        ++candidate;
        break;
      }
    }
  }
}

inline SvdFactors jacobi_svd_tall(const DenseMatrix& a) {
  const std::size_t m = a.rows(), n = a.cols();
  DenseMatrix w = a;
  DenseMatrix v = DenseMatrix::identity(n);
  jacobi_orthogonalize(w, v);

  std::vector<double> sigma(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += w(i, j) * w(i, j);
    sigma[j] = std::sqrt(s);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  SvdFactors f;
  f.rank_q = n;
  f.u_factor = DenseMatrix(m, n);
  f.v_factor = DenseMatrix(n, n);
  f.singular_values.resize(n);
  const double smax = n ? sigma[order[0]] : 0.0;
  const double cutoff = std::max(smax * static_cast<double>(std::max(m, n)) * std::numeric_limits<double>::epsilon(),
                                 std::numeric_limits<double>::min());
  std::vector<bool> needs(n, false);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    f.singular_values[j] = sigma[src];
    for (std::size_t i = 0; i < n; ++i) f.v_factor(i, j) = v(i, src);
    if (sigma[src] > cutoff) {
      for (std::size_t i = 0; i < m; ++i) f.u_factor(i, j) = w(i, src) / sigma[src];
    } else {
      needs[j] = true;
    }
  }
  if (std::find(needs.begin(), needs.end(), true) != needs.end()) complete_orthonormal_columns(f.u_factor, needs);
  return f;
}

}  // namespace detail

/// Thin SVD of a small dense matrix by one-sided Jacobi rotations. Returns
/// min(rows, cols) singular triples in nonincreasing order.
inline SvdFactors exact_svd(const DenseMatrix& a) {
  if (a.rows() > kExactSvdMaxDim || a.cols() > kExactSvdMaxDim)
    throw ConfigError("exact_svd limited to " + std::to_string(kExactSvdMaxDim) + "x" +
                      std::to_string(kExactSvdMaxDim) + ", got " + a.shape_string());
  if (!all_finite(a.values())) throw ValueError("exact_svd: non-finite input");
  if (a.rows() >= a.cols()) return detail::jacobi_svd_tall(a);
  SvdFactors t = detail::jacobi_svd_tall(transpose(a));
  std::swap(t.u_factor, t.v_factor);
  return t;
}

/// Orthonormal basis (m x l) for the column space of a tall matrix via
/// Householder reflections. Always orthonormal, even for rank-deficient input.
inline DenseMatrix orthonormal_basis(const DenseMatrix& a) {
  const std::size_t m = a.rows(), l = a.cols();
  if (l > m) throw ShapeError("orthonormal_basis needs rows >= cols, got " + a.shape_string());
  DenseMatrix r = a;
  std::vector<std::vector<double>> reflectors(l);
  for (std::size_t j = 0; j < l; ++j) {
    std::vector<double> x(m - j);
    for (std::size_t i = j; i < m; ++i) x[i - j] = r(i, j);
    const double nx = norm2(x);
    if (nx == 0.0) continue;
    x[0] += (x[0] >= 0.0 ? nx : -nx);
    const double nv = norm2(x);
    if (nv == 0.0) continue;
    for (auto& e : x) e /= nv;
    for (std::size_t c = j; c < l; ++c) {
      double proj = 0.0;
      for (std::size_t i = j; i < m; ++i) proj += x[i - j] * r(i, c);
      for (std::size_t i = j; i < m; ++i) r(i, c) -= 2.0 * proj * x[i - j];
    }
    reflectors[j] = std::move(x);
  }
  DenseMatrix q(m, l);
  for (std::size_t j = 0; j < l; ++j) q(j, j) = 1.0;
  for (std::size_t jj = l; jj-- > 0;) {
    const auto& x = reflectors[jj];
    if (x.empty()) continue;
    for (std::size_t c = 0; c < l; ++c) {
      double proj = 0.0;
      for (std::size_t i = jj; i < m; ++i) proj += x[i - jj] * q(i, c);
      for (std::size_t i = jj; i < m; ++i) q(i, c) -= 2.0 * proj * x[i - jj];
    }
  }
  return q;
}

/// Randomized truncated SVD: Gaussian sketch of width rank+oversampling,
/// `power_iters` rounds of re-orthonormalized subspace iteration, then an
/// exact SVD of the projected (rank+oversampling) x cols problem.
inline SvdFactors rsvd(const SparseAdjacency& a, const RsvdOptions& opt) {
  const std::size_t m = a.num_rows(), n = a.num_cols();
  const std::size_t width = opt.rank + opt.oversampling;
  if (opt.rank < 1) throw ConfigError("rsvd: rank must be >= 1");
  if (width > std::min(m, n))
    throw ConfigError("rsvd: rank + oversampling = " + std::to_string(width) + " exceeds min dimension " +
                      std::to_string(std::min(m, n)));

  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  DenseMatrix omega(n, width);
  for (auto& v : omega.values()) v = normal(rng);

  DenseMatrix q = orthonormal_basis(spmm(a, omega));
  for (std::size_t it = 0; it < opt.power_iters; ++it) {
    const DenseMatrix z = orthonormal_basis(spmm_transposed(a, q));
    q = orthonormal_basis(spmm(a, z));
  }
  // B = Q^T A, held transposed (cols x width) so the small SVD runs on a tall matrix.
  const DenseMatrix bt = spmm_transposed(a, q);
  const SvdFactors small = detail::jacobi_svd_tall(bt);

  SvdFactors f;
  f.rank_q = opt.rank;
  const DenseMatrix u_full = matmul(q, small.v_factor);
  f.u_factor = DenseMatrix(m, opt.rank);
  f.v_factor = DenseMatrix(n, opt.rank);
  f.singular_values.assign(small.singular_values.begin(), small.singular_values.begin() + opt.rank);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < opt.rank; ++c) f.u_factor(r, c) = u_full(r, c);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < opt.rank; ++c) f.v_factor(r, c) = small.u_factor(r, c);
  return f;
}

/// U S V^T * dense (or V S U^T * dense when `transpose`), evaluated right to
/// left so the rows x cols reconstruction is never formed.
inline DenseMatrix low_rank_propagate(const SvdFactors& f, const DenseMatrix& dense, bool transpose) {
  const DenseMatrix& inner = transpose ? f.u_factor : f.v_factor;
  const DenseMatrix& outer = transpose ? f.v_factor : f.u_factor;
  if (inner.rows() != dense.rows())
    throw ShapeError("low_rank_propagate inner " + inner.shape_string() + " vs " + dense.shape_string());
  DenseMatrix t = matmul_tn(inner, dense);
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (auto& v : t.row(r)) v *= f.singular_values[r];
  return matmul(outer, t);
}

}  // namespace mbsvd
