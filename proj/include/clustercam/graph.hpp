#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "clustercam/eigen_sym.hpp"
#include "clustercam/error.hpp"

namespace clustercam {

template <typename Scalar>
using SquareMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

enum class SimilarityMetric { kEuclideanExp, kSsim };
enum class AdjacencyMode { kSimilarityForm, kDistanceForm };

template <typename Scalar>
struct SimilarityMatrix {
  SquareMatrix<Scalar> s;
  SimilarityMetric metric = SimilarityMetric::kEuclideanExp;
  /// Distance scale c of exp(-d/c); 1 for SSIM.
  Scalar scale = 1;
};

template <typename Scalar>
struct AdjacencyMatrix {
  SquareMatrix<Scalar> a;
  Scalar theta = 0;
  Scalar sigma = 1;
};

template <typename Scalar>
struct LaplacianMatrix {
  SquareMatrix<Scalar> l;
  bool normalized = false;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> degrees;
};

template <typename Scalar>
struct EmbeddingMatrix {
  /// N x k; row n is the spectral vector of item n.
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> b;
  int k = 0;
};

namespace detail {

template <typename Scalar>
Scalar median(std::vector<Scalar> values) {
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const Scalar upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const Scalar lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return (lower + upper) / Scalar(2);
}

// Global (single-window) SSIM of two equally sized items after scaling both
// jointly into [0,1], mapped from [-1,1] onto [0,1].
template <typename RowA, typename RowB>
auto global_ssim(const RowA& x_in, const RowB& y_in) {
  using Scalar = typename RowA::Scalar;
  const Scalar lo = std::min(x_in.minCoeff(), y_in.minCoeff());
  const Scalar hi = std::max(x_in.maxCoeff(), y_in.maxCoeff());
  if (hi == lo) return Scalar(1);
  const auto x = ((x_in.array() - lo) / (hi - lo)).eval();
  const auto y = ((y_in.array() - lo) / (hi - lo)).eval();
  const Scalar range = std::max(x.maxCoeff(), y.maxCoeff()) - std::min(x.minCoeff(), y.minCoeff());
  const Scalar c1 = (Scalar(0.01) * range) * (Scalar(0.01) * range);
  const Scalar c2 = (Scalar(0.03) * range) * (Scalar(0.03) * range);
  const Scalar count = static_cast<Scalar>(x.size());
  const Scalar mx = x.sum() / count;
  const Scalar my = y.sum() / count;
  const Scalar vx = (x - mx).square().sum() / count;
  const Scalar vy = (y - my).square().sum() / count;
  const Scalar cov = ((x - mx) * (y - my)).sum() / count;
  const Scalar ssim = ((Scalar(2) * mx * my + c1) * (Scalar(2) * cov + c2)) /
                      ((mx * mx + my * my + c1) * (vx + vy + c2));
  return std::clamp((ssim + Scalar(1)) / Scalar(2), Scalar(0), Scalar(1));
}

}  // namespace detail

/// Pairwise Frobenius distances between the rows of `items`; symmetric with a
/// zero diagonal by construction.
template <typename Derived>
SquareMatrix<typename Derived::Scalar> pairwise_distances(const Eigen::MatrixBase<Derived>& items) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index n = items.rows();
  SquareMatrix<Scalar> d = SquareMatrix<Scalar>::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const Scalar v = (items.row(i) - items.row(j)).norm();
      d(i, j) = v;
      d(j, i) = v;
    }
  }
  return d;
}

/// Similarity between every pair of rows of `items` (each row a flattened
/// feature map). For kEuclideanExp, s = exp(-d/c): c defaults to the median
/// pairwise distance (1 when every distance is zero).
template <typename Derived>
SimilarityMatrix<typename Derived::Scalar> pairwise_similarity(
    const Eigen::MatrixBase<Derived>& items, SimilarityMetric metric,
    std::optional<typename Derived::Scalar> scale = std::nullopt) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index n = items.rows();
  if (n < 1) throw Error(ErrorCode::kEmptyInput, "similarity needs at least one item");

  SimilarityMatrix<Scalar> out;
  out.metric = metric;
  out.s = SquareMatrix<Scalar>::Identity(n, n);
  if (metric == SimilarityMetric::kSsim) {
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const Scalar v = detail::global_ssim(items.row(i), items.row(j));
        out.s(i, j) = v;
        out.s(j, i) = v;
      }
    }
    return out;
  }

  const SquareMatrix<Scalar> d = pairwise_distances(items);
  if (scale) {
    if (!(*scale > 0)) throw Error(ErrorCode::kInvalidArgument, "similarity scale must be positive");
    out.scale = *scale;
  } else if (n > 1) {
    std::vector<Scalar> upper;
    upper.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i + 1; j < n; ++j) upper.push_back(d(i, j));
    const Scalar med = detail::median(std::move(upper));
    out.scale = med > 0 ? med : Scalar(1);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const Scalar v = std::exp(-d(i, j) / out.scale);
      out.s(i, j) = v;
      out.s(j, i) = v;
    }
  }
  return out;
}

/// Thresholded weighted adjacency. Entries with s <= theta are cut; the
/// diagonal is always zero.
template <typename Scalar>
AdjacencyMatrix<Scalar> adjacency(const SimilarityMatrix<Scalar>& sim, Scalar theta, Scalar sigma,
                                  AdjacencyMode mode = AdjacencyMode::kSimilarityForm) {
  if (!(theta >= 0 && theta < 1)) {
    throw Error(ErrorCode::kInvalidArgument, "theta must lie in [0,1), got " + std::to_string(theta));
  }
  if (!(sigma > 0) || !std::isfinite(sigma)) {
    throw Error(ErrorCode::kInvalidArgument, "sigma must be positive, got " + std::to_string(sigma));
  }
  if (mode == AdjacencyMode::kDistanceForm && sim.metric != SimilarityMetric::kEuclideanExp) {
    throw Error(ErrorCode::kInvalidArgument,
                "distance-form adjacency needs a euclidean_exp similarity to recover distances");
  }
  const Eigen::Index n = sim.s.rows();
  AdjacencyMatrix<Scalar> out;
  out.theta = theta;
  out.sigma = sigma;
  out.a = SquareMatrix<Scalar>::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const Scalar s = sim.s(i, j);
      if (!(s > theta)) continue;
      Scalar v;
      if (mode == AdjacencyMode::kSimilarityForm) {
        v = std::exp(-(Scalar(1) - s) / sigma);
      } else {
        const Scalar dist = -sim.scale * std::log(s);
        v = std::exp(-(dist * dist) / (sigma * sigma));
      }
      out.a(i, j) = v;
      out.a(j, i) = v;
    }
  }
  return out;
}

/// L = D - A, or L_N = I - D^-1/2 A D^-1/2 with D^-1/2 = 0 on isolated
/// vertices (so their row and column are entirely zero).
template <typename Scalar>
LaplacianMatrix<Scalar> laplacian(const AdjacencyMatrix<Scalar>& adj, bool normalized) {
  const Eigen::Index n = adj.a.rows();
  if (adj.a.cols() != n) throw Error(ErrorCode::kDimensionMismatch, "adjacency must be square");
  LaplacianMatrix<Scalar> out;
  out.normalized = normalized;
  out.degrees = adj.a.rowwise().sum();
  out.l = SquareMatrix<Scalar>::Zero(n, n);
  if (!normalized) {
    for (Eigen::Index i = 0; i < n; ++i) {
      // Diagonal from the same summation order as the off-diagonals so that
      // rows cancel to rounding.
      Scalar diag = 0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j != i) diag += adj.a(i, j);
      }
      out.l(i, i) = diag;
      for (Eigen::Index j = i + 1; j < n; ++j) {
        out.l(i, j) = -adj.a(i, j);
        out.l(j, i) = -adj.a(i, j);
      }
    }
    return out;
  }
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_sqrt(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    inv_sqrt(i) = out.degrees(i) > 0 ? Scalar(1) / std::sqrt(out.degrees(i)) : Scalar(0);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    out.l(i, i) = out.degrees(i) > 0 ? Scalar(1) : Scalar(0);
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const Scalar v = -(inv_sqrt(i) * adj.a(i, j) * inv_sqrt(j));
      out.l(i, j) = v;
      out.l(j, i) = v;
    }
  }
  return out;
}

/// Columns u_2 .. u_{k+1} of the eigenvector matrix.
template <typename Scalar>
EmbeddingMatrix<Scalar> spectral_embedding(const Eigensystem<Scalar>& eig, int k) {
  const auto n = static_cast<int>(eig.eigenvectors.rows());
  if (k < 1 || k > n - 1) {
    throw Error(ErrorCode::kInvalidArgument, "eigenvector count k = " + std::to_string(k) +
                                                 " must lie in [1, " + std::to_string(n - 1) + "]");
  }
  EmbeddingMatrix<Scalar> out;
  out.k = k;
  out.b = eig.eigenvectors.middleCols(1, k);
  return out;
}

}  // namespace clustercam
