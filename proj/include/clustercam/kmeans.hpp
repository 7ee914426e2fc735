#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "clustercam/error.hpp"

namespace clustercam {

enum class KMeansInit { kRandomPartition, kPlusPlus };

struct KMeansOptions {
  KMeansInit init = KMeansInit::kRandomPartition;
  int max_iterations = 300;
  /// Independent seeded starts; the lowest final WCSS wins (earliest on ties).
  int restarts = 10;
};

template <typename Scalar>
using PointMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
struct ClusterAssignment {
  /// labels[i] in [0, q). Clusters are numbered by first appearance.
  std::vector<int> labels;
  int q = 0;
  /// Assignment sweeps of the winning start.
  int iterations = 0;
  std::uint64_t seed = 0;
  bool converged = false;
  /// q x dim.
  PointMatrix<Scalar> centroids;
  /// WCSS after each centroid update of the winning start.
  std::vector<Scalar> wcss_history;

  Scalar wcss() const { return wcss_history.empty() ? Scalar(0) : wcss_history.back(); }

  std::vector<int> cluster_sizes() const {
    std::vector<int> sizes(static_cast<std::size_t>(q), 0);
    for (int l : labels) ++sizes[static_cast<std::size_t>(l)];
    return sizes;
  }

  std::vector<std::vector<int>> members() const {
    std::vector<std::vector<int>> out(static_cast<std::size_t>(q));
    for (std::size_t i = 0; i < labels.size(); ++i) {
      out[static_cast<std::size_t>(labels[i])].push_back(static_cast<int>(i));
    }
    return out;
  }
};

namespace detail {

// Fixed-algorithm draws from mt19937_64 so results do not depend on the
// standard library's distribution implementations.
inline std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x = rng();
  while (x >= limit) x = rng();
  return x % n;
}

inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

template <typename Derived>
Eigen::Index count_distinct_rows(const Eigen::MatrixBase<Derived>& pts) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(pts.rows()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  auto less = [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index c = 0; c < pts.cols(); ++c) {
      if (pts(a, c) != pts(b, c)) return pts(a, c) < pts(b, c);
    }
    return false;
  };
  std::sort(idx.begin(), idx.end(), less);
  Eigen::Index distinct = idx.empty() ? 0 : 1;
  for (std::size_t i = 1; i < idx.size(); ++i) {
    if (less(idx[i - 1], idx[i])) ++distinct;
  }
  return distinct;
}

template <typename Scalar, typename Derived>
Scalar squared_distance(const Eigen::MatrixBase<Derived>& pts, Eigen::Index row,
                        const PointMatrix<Scalar>& centroids, Eigen::Index c) {
  return (pts.row(row) - centroids.row(c)).squaredNorm();
}

template <typename Scalar, typename Derived>
void update_centroids(const Eigen::MatrixBase<Derived>& pts, const std::vector<int>& labels,
                      int q, PointMatrix<Scalar>& centroids) {
  centroids.setZero(q, pts.cols());
  std::vector<int> sizes(static_cast<std::size_t>(q), 0);
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    const int l = labels[static_cast<std::size_t>(i)];
    centroids.row(l) += pts.row(i);
    ++sizes[static_cast<std::size_t>(l)];
  }
  for (int c = 0; c < q; ++c) {
    if (sizes[static_cast<std::size_t>(c)] > 0) centroids.row(c) /= Scalar(sizes[static_cast<std::size_t>(c)]);
  }
}

template <typename Scalar, typename Derived>
Scalar total_wcss(const Eigen::MatrixBase<Derived>& pts, const std::vector<int>& labels,
                  const PointMatrix<Scalar>& centroids) {
  Scalar sum = 0;
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    sum += squared_distance<Scalar>(pts, i, centroids, labels[static_cast<std::size_t>(i)]);
  }
  return sum;
}

// Moves the point farthest from its centroid (in a cluster with more than one
// member) into each empty cluster.
template <typename Scalar, typename Derived>
void repair_empty_clusters(const Eigen::MatrixBase<Derived>& pts, std::vector<int>& labels, int q,
                           PointMatrix<Scalar>& centroids) {
  std::vector<int> sizes(static_cast<std::size_t>(q), 0);
  for (int l : labels) ++sizes[static_cast<std::size_t>(l)];
  for (int empty = 0; empty < q; ++empty) {
    if (sizes[static_cast<std::size_t>(empty)] > 0) continue;
    Eigen::Index far = -1;
    Scalar far_d = -1;
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
      const int l = labels[static_cast<std::size_t>(i)];
      if (sizes[static_cast<std::size_t>(l)] < 2) continue;
      const Scalar d = squared_distance<Scalar>(pts, i, centroids, l);
      if (d > far_d) {
        far_d = d;
        far = i;
      }
    }
    --sizes[static_cast<std::size_t>(labels[static_cast<std::size_t>(far)])];
    labels[static_cast<std::size_t>(far)] = empty;
    sizes[static_cast<std::size_t>(empty)] = 1;
    update_centroids<Scalar>(pts, labels, q, centroids);
  }
}

template <typename Scalar, typename Derived>
std::vector<int> init_random_partition(const Eigen::MatrixBase<Derived>& pts, int q,
                                       std::mt19937_64& rng) {
  // Random permutation dealt round-robin, so every cluster starts non-empty.
  const auto n = static_cast<std::size_t>(pts.rows());
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    std::swap(perm[i - 1], perm[uniform_index(rng, i)]);
  }
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[perm[i]] = static_cast<int>(i % static_cast<std::size_t>(q));
  return labels;
}

template <typename Scalar, typename Derived>
std::vector<int> init_plusplus(const Eigen::MatrixBase<Derived>& pts, int q, std::mt19937_64& rng) {
  const Eigen::Index n = pts.rows();
  PointMatrix<Scalar> centers(q, pts.cols());
  centers.row(0) = pts.row(static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::uint64_t>(n))));
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (int c = 1; c < q; ++c) {
    double total = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int j = 0; j < c; ++j) {
        best = std::min(best, static_cast<double>((pts.row(i) - centers.row(j)).squaredNorm()));
      }
      d2[static_cast<std::size_t>(i)] = best;
      total += best;
    }
    const double target = uniform01(rng) * total;
    double acc = 0;
    Eigen::Index pick = -1;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (d2[static_cast<std::size_t>(i)] <= 0) continue;
      acc += d2[static_cast<std::size_t>(i)];
      pick = i;
      if (acc > target) break;
    }
    centers.row(c) = pts.row(pick);
  }
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    int best = 0;
    Scalar best_d = squared_distance<Scalar>(pts, i, centers, 0);
    for (int j = 1; j < q; ++j) {
      const Scalar d = squared_distance<Scalar>(pts, i, centers, j);
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    labels[static_cast<std::size_t>(i)] = best;
  }
  return labels;
}

template <typename Scalar, typename Derived>
ClusterAssignment<Scalar> lloyd(const Eigen::MatrixBase<Derived>& pts, std::vector<int> labels,
                                int q, int max_iterations) {
  ClusterAssignment<Scalar> out;
  out.q = q;
  PointMatrix<Scalar>& centroids = out.centroids;
  update_centroids<Scalar>(pts, labels, q, centroids);
  repair_empty_clusters<Scalar>(pts, labels, q, centroids);
  out.wcss_history.push_back(total_wcss<Scalar>(pts, labels, centroids));

  for (int it = 0; it < max_iterations; ++it) {
    ++out.iterations;
    bool changed = false;
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
      int& label = labels[static_cast<std::size_t>(i)];
      int best = label;
      Scalar best_d = squared_distance<Scalar>(pts, i, centroids, label);
      for (int c = 0; c < q; ++c) {
        const Scalar d = squared_distance<Scalar>(pts, i, centroids, c);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (best != label) {
        label = best;
        changed = true;
      }
    }
    if (!changed) {
      out.converged = true;
      break;
    }
    update_centroids<Scalar>(pts, labels, q, centroids);
    repair_empty_clusters<Scalar>(pts, labels, q, centroids);
    out.wcss_history.push_back(total_wcss<Scalar>(pts, labels, centroids));
  }
  out.labels = std::move(labels);
  return out;
}

template <typename Scalar>
void relabel_by_first_appearance(ClusterAssignment<Scalar>& a) {
  std::vector<int> map(static_cast<std::size_t>(a.q), -1);
  int next = 0;
  for (int& l : a.labels) {
    int& m = map[static_cast<std::size_t>(l)];
    if (m < 0) m = next++;
    l = m;
  }
  PointMatrix<Scalar> reordered(a.centroids.rows(), a.centroids.cols());
  for (int old = 0; old < a.q; ++old) reordered.row(map[static_cast<std::size_t>(old)]) = a.centroids.row(old);
  a.centroids = std::move(reordered);
}

}  // namespace detail

/// Lloyd K-means over the rows of `points`. Deterministic for a fixed seed.
template <typename Derived>
ClusterAssignment<typename Derived::Scalar> kmeans(const Eigen::MatrixBase<Derived>& points, int q,
                                                   std::uint64_t seed, KMeansOptions options = {}) {
  using Scalar = typename Derived::Scalar;
  if (points.rows() == 0 || points.cols() == 0) {
    throw Error(ErrorCode::kEmptyInput, "kmeans needs at least one non-empty point");
  }
  if (!points.derived().array().isFinite().all()) {
    throw Error(ErrorCode::kNonFiniteValue, "kmeans input contains a non-finite value");
  }
  if (q < 1) {
    throw Error(ErrorCode::kInvalidArgument, "kmeans needs q >= 1, got " + std::to_string(q));
  }
  if (options.max_iterations < 1 || options.restarts < 1) {
    throw Error(ErrorCode::kInvalidArgument, "kmeans needs positive iteration and restart counts");
  }
  const Eigen::Index distinct = detail::count_distinct_rows(points);
  if (q > distinct) {
    throw Error(ErrorCode::kQTooLarge, "kmeans q = " + std::to_string(q) + " exceeds the " +
                                           std::to_string(distinct) + " distinct points");
  }

  std::mt19937_64 rng(seed);
  ClusterAssignment<Scalar> best;
  bool have_best = false;
  for (int r = 0; r < options.restarts; ++r) {
    std::vector<int> labels = options.init == KMeansInit::kPlusPlus
                                  ? detail::init_plusplus<Scalar>(points, q, rng)
                                  : detail::init_random_partition<Scalar>(points, q, rng);
    ClusterAssignment<Scalar> run = detail::lloyd<Scalar>(points, std::move(labels), q, options.max_iterations);
    if (!have_best || run.wcss() < best.wcss()) {
      best = std::move(run);
      have_best = true;
    }
    if (q == 1) break;
  }
  best.seed = seed;
  detail::relabel_by_first_appearance(best);
  return best;
}

}  // namespace clustercam
