#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "clustercam/error.hpp"

namespace clustercam {

template <typename Scalar>
struct Eigensystem {
  /// Ascending.
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> eigenvalues;
  /// Column i pairs with eigenvalues(i); columns are orthonormal.
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> eigenvectors;
  /// Total implicit QL iterations spent.
  int iterations = 0;
};

struct EigOptions {
  /// Budget of QL iterations per matrix row.
  int max_iterations_per_row = 100;
};

namespace detail {

// Householder reduction of a symmetric matrix to tridiagonal form. On exit
// `v` holds the accumulated orthogonal transform, `d` the diagonal and `e`
// the sub-diagonal (e(0) unused).
template <typename Scalar>
void tridiagonalize(Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& v,
                    Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& d,
                    Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& e) {
  const Eigen::Index n = v.rows();
  for (Eigen::Index j = 0; j < n; ++j) d(j) = v(n - 1, j);

  for (Eigen::Index i = n - 1; i > 0; --i) {
    Scalar scale = 0;
    Scalar h = 0;
    for (Eigen::Index k = 0; k < i; ++k) scale += std::abs(d(k));
    if (scale == Scalar(0)) {
      e(i) = d(i - 1);
      for (Eigen::Index j = 0; j < i; ++j) {
        d(j) = v(i - 1, j);
        v(i, j) = 0;
        v(j, i) = 0;
      }
    } else {
      for (Eigen::Index k = 0; k < i; ++k) {
        d(k) /= scale;
        h += d(k) * d(k);
      }
      Scalar f = d(i - 1);
      Scalar g = std::sqrt(h);
      if (f > 0) g = -g;
      e(i) = scale * g;
      h -= f * g;
      d(i - 1) = f - g;
      for (Eigen::Index j = 0; j < i; ++j) e(j) = 0;

      for (Eigen::Index j = 0; j < i; ++j) {
        f = d(j);
        v(j, i) = f;
        g = e(j) + v(j, j) * f;
        for (Eigen::Index k = j + 1; k <= i - 1; ++k) {
          g += v(k, j) * d(k);
          e(k) += v(k, j) * f;
        }
        e(j) = g;
      }
      f = 0;
      for (Eigen::Index j = 0; j < i; ++j) {
        e(j) /= h;
        f += e(j) * d(j);
      }
      const Scalar hh = f / (h + h);
      for (Eigen::Index j = 0; j < i; ++j) e(j) -= hh * d(j);
      for (Eigen::Index j = 0; j < i; ++j) {
        f = d(j);
        g = e(j);
        for (Eigen::Index k = j; k <= i - 1; ++k) v(k, j) -= (f * e(k) + g * d(k));
        d(j) = v(i - 1, j);
        v(i, j) = 0;
      }
    }
    d(i) = h;
  }

  for (Eigen::Index i = 0; i < n - 1; ++i) {
    v(n - 1, i) = v(i, i);
    v(i, i) = 1;
    const Scalar h = d(i + 1);
    if (h != Scalar(0)) {
      for (Eigen::Index k = 0; k <= i; ++k) d(k) = v(k, i + 1) / h;
      for (Eigen::Index j = 0; j <= i; ++j) {
        Scalar g = 0;
        for (Eigen::Index k = 0; k <= i; ++k) g += v(k, i + 1) * v(k, j);
        for (Eigen::Index k = 0; k <= i; ++k) v(k, j) -= g * d(k);
      }
    }
    for (Eigen::Index k = 0; k <= i; ++k) v(k, i + 1) = 0;
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    d(j) = v(n - 1, j);
    v(n - 1, j) = 0;
  }
  v(n - 1, n - 1) = 1;
  e(0) = 0;
}

// Implicit QL with Wilkinson-style shifts on the tridiagonal (d, e),
// rotating the columns of `v` along. Returns the number of iterations.
template <typename Scalar>
int tridiagonal_ql(Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& v,
                   Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& d,
                   Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& e, int budget) {
  const Eigen::Index n = v.rows();
  for (Eigen::Index i = 1; i < n; ++i) e(i - 1) = e(i);
  e(n - 1) = 0;

  const Scalar eps = std::numeric_limits<Scalar>::epsilon();
  Scalar f = 0;
  Scalar tst1 = 0;
  int total = 0;
  for (Eigen::Index l = 0; l < n; ++l) {
    tst1 = std::max(tst1, std::abs(d(l)) + std::abs(e(l)));
    Eigen::Index m = l;
    while (m < n - 1) {
      if (std::abs(e(m)) <= eps * tst1) break;
      ++m;
    }
    if (m > l) {
      do {
        if (++total > budget) {
          throw Error(ErrorCode::kConvergenceFailure,
                      "symmetric eigensolver exceeded its iteration budget of " +
                          std::to_string(budget));
        }
        Scalar g = d(l);
        Scalar p = (d(l + 1) - g) / (Scalar(2) * e(l));
        Scalar r = std::hypot(p, Scalar(1));
        if (p < 0) r = -r;
        d(l) = e(l) / (p + r);
        d(l + 1) = e(l) * (p + r);
        const Scalar dl1 = d(l + 1);
        Scalar h = g - d(l);
        for (Eigen::Index i = l + 2; i < n; ++i) d(i) -= h;
        f += h;

        p = d(m);
        Scalar c = 1;
        Scalar c2 = c;
        Scalar c3 = c;
        const Scalar el1 = e(l + 1);
        Scalar s = 0;
        Scalar s2 = 0;
        for (Eigen::Index i = m - 1; i >= l; --i) {
          c3 = c2;
          c2 = c;
          s2 = s;
          g = c * e(i);
          h = c * p;
          r = std::hypot(p, e(i));
          e(i + 1) = s * r;
          s = e(i) / r;
          c = p / r;
          p = c * d(i) - s * g;
          d(i + 1) = h + s * (c * g + s * d(i));
          for (Eigen::Index k = 0; k < n; ++k) {
            h = v(k, i + 1);
            v(k, i + 1) = s * v(k, i) + c * h;
            v(k, i) = c * v(k, i) - s * h;
          }
        }
        p = -s * s2 * c3 * el1 * e(l) / dl1;
        e(l) = s * p;
        d(l) = c * p;
      } while (std::abs(e(l)) > eps * tst1);
    }
    d(l) += f;
    e(l) = 0;
  }
  return total;
}

}  // namespace detail

/// Full eigendecomposition of a real symmetric matrix: Householder
/// tridiagonalization followed by implicit QL. Only the lower triangle is
/// trusted to be consistent with the upper; callers pass exactly symmetric
/// matrices. Eigenvalues come back ascending; each eigenvector is signed so
/// that its largest-magnitude entry is positive, which makes the output
/// deterministic.
template <typename Derived>
Eigensystem<typename Derived::Scalar> eig_sym(const Eigen::MatrixBase<Derived>& matrix,
                                              EigOptions options = {}) {
  using Scalar = typename Derived::Scalar;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  const Eigen::Index n = matrix.rows();
  if (n == 0 || matrix.cols() != n) {
    throw Error(ErrorCode::kDimensionMismatch, "eig_sym needs a non-empty square matrix");
  }
  if (!matrix.derived().array().isFinite().all()) {
    throw Error(ErrorCode::kNonFiniteValue, "eig_sym input contains a non-finite value");
  }

  Mat v = matrix;
  Vec d(n);
  Vec e(n);
  detail::tridiagonalize(v, d, e);
  const int budget = options.max_iterations_per_row * static_cast<int>(n);
  const int iterations = detail::tridiagonal_ql(v, d, e, budget);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return d(a) < d(b); });

  Eigensystem<Scalar> out;
  out.eigenvalues.resize(n);
  out.eigenvectors.resize(n, n);
  out.iterations = iterations;
  for (Eigen::Index j = 0; j < n; ++j) {
    const Eigen::Index src = order[static_cast<std::size_t>(j)];
    out.eigenvalues(j) = d(src);
    auto col = v.col(src);
    Eigen::Index peak = 0;
    col.cwiseAbs().maxCoeff(&peak);
    out.eigenvectors.col(j) = col(peak) < 0 ? Vec(-col) : Vec(col);
  }
  return out;
}

}  // namespace clustercam
