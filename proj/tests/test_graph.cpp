#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <random>

#include "clustercam/cluster.hpp"
#include "clustercam/eigen_sym.hpp"
#include "clustercam/graph.hpp"
#include "test_support.hpp"

using namespace clustercam;

namespace {

using Points = PointMatrix<double>;

Points random_items(int n, int dim, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 3.0);
  Points p(n, dim);
  for (int i = 0; i < n; ++i)
    for (int d = 0; d < dim; ++d) p(i, d) = u(rng);
  return p;
}

AdjacencyMatrix<double> adjacency_from(const SquareMatrix<double>& a) {
  AdjacencyMatrix<double> adj;
  adj.a = a;
  return adj;
}

SimilarityMatrix<double> similarity_from(const SquareMatrix<double>& s) {
  SimilarityMatrix<double> sim;
  sim.s = s;
  return sim;
}

/// Two disjoint triangles {0,1,2} and {3,4,5} with unit weights.
SquareMatrix<double> two_triangles() {
  SquareMatrix<double> a = SquareMatrix<double>::Zero(6, 6);
  for (int block = 0; block < 2; ++block)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        if (i != j) a(3 * block + i, 3 * block + j) = 1.0;
  return a;
}

/// Direct global SSIM of two rows after joint min-max scaling.
double ssim_reference(const std::vector<double>& x, const std::vector<double>& y) {
  double lo = x[0], hi = x[0];
  for (double v : x) lo = std::min(lo, v), hi = std::max(hi, v);
  for (double v : y) lo = std::min(lo, v), hi = std::max(hi, v);
  std::vector<double> a, b;
  for (double v : x) a.push_back((v - lo) / (hi - lo));
  for (double v : y) b.push_back((v - lo) / (hi - lo));
  const double r = 1.0;  // jointly scaled to [0,1]
  const double c1 = (0.01 * r) * (0.01 * r), c2 = (0.03 * r) * (0.03 * r);
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i] / n, mb += b[i] / n;
  double va = 0, vb = 0, cov = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    va += (a[i] - ma) * (a[i] - ma) / n;
    vb += (b[i] - mb) * (b[i] - mb) / n;
    cov += (a[i] - ma) * (b[i] - mb) / n;
  }
  const double s = ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
  return (s + 1) / 2;
}

}  // namespace

TEST(Similarity, IdenticalMapsHaveUnitSimilarity) {
  Points p(3, 4);
  p << 1, 2, 3, 4, 1, 2, 3, 4, 0, 0, 1, 0;
  for (auto metric : {SimilarityMetric::kEuclideanExp, SimilarityMetric::kSsim}) {
    const auto sim = pairwise_similarity(p, metric);
    EXPECT_DOUBLE_EQ(sim.s(0, 1), 1.0);
  }
}

TEST(Similarity, UnitScaleExample) {
  Points p(2, 4);
  p << 0, 0, 0, 0, 1, 0, 0, 0;
  const auto sim = pairwise_similarity(p, SimilarityMetric::kEuclideanExp, 1.0);
  EXPECT_NEAR(sim.s(0, 1), 0.36788, 1e-5);
  EXPECT_DOUBLE_EQ(sim.s(0, 1), std::exp(-1.0));
}

TEST(Similarity, MedianScaleIsDefault) {
  Points p(3, 1);
  p << 0, 1, 3;  // distances 1, 3, 2 -> median 2
  const auto sim = pairwise_similarity(p, SimilarityMetric::kEuclideanExp);
  EXPECT_DOUBLE_EQ(sim.scale, 2.0);
  EXPECT_DOUBLE_EQ(sim.s(0, 2), std::exp(-1.5));
  Points zeros = Points::Zero(3, 2);
  EXPECT_DOUBLE_EQ(pairwise_similarity(zeros, SimilarityMetric::kEuclideanExp).scale, 1.0);
}

TEST(Similarity, SymmetricWithUnitDiagonal) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Points p = random_items(2 + static_cast<int>(rng() % 20), 9, rng);
    for (auto metric : {SimilarityMetric::kEuclideanExp, SimilarityMetric::kSsim}) {
      const auto sim = pairwise_similarity(p, metric);
      EXPECT_EQ(sim.s, sim.s.transpose());
      EXPECT_TRUE((sim.s.diagonal().array() == 1.0).all());
      EXPECT_TRUE((sim.s.array() >= 0.0).all() && (sim.s.array() <= 1.0).all());
    }
  }
}

TEST(Similarity, SsimMatchesDirectFormula) {
  std::mt19937_64 rng(2);
  const Points p = random_items(5, 16, rng);
  const auto sim = pairwise_similarity(p, SimilarityMetric::kSsim);
  for (int i = 0; i < 5; ++i) {
    for (int j = i + 1; j < 5; ++j) {
      std::vector<double> x(p.row(i).data(), p.row(i).data() + 16), y(p.row(j).data(), p.row(j).data() + 16);
      EXPECT_NEAR(sim.s(i, j), ssim_reference(x, y), 1e-12);
    }
  }
}

TEST(Adjacency, BelowThresholdIsCut) {
  SquareMatrix<double> s(2, 2);
  s << 1, 0.4, 0.4, 1;
  const auto adj = adjacency(similarity_from(s), 0.5, 1.0);
  EXPECT_EQ(adj.a(0, 1), 0.0);
  EXPECT_EQ(adj.a(0, 0), 0.0);
}

TEST(Adjacency, SimilarityFormExample) {
  SquareMatrix<double> s(2, 2);
  s << 1, 0.9, 0.9, 1;
  const auto adj = adjacency(similarity_from(s), 0.5, 1.0, AdjacencyMode::kSimilarityForm);
  EXPECT_NEAR(adj.a(0, 1), 0.90484, 1e-5);
  EXPECT_DOUBLE_EQ(adj.a(1, 0), std::exp(-(1.0 - 0.9)));
}

TEST(Adjacency, DistanceFormRecoversDistances) {
  Points p(3, 1);
  p << 0, 1, 3;
  const auto sim = pairwise_similarity(p, SimilarityMetric::kEuclideanExp);
  const auto adj = adjacency(sim, 0.0, 2.0, AdjacencyMode::kDistanceForm);
  EXPECT_NEAR(adj.a(0, 1), std::exp(-1.0 / 4.0), 1e-12);
  EXPECT_NEAR(adj.a(0, 2), std::exp(-9.0 / 4.0), 1e-12);
  EXPECT_NEAR(adj.a(1, 2), std::exp(-4.0 / 4.0), 1e-12);
}

TEST(Adjacency, InvalidParameters) {
  const auto sim = similarity_from(SquareMatrix<double>::Identity(2, 2));
  EXPECT_THROW(adjacency(sim, 1.0, 1.0), Error);
  EXPECT_THROW(adjacency(sim, -0.1, 1.0), Error);
  EXPECT_THROW(adjacency(sim, 0.1, 0.0), Error);
  SimilarityMatrix<double> ssim = sim;
  ssim.metric = SimilarityMetric::kSsim;
  EXPECT_THROW(adjacency(ssim, 0.1, 1.0, AdjacencyMode::kDistanceForm), Error);
}

TEST(Adjacency, ExactlySymmetricOnRandomInputs) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Points p = random_items(3 + static_cast<int>(rng() % 30), 6, rng);
    const auto sim = pairwise_similarity(p, SimilarityMetric::kEuclideanExp);
    for (auto mode : {AdjacencyMode::kSimilarityForm, AdjacencyMode::kDistanceForm}) {
      const auto adj = adjacency(sim, 0.1, 1.0, mode);
      EXPECT_EQ(adj.a, adj.a.transpose());
      EXPECT_TRUE((adj.a.diagonal().array() == 0.0).all());
    }
  }
}

TEST(Laplacian, PathGraph) {
  SquareMatrix<double> a(3, 3);
  a << 0, 1, 0, 1, 0, 1, 0, 1, 0;
  const auto lap = laplacian(adjacency_from(a), false);
  SquareMatrix<double> want(3, 3);
  want << 1, -1, 0, -1, 2, -1, 0, -1, 1;
  EXPECT_EQ(lap.l, want);
  const auto eig = eig_sym(lap.l);
  EXPECT_NEAR(eig.eigenvalues(0), 0.0, 1e-10);
  EXPECT_NEAR(eig.eigenvalues(1), 1.0, 1e-10);
  EXPECT_NEAR(eig.eigenvalues(2), 3.0, 1e-10);
}

TEST(Laplacian, IsolatedVertexNormalized) {
  SquareMatrix<double> a = SquareMatrix<double>::Zero(3, 3);
  a(0, 1) = a(1, 0) = 0.5;
  const auto lap = laplacian(adjacency_from(a), true);
  EXPECT_EQ(lap.l(2, 2), 0.0);
  for (int j = 0; j < 2; ++j) {
    EXPECT_EQ(lap.l(2, j), 0.0);
    EXPECT_EQ(lap.l(j, 2), 0.0);
  }
  EXPECT_DOUBLE_EQ(lap.l(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(lap.l(0, 1), -1.0);
}

TEST(Laplacian, RowSumsZeroAndSpectrumNonnegative) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const Points p = random_items(3 + static_cast<int>(rng() % 60), 5, rng);
    const auto adj = adjacency(pairwise_similarity(p, SimilarityMetric::kEuclideanExp), 0.1, 1.0);
    for (bool normalized : {false, true}) {
      const auto lap = laplacian(adj, normalized);
      EXPECT_EQ(lap.l, lap.l.transpose());
      if (!normalized) EXPECT_LE(lap.l.rowwise().sum().cwiseAbs().maxCoeff(), 1e-9);
      const auto eig = eig_sym(lap.l);
      EXPECT_GE(eig.eigenvalues.minCoeff(), -1e-8);
      if (normalized) EXPECT_LE(eig.eigenvalues.maxCoeff(), 2.0 + 1e-8);
    }
  }
}

TEST(SpectralEmbedding, ShapeAndFiedlerColumn) {
  SquareMatrix<double> a(3, 3);
  a << 0, 1, 0, 1, 0, 1, 0, 1, 0;
  const auto eig = eig_sym(laplacian(adjacency_from(a), false).l);
  const auto emb1 = spectral_embedding(eig, 1);
  EXPECT_EQ(emb1.b.rows(), 3);
  EXPECT_EQ(emb1.b.cols(), 1);
  EXPECT_EQ(Eigen::VectorXd(emb1.b.col(0)), Eigen::VectorXd(eig.eigenvectors.col(1)));
  EXPECT_EQ(spectral_embedding(eig, 2).b.cols(), 2);
  EXPECT_THROW(spectral_embedding(eig, 0), Error);
  EXPECT_THROW(spectral_embedding(eig, 3), Error);
}

TEST(SpectralEmbedding, TwoTrianglesRowsConstantPerComponent) {
  for (bool normalized : {false, true}) {
    const auto lap = laplacian(adjacency_from(two_triangles()), normalized);
    const auto eig = eig_sym(lap.l);
    // Independent check of the null space with Eigen's solver.
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ref(Eigen::MatrixXd(lap.l));
    EXPECT_NEAR(ref.eigenvalues()(1), 0.0, 1e-10);
    EXPECT_NEAR(eig.eigenvalues(1), 0.0, 1e-10);
    const auto emb = spectral_embedding(eig, 1);
    for (int block = 0; block < 2; ++block)
      for (int i = 1; i < 3; ++i) EXPECT_NEAR(emb.b(3 * block + i, 0), emb.b(3 * block, 0), 1e-8);
  }
}

TEST(SpectralCluster, DisjointCliquesSplitPerfectly) {
  for (int size : {3, 5, 8}) {
    const int n = 2 * size;
    SquareMatrix<double> s = SquareMatrix<double>::Zero(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i / size == j / size) s(i, j) = i == j ? 1.0 : 0.8;
    ClusterConfig config;
    config.method = ClusterMethod::kSpectral;
    config.q = 2;
    config.k = 1;
    for (bool normalized : {false, true}) {
      config.normalized_laplacian = normalized;
      const auto a = spectral_cluster(similarity_from(s), config);
      std::vector<int> want(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) want[static_cast<std::size_t>(i)] = i / size;
      EXPECT_EQ(a.labels, want) << "size " << size << " normalized " << normalized;
    }
  }
}
