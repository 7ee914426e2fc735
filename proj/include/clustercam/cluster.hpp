#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "clustercam/core_types.hpp"
#include "clustercam/graph.hpp"
#include "clustercam/kmeans.hpp"

namespace clustercam {

enum class ClusterMethod { kKMeansDirect, kSpectral };

const char* to_string(ClusterMethod method);
ClusterMethod parse_cluster_method(const std::string& text);

struct ClusterConfig {
  ClusterMethod method = ClusterMethod::kKMeansDirect;
  int q = 6;
  /// Eigenvector count for the spectral path; q - 1 when unset.
  std::optional<int> k;
  SimilarityMetric metric = SimilarityMetric::kEuclideanExp;
  AdjacencyMode adjacency_mode = AdjacencyMode::kSimilarityForm;
  double theta = 0.1;
  double sigma = 1.0;
  bool normalized_laplacian = true;
  std::uint64_t seed = 0;
  KMeansOptions kmeans;

  int effective_k() const { return k.value_or(q - 1 > 0 ? q - 1 : 1); }
};

using FeatureClusterAssignment = ClusterAssignment<double>;

/// Spectral path from a precomputed similarity: adjacency, Laplacian,
/// eigendecomposition, embedding, then K-means on the spectral vectors.
FeatureClusterAssignment spectral_cluster(const SimilarityMatrix<double>& sim, const ClusterConfig& config);

/// Splits the stack's maps into config.q clusters. q = 1 puts every map in
/// one cluster without running either algorithm.
FeatureClusterAssignment cluster_feature_maps(const FeatureMapStack& stack, const ClusterConfig& config);

}  // namespace clustercam
