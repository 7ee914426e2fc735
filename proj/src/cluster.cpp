#include "clustercam/cluster.hpp"

namespace clustercam {

const char* to_string(ClusterMethod method) {
  return method == ClusterMethod::kSpectral ? "spectral" : "kmeans";
}

ClusterMethod parse_cluster_method(const std::string& text) {
  if (text == "kmeans" || text == "kmeans_direct") return ClusterMethod::kKMeansDirect;
  if (text == "spectral") return ClusterMethod::kSpectral;
  throw Error(ErrorCode::kInvalidArgument, "unknown cluster method '" + text + "' (kmeans|spectral)");
}

namespace {

FeatureClusterAssignment single_cluster(int n, std::uint64_t seed, const GridStack<double>& points) {
  FeatureClusterAssignment out;
  out.labels.assign(static_cast<std::size_t>(n), 0);
  out.q = 1;
  out.seed = seed;
  out.converged = true;
  out.centroids = points.colwise().mean();
  out.wcss_history.push_back((points.rowwise() - out.centroids.row(0)).squaredNorm());
  return out;
}

}  // namespace

FeatureClusterAssignment spectral_cluster(const SimilarityMatrix<double>& sim, const ClusterConfig& config) {
  const AdjacencyMatrix<double> adj = adjacency(sim, config.theta, config.sigma, config.adjacency_mode);
  const LaplacianMatrix<double> lap = laplacian(adj, config.normalized_laplacian);
  const Eigensystem<double> eig = eig_sym(lap.l);
  const EmbeddingMatrix<double> emb = spectral_embedding(eig, config.effective_k());
  return kmeans(emb.b, config.q, config.seed, config.kmeans);
}

FeatureClusterAssignment cluster_feature_maps(const FeatureMapStack& stack, const ClusterConfig& config) {
  validate_stack(stack);
  if (config.q < 1) {
    throw Error(ErrorCode::kInvalidArgument, "cluster count q must be >= 1, got " + std::to_string(config.q));
  }
  if (config.q > stack.n()) {
    throw Error(ErrorCode::kQTooLarge, "cluster count q = " + std::to_string(config.q) +
                                           " exceeds the " + std::to_string(stack.n()) + " feature maps");
  }
  if (config.q == 1) return single_cluster(stack.n(), config.seed, stack.data());

  if (config.method == ClusterMethod::kKMeansDirect) {
    return kmeans(stack.data(), config.q, config.seed, config.kmeans);
  }
  const SimilarityMatrix<double> sim = pairwise_similarity(stack.data(), config.metric);
  return spectral_cluster(sim, config);
}

}  // namespace clustercam
