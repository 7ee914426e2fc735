#pragma once

#include <Eigen/Core>

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "clustercam/cluster.hpp"
#include "clustercam/core_types.hpp"
#include "clustercam/model_runner.hpp"

namespace clustercam {

enum class CamMethod { kCluster, kScore, kAblation };
const char* to_string(CamMethod method);
CamMethod parse_cam_method(const std::string& text);

enum class MaskNormalization { kMinMax, kNone };
const char* to_string(MaskNormalization mode);
MaskNormalization parse_mask_normalization(const std::string& text);

/// Reference input for the Score-CAM weights: α_n = S(X∘H_n) − S(X_b).
enum class ScoreBaseline { kZeroImage, kInputImage };
const char* to_string(ScoreBaseline baseline);
ScoreBaseline parse_score_baseline(const std::string& text);

struct ClusterCamConfig {
  int q = 6;
  std::optional<int> k;
  double beta = 0.5;
  ClusterMethod method = ClusterMethod::kKMeansDirect;
  std::uint64_t seed = 0;
  double theta = 0.1;
  double sigma = 1.0;
  MaskNormalization mask_normalization = MaskNormalization::kMinMax;
  SimilarityMetric metric = SimilarityMetric::kEuclideanExp;
  AdjacencyMode adjacency_mode = AdjacencyMode::kSimilarityForm;
  bool normalized_laplacian = true;
  KMeansOptions kmeans;

  void validate() const;
  ClusterConfig cluster_config() const;
};

/// Mean map of every cluster plus its size.
struct RepresentativeMaps {
  std::vector<GridD> maps;
  std::vector<int> cluster_sizes;

  int q() const { return static_cast<int>(maps.size()); }
};

RepresentativeMaps representative_maps(const FeatureMapStack& stack, const FeatureClusterAssignment& assignment);

/// Min-max scaling to [0, 1]; a constant grid maps to all zeros.
GridD normalize_minmax(const GridD& grid);

/// Upsamples a feature-resolution map to the input size. With kMinMax the
/// result is scaled to [0, 1]; a constant map becomes an all-zero mask.
GridD activation_mask(const GridD& map, int height, int width,
                      MaskNormalization mode = MaskNormalization::kMinMax);

/// X ∘ H with H broadcast over the three channels.
ImageTensor apply_mask(const ImageTensor& image, const GridD& mask);

/// Target-class probability for each representative map's masked input.
/// Exactly q forwards.
Eigen::VectorXd cluster_scores(ModelRunner& runner, const ImageTensor& image, const RepresentativeMaps& reps,
                               int target_class, MaskNormalization mode = MaskNormalization::kMinMax);

/// (argmax, argmin) of y; ties go to the lowest index.
std::pair<int, int> select_base_scissors(const Eigen::VectorXd& y);

/// β·base − (1−β)·scissors, before clamping.
GridD merge_raw(const GridD& base, const GridD& scissors, double beta);

/// ReLU followed by min-max scaling; an all-nonpositive input yields all
/// zeros.
Heatmap clamp_normalize(const GridD& raw);

Heatmap merge_heatmap(const GridD& base, const GridD& scissors, double beta);

struct CamDiagnostics {
  CamMethod cam = CamMethod::kCluster;
  int target_class = 0;
  bool class_auto = false;
  double original_score = 0.0;
  // Cluster-CAM only.
  std::vector<int> labels;
  Eigen::VectorXd y;
  int base = -1;
  int scissors = -1;
  double beta = 0.0;
  int q = 0;
  int k = 0;
  ClusterMethod cluster_method = ClusterMethod::kKMeansDirect;
  std::vector<int> cluster_sizes;
  // Channel-weight baselines only.
  Eigen::VectorXd weights;
  std::uint64_t fp_masked = 0;
  std::uint64_t fp_total = 0;
  double wall_ms = 0.0;
  std::vector<std::string> warnings;
};

struct CamResult {
  Heatmap heatmap;
  /// Input-resolution map before clamping and normalization.
  GridD raw;
  CamDiagnostics diagnostics;
};

/// With no target class, the top-1 class of the unmasked input is used.
CamResult cluster_cam(ModelRunner& runner, const ImageTensor& image, std::optional<int> target_class,
                      const ClusterCamConfig& config = {});

CamResult score_cam(ModelRunner& runner, const ImageTensor& image, std::optional<int> target_class,
                    ScoreBaseline baseline = ScoreBaseline::kZeroImage);

/// Zeroes one channel at a time and re-runs the head from the target layer.
CamResult ablation_cam(ModelRunner& runner, const ImageTensor& image, std::optional<int> target_class);

struct CamSettings {
  CamMethod method = CamMethod::kCluster;
  ClusterCamConfig cluster;
  ScoreBaseline baseline = ScoreBaseline::kZeroImage;
};

CamResult run_cam(ModelRunner& runner, const ImageTensor& image, std::optional<int> target_class,
                  const CamSettings& settings);

/// Stable-order JSON. With include_timing false, wall_ms is written as 0 so
/// repeated runs serialize identically.
nlohmann::ordered_json diagnostics_json(const CamDiagnostics& diag, bool include_timing = true);

}  // namespace clustercam
