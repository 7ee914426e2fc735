#include "clustercam/cam.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "clustercam/imaging.hpp"

namespace clustercam {

const char* to_string(CamMethod method) {
  switch (method) {
    case CamMethod::kCluster: return "cluster";
    case CamMethod::kScore: return "score";
    case CamMethod::kAblation: return "ablation";
  }
  return "?";
}

CamMethod parse_cam_method(const std::string& text) {
  if (text == "cluster") return CamMethod::kCluster;
  if (text == "score") return CamMethod::kScore;
  if (text == "ablation") return CamMethod::kAblation;
  throw Error(ErrorCode::kInvalidArgument, "unknown method '" + text + "' (cluster|score|ablation)");
}

const char* to_string(MaskNormalization mode) { return mode == MaskNormalization::kNone ? "none" : "minmax"; }

MaskNormalization parse_mask_normalization(const std::string& text) {
  if (text == "minmax") return MaskNormalization::kMinMax;
  if (text == "none") return MaskNormalization::kNone;
  throw Error(ErrorCode::kInvalidArgument, "unknown mask normalization '" + text + "' (minmax|none)");
}

const char* to_string(ScoreBaseline baseline) {
  return baseline == ScoreBaseline::kInputImage ? "input_image" : "zero_image";
}

ScoreBaseline parse_score_baseline(const std::string& text) {
  if (text == "zero_image" || text == "zero") return ScoreBaseline::kZeroImage;
  if (text == "input_image" || text == "input") return ScoreBaseline::kInputImage;
  throw Error(ErrorCode::kInvalidArgument, "unknown score baseline '" + text + "' (zero_image|input_image)");
}

void ClusterCamConfig::validate() const {
  if (q < 1) throw Error(ErrorCode::kInvalidArgument, "q must be >= 1, got " + std::to_string(q));
  if (k && *k < 1) throw Error(ErrorCode::kInvalidArgument, "k must be >= 1, got " + std::to_string(*k));
  if (!(beta >= 0.0 && beta <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "beta must lie in [0, 1]");
  if (!(theta >= 0.0 && theta < 1.0)) throw Error(ErrorCode::kInvalidArgument, "theta must lie in [0, 1)");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw Error(ErrorCode::kInvalidArgument, "sigma must be positive");
}

ClusterConfig ClusterCamConfig::cluster_config() const {
  ClusterConfig c;
  c.method = method;
  c.q = q;
  c.k = k;
  c.metric = metric;
  c.adjacency_mode = adjacency_mode;
  c.theta = theta;
  c.sigma = sigma;
  c.normalized_laplacian = normalized_laplacian;
  c.seed = seed;
  c.kmeans = kmeans;
  return c;
}

RepresentativeMaps representative_maps(const FeatureMapStack& stack, const FeatureClusterAssignment& assignment) {
  if (static_cast<int>(assignment.labels.size()) != stack.n()) {
    throw Error(ErrorCode::kPartitionMismatch, "assignment covers " + std::to_string(assignment.labels.size()) +
                                                   " maps, stack has " + std::to_string(stack.n()));
  }
  const int q = assignment.q;
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(q, stack.height() * stack.width());
  std::vector<int> sizes(static_cast<std::size_t>(q), 0);
  for (int i = 0; i < stack.n(); ++i) {
    const int l = assignment.labels[static_cast<std::size_t>(i)];
    if (l < 0 || l >= q) throw Error(ErrorCode::kPartitionMismatch, "label out of range");
    sums.row(l) += stack.data().row(i);
    ++sizes[static_cast<std::size_t>(l)];
  }
  RepresentativeMaps out;
  out.cluster_sizes = sizes;
  for (int l = 0; l < q; ++l) {
    if (sizes[static_cast<std::size_t>(l)] == 0) {
      throw Error(ErrorCode::kPartitionMismatch, "cluster " + std::to_string(l) + " is empty");
    }
    const Eigen::RowVectorXd mean = sums.row(l) / static_cast<double>(sizes[static_cast<std::size_t>(l)]);
    out.maps.emplace_back(Eigen::Map<const GridD>(mean.data(), stack.height(), stack.width()));
  }
  return out;
}

GridD normalize_minmax(const GridD& grid) {
  const double lo = grid.minCoeff();
  const double hi = grid.maxCoeff();
  if (!(hi > lo)) return GridD::Zero(grid.rows(), grid.cols());
  return ((grid.array() - lo) / (hi - lo)).matrix();
}

GridD activation_mask(const GridD& map, int height, int width, MaskNormalization mode) {
  if (!all_finite(map)) throw Error(ErrorCode::kNonFiniteValue, "activation map has non-finite values");
  GridD up = resize_bilinear(map, height, width);
  return mode == MaskNormalization::kMinMax ? normalize_minmax(up) : up;
}

ImageTensor apply_mask(const ImageTensor& image, const GridD& mask) {
  if (mask.rows() != image.height() || mask.cols() != image.width()) {
    throw Error(ErrorCode::kDimensionMismatch, "mask size differs from the image");
  }
  const Eigen::Map<const Eigen::RowVectorXd> flat(mask.data(), mask.size());
  GridStack<double> data = image.data();
  for (int c = 0; c < ImageTensor::kChannels; ++c) data.row(c).array() *= flat.array();
  return ImageTensor(std::move(data), image.height(), image.width(), image.source_path());
}

namespace {

int resolve_class(const ScoreVector& scores, std::optional<int> target_class) {
  const int c = target_class.value_or(scores.top1());
  if (c < 0 || c >= scores.class_count()) {
    throw Error(ErrorCode::kInvalidArgument, "class index " + std::to_string(c) + " outside [0, " +
                                                 std::to_string(scores.class_count()) + ")");
  }
  return c;
}

void check_class(const ModelRunner& runner, std::optional<int> target_class) {
  if (target_class && (*target_class < 0 || *target_class >= runner.class_count())) {
    throw Error(ErrorCode::kInvalidArgument, "class index " + std::to_string(*target_class) + " outside [0, " +
                                                 std::to_string(runner.class_count()) + ")");
  }
}

/// Σ w_n F_n at feature resolution, upsampled to the input size.
GridD weighted_sum(const FeatureMapStack& stack, const Eigen::VectorXd& weights, int height, int width) {
  const Eigen::RowVectorXd sum = weights.transpose() * stack.data();
  const GridD grid = Eigen::Map<const GridD>(sum.data(), stack.height(), stack.width());
  return resize_bilinear(grid, height, width);
}

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double elapsed_ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace

Eigen::VectorXd cluster_scores(ModelRunner& runner, const ImageTensor& image, const RepresentativeMaps& reps,
                               int target_class, MaskNormalization mode) {
  if (reps.maps.empty()) throw Error(ErrorCode::kEmptyInput, "no representative maps");
  Eigen::VectorXd y(reps.q());
  for (int i = 0; i < reps.q(); ++i) {
    const GridD mask = activation_mask(reps.maps[static_cast<std::size_t>(i)], image.height(), image.width(), mode);
    y(i) = runner.infer_scores(apply_mask(image, mask)).at(target_class);
  }
  return y;
}

std::pair<int, int> select_base_scissors(const Eigen::VectorXd& y) {
  if (y.size() == 0) throw Error(ErrorCode::kEmptyInput, "empty score vector");
  if (!all_finite(y)) throw Error(ErrorCode::kNonFiniteValue, "cluster scores are not finite");
  int base = 0;
  int scissors = 0;
  for (Eigen::Index i = 1; i < y.size(); ++i) {
    if (y(i) > y(base)) base = static_cast<int>(i);
    if (y(i) < y(scissors)) scissors = static_cast<int>(i);
  }
  return {base, scissors};
}

GridD merge_raw(const GridD& base, const GridD& scissors, double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "beta must lie in [0, 1]");
  if (base.rows() != scissors.rows() || base.cols() != scissors.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "base and scissors differ in size");
  }
  return beta * base - (1.0 - beta) * scissors;
}

Heatmap clamp_normalize(const GridD& raw) {
  if (!all_finite(raw)) throw Error(ErrorCode::kNonFiniteValue, "heatmap has non-finite values");
  return Heatmap(normalize_minmax(raw.cwiseMax(0.0)), true);
}

Heatmap merge_heatmap(const GridD& base, const GridD& scissors, double beta) {
  return clamp_normalize(merge_raw(base, scissors, beta));
}

CamResult cluster_cam(ModelRunner& runner, const ImageTensor& image, std::optional<int> target_class,
                      const ClusterCamConfig& config) {
  config.validate();
  check_class(runner, target_class);
  const Stopwatch watch;
  const std::uint64_t fp_start = runner.forward_count();

  const Inference inf = runner.infer(image);
  const int c = resolve_class(inf.scores, target_class);
  const FeatureClusterAssignment assignment = cluster_feature_maps(inf.features, config.cluster_config());
  const RepresentativeMaps reps = representative_maps(inf.features, assignment);
  const std::uint64_t fp_before_masked = runner.forward_count();
  Eigen::VectorXd y = cluster_scores(runner, image, reps, c, config.mask_normalization);
  const std::uint64_t fp_masked = runner.forward_count() - fp_before_masked;
  const auto [base, scissors] = select_base_scissors(y);

  const GridD base_up = resize_bilinear(reps.maps[static_cast<std::size_t>(base)], image.height(), image.width());
  const GridD scissors_up =
      resize_bilinear(reps.maps[static_cast<std::size_t>(scissors)], image.height(), image.width());
  GridD raw = merge_raw(base_up, scissors_up, config.beta);
  Heatmap heatmap = clamp_normalize(raw);

  CamDiagnostics d;
  d.cam = CamMethod::kCluster;
  d.target_class = c;
  d.class_auto = !target_class.has_value();
  d.original_score = inf.scores.at(c);
  d.labels = assignment.labels;
  d.y = std::move(y);
  d.base = base;
  d.scissors = scissors;
  d.beta = config.beta;
  d.q = config.q;
  d.k = config.method == ClusterMethod::kSpectral ? config.cluster_config().effective_k() : 0;
  d.cluster_method = config.method;
  d.cluster_sizes = reps.cluster_sizes;
  d.fp_masked = fp_masked;
  d.fp_total = runner.forward_count() - fp_start;
  if (config.q == 1) d.warnings.emplace_back("q = 1: base and scissors are the same cluster");
  d.wall_ms = watch.elapsed_ms();
  return CamResult{std::move(heatmap), std::move(raw), std::move(d)};
}

CamResult score_cam(ModelRunner& runner, const ImageTensor& image, std::optional<int> target_class,
                    ScoreBaseline baseline) {
  check_class(runner, target_class);
  const Stopwatch watch;
  const std::uint64_t fp_start = runner.forward_count();

  const Inference inf = runner.infer(image);
  const int c = resolve_class(inf.scores, target_class);
  const FeatureMapStack& stack = inf.features;
  Eigen::VectorXd masked(stack.n());
  for (int n = 0; n < stack.n(); ++n) {
    const GridD mask = activation_mask(stack.map(n), image.height(), image.width());
    masked(n) = runner.infer_scores(apply_mask(image, mask)).at(c);
  }
  const std::uint64_t fp_masked = static_cast<std::uint64_t>(stack.n());
  // The baseline is always scored by its own forward, so fp_total is N + 2
  // for either choice.
  const double reference = baseline == ScoreBaseline::kZeroImage
                               ? runner.infer_scores(ImageTensor::filled(image.height(), image.width(), 0.0)).at(c)
                               : runner.infer_scores(image).at(c);
  ChannelWeights weights((masked.array() - reference).matrix(), WeightMethod::kScore, stack.n());

  GridD raw = weighted_sum(stack, weights.weights, image.height(), image.width());
  Heatmap heatmap = clamp_normalize(raw);

  CamDiagnostics d;
  d.cam = CamMethod::kScore;
  d.target_class = c;
  d.class_auto = !target_class.has_value();
  d.original_score = inf.scores.at(c);
  d.weights = std::move(weights.weights);
  d.fp_masked = fp_masked;
  d.fp_total = runner.forward_count() - fp_start;
  d.wall_ms = watch.elapsed_ms();
  return CamResult{std::move(heatmap), std::move(raw), std::move(d)};
}

CamResult ablation_cam(ModelRunner& runner, const ImageTensor& image, std::optional<int> target_class) {
  check_class(runner, target_class);
  if (!runner.supports_head_forward()) {
    throw Error(ErrorCode::kUnsupportedSplit, "model cannot be evaluated from layer '" + runner.layer_name() + "'");
  }
  constexpr double kEpsilon = 1e-12;
  const Stopwatch watch;
  const std::uint64_t fp_start = runner.forward_count();

  const Inference inf = runner.infer(image);
  const int c = resolve_class(inf.scores, target_class);
  const FeatureMapStack& stack = inf.features;
  const double full = inf.scores.at(c);
  Eigen::VectorXd alpha(stack.n());
  GridStack<double> ablated = stack.data();
  for (int n = 0; n < stack.n(); ++n) {
    ablated.row(n).setZero();
    const double s = runner.infer_from_layer(FeatureMapStack(ablated, stack.height(), stack.width(),
                                                             stack.layer_name())).at(c);
    ablated.row(n) = stack.data().row(n);
    alpha(n) = (full - s) / std::max(full, kEpsilon);
  }
  ChannelWeights weights(std::move(alpha), WeightMethod::kAblation, stack.n());

  GridD raw = weighted_sum(stack, weights.weights, image.height(), image.width());
  Heatmap heatmap = clamp_normalize(raw);

  CamDiagnostics d;
  d.cam = CamMethod::kAblation;
  d.target_class = c;
  d.class_auto = !target_class.has_value();
  d.original_score = full;
  d.weights = std::move(weights.weights);
  d.fp_masked = static_cast<std::uint64_t>(stack.n());
  d.fp_total = runner.forward_count() - fp_start;
  d.wall_ms = watch.elapsed_ms();
  return CamResult{std::move(heatmap), std::move(raw), std::move(d)};
}

CamResult run_cam(ModelRunner& runner, const ImageTensor& image, std::optional<int> target_class,
                  const CamSettings& settings) {
  switch (settings.method) {
    case CamMethod::kCluster: return cluster_cam(runner, image, target_class, settings.cluster);
    case CamMethod::kScore: return score_cam(runner, image, target_class, settings.baseline);
    case CamMethod::kAblation: return ablation_cam(runner, image, target_class);
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown method");
}

namespace {

std::vector<double> to_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

nlohmann::ordered_json diagnostics_json(const CamDiagnostics& diag, bool include_timing) {
  nlohmann::ordered_json j;
  const double wall_ms = include_timing ? diag.wall_ms : 0.0;
  if (diag.cam == CamMethod::kCluster) {
    j["labels"] = diag.labels;
    j["y"] = to_vector(diag.y);
    j["base"] = diag.base;
    j["scissors"] = diag.scissors;
    j["beta"] = diag.beta;
    j["q"] = diag.q;
    if (diag.cluster_method == ClusterMethod::kSpectral) {
      j["k"] = diag.k;
    } else {
      j["k"] = nullptr;
    }
    j["method"] = to_string(diag.cluster_method);
    j["fp_masked"] = diag.fp_masked;
    j["fp_total"] = diag.fp_total;
    j["wall_ms"] = wall_ms;
    j["cam"] = to_string(diag.cam);
    j["target_class"] = diag.target_class;
    j["class_auto"] = diag.class_auto;
    j["original_score"] = diag.original_score;
    j["cluster_sizes"] = diag.cluster_sizes;
  } else {
    j["cam"] = to_string(diag.cam);
    j["target_class"] = diag.target_class;
    j["class_auto"] = diag.class_auto;
    j["original_score"] = diag.original_score;
    j["weights"] = to_vector(diag.weights);
    j["fp_masked"] = diag.fp_masked;
    j["fp_total"] = diag.fp_total;
    j["wall_ms"] = wall_ms;
  }
  j["warnings"] = diag.warnings;
  return j;
}

}  // namespace clustercam
