#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clustercam/core_types.hpp"

namespace clustercam {

struct InputSpec {
  int channels = 3;
  int height = 0;
  int width = 0;
};

enum class SoftmaxMode {
  /// Apply softmax unless the backend's raw output already is a distribution.
  kAuto,
  kAlways,
  kNever,
};

struct RunnerOptions {
  SoftmaxMode softmax = SoftmaxMode::kAuto;
  /// Used for graph inputs whose spatial dimensions are symbolic.
  int fallback_height = 224;
  int fallback_width = 224;
};

/// What a backend knows about its raw output.
enum class OutputKind { kLogits, kProbabilities, kUnknown };

/// Model-specific forward evaluation behind a ModelRunner. Implementations
/// do not count forwards; the runner does.
class Backend {
 public:
  struct Output {
    Eigen::VectorXd values;
    std::optional<FeatureMapStack> features;
  };

  virtual ~Backend() = default;
  virtual InputSpec input_spec() const = 0;
  virtual int class_count() const = 0;
  virtual const std::string& layer_name() const = 0;
  virtual OutputKind output_kind() const = 0;
  virtual Output forward(const ImageTensor& image, bool want_features) const = 0;
  virtual bool supports_head_forward() const = 0;
  /// Evaluates the network from the target layer onwards.
  virtual Eigen::VectorXd head_forward(const FeatureMapStack& stack) const = 0;
  virtual std::vector<std::string> candidate_layers() const = 0;
  virtual std::string description() const = 0;
};

struct Inference {
  ScoreVector scores;
  FeatureMapStack features;
};

/// Forward-only classifier session. Not safe for concurrent use; every call
/// that evaluates the network (full or head-only) advances forward_count()
/// by exactly one per evaluated input.
class ModelRunner {
 public:
  ModelRunner(std::unique_ptr<Backend> backend, RunnerOptions options = {});

  ModelRunner(ModelRunner&&) noexcept = default;
  ModelRunner& operator=(ModelRunner&&) noexcept = default;

  InputSpec input_spec() const { return backend_->input_spec(); }
  int class_count() const { return backend_->class_count(); }
  const std::string& layer_name() const { return backend_->layer_name(); }
  std::string description() const { return backend_->description(); }
  std::vector<std::string> candidate_layers() const { return backend_->candidate_layers(); }
  bool supports_head_forward() const { return backend_->supports_head_forward(); }

  std::uint64_t forward_count() const noexcept { return forward_count_; }

  Inference infer(const ImageTensor& image);
  ScoreVector infer_scores(const ImageTensor& image);
  std::vector<ScoreVector> infer_scores(std::span<const ImageTensor> images);
  /// Head-only forward from a (possibly modified) target-layer stack.
  ScoreVector infer_from_layer(const FeatureMapStack& stack);

 private:
  void check_input(const ImageTensor& image) const;
  ScoreVector to_scores(Eigen::VectorXd raw) const;

  std::unique_ptr<Backend> backend_;
  RunnerOptions options_;
  std::uint64_t forward_count_ = 0;
};

Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

/// Weights of the fixture network: 3->4 3x3 convolution (stride 1, zero
/// padding 1), ReLU, global average pooling, dense 4->3. Input 3x8x8; the
/// target layer is the post-ReLU convolution output (4x8x8).
///
/// Weights come from a 64-bit LCG: state <- state * 6364136223846793005 +
/// 1442695040888963407 (mod 2^64), starting from state = seed and stepping
/// before each draw; each draw is (state >> 11) * 2^-53 - 0.5. Draw order:
/// conv weights [out][in][ky][kx], conv bias [out], dense weights
/// [class][channel], dense bias [class].
struct FixtureWeights {
  static constexpr int kIn = 3;
  static constexpr int kOut = 4;
  static constexpr int kKernel = 3;
  static constexpr int kClasses = 3;
  static constexpr int kSize = 8;

  std::array<double, kOut * kIn * kKernel * kKernel> conv{};
  std::array<double, kOut> conv_bias{};
  std::array<double, kClasses * kOut> dense{};
  std::array<double, kClasses> dense_bias{};

  static FixtureWeights from_seed(std::uint64_t seed);

  double conv_at(int out, int in, int ky, int kx) const {
    return conv[static_cast<std::size_t>(((out * kIn + in) * kKernel + ky) * kKernel + kx)];
  }
  double dense_at(int cls, int ch) const { return dense[static_cast<std::size_t>(cls * kOut + ch)]; }
};

class Lcg64 {
 public:
  explicit Lcg64(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next_raw() {
    state_ = state_ * 6364136223846793005ULL + 1442695040888963407ULL;
    return state_;
  }
  /// Uniform in [-0.5, 0.5).
  double next_centered() { return static_cast<double>(next_raw() >> 11) * 0x1.0p-53 - 0.5; }

 private:
  std::uint64_t state_;
};

ModelRunner fixture_runner(std::uint64_t seed);
ModelRunner fixture_runner(const FixtureWeights& weights);

/// Loads an ONNX classifier and exposes `target_layer` (an exact node
/// output name) as the feature stack. `source` may also be "fixture:<seed>"
/// or an export manifest (*.json); with a manifest an empty target_layer
/// selects the manifest's suggested layer.
ModelRunner load_model(const std::string& source, const std::string& target_layer, RunnerOptions options = {});

/// Convolution-like activations of an ONNX model with their shapes, for
/// layer discovery.
struct LayerInfo {
  std::string name;
  std::string op_type;
  std::vector<std::int64_t> shape;
};
std::vector<LayerInfo> list_layers(const std::string& source, RunnerOptions options = {});

/// JSON manifest written by the model export helper.
struct ExportManifest {
  std::string model;
  std::string path;
  InputSpec input;
  std::string target_layer;
  int class_count = 0;
};
ExportManifest load_export_manifest(const std::string& path);

}  // namespace clustercam
