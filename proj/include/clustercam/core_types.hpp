#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "clustercam/error.hpp"

namespace clustercam {

/// Single-channel spatial grid. Row-major so that a grid's storage matches
/// the height-width order used everywhere else (and in golden files).
template <typename Scalar>
using Grid = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Stack of equally sized grids, one per row, each row holding a flattened
/// row-major grid. Used for channel-height-width tensors.
template <typename Scalar>
using GridStack = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using GridD = Grid<double>;
using GridF = Grid<float>;

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.derived().array().isFinite().all();
}

/// Normalized 3-channel input image, channel-height-width.
class ImageTensor {
 public:
  static constexpr int kChannels = 3;

  /// `data` is 3 x (height*width); throws on a wrong layout or non-finite
  /// values.
  ImageTensor(GridStack<double> data, int height, int width,
              std::optional<std::string> source_path = std::nullopt);

  /// All-constant image.
  static ImageTensor filled(int height, int width, double value);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  const GridStack<double>& data() const noexcept { return data_; }
  const std::optional<std::string>& source_path() const noexcept { return source_path_; }

  Eigen::Map<const GridD> channel(int c) const {
    return Eigen::Map<const GridD>(data_.row(c).data(), height_, width_);
  }

 private:
  GridStack<double> data_;
  int height_;
  int width_;
  std::optional<std::string> source_path_;
};

/// The N activation maps of one layer for one input.
class FeatureMapStack {
 public:
  /// `data` is N x (height*width), one flattened map per row.
  FeatureMapStack(GridStack<double> data, int height, int width, std::string layer_name);

  /// Builds a stack from separate grids; validates that every grid has the
  /// same size.
  static FeatureMapStack from_maps(const std::vector<GridD>& maps, std::string layer_name);

  int n() const noexcept { return static_cast<int>(data_.rows()); }
  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  const std::string& layer_name() const noexcept { return layer_name_; }
  const GridStack<double>& data() const noexcept { return data_; }

  Eigen::Map<const GridD> map(int index) const {
    return Eigen::Map<const GridD>(data_.row(index).data(), height_, width_);
  }

 private:
  GridStack<double> data_;
  int height_;
  int width_;
  std::string layer_name_;
};

/// Re-checks every FeatureMapStack invariant and returns the stack unchanged.
const FeatureMapStack& validate_stack(const FeatureMapStack& stack);

/// Post-softmax class probabilities.
class ScoreVector {
 public:
  explicit ScoreVector(Eigen::VectorXd scores,
                       std::optional<Eigen::VectorXd> logits = std::nullopt);

  int class_count() const noexcept { return static_cast<int>(scores_.size()); }
  double operator[](int c) const { return scores_(c); }
  double at(int c) const;
  const Eigen::VectorXd& scores() const noexcept { return scores_; }
  /// Pre-softmax values when the runner computed the softmax itself.
  const std::optional<Eigen::VectorXd>& logits() const noexcept { return logits_; }
  int top1() const;

 private:
  Eigen::VectorXd scores_;
  std::optional<Eigen::VectorXd> logits_;
};

class Heatmap {
 public:
  Heatmap(GridD data, bool normalized);

  int height() const noexcept { return static_cast<int>(data_.rows()); }
  int width() const noexcept { return static_cast<int>(data_.cols()); }
  const GridD& data() const noexcept { return data_; }
  bool normalized() const noexcept { return normalized_; }

 private:
  GridD data_;
  bool normalized_;
};

enum class WeightMethod { kAblation, kScore };

struct ChannelWeights {
  ChannelWeights(Eigen::VectorXd weights, WeightMethod method, int expected_n);

  Eigen::VectorXd weights;
  WeightMethod method;
};

}  // namespace clustercam
