#include "clustercam/core_types.hpp"

#include <cmath>
#include <sstream>

namespace clustercam {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kDimensionMismatch: return "dimension mismatch";
    case ErrorCode::kNonFiniteValue: return "non-finite value";
    case ErrorCode::kTooFewMaps: return "too few feature maps";
    case ErrorCode::kQTooLarge: return "cluster count too large";
    case ErrorCode::kEmptyInput: return "empty input";
    case ErrorCode::kConvergenceFailure: return "convergence failure";
    case ErrorCode::kParseError: return "parse error";
    case ErrorCode::kUnknownLayer: return "unknown layer";
    case ErrorCode::kShapeMismatch: return "shape mismatch";
    case ErrorCode::kUnsupportedSplit: return "unsupported split";
    case ErrorCode::kUnsupportedOperator: return "unsupported operator";
    case ErrorCode::kDecodeError: return "decode error";
    case ErrorCode::kUnsupportedFormat: return "unsupported format";
    case ErrorCode::kIoError: return "i/o error";
    case ErrorCode::kZeroOriginalScore: return "zero original score";
    case ErrorCode::kPartitionMismatch: return "partition mismatch";
  }
  return "unknown error";
}

namespace {

void require_grid_layout(const GridStack<double>& data, int height, int width, const char* what) {
  if (height < 1 || width < 1) {
    std::ostringstream os;
    os << what << ": spatial size must be positive, got " << height << "x" << width;
    throw Error(ErrorCode::kDimensionMismatch, os.str());
  }
  if (data.cols() != static_cast<Eigen::Index>(height) * width) {
    std::ostringstream os;
    os << what << ": row length " << data.cols() << " does not match " << height << "x" << width;
    throw Error(ErrorCode::kDimensionMismatch, os.str());
  }
  if (!all_finite(data)) {
    throw Error(ErrorCode::kNonFiniteValue, std::string(what) + ": contains a non-finite value");
  }
}

}  // namespace

ImageTensor::ImageTensor(GridStack<double> data, int height, int width,
                         std::optional<std::string> source_path)
    : data_(std::move(data)), height_(height), width_(width), source_path_(std::move(source_path)) {
  if (data_.rows() != kChannels) {
    throw Error(ErrorCode::kDimensionMismatch,
                "image must have exactly 3 channels, got " + std::to_string(data_.rows()));
  }
  require_grid_layout(data_, height_, width_, "image");
}

ImageTensor ImageTensor::filled(int height, int width, double value) {
  GridStack<double> data = GridStack<double>::Constant(kChannels, static_cast<Eigen::Index>(height) * width, value);
  return ImageTensor(std::move(data), height, width);
}

FeatureMapStack::FeatureMapStack(GridStack<double> data, int height, int width,
                                 std::string layer_name)
    : data_(std::move(data)), height_(height), width_(width), layer_name_(std::move(layer_name)) {
  validate_stack(*this);
}

FeatureMapStack FeatureMapStack::from_maps(const std::vector<GridD>& maps, std::string layer_name) {
  if (maps.size() < 2) {
    throw Error(ErrorCode::kTooFewMaps,
                "feature stack needs at least 2 maps, got " + std::to_string(maps.size()));
  }
  const auto h = maps.front().rows();
  const auto w = maps.front().cols();
  GridStack<double> data(static_cast<Eigen::Index>(maps.size()), h * w);
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (maps[i].rows() != h || maps[i].cols() != w) {
      std::ostringstream os;
      os << "feature map " << i << " is " << maps[i].rows() << "x" << maps[i].cols()
         << ", expected " << h << "x" << w;
      throw Error(ErrorCode::kDimensionMismatch, os.str());
    }
    data.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(maps[i].data(), h * w);
  }
  return FeatureMapStack(std::move(data), static_cast<int>(h), static_cast<int>(w), std::move(layer_name));
}

const FeatureMapStack& validate_stack(const FeatureMapStack& stack) {
  if (stack.n() < 2) {
    throw Error(ErrorCode::kTooFewMaps,
                "feature stack needs at least 2 maps, got " + std::to_string(stack.n()));
  }
  require_grid_layout(stack.data(), stack.height(), stack.width(), "feature stack");
  return stack;
}

ScoreVector::ScoreVector(Eigen::VectorXd scores, std::optional<Eigen::VectorXd> logits)
    : scores_(std::move(scores)), logits_(std::move(logits)) {
  if (scores_.size() == 0) {
    throw Error(ErrorCode::kEmptyInput, "score vector is empty");
  }
  if (!all_finite(scores_)) {
    throw Error(ErrorCode::kNonFiniteValue, "score vector contains a non-finite value");
  }
  if ((scores_.array() < 0.0).any() || (scores_.array() > 1.0).any()) {
    throw Error(ErrorCode::kInvalidArgument, "scores must lie in [0,1]");
  }
  if (std::abs(scores_.sum() - 1.0) > 1e-6) {
    std::ostringstream os;
    os.precision(12);
    os << "scores must sum to 1 within 1e-6, sum is " << scores_.sum();
    throw Error(ErrorCode::kInvalidArgument, os.str());
  }
}

double ScoreVector::at(int c) const {
  if (c < 0 || c >= class_count()) {
    throw Error(ErrorCode::kInvalidArgument, "class index " + std::to_string(c) +
                                                 " out of range [0," +
                                                 std::to_string(class_count()) + ")");
  }
  return scores_(c);
}

int ScoreVector::top1() const {
  Eigen::Index best = 0;
  scores_.maxCoeff(&best);
  return static_cast<int>(best);
}

Heatmap::Heatmap(GridD data, bool normalized) : data_(std::move(data)), normalized_(normalized) {
  if (data_.size() == 0) {
    throw Error(ErrorCode::kDimensionMismatch, "heatmap is empty");
  }
  if (!all_finite(data_)) {
    throw Error(ErrorCode::kNonFiniteValue, "heatmap contains a non-finite value");
  }
  if (normalized_) {
    if ((data_.array() < 0.0).any() || (data_.array() > 1.0).any()) {
      throw Error(ErrorCode::kInvalidArgument, "normalized heatmap values must lie in [0,1]");
    }
    const double mx = data_.maxCoeff();
    if (mx != 0.0 && mx != 1.0) {
      throw Error(ErrorCode::kInvalidArgument, "normalized heatmap must peak at 1 unless all zero");
    }
  }
}

ChannelWeights::ChannelWeights(Eigen::VectorXd w, WeightMethod m, int expected_n)
    : weights(std::move(w)), method(m) {
  if (weights.size() != expected_n) {
    throw Error(ErrorCode::kDimensionMismatch, "channel weight count " + std::to_string(weights.size()) +
                                                   " does not match stack size " +
                                                   std::to_string(expected_n));
  }
  if (!all_finite(weights)) {
    throw Error(ErrorCode::kNonFiniteValue, "channel weights contain a non-finite value");
  }
}

}  // namespace clustercam
