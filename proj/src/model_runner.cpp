#include "clustercam/model_runner.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "clustercam/onnx_graph.hpp"

namespace clustercam {

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const Eigen::VectorXd shifted = (logits.array() - logits.maxCoeff()).exp();
  return shifted / shifted.sum();
}

ModelRunner::ModelRunner(std::unique_ptr<Backend> backend, RunnerOptions options)
    : backend_(std::move(backend)), options_(options) {
  if (!backend_) throw Error(ErrorCode::kInvalidArgument, "runner needs a backend");
}

void ModelRunner::check_input(const ImageTensor& image) const {
  const InputSpec spec = input_spec();
  if (image.height() != spec.height || image.width() != spec.width) {
    std::ostringstream os;
    os << "image is " << image.height() << "x" << image.width() << ", model expects " << spec.height << "x"
       << spec.width;
    throw Error(ErrorCode::kShapeMismatch, os.str());
  }
}

ScoreVector ModelRunner::to_scores(Eigen::VectorXd raw) const {
  bool apply = false;
  switch (options_.softmax) {
    case SoftmaxMode::kAlways: apply = true; break;
    case SoftmaxMode::kNever: apply = false; break;
    case SoftmaxMode::kAuto:
      switch (backend_->output_kind()) {
        case OutputKind::kLogits: apply = true; break;
        case OutputKind::kProbabilities: apply = false; break;
        case OutputKind::kUnknown:
          apply = !((raw.array() >= 0.0).all() && (raw.array() <= 1.0).all() && std::abs(raw.sum() - 1.0) <= 1e-4);
          break;
      }
      break;
  }
  if (apply) {
    Eigen::VectorXd probs = softmax(raw);
    return ScoreVector(std::move(probs), std::move(raw));
  }
  // Float32 graphs round their softmax; renormalize in double.
  raw = raw.cwiseMax(0.0);
  const double sum = raw.sum();
  if (sum > 0) raw /= sum;
  return ScoreVector(std::move(raw));
}

Inference ModelRunner::infer(const ImageTensor& image) {
  check_input(image);
  Backend::Output out = backend_->forward(image, true);
  ++forward_count_;
  return Inference{to_scores(std::move(out.values)), std::move(*out.features)};
}

ScoreVector ModelRunner::infer_scores(const ImageTensor& image) {
  check_input(image);
  Backend::Output out = backend_->forward(image, false);
  ++forward_count_;
  return to_scores(std::move(out.values));
}

std::vector<ScoreVector> ModelRunner::infer_scores(std::span<const ImageTensor> images) {
  std::vector<ScoreVector> out;
  out.reserve(images.size());
  for (const ImageTensor& image : images) out.push_back(infer_scores(image));
  return out;
}

ScoreVector ModelRunner::infer_from_layer(const FeatureMapStack& stack) {
  if (!backend_->supports_head_forward()) {
    throw Error(ErrorCode::kUnsupportedSplit, "model cannot be evaluated from layer '" + layer_name() + "'");
  }
  Eigen::VectorXd raw = backend_->head_forward(stack);
  ++forward_count_;
  return to_scores(std::move(raw));
}

// ------------------------------------------------------------------ fixture

FixtureWeights FixtureWeights::from_seed(std::uint64_t seed) {
  FixtureWeights w;
  Lcg64 rng(seed);
  for (double& v : w.conv) v = rng.next_centered();
  for (double& v : w.conv_bias) v = rng.next_centered();
  for (double& v : w.dense) v = rng.next_centered();
  for (double& v : w.dense_bias) v = rng.next_centered();
  return w;
}

namespace {

class FixtureBackend final : public Backend {
 public:
  explicit FixtureBackend(const FixtureWeights& weights) : w_(weights) {}

  InputSpec input_spec() const override { return {3, FixtureWeights::kSize, FixtureWeights::kSize}; }
  int class_count() const override { return FixtureWeights::kClasses; }
  const std::string& layer_name() const override { return layer_; }
  OutputKind output_kind() const override { return OutputKind::kLogits; }
  bool supports_head_forward() const override { return true; }
  std::vector<std::string> candidate_layers() const override { return {layer_}; }
  std::string description() const override { return "fixture"; }

  Output forward(const ImageTensor& image, bool want_features) const override {
    constexpr int n = FixtureWeights::kSize;
    GridStack<double> act(FixtureWeights::kOut, n * n);
    for (int o = 0; o < FixtureWeights::kOut; ++o) {
      GridD conv = GridD::Constant(n, n, w_.conv_bias[static_cast<std::size_t>(o)]);
      for (int c = 0; c < FixtureWeights::kIn; ++c) {
        const auto plane = image.channel(c);
        for (int ky = 0; ky < 3; ++ky) {
          for (int kx = 0; kx < 3; ++kx) {
            // Output (y, x) reads input (y + ky - 1, x + kx - 1); the valid
            // region is a block shifted by the tap offset.
            const int dy = ky - 1;
            const int dx = kx - 1;
            const int y0 = std::max(0, -dy), y1 = std::min(n, n - dy);
            const int x0 = std::max(0, -dx), x1 = std::min(n, n - dx);
            conv.block(y0, x0, y1 - y0, x1 - x0) +=
                w_.conv_at(o, c, ky, kx) * plane.block(y0 + dy, x0 + dx, y1 - y0, x1 - x0);
          }
        }
      }
      act.row(o) = Eigen::Map<const Eigen::RowVectorXd>(conv.cwiseMax(0.0).eval().data(), n * n);
    }
    Output out;
    out.values = head(act);
    if (want_features) out.features = FeatureMapStack(std::move(act), n, n, layer_);
    return out;
  }

  Eigen::VectorXd head_forward(const FeatureMapStack& stack) const override {
    if (stack.n() != FixtureWeights::kOut || stack.height() != FixtureWeights::kSize ||
        stack.width() != FixtureWeights::kSize) {
      throw Error(ErrorCode::kShapeMismatch, "fixture head expects a 4x8x8 stack");
    }
    return head(stack.data());
  }

 private:
  Eigen::VectorXd head(const GridStack<double>& act) const {
    const Eigen::VectorXd pooled = act.rowwise().mean();
    Eigen::VectorXd logits(FixtureWeights::kClasses);
    for (int k = 0; k < FixtureWeights::kClasses; ++k) {
      double v = w_.dense_bias[static_cast<std::size_t>(k)];
      for (int o = 0; o < FixtureWeights::kOut; ++o) v += w_.dense_at(k, o) * pooled(o);
      logits(k) = v;
    }
    return logits;
  }

  FixtureWeights w_;
  std::string layer_ = "conv";
};

// --------------------------------------------------------------------- onnx

const std::unordered_set<std::string>& conv_like_ops() {
  static const std::unordered_set<std::string> ops = {"Conv", "Relu", "LeakyRelu", "Clip", "MaxPool",
                                                      "AveragePool", "BatchNormalization", "Sigmoid",
                                                      "Tanh", "LRN"};
  return ops;
}

struct ProbedGraph {
  onnx_rt::Graph graph;
  InputSpec spec;
  std::unordered_map<std::string, onnx_rt::Shape> shapes;
  Eigen::VectorXd probe_output;
};

ProbedGraph probe_graph(const std::string& path, const RunnerOptions& options) {
  ProbedGraph p{onnx_rt::Graph::from_file(path), {}, {}, {}};
  const onnx_rt::Shape& in = p.graph.input_shape();
  if (in.size() != 4) {
    throw Error(ErrorCode::kParseError, "model input must be 4-D (batch x channels x height x width), got " +
                                            onnx_rt::shape_to_string(in));
  }
  if (in[1] != 3 && in[1] != -1) {
    throw Error(ErrorCode::kParseError, "model input must have 3 channels, got " + std::to_string(in[1]));
  }
  p.spec.height = in[2] > 0 ? static_cast<int>(in[2]) : options.fallback_height;
  p.spec.width = in[3] > 0 ? static_cast<int>(in[3]) : options.fallback_width;
  const onnx_rt::Tensor zeros = onnx_rt::Tensor::floats({1, 3, p.spec.height, p.spec.width});
  auto run = p.graph.run(zeros, {}, true);
  p.shapes = std::move(run.shapes);
  p.probe_output = Eigen::Map<const Eigen::VectorXf>(run.output.f.data(), run.output.size()).cast<double>();
  return p;
}

std::vector<LayerInfo> conv_like_layers(const onnx_rt::Graph& graph,
                                        const std::unordered_map<std::string, onnx_rt::Shape>& shapes) {
  std::vector<LayerInfo> out;
  for (const auto& name : graph.activation_names()) {
    const std::string* op = graph.producer_op(name);
    auto it = shapes.find(name);
    if (op == nullptr || it == shapes.end() || it->second.size() != 4 || !conv_like_ops().count(*op)) continue;
    out.push_back({name, *op, it->second});
  }
  return out;
}

class OnnxBackend final : public Backend {
 public:
  OnnxBackend(ProbedGraph probed, std::string target, std::string path)
      : graph_(std::move(probed.graph)), spec_(probed.spec), target_(std::move(target)), path_(std::move(path)) {
    for (const auto& l : conv_like_layers(graph_, probed.shapes)) candidates_.push_back(l.name);
    auto shape_it = probed.shapes.find(target_);
    if (shape_it == probed.shapes.end()) {
      std::ostringstream os;
      os << "layer '" << target_ << "' is not in the model graph; candidate layers:";
      for (const auto& c : candidates_) os << "\n  " << c;
      throw Error(ErrorCode::kUnknownLayer, os.str());
    }
    const onnx_rt::Shape& s = shape_it->second;
    if (s.size() != 4 || s[0] != 1) {
      throw Error(ErrorCode::kUnknownLayer, "layer '" + target_ + "' has shape " + onnx_rt::shape_to_string(s) +
                                                "; a 4-D activation with batch 1 is required");
    }
    if (s[1] < 2) throw Error(ErrorCode::kTooFewMaps, "layer '" + target_ + "' has fewer than 2 channels");
    target_shape_ = s;
    classes_ = static_cast<int>(probed.probe_output.size());
    const std::string* out_op = graph_.producer_op(graph_.output_name());
    const Eigen::VectorXd& p = probed.probe_output;
    const bool looks_like_distribution =
        (p.array() >= 0.0).all() && (p.array() <= 1.0).all() && std::abs(p.sum() - 1.0) <= 1e-4;
    kind_ = (out_op != nullptr && *out_op == "Softmax") || looks_like_distribution ? OutputKind::kProbabilities
                                                                                   : OutputKind::kLogits;
    try {
      split_ = graph_.split_at(target_);
    } catch (const Error& e) {
      split_error_ = e.what();
    }
  }

  InputSpec input_spec() const override { return spec_; }
  int class_count() const override { return classes_; }
  const std::string& layer_name() const override { return target_; }
  OutputKind output_kind() const override { return kind_; }
  bool supports_head_forward() const override { return split_.has_value(); }
  std::vector<std::string> candidate_layers() const override { return candidates_; }
  std::string description() const override { return path_; }

  Output forward(const ImageTensor& image, bool want_features) const override {
    const int hw = image.height() * image.width();
    onnx_rt::Tensor input = onnx_rt::Tensor::floats({1, 3, image.height(), image.width()});
    Eigen::Map<Eigen::Matrix<float, 3, Eigen::Dynamic, Eigen::RowMajor>>(input.f.data(), 3, hw) =
        image.data().cast<float>();
    std::vector<std::string> keep;
    if (want_features) keep.push_back(target_);
    auto run = graph_.run(input, keep);
    Output out;
    out.values = flat(run.output).cast<double>();
    if (want_features) {
      const onnx_rt::Tensor& t = run.kept.at(target_);
      const auto c = t.shape[1], h = t.shape[2], w = t.shape[3];
      GridStack<double> data =
          Eigen::Map<const GridStack<float>>(t.f.data(), c, h * w).cast<double>();
      out.features = FeatureMapStack(std::move(data), static_cast<int>(h), static_cast<int>(w), target_);
    }
    return out;
  }

  Eigen::VectorXd head_forward(const FeatureMapStack& stack) const override {
    if (!split_) throw Error(ErrorCode::kUnsupportedSplit, split_error_);
    if (stack.n() != target_shape_[1] || stack.height() != target_shape_[2] || stack.width() != target_shape_[3]) {
      throw Error(ErrorCode::kShapeMismatch, "stack does not match layer shape " + onnx_rt::shape_to_string(target_shape_));
    }
    onnx_rt::Tensor t = onnx_rt::Tensor::floats(target_shape_);
    Eigen::Map<GridStack<float>>(t.f.data(), stack.n(), stack.height() * stack.width()) = stack.data().cast<float>();
    return flat(graph_.run_head(*split_, t)).cast<double>();
  }

 private:
  static Eigen::Map<const Eigen::VectorXf> flat(const onnx_rt::Tensor& t) {
    if (t.is_int) throw Error(ErrorCode::kShapeMismatch, "model output must be float");
    return {t.f.data(), static_cast<Eigen::Index>(t.f.size())};
  }

  onnx_rt::Graph graph_;
  InputSpec spec_;
  std::string target_;
  std::string path_;
  onnx_rt::Shape target_shape_;
  int classes_ = 0;
  OutputKind kind_ = OutputKind::kUnknown;
  std::optional<onnx_rt::Graph::Split> split_;
  std::string split_error_;
  std::vector<std::string> candidates_;
};

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::uint64_t parse_fixture_seed(const std::string& source) {
  const std::string digits = source.substr(std::string("fixture:").size());
  if (digits.empty() || !std::all_of(digits.begin(), digits.end(), [](unsigned char ch) { return std::isdigit(ch); })) {
    throw Error(ErrorCode::kInvalidArgument, "fixture source must look like fixture:<seed>, got '" + source + "'");
  }
  return std::stoull(digits);
}

}  // namespace

ModelRunner fixture_runner(std::uint64_t seed) { return fixture_runner(FixtureWeights::from_seed(seed)); }

ModelRunner fixture_runner(const FixtureWeights& weights) {
  return ModelRunner(std::make_unique<FixtureBackend>(weights));
}

ExportManifest load_export_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open manifest '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
    ExportManifest m;
    m.model = j.at("model").get<std::string>();
    m.path = j.at("path").get<std::string>();
    const auto& input = j.at("input");
    m.input.channels = input.at("channels").get<int>();
    m.input.height = input.at("height").get<int>();
    m.input.width = input.at("width").get<int>();
    m.target_layer = j.at("target_layer").get<std::string>();
    m.class_count = j.at("class_count").get<int>();
    const std::filesystem::path model_path(m.path);
    if (model_path.is_relative()) m.path = (std::filesystem::path(path).parent_path() / model_path).string();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, "invalid export manifest '" + path + "': " + e.what());
  }
}

ModelRunner load_model(const std::string& source, const std::string& target_layer, RunnerOptions options) {
  if (source.rfind("fixture:", 0) == 0) {
    const std::uint64_t seed = parse_fixture_seed(source);
    if (!target_layer.empty() && target_layer != "conv") {
      throw Error(ErrorCode::kUnknownLayer, "layer '" + target_layer + "' is not in the fixture; candidate layers:\n  conv");
    }
    return ModelRunner(std::make_unique<FixtureBackend>(FixtureWeights::from_seed(seed)), options);
  }
  if (ends_with(source, ".json")) {
    const ExportManifest m = load_export_manifest(source);
    ModelRunner runner = load_model(m.path, target_layer.empty() ? m.target_layer : target_layer, options);
    if (m.class_count > 0 && runner.class_count() != m.class_count) {
      throw Error(ErrorCode::kParseError, "manifest declares " + std::to_string(m.class_count) +
                                              " classes, model produces " + std::to_string(runner.class_count()));
    }
    return runner;
  }
  if (target_layer.empty()) {
    throw Error(ErrorCode::kUnknownLayer, "a target layer name is required for '" + source + "'");
  }
  ProbedGraph probed = probe_graph(source, options);
  return ModelRunner(std::make_unique<OnnxBackend>(std::move(probed), target_layer, source), options);
}

std::vector<LayerInfo> list_layers(const std::string& source, RunnerOptions options) {
  if (source.rfind("fixture:", 0) == 0) {
    parse_fixture_seed(source);
    return {{"conv", "Relu", {1, FixtureWeights::kOut, FixtureWeights::kSize, FixtureWeights::kSize}}};
  }
  if (ends_with(source, ".json")) return list_layers(load_export_manifest(source).path, options);
  const ProbedGraph probed = probe_graph(source, options);
  return conv_like_layers(probed.graph, probed.shapes);
}

}  // namespace clustercam
