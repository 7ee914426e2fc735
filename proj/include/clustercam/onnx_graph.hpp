#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

namespace onnx {
class ModelProto;
}

namespace clustercam::onnx_rt {

using Shape = std::vector<std::int64_t>;

std::int64_t element_count(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense tensor holding either float32 or int64 elements (the latter only
/// for shape plumbing such as Reshape targets).
struct Tensor {
  Shape shape;
  std::vector<float> f;
  std::vector<std::int64_t> i;
  bool is_int = false;

  static Tensor floats(Shape shape, std::vector<float> values);
  static Tensor floats(Shape shape, float fill = 0.0F);
  static Tensor ints(Shape shape, std::vector<std::int64_t> values);

  std::int64_t size() const { return element_count(shape); }
  std::size_t rank() const { return shape.size(); }
};

using AttributeValue =
    std::variant<std::int64_t, float, std::string, std::vector<std::int64_t>, std::vector<float>, Tensor>;

struct Node {
  std::string name;
  std::string op_type;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::map<std::string, AttributeValue> attributes;

  std::int64_t attr_int(const std::string& key, std::int64_t fallback) const;
  float attr_float(const std::string& key, float fallback) const;
  std::string attr_string(const std::string& key, const std::string& fallback) const;
  std::vector<std::int64_t> attr_ints(const std::string& key, std::vector<std::int64_t> fallback = {}) const;
  const Tensor* attr_tensor(const std::string& key) const;
};

/// Op kernels. `inputs` entries may be null for omitted optional inputs.
std::vector<Tensor> run_node(const Node& node, const std::vector<const Tensor*>& inputs, int opset);

bool is_supported_op(const std::string& op_type);

/// An ONNX graph prepared for repeated forward evaluation. Nodes that depend
/// only on initializers and Constant nodes are folded once at load time.
class Graph {
 public:
  static Graph from_file(const std::string& path);
  static Graph from_model(const onnx::ModelProto& model);

  const std::string& input_name() const { return input_name_; }
  /// Declared input shape; dynamic dimensions are reported as -1.
  const Shape& input_shape() const { return input_shape_; }
  const std::string& output_name() const { return output_name_; }
  int opset() const { return opset_; }
  const std::vector<Node>& nodes() const { return nodes_; }

  /// Whether `name` is produced by a node that depends on the graph input.
  bool is_activation(const std::string& name) const;
  std::vector<std::string> activation_names() const;
  const std::string* producer_op(const std::string& name) const;

  /// Runs every input-dependent node. Values named in `keep` are returned
  /// alongside the graph output; when `all_shapes` is set the shape of every
  /// activation is recorded.
  struct RunResult {
    Tensor output;
    std::unordered_map<std::string, Tensor> kept;
    std::unordered_map<std::string, Shape> shapes;
  };
  RunResult run(const Tensor& input, const std::vector<std::string>& keep = {},
                bool all_shapes = false) const;

  /// Nodes downstream of `target`; throws kUnsupportedSplit if any of them
  /// also read an input-dependent value that is not itself downstream.
  struct Split {
    std::string target;
    std::vector<std::size_t> head_nodes;
  };
  Split split_at(const std::string& target) const;
  Tensor run_head(const Split& split, const Tensor& target_value) const;

 private:
  Graph() = default;
  void prepare();
  const Tensor* lookup(const std::unordered_map<std::string, Tensor>& values, const std::string& name) const;

  std::vector<Node> nodes_;
  std::vector<std::size_t> dynamic_nodes_;
  std::unordered_map<std::string, Tensor> constants_;
  std::unordered_map<std::string, std::size_t> producer_;
  std::string input_name_;
  Shape input_shape_;
  std::string output_name_;
  int opset_ = 13;
};

}  // namespace clustercam::onnx_rt
