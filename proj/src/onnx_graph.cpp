#include "clustercam/onnx_graph.hpp"

#include <google/protobuf/io/coded_stream.h>
#include <google/protobuf/io/zero_copy_stream_impl_lite.h>

#include <climits>
#include <cstring>
#include <fstream>
#include <iterator>
#include <queue>
#include <sstream>
#include <unordered_set>

#include "clustercam/error.hpp"
#include "onnx.pb.h"

namespace clustercam::onnx_rt {

namespace {

template <typename T>
std::vector<T> raw_as(const std::string& raw) {
  std::vector<T> out(raw.size() / sizeof(T));
  std::memcpy(out.data(), raw.data(), out.size() * sizeof(T));
  return out;
}

Tensor tensor_from_proto(const onnx::TensorProto& proto) {
  if (proto.data_location() == onnx::TensorProto::EXTERNAL) {
    throw Error(ErrorCode::kParseError, "tensor '" + proto.name() + "' uses external data, which is not supported");
  }
  Shape shape(proto.dims().begin(), proto.dims().end());
  const bool raw = proto.has_raw_data();
  switch (proto.data_type()) {
    case onnx::TensorProto::FLOAT: {
      std::vector<float> v = raw ? raw_as<float>(proto.raw_data())
                                 : std::vector<float>(proto.float_data().begin(), proto.float_data().end());
      return Tensor::floats(std::move(shape), std::move(v));
    }
    case onnx::TensorProto::DOUBLE: {
      std::vector<double> d = raw ? raw_as<double>(proto.raw_data())
                                  : std::vector<double>(proto.double_data().begin(), proto.double_data().end());
      return Tensor::floats(std::move(shape), std::vector<float>(d.begin(), d.end()));
    }
    case onnx::TensorProto::INT64: {
      std::vector<std::int64_t> v = raw ? raw_as<std::int64_t>(proto.raw_data())
                                        : std::vector<std::int64_t>(proto.int64_data().begin(), proto.int64_data().end());
      return Tensor::ints(std::move(shape), std::move(v));
    }
    case onnx::TensorProto::INT32: {
      std::vector<std::int32_t> v = raw ? raw_as<std::int32_t>(proto.raw_data())
                                        : std::vector<std::int32_t>(proto.int32_data().begin(), proto.int32_data().end());
      return Tensor::ints(std::move(shape), std::vector<std::int64_t>(v.begin(), v.end()));
    }
    default:
      throw Error(ErrorCode::kParseError, "tensor '" + proto.name() + "' has unsupported data type " +
                                              std::to_string(proto.data_type()));
  }
}

Node node_from_proto(const onnx::NodeProto& proto) {
  Node node;
  node.name = proto.name();
  node.op_type = proto.op_type();
  node.inputs.assign(proto.input().begin(), proto.input().end());
  node.outputs.assign(proto.output().begin(), proto.output().end());
  if (!proto.domain().empty() && proto.domain() != "ai.onnx") {
    throw Error(ErrorCode::kUnsupportedOperator, "operator domain '" + proto.domain() + "' is not supported");
  }
  if (!is_supported_op(node.op_type)) {
    throw Error(ErrorCode::kUnsupportedOperator, "unsupported operator " + node.op_type + " (node '" + node.name + "')");
  }
  for (const auto& attr : proto.attribute()) {
    switch (attr.type()) {
      case onnx::AttributeProto::INT: node.attributes[attr.name()] = static_cast<std::int64_t>(attr.i()); break;
      case onnx::AttributeProto::FLOAT: node.attributes[attr.name()] = attr.f(); break;
      case onnx::AttributeProto::STRING: node.attributes[attr.name()] = attr.s(); break;
      case onnx::AttributeProto::TENSOR: node.attributes[attr.name()] = tensor_from_proto(attr.t()); break;
      case onnx::AttributeProto::INTS:
        node.attributes[attr.name()] = std::vector<std::int64_t>(attr.ints().begin(), attr.ints().end());
        break;
      case onnx::AttributeProto::FLOATS:
        node.attributes[attr.name()] = std::vector<float>(attr.floats().begin(), attr.floats().end());
        break;
      default: break;
    }
  }
  return node;
}

}  // namespace

Graph Graph::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open model file '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  google::protobuf::io::ArrayInputStream array(bytes.data(), static_cast<int>(bytes.size()));
  google::protobuf::io::CodedInputStream coded(&array);
  coded.SetTotalBytesLimit(INT_MAX);
  onnx::ModelProto model;
  if (!model.ParseFromCodedStream(&coded) || !model.has_graph()) {
    throw Error(ErrorCode::kParseError, "'" + path + "' is not a readable ONNX model");
  }
  return from_model(model);
}

Graph Graph::from_model(const onnx::ModelProto& model) {
  Graph g;
  for (const auto& op : model.opset_import()) {
    if (op.domain().empty() || op.domain() == "ai.onnx") g.opset_ = static_cast<int>(op.version());
  }
  const auto& graph = model.graph();
  for (const auto& init : graph.initializer()) g.constants_[init.name()] = tensor_from_proto(init);
  for (const auto& input : graph.input()) {
    if (g.constants_.count(input.name())) continue;
    if (!g.input_name_.empty()) {
      throw Error(ErrorCode::kParseError, "model has more than one non-initializer input");
    }
    g.input_name_ = input.name();
    for (const auto& dim : input.type().tensor_type().shape().dim()) {
      g.input_shape_.push_back(dim.has_dim_value() && dim.dim_value() > 0 ? dim.dim_value() : -1);
    }
  }
  if (g.input_name_.empty()) throw Error(ErrorCode::kParseError, "model has no graph input");
  if (graph.output_size() < 1) throw Error(ErrorCode::kParseError, "model has no graph output");
  g.output_name_ = graph.output(0).name();

  std::vector<Node> unordered;
  unordered.reserve(static_cast<std::size_t>(graph.node_size()));
  for (const auto& node : graph.node()) unordered.push_back(node_from_proto(node));

  // Kahn ordering, stable with respect to file order.
  std::unordered_map<std::string, std::size_t> producer;
  for (std::size_t k = 0; k < unordered.size(); ++k) {
    for (const auto& out : unordered[k].outputs) producer[out] = k;
  }
  std::vector<int> pending(unordered.size(), 0);
  std::vector<std::vector<std::size_t>> consumers(unordered.size());
  for (std::size_t k = 0; k < unordered.size(); ++k) {
    for (const auto& in : unordered[k].inputs) {
      auto it = producer.find(in);
      if (in.empty() || it == producer.end()) continue;
      ++pending[k];
      consumers[it->second].push_back(k);
    }
  }
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t k = 0; k < unordered.size(); ++k) {
    if (pending[k] == 0) ready.push(k);
  }
  while (!ready.empty()) {
    const std::size_t k = ready.top();
    ready.pop();
    g.nodes_.push_back(unordered[k]);
    for (std::size_t c : consumers[k]) {
      if (--pending[c] == 0) ready.push(c);
    }
  }
  if (g.nodes_.size() != unordered.size()) throw Error(ErrorCode::kParseError, "model graph contains a cycle");
  g.prepare();
  return g;
}

void Graph::prepare() {
  std::unordered_set<std::string> dynamic{input_name_};
  for (std::size_t k = 0; k < nodes_.size(); ++k) {
    const Node& node = nodes_[k];
    for (const auto& out : node.outputs) producer_[out] = k;
    bool depends_on_input = false;
    for (const auto& in : node.inputs) {
      if (in.empty()) continue;
      if (dynamic.count(in)) {
        depends_on_input = true;
      } else if (!constants_.count(in)) {
        throw Error(ErrorCode::kParseError, "node '" + node.name + "' reads undefined value '" + in + "'");
      }
    }
    if (depends_on_input) {
      dynamic_nodes_.push_back(k);
      for (const auto& out : node.outputs) dynamic.insert(out);
      continue;
    }
    std::vector<const Tensor*> inputs;
    for (const auto& in : node.inputs) inputs.push_back(in.empty() ? nullptr : &constants_.at(in));
    std::vector<Tensor> outs = run_node(node, inputs, opset_);
    for (std::size_t o = 0; o < outs.size() && o < node.outputs.size(); ++o) {
      constants_[node.outputs[o]] = std::move(outs[o]);
    }
  }
  if (!dynamic.count(output_name_)) throw Error(ErrorCode::kParseError, "graph output does not depend on the input");
}

bool Graph::is_activation(const std::string& name) const {
  if (name == input_name_) return false;
  auto it = producer_.find(name);
  return it != producer_.end() && !constants_.count(name);
}

std::vector<std::string> Graph::activation_names() const {
  std::vector<std::string> out;
  for (std::size_t k : dynamic_nodes_) {
    for (const auto& o : nodes_[k].outputs) out.push_back(o);
  }
  return out;
}

const std::string* Graph::producer_op(const std::string& name) const {
  auto it = producer_.find(name);
  return it == producer_.end() ? nullptr : &nodes_[it->second].op_type;
}

const Tensor* Graph::lookup(const std::unordered_map<std::string, Tensor>& values, const std::string& name) const {
  if (name.empty()) return nullptr;
  if (auto it = values.find(name); it != values.end()) return &it->second;
  if (auto it = constants_.find(name); it != constants_.end()) return &it->second;
  throw Error(ErrorCode::kParseError, "value '" + name + "' is not available");
}

Graph::RunResult Graph::run(const Tensor& input, const std::vector<std::string>& keep, bool all_shapes) const {
  if (input.is_int) throw Error(ErrorCode::kShapeMismatch, "graph input must be float");
  std::unordered_map<std::string, std::size_t> last_use;
  for (std::size_t pos = 0; pos < dynamic_nodes_.size(); ++pos) {
    for (const auto& in : nodes_[dynamic_nodes_[pos]].inputs) last_use[in] = pos;
  }
  const std::unordered_set<std::string> keep_set(keep.begin(), keep.end());

  RunResult result;
  std::unordered_map<std::string, Tensor> values;
  values[input_name_] = input;
  for (std::size_t pos = 0; pos < dynamic_nodes_.size(); ++pos) {
    const Node& node = nodes_[dynamic_nodes_[pos]];
    std::vector<const Tensor*> inputs;
    inputs.reserve(node.inputs.size());
    for (const auto& in : node.inputs) inputs.push_back(lookup(values, in));
    std::vector<Tensor> outs = run_node(node, inputs, opset_);
    for (const auto& in : node.inputs) {
      auto lu = last_use.find(in);
      if (lu != last_use.end() && lu->second == pos && !keep_set.count(in) && in != output_name_) values.erase(in);
    }
    for (std::size_t o = 0; o < outs.size() && o < node.outputs.size(); ++o) {
      if (all_shapes) result.shapes[node.outputs[o]] = outs[o].shape;
      if (keep_set.count(node.outputs[o])) result.kept[node.outputs[o]] = outs[o];
      values[node.outputs[o]] = std::move(outs[o]);
    }
  }
  for (const auto& name : keep) {
    if (!result.kept.count(name)) {
      throw Error(ErrorCode::kUnknownLayer, "value '" + name + "' is not produced by the graph");
    }
  }
  auto out = values.find(output_name_);
  if (out == values.end()) throw Error(ErrorCode::kParseError, "graph output was not produced");
  result.output = std::move(out->second);
  return result;
}

Graph::Split Graph::split_at(const std::string& target) const {
  Split split;
  split.target = target;
  std::unordered_set<std::string> downstream{target};
  for (std::size_t k : dynamic_nodes_) {
    const Node& node = nodes_[k];
    bool reads_target_side = false;
    for (const auto& in : node.inputs) reads_target_side = reads_target_side || downstream.count(in) > 0;
    if (!reads_target_side) continue;
    split.head_nodes.push_back(k);
    for (const auto& out : node.outputs) downstream.insert(out);
  }
  if (!downstream.count(output_name_)) {
    throw Error(ErrorCode::kUnsupportedSplit, "graph output does not depend on layer '" + target + "'");
  }
  for (std::size_t k : split.head_nodes) {
    for (const auto& in : nodes_[k].inputs) {
      if (in.empty() || downstream.count(in) || constants_.count(in)) continue;
      throw Error(ErrorCode::kUnsupportedSplit,
                  "cannot split at '" + target + "': node '" + nodes_[k].name + "' also reads '" + in +
                      "', which is computed before the split point");
    }
  }
  return split;
}

Tensor Graph::run_head(const Split& split, const Tensor& target_value) const {
  std::unordered_map<std::string, Tensor> values;
  values[split.target] = target_value;
  for (std::size_t k : split.head_nodes) {
    const Node& node = nodes_[k];
    std::vector<const Tensor*> inputs;
    inputs.reserve(node.inputs.size());
    for (const auto& in : node.inputs) inputs.push_back(lookup(values, in));
    std::vector<Tensor> outs = run_node(node, inputs, opset_);
    for (std::size_t o = 0; o < outs.size() && o < node.outputs.size(); ++o) values[node.outputs[o]] = std::move(outs[o]);
  }
  return std::move(values.at(output_name_));
}

}  // namespace clustercam::onnx_rt
