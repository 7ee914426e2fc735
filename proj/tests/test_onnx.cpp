#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>

#include "clustercam/model_runner.hpp"
#include "clustercam/onnx_graph.hpp"
#include "onnx.pb.h"
#include "oracle/fixture_oracle.hpp"
#include "test_support.hpp"

using namespace clustercam;
using onnx_rt::Node;
using onnx_rt::Tensor;

namespace {

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  return nlohmann::json::parse(in);
}

ImageTensor tensor_from(const std::vector<double>& flat, int size) {
  GridStack<double> data(3, size * size);
  for (int c = 0; c < 3; ++c)
    for (int p = 0; p < size * size; ++p) data(c, p) = flat[static_cast<std::size_t>(c * size * size + p)];
  return ImageTensor(std::move(data), size, size);
}

std::vector<double> as_doubles(const Tensor& t) { return {t.f.begin(), t.f.end()}; }

std::vector<Tensor> run(const std::string& op, const std::vector<const Tensor*>& in,
                        std::map<std::string, onnx_rt::AttributeValue> attrs = {}, int opset = 13) {
  Node node{"n", op, {}, {"y"}, std::move(attrs)};
  for (std::size_t i = 0; i < in.size(); ++i) node.inputs.push_back("x" + std::to_string(i));
  return onnx_rt::run_node(node, in, opset);
}

void add_initializer(onnx::GraphProto* g, const std::string& name, const std::vector<std::int64_t>& dims,
                     const std::vector<float>& values) {
  onnx::TensorProto* t = g->add_initializer();
  t->set_name(name);
  t->set_data_type(onnx::TensorProto::FLOAT);
  for (auto d : dims) t->add_dims(d);
  for (float v : values) t->add_float_data(v);
}

onnx::NodeProto* add_node(onnx::GraphProto* g, const std::string& op, const std::vector<std::string>& in,
                          const std::string& out) {
  onnx::NodeProto* n = g->add_node();
  n->set_op_type(op);
  n->set_name(op + "_" + out);
  for (const auto& i : in) n->add_input(i);
  n->add_output(out);
  return n;
}

void add_value(onnx::ValueInfoProto* v, const std::string& name, const std::vector<std::int64_t>& dims) {
  v->set_name(name);
  auto* tt = v->mutable_type()->mutable_tensor_type();
  tt->set_elem_type(onnx::TensorProto::FLOAT);
  for (auto d : dims) tt->mutable_shape()->add_dim()->set_dim_value(d);
}

/// The fixture network written out as an ONNX graph.
onnx::ModelProto fixture_model(std::uint64_t seed) {
  const oracle::Fixture f = oracle::fixture_weights(seed);
  onnx::ModelProto m;
  m.set_ir_version(7);
  m.add_opset_import()->set_version(13);
  onnx::GraphProto* g = m.mutable_graph();
  g->set_name("fixture");
  std::vector<float> w, b, dw, db;
  for (int o = 0; o < 4; ++o)
    for (int i = 0; i < 3; ++i)
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) w.push_back(static_cast<float>(f.conv[o][i][ky][kx]));
  for (double v : f.conv_bias) b.push_back(static_cast<float>(v));
  for (int c = 0; c < 3; ++c)
    for (int o = 0; o < 4; ++o) dw.push_back(static_cast<float>(f.dense[c][o]));
  for (double v : f.dense_bias) db.push_back(static_cast<float>(v));
  add_initializer(g, "w", {4, 3, 3, 3}, w);
  add_initializer(g, "b", {4}, b);
  add_initializer(g, "dw", {3, 4}, dw);
  add_initializer(g, "db", {3}, db);
  add_value(g->add_input(), "input", {1, 3, 8, 8});
  add_value(g->add_output(), "logits", {1, 3});
  auto* conv = add_node(g, "Conv", {"input", "w", "b"}, "pre");
  auto* pads = conv->add_attribute();
  pads->set_name("pads");
  pads->set_type(onnx::AttributeProto::INTS);
  for (int i = 0; i < 4; ++i) pads->add_ints(1);
  add_node(g, "Relu", {"pre"}, "conv");
  add_node(g, "GlobalAveragePool", {"conv"}, "pooled");
  add_node(g, "Flatten", {"pooled"}, "flat");
  auto* gemm = add_node(g, "Gemm", {"flat", "dw", "db"}, "logits");
  auto* trans = gemm->add_attribute();
  trans->set_name("transB");
  trans->set_type(onnx::AttributeProto::INT);
  trans->set_i(1);
  return m;
}

class GoldenTest : public ::testing::TestWithParam<std::string> {};

}  // namespace

TEST_P(GoldenTest, ScoresAndActivationsMatchReferenceRuntime) {
  const std::string name = GetParam();
  const nlohmann::json golden = read_json(test_support::data_path(name + "_golden.json"));
  const int size = golden["size"];
  ModelRunner runner = load_model(test_support::data_path(name + ".onnx"), golden["layer"]);
  EXPECT_EQ(runner.class_count(), golden["classes"].get<int>());
  EXPECT_EQ(runner.input_spec().height, size);
  for (const auto& c : golden["cases"]) {
    const Inference inf = runner.infer(tensor_from(c["input"].get<std::vector<double>>(), size));
    const std::vector<double> want_raw = c["scores"];
    Eigen::VectorXd raw = Eigen::Map<const Eigen::VectorXd>(want_raw.data(), static_cast<Eigen::Index>(want_raw.size()));
    const bool is_distribution = std::abs(raw.sum() - 1.0) < 1e-4 && raw.minCoeff() >= 0.0;
    if (!is_distribution) {
      ASSERT_TRUE(inf.scores.logits().has_value());
      test_support::expect_near_all(test_support::flatten(*inf.scores.logits()), want_raw, 1e-4);
      raw = softmax(raw);
    }
    test_support::expect_near_all(test_support::flatten(inf.scores.scores()), test_support::flatten(raw), 1e-5);
    const std::vector<std::int64_t> shape = c["activation_shape"];
    ASSERT_EQ(inf.features.n(), shape[1]);
    ASSERT_EQ(inf.features.height(), shape[2]);
    ASSERT_EQ(inf.features.width(), shape[3]);
    const std::vector<double> act = c["activation"];
    test_support::expect_near_all(test_support::flatten(inf.features.data()), act, 1e-4);
  }
}

TEST_P(GoldenTest, HeadForwardFromTargetLayerReproducesScores) {
  const std::string name = GetParam();
  ModelRunner runner = load_model(test_support::data_path(name + "_manifest.json"), "");
  ASSERT_TRUE(runner.supports_head_forward());
  const int size = runner.input_spec().height;
  const nlohmann::json golden = read_json(test_support::data_path(name + "_golden.json"));
  for (const auto& c : golden["cases"]) {
    const Inference inf = runner.infer(tensor_from(c["input"].get<std::vector<double>>(), size));
    const ScoreVector head = runner.infer_from_layer(inf.features);
    test_support::expect_near_all(test_support::flatten(head.scores()), test_support::flatten(inf.scores.scores()),
                                  1e-6);
  }
}

INSTANTIATE_TEST_SUITE_P(Models, GoldenTest, ::testing::Values("mini_vgg", "mini_alex"));

TEST(OnnxFixture, ProtobufBuiltGraphMatchesFixtureBackend) {
  const auto dir = test_support::temp_dir("onnx");
  const std::string path = (dir / "fixture.onnx").string();
  {
    std::ofstream out(path, std::ios::binary);
    ASSERT_TRUE(fixture_model(42).SerializeToOstream(&out));
  }
  ModelRunner onnx = load_model(path, "conv");
  ModelRunner native = fixture_runner(42);
  for (int variant = 0; variant < 3; ++variant) {
    const ImageTensor img = test_support::to_tensor(oracle::test_image(variant));
    const Inference a = onnx.infer(img);
    const Inference b = native.infer(img);
    test_support::expect_near_all(test_support::flatten(a.features.data()), test_support::flatten(b.features.data()),
                                  1e-5);
    test_support::expect_near_all(test_support::flatten(a.scores.scores()), test_support::flatten(b.scores.scores()),
                                  1e-6);
  }
  const auto graph = onnx_rt::Graph::from_model(fixture_model(1));
  EXPECT_TRUE(graph.is_activation("conv"));
  EXPECT_FALSE(graph.is_activation("w"));
  EXPECT_EQ(graph.input_shape(), (onnx_rt::Shape{1, 3, 8, 8}));
}

TEST(OnnxFixture, SplitOnAnUnknownValueFails) {
  const auto graph = onnx_rt::Graph::from_model(fixture_model(1));
  EXPECT_THROW(graph.split_at("nope"), Error);
  const auto split = graph.split_at("conv");
  EXPECT_EQ(split.head_nodes.size(), 3U);
}

TEST(OnnxOps, BatchNormalization) {
  const Tensor x = Tensor::floats({1, 2, 1, 2}, {1, 2, 3, 4});
  const Tensor scale = Tensor::floats({2}, {2, 1});
  const Tensor bias = Tensor::floats({2}, {0, 1});
  const Tensor mean = Tensor::floats({2}, {1, 3});
  const Tensor var = Tensor::floats({2}, {4, 1});
  const auto y = run("BatchNormalization", {&x, &scale, &bias, &mean, &var}, {{"epsilon", 0.0F}});
  test_support::expect_near_all(as_doubles(y[0]), {0.0, 1.0, 1.0, 2.0}, 1e-6);
}

TEST(OnnxOps, BroadcastingArithmetic) {
  const Tensor a = Tensor::floats({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor row = Tensor::floats({3}, {10, 20, 30});
  const Tensor col = Tensor::floats({2, 1}, {2, 4});
  test_support::expect_near_all(as_doubles(run("Add", {&a, &row})[0]), {11, 22, 33, 14, 25, 36}, 0);
  test_support::expect_near_all(as_doubles(run("Div", {&a, &col})[0]), {0.5, 1, 1.5, 1, 1.25, 1.5}, 0);
  EXPECT_EQ(run("Mul", {&col, &row})[0].shape, (onnx_rt::Shape{2, 3}));
}

TEST(OnnxOps, SoftmaxAxisDependsOnOpset) {
  const Tensor x = Tensor::floats({1, 2, 3}, {0, 1, 2, 3, 4, 5});
  const auto per_row = as_doubles(run("Softmax", {&x}, {}, 13)[0]);
  const auto flat = as_doubles(run("Softmax", {&x}, {}, 11)[0]);
  const double e0 = 1 + std::exp(1.0) + std::exp(2.0);
  EXPECT_NEAR(per_row[0], 1 / e0, 1e-6);
  EXPECT_NEAR(per_row[3], 1 / e0, 1e-6);
  double all = 0;
  for (int i = 0; i < 6; ++i) all += std::exp(double(i));
  EXPECT_NEAR(flat[0], 1 / all, 1e-6);
  EXPECT_NEAR(flat[5], std::exp(5.0) / all, 1e-6);
}

TEST(OnnxOps, ShapePlumbing) {
  const Tensor x = Tensor::floats({2, 3, 4}, 1.0F);
  const auto shape = run("Shape", {&x})[0];
  ASSERT_TRUE(shape.is_int);
  EXPECT_EQ(shape.i, (std::vector<std::int64_t>{2, 3, 4}));
  const Tensor idx = Tensor::ints({}, {0});
  const auto first = run("Gather", {&shape, &idx}, {{"axis", std::int64_t{0}}})[0];
  EXPECT_EQ(first.i, (std::vector<std::int64_t>{2}));
  const Tensor minus = Tensor::ints({1}, {-1});
  const Tensor one = Tensor::ints({1}, {2});
  const auto target = run("Concat", {&one, &minus}, {{"axis", std::int64_t{0}}})[0];
  EXPECT_EQ(target.i, (std::vector<std::int64_t>{2, -1}));
  EXPECT_EQ(run("Reshape", {&x, &target})[0].shape, (onnx_rt::Shape{2, 12}));
  const Tensor keep = Tensor::ints({3}, {0, 4, -1});
  EXPECT_EQ(run("Reshape", {&x, &keep})[0].shape, (onnx_rt::Shape{2, 4, 3}));
  EXPECT_EQ(run("Flatten", {&x}, {{"axis", std::int64_t{2}}})[0].shape, (onnx_rt::Shape{6, 4}));
}

TEST(OnnxOps, PoolingAndGemm) {
  const Tensor x = Tensor::floats({1, 1, 2, 2}, {1, 5, 3, 2});
  const auto max = run("MaxPool", {&x}, {{"kernel_shape", std::vector<std::int64_t>{2, 2}}})[0];
  test_support::expect_near_all(as_doubles(max), {5}, 0);
  const auto avg = run("AveragePool", {&x}, {{"kernel_shape", std::vector<std::int64_t>{2, 2}}})[0];
  test_support::expect_near_all(as_doubles(avg), {2.75}, 1e-6);
  const Tensor a = Tensor::floats({2, 1}, {1, 2});
  const Tensor b = Tensor::floats({2, 2}, {1, 0, 0, 1});
  const Tensor c = Tensor::floats({2}, {1, 1});
  const auto y = run("Gemm", {&a, &b, &c},
                     {{"transA", std::int64_t{1}}, {"alpha", 2.0F}, {"beta", 0.5F}})[0];
  test_support::expect_near_all(as_doubles(y), {2.5, 4.5}, 1e-6);
}

TEST(OnnxOps, LocalResponseNormalization) {
  const Tensor x = Tensor::floats({1, 3, 1, 1}, {1, 2, 3});
  const float alpha = 0.1F, beta = 0.75F, bias = 1.0F;
  const auto y = as_doubles(run("LRN", {&x}, {{"size", std::int64_t{3}}, {"alpha", alpha}, {"beta", beta}, {"bias", bias}})[0]);
  const double sq[3] = {1 + 4, 1 + 4 + 9, 4 + 9};
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(y[c], (c + 1) / std::pow(bias + alpha / 3 * sq[c], beta), 1e-6);
}

TEST(OnnxOps, UnsupportedOpIsReported) {
  EXPECT_FALSE(onnx_rt::is_supported_op("If"));
  EXPECT_TRUE(onnx_rt::is_supported_op("Conv"));
  const Tensor x = Tensor::floats({1}, 1.0F);
  EXPECT_THROW(run("If", {&x}), Error);
}
