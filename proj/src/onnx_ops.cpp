#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "clustercam/error.hpp"
#include "clustercam/onnx_graph.hpp"

namespace clustercam::onnx_rt {

std::int64_t element_count(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

Tensor Tensor::floats(Shape shape, std::vector<float> values) {
  Tensor t;
  t.shape = std::move(shape);
  t.f = std::move(values);
  if (static_cast<std::int64_t>(t.f.size()) != element_count(t.shape)) {
    throw Error(ErrorCode::kShapeMismatch, "tensor data size does not match shape " + shape_to_string(t.shape));
  }
  return t;
}

Tensor Tensor::floats(Shape shape, float fill) {
  Tensor t;
  t.f.assign(static_cast<std::size_t>(element_count(shape)), fill);
  t.shape = std::move(shape);
  return t;
}

Tensor Tensor::ints(Shape shape, std::vector<std::int64_t> values) {
  Tensor t;
  t.shape = std::move(shape);
  t.i = std::move(values);
  t.is_int = true;
  if (static_cast<std::int64_t>(t.i.size()) != element_count(t.shape)) {
    throw Error(ErrorCode::kShapeMismatch, "tensor data size does not match shape " + shape_to_string(t.shape));
  }
  return t;
}

std::int64_t Node::attr_int(const std::string& key, std::int64_t fallback) const {
  auto it = attributes.find(key);
  if (it == attributes.end()) return fallback;
  if (auto* v = std::get_if<std::int64_t>(&it->second)) return *v;
  throw Error(ErrorCode::kParseError, op_type + ": attribute '" + key + "' is not an int");
}

float Node::attr_float(const std::string& key, float fallback) const {
  auto it = attributes.find(key);
  if (it == attributes.end()) return fallback;
  if (auto* v = std::get_if<float>(&it->second)) return *v;
  if (auto* v = std::get_if<std::int64_t>(&it->second)) return static_cast<float>(*v);
  throw Error(ErrorCode::kParseError, op_type + ": attribute '" + key + "' is not a float");
}

std::string Node::attr_string(const std::string& key, const std::string& fallback) const {
  auto it = attributes.find(key);
  if (it == attributes.end()) return fallback;
  if (auto* v = std::get_if<std::string>(&it->second)) return *v;
  throw Error(ErrorCode::kParseError, op_type + ": attribute '" + key + "' is not a string");
}

std::vector<std::int64_t> Node::attr_ints(const std::string& key, std::vector<std::int64_t> fallback) const {
  auto it = attributes.find(key);
  if (it == attributes.end()) return fallback;
  if (auto* v = std::get_if<std::vector<std::int64_t>>(&it->second)) return *v;
  if (auto* v = std::get_if<std::int64_t>(&it->second)) return {*v};
  throw Error(ErrorCode::kParseError, op_type + ": attribute '" + key + "' is not an int list");
}

const Tensor* Node::attr_tensor(const std::string& key) const {
  auto it = attributes.find(key);
  if (it == attributes.end()) return nullptr;
  return std::get_if<Tensor>(&it->second);
}

namespace {

using RowMatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

[[noreturn]] void fail(const Node& node, const std::string& what) {
  throw Error(ErrorCode::kShapeMismatch, node.op_type + " '" + node.name + "': " + what);
}

const Tensor& need(const Node& node, const std::vector<const Tensor*>& in, std::size_t k) {
  if (k >= in.size() || in[k] == nullptr) fail(node, "missing input " + std::to_string(k));
  return *in[k];
}

const Tensor& need_float(const Node& node, const std::vector<const Tensor*>& in, std::size_t k) {
  const Tensor& t = need(node, in, k);
  if (t.is_int) fail(node, "input " + std::to_string(k) + " must be float");
  return t;
}

std::int64_t normalize_axis(const Node& node, std::int64_t axis, std::size_t rank) {
  const auto r = static_cast<std::int64_t>(rank);
  if (axis < -r || axis >= r) fail(node, "axis " + std::to_string(axis) + " out of range");
  return axis < 0 ? axis + r : axis;
}

std::vector<std::int64_t> strides_of(const Shape& shape) {
  std::vector<std::int64_t> s(shape.size(), 1);
  for (std::size_t k = shape.size(); k-- > 1;) s[k - 1] = s[k] * shape[k];
  return s;
}

// ---------------------------------------------------------------- spatial

struct Window {
  std::vector<std::int64_t> kernel;
  std::vector<std::int64_t> strides;
  std::vector<std::int64_t> dilations;
  std::vector<std::int64_t> pad_begin;
  std::vector<std::int64_t> pad_end;
  std::vector<std::int64_t> out;
};

Window make_window(const Node& node, const Shape& x, std::vector<std::int64_t> kernel, bool ceil_mode) {
  const std::size_t sp = x.size() - 2;
  Window w;
  w.kernel = std::move(kernel);
  if (w.kernel.size() != sp) fail(node, "kernel rank does not match input " + shape_to_string(x));
  w.strides = node.attr_ints("strides", std::vector<std::int64_t>(sp, 1));
  w.dilations = node.attr_ints("dilations", std::vector<std::int64_t>(sp, 1));
  auto pads = node.attr_ints("pads", std::vector<std::int64_t>(2 * sp, 0));
  if (w.strides.size() != sp || w.dilations.size() != sp || pads.size() != 2 * sp) {
    fail(node, "strides/dilations/pads rank mismatch");
  }
  const std::string auto_pad = node.attr_string("auto_pad", "NOTSET");
  w.pad_begin.resize(sp);
  w.pad_end.resize(sp);
  w.out.resize(sp);
  for (std::size_t d = 0; d < sp; ++d) {
    const std::int64_t in = x[d + 2];
    const std::int64_t extent = w.dilations[d] * (w.kernel[d] - 1) + 1;
    if (auto_pad == "SAME_UPPER" || auto_pad == "SAME_LOWER") {
      const std::int64_t out = (in + w.strides[d] - 1) / w.strides[d];
      const std::int64_t total = std::max<std::int64_t>((out - 1) * w.strides[d] + extent - in, 0);
      const std::int64_t small = total / 2;
      w.pad_begin[d] = auto_pad == "SAME_UPPER" ? small : total - small;
      w.pad_end[d] = total - w.pad_begin[d];
    } else if (auto_pad == "VALID") {
      w.pad_begin[d] = 0;
      w.pad_end[d] = 0;
    } else if (auto_pad == "NOTSET") {
      w.pad_begin[d] = pads[d];
      w.pad_end[d] = pads[d + sp];
    } else {
      fail(node, "unsupported auto_pad " + auto_pad);
    }
    const std::int64_t span = in + w.pad_begin[d] + w.pad_end[d] - extent;
    if (span < 0) fail(node, "kernel larger than padded input");
    std::int64_t out = ceil_mode ? (span + w.strides[d] - 1) / w.strides[d] + 1 : span / w.strides[d] + 1;
    if (ceil_mode && (out - 1) * w.strides[d] >= in + w.pad_begin[d]) --out;
    w.out[d] = out;
  }
  return w;
}

Tensor conv(const Node& node, const std::vector<const Tensor*>& in) {
  const Tensor& x = need_float(node, in, 0);
  const Tensor& wt = need_float(node, in, 1);
  const Tensor* bias = in.size() > 2 ? in[2] : nullptr;
  if (x.rank() != 4 || wt.rank() != 4) fail(node, "only 2-D convolution is supported");
  const std::int64_t groups = node.attr_int("group", 1);
  const std::int64_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3];
  const std::int64_t m = wt.shape[0], cg = wt.shape[1], kh = wt.shape[2], kw = wt.shape[3];
  if (c != cg * groups || m % groups != 0) fail(node, "channel/group mismatch");
  const Window win = make_window(node, x.shape, node.attr_ints("kernel_shape", {kh, kw}), false);
  const std::int64_t oh = win.out[0], ow = win.out[1];
  const std::int64_t mg = m / groups;
  const std::int64_t kc = cg * kh * kw;
  Tensor y = Tensor::floats({n, m, oh, ow});
  RowMatF col(kc, oh * ow);
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t g = 0; g < groups; ++g) {
      for (std::int64_t ci = 0; ci < cg; ++ci) {
        const float* plane = x.f.data() + ((b * c + g * cg + ci) * h) * wd;
        for (std::int64_t ky = 0; ky < kh; ++ky) {
          for (std::int64_t kx = 0; kx < kw; ++kx) {
            float* row = col.data() + ((ci * kh + ky) * kw + kx) * oh * ow;
            for (std::int64_t oy = 0; oy < oh; ++oy) {
              const std::int64_t iy = oy * win.strides[0] - win.pad_begin[0] + ky * win.dilations[0];
              float* dst = row + oy * ow;
              if (iy < 0 || iy >= h) {
                std::fill(dst, dst + ow, 0.0F);
                continue;
              }
              for (std::int64_t ox = 0; ox < ow; ++ox) {
                const std::int64_t ix = ox * win.strides[1] - win.pad_begin[1] + kx * win.dilations[1];
                dst[ox] = (ix < 0 || ix >= wd) ? 0.0F : plane[iy * wd + ix];
              }
            }
          }
        }
      }
      Eigen::Map<const RowMatF> wg(wt.f.data() + g * mg * kc, mg, kc);
      Eigen::Map<RowMatF> yg(y.f.data() + (b * m + g * mg) * oh * ow, mg, oh * ow);
      yg.noalias() = wg * col;
      if (bias != nullptr) {
        for (std::int64_t o = 0; o < mg; ++o) yg.row(o).array() += bias->f[static_cast<std::size_t>(g * mg + o)];
      }
    }
  }
  return y;
}

Tensor pool(const Node& node, const std::vector<const Tensor*>& in, bool is_max) {
  const Tensor& x = need_float(node, in, 0);
  if (x.rank() != 4) fail(node, "only 2-D pooling is supported");
  const auto kernel = node.attr_ints("kernel_shape");
  const bool ceil_mode = node.attr_int("ceil_mode", 0) != 0;
  const bool include_pad = node.attr_int("count_include_pad", 0) != 0;
  const Window win = make_window(node, x.shape, kernel, ceil_mode);
  const std::int64_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3];
  const std::int64_t oh = win.out[0], ow = win.out[1];
  Tensor y = Tensor::floats({n, c, oh, ow});
  for (std::int64_t p = 0; p < n * c; ++p) {
    const float* plane = x.f.data() + p * h * wd;
    float* out = y.f.data() + p * oh * ow;
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        float acc = is_max ? -std::numeric_limits<float>::infinity() : 0.0F;
        std::int64_t valid = 0;
        std::int64_t padded = 0;
        for (std::int64_t ky = 0; ky < win.kernel[0]; ++ky) {
          const std::int64_t iy = oy * win.strides[0] - win.pad_begin[0] + ky * win.dilations[0];
          for (std::int64_t kx = 0; kx < win.kernel[1]; ++kx) {
            const std::int64_t ix = ox * win.strides[1] - win.pad_begin[1] + kx * win.dilations[1];
            const bool inside_pad = iy >= -win.pad_begin[0] && iy < h + win.pad_end[0] &&
                                    ix >= -win.pad_begin[1] && ix < wd + win.pad_end[1];
            if (inside_pad) ++padded;
            if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
            const float v = plane[iy * wd + ix];
            acc = is_max ? std::max(acc, v) : acc + v;
            ++valid;
          }
        }
        if (!is_max) {
          const std::int64_t denom = include_pad ? padded : valid;
          acc = denom > 0 ? acc / static_cast<float>(denom) : 0.0F;
        }
        out[oy * ow + ox] = acc;
      }
    }
  }
  return y;
}

Tensor global_pool(const Node& node, const std::vector<const Tensor*>& in, bool is_max) {
  const Tensor& x = need_float(node, in, 0);
  if (x.rank() < 3) fail(node, "global pooling needs a spatial input");
  const std::int64_t nc = x.shape[0] * x.shape[1];
  const std::int64_t area = x.size() / nc;
  Shape out_shape = x.shape;
  for (std::size_t d = 2; d < out_shape.size(); ++d) out_shape[d] = 1;
  Tensor y = Tensor::floats(out_shape);
  for (std::int64_t p = 0; p < nc; ++p) {
    Eigen::Map<const Eigen::VectorXf> v(x.f.data() + p * area, area);
    y.f[static_cast<std::size_t>(p)] = is_max ? v.maxCoeff() : v.mean();
  }
  return y;
}

// ---------------------------------------------------------------- dense

Tensor gemm(const Node& node, const std::vector<const Tensor*>& in) {
  const Tensor& a = need_float(node, in, 0);
  const Tensor& b = need_float(node, in, 1);
  const Tensor* c = in.size() > 2 ? in[2] : nullptr;
  if (a.rank() != 2 || b.rank() != 2) fail(node, "Gemm needs 2-D operands");
  const bool ta = node.attr_int("transA", 0) != 0;
  const bool tb = node.attr_int("transB", 0) != 0;
  const float alpha = node.attr_float("alpha", 1.0F);
  const float beta = node.attr_float("beta", 1.0F);
  Eigen::Map<const RowMatF> am(a.f.data(), a.shape[0], a.shape[1]);
  Eigen::Map<const RowMatF> bm(b.f.data(), b.shape[0], b.shape[1]);
  const std::int64_t m = ta ? a.shape[1] : a.shape[0];
  const std::int64_t k = ta ? a.shape[0] : a.shape[1];
  const std::int64_t kb = tb ? b.shape[1] : b.shape[0];
  const std::int64_t nn = tb ? b.shape[0] : b.shape[1];
  if (k != kb) fail(node, "inner dimensions differ: " + shape_to_string(a.shape) + " x " + shape_to_string(b.shape));
  Tensor y = Tensor::floats({m, nn});
  Eigen::Map<RowMatF> ym(y.f.data(), m, nn);
  if (ta && tb) ym.noalias() = am.transpose() * bm.transpose();
  else if (ta) ym.noalias() = am.transpose() * bm;
  else if (tb) ym.noalias() = am * bm.transpose();
  else ym.noalias() = am * bm;
  if (alpha != 1.0F) ym *= alpha;
  if (c != nullptr && beta != 0.0F) {
    const std::int64_t cs = c->size();
    for (std::int64_t r = 0; r < m; ++r) {
      for (std::int64_t q = 0; q < nn; ++q) {
        float cv;
        if (cs == 1) cv = c->f[0];
        else if (cs == nn) cv = c->f[static_cast<std::size_t>(q)];
        else if (cs == m * nn) cv = c->f[static_cast<std::size_t>(r * nn + q)];
        else if (cs == m) cv = c->f[static_cast<std::size_t>(r)];
        else fail(node, "bias shape " + shape_to_string(c->shape) + " not broadcastable");
        ym(r, q) += beta * cv;
      }
    }
  }
  return y;
}

Tensor matmul(const Node& node, const std::vector<const Tensor*>& in) {
  const Tensor& a = need_float(node, in, 0);
  const Tensor& b = need_float(node, in, 1);
  if (a.rank() != 2 || b.rank() != 2) fail(node, "only 2-D MatMul is supported");
  if (a.shape[1] != b.shape[0]) fail(node, "inner dimensions differ");
  Tensor y = Tensor::floats({a.shape[0], b.shape[1]});
  Eigen::Map<RowMatF>(y.f.data(), a.shape[0], b.shape[1]).noalias() =
      Eigen::Map<const RowMatF>(a.f.data(), a.shape[0], a.shape[1]) *
      Eigen::Map<const RowMatF>(b.f.data(), b.shape[0], b.shape[1]);
  return y;
}

// ------------------------------------------------------------- elementwise

Tensor unary(const Node& node, const std::vector<const Tensor*>& in, const std::function<float(float)>& fn) {
  Tensor y = need_float(node, in, 0);
  for (float& v : y.f) v = fn(v);
  return y;
}

Tensor binary(const Node& node, const std::vector<const Tensor*>& in, char op) {
  const Tensor& a = need(node, in, 0);
  const Tensor& b = need(node, in, 1);
  if (a.is_int != b.is_int) fail(node, "mixed int/float operands");
  const std::size_t rank = std::max(a.rank(), b.rank());
  Shape out(rank);
  Shape as(rank, 1), bs(rank, 1);
  std::copy(a.shape.begin(), a.shape.end(), as.begin() + static_cast<std::ptrdiff_t>(rank - a.rank()));
  std::copy(b.shape.begin(), b.shape.end(), bs.begin() + static_cast<std::ptrdiff_t>(rank - b.rank()));
  for (std::size_t d = 0; d < rank; ++d) {
    if (as[d] != bs[d] && as[d] != 1 && bs[d] != 1) {
      fail(node, "cannot broadcast " + shape_to_string(a.shape) + " with " + shape_to_string(b.shape));
    }
    out[d] = std::max(as[d], bs[d]);
  }
  auto sa = strides_of(as), sb = strides_of(bs);
  for (std::size_t d = 0; d < rank; ++d) {
    if (as[d] == 1) sa[d] = 0;
    if (bs[d] == 1) sb[d] = 0;
  }
  const std::int64_t count = element_count(out);
  auto apply = [op](auto x, auto y) {
    switch (op) {
      case '+': return x + y;
      case '-': return x - y;
      case '*': return x * y;
      default: return x / y;
    }
  };
  Tensor y;
  y.shape = out;
  y.is_int = a.is_int;
  if (a.is_int) y.i.resize(static_cast<std::size_t>(count));
  else y.f.resize(static_cast<std::size_t>(count));
  const auto so = strides_of(out);
  for (std::int64_t idx = 0; idx < count; ++idx) {
    std::int64_t rem = idx, ia = 0, ib = 0;
    for (std::size_t d = 0; d < rank; ++d) {
      const std::int64_t coord = rem / so[d];
      rem -= coord * so[d];
      ia += coord * sa[d];
      ib += coord * sb[d];
    }
    if (a.is_int) y.i[static_cast<std::size_t>(idx)] = apply(a.i[static_cast<std::size_t>(ia)], b.i[static_cast<std::size_t>(ib)]);
    else y.f[static_cast<std::size_t>(idx)] = apply(a.f[static_cast<std::size_t>(ia)], b.f[static_cast<std::size_t>(ib)]);
  }
  return y;
}

Tensor softmax(const Node& node, const std::vector<const Tensor*>& in, int opset) {
  Tensor y = need_float(node, in, 0);
  const std::int64_t axis = normalize_axis(node, node.attr_int("axis", opset >= 13 ? -1 : 1), y.rank());
  std::int64_t outer = 1, len = 1, inner = 1;
  if (opset >= 13) {
    for (std::int64_t d = 0; d < axis; ++d) outer *= y.shape[static_cast<std::size_t>(d)];
    len = y.shape[static_cast<std::size_t>(axis)];
    for (std::size_t d = static_cast<std::size_t>(axis) + 1; d < y.rank(); ++d) inner *= y.shape[d];
  } else {
    for (std::int64_t d = 0; d < axis; ++d) outer *= y.shape[static_cast<std::size_t>(d)];
    len = y.size() / outer;
  }
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t q = 0; q < inner; ++q) {
      float* base = y.f.data() + o * len * inner + q;
      float mx = -std::numeric_limits<float>::infinity();
      for (std::int64_t k = 0; k < len; ++k) mx = std::max(mx, base[k * inner]);
      double sum = 0;
      for (std::int64_t k = 0; k < len; ++k) {
        base[k * inner] = std::exp(base[k * inner] - mx);
        sum += base[k * inner];
      }
      for (std::int64_t k = 0; k < len; ++k) base[k * inner] = static_cast<float>(base[k * inner] / sum);
    }
  }
  return y;
}

Tensor batch_norm(const Node& node, const std::vector<const Tensor*>& in) {
  Tensor y = need_float(node, in, 0);
  const Tensor& scale = need_float(node, in, 1);
  const Tensor& bias = need_float(node, in, 2);
  const Tensor& mean = need_float(node, in, 3);
  const Tensor& var = need_float(node, in, 4);
  const float eps = node.attr_float("epsilon", 1e-5F);
  if (y.rank() < 2) fail(node, "input needs a channel axis");
  const std::int64_t n = y.shape[0], c = y.shape[1];
  const std::int64_t area = y.size() / (n * c);
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const auto k = static_cast<std::size_t>(ch);
      const float g = scale.f[k] / std::sqrt(var.f[k] + eps);
      const float off = bias.f[k] - g * mean.f[k];
      float* p = y.f.data() + (b * c + ch) * area;
      for (std::int64_t q = 0; q < area; ++q) p[q] = g * p[q] + off;
    }
  }
  return y;
}

Tensor lrn(const Node& node, const std::vector<const Tensor*>& in) {
  const Tensor& x = need_float(node, in, 0);
  const float alpha = node.attr_float("alpha", 1e-4F);
  const float beta = node.attr_float("beta", 0.75F);
  const float bias = node.attr_float("bias", 1.0F);
  const std::int64_t size = node.attr_int("size", 1);
  const std::int64_t n = x.shape[0], c = x.shape[1];
  const std::int64_t area = x.size() / (n * c);
  const std::int64_t lo_off = (size - 1) / 2;
  const std::int64_t hi_off = size - 1 - lo_off;
  Tensor y = Tensor::floats(x.shape);
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const std::int64_t lo = std::max<std::int64_t>(0, ch - lo_off);
      const std::int64_t hi = std::min<std::int64_t>(c - 1, ch + hi_off);
      for (std::int64_t q = 0; q < area; ++q) {
        float sq = 0;
        for (std::int64_t k = lo; k <= hi; ++k) {
          const float v = x.f[static_cast<std::size_t>((b * c + k) * area + q)];
          sq += v * v;
        }
        const auto at = static_cast<std::size_t>((b * c + ch) * area + q);
        y.f[at] = x.f[at] / std::pow(bias + alpha / static_cast<float>(size) * sq, beta);
      }
    }
  }
  return y;
}

// ------------------------------------------------------------------ shapes

std::vector<std::int64_t> int_values(const Node& node, const Tensor& t) {
  if (t.is_int) return t.i;
  std::vector<std::int64_t> out;
  for (float v : t.f) out.push_back(static_cast<std::int64_t>(v));
  (void)node;
  return out;
}

Tensor reshape_to(Tensor t, Shape shape) {
  t.shape = std::move(shape);
  return t;
}

Tensor reshape(const Node& node, const std::vector<const Tensor*>& in) {
  const Tensor& x = need(node, in, 0);
  std::vector<std::int64_t> target = int_values(node, need(node, in, 1));
  std::int64_t known = 1;
  int infer = -1;
  for (std::size_t d = 0; d < target.size(); ++d) {
    if (target[d] == 0) {
      if (d >= x.rank()) fail(node, "0 refers past the input rank");
      target[d] = x.shape[d];
    }
    if (target[d] == -1) {
      if (infer >= 0) fail(node, "more than one -1 in target shape");
      infer = static_cast<int>(d);
    } else {
      known *= target[d];
    }
  }
  if (infer >= 0) target[static_cast<std::size_t>(infer)] = known == 0 ? 0 : x.size() / known;
  if (element_count(target) != x.size()) {
    fail(node, "cannot reshape " + shape_to_string(x.shape) + " to " + shape_to_string(target));
  }
  return reshape_to(x, target);
}

Tensor flatten(const Node& node, const std::vector<const Tensor*>& in) {
  const Tensor& x = need(node, in, 0);
  std::int64_t axis = node.attr_int("axis", 1);
  if (axis < 0) axis += static_cast<std::int64_t>(x.rank());
  if (axis < 0 || axis > static_cast<std::int64_t>(x.rank())) fail(node, "axis out of range");
  std::int64_t outer = 1;
  for (std::int64_t d = 0; d < axis; ++d) outer *= x.shape[static_cast<std::size_t>(d)];
  return reshape_to(x, {outer, outer == 0 ? 0 : x.size() / outer});
}

std::vector<std::int64_t> axes_of(const Node& node, const std::vector<const Tensor*>& in, int opset) {
  if (opset >= 13 && in.size() > 1 && in[1] != nullptr) return int_values(node, *in[1]);
  return node.attr_ints("axes");
}

Tensor squeeze(const Node& node, const std::vector<const Tensor*>& in, int opset) {
  const Tensor& x = need(node, in, 0);
  auto axes = axes_of(node, in, opset);
  std::unordered_set<std::int64_t> drop;
  for (auto a : axes) drop.insert(normalize_axis(node, a, x.rank()));
  Shape out;
  for (std::size_t d = 0; d < x.rank(); ++d) {
    const bool squeeze_it = axes.empty() ? x.shape[d] == 1 : drop.count(static_cast<std::int64_t>(d)) > 0;
    if (squeeze_it && x.shape[d] != 1) fail(node, "cannot squeeze a non-unit axis");
    if (!squeeze_it) out.push_back(x.shape[d]);
  }
  return reshape_to(x, out);
}

Tensor unsqueeze(const Node& node, const std::vector<const Tensor*>& in, int opset) {
  const Tensor& x = need(node, in, 0);
  auto axes = axes_of(node, in, opset);
  const std::size_t rank = x.rank() + axes.size();
  std::vector<bool> inserted(rank, false);
  for (auto a : axes) inserted[static_cast<std::size_t>(normalize_axis(node, a, rank))] = true;
  Shape out;
  std::size_t src = 0;
  for (std::size_t d = 0; d < rank; ++d) out.push_back(inserted[d] ? 1 : x.shape[src++]);
  return reshape_to(x, out);
}

Tensor concat(const Node& node, const std::vector<const Tensor*>& in) {
  const Tensor& first = need(node, in, 0);
  const auto axis = static_cast<std::size_t>(normalize_axis(node, node.attr_int("axis", 0), first.rank()));
  Shape out = first.shape;
  out[axis] = 0;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const Tensor& t = need(node, in, k);
    if (t.rank() != first.rank() || t.is_int != first.is_int) fail(node, "inputs differ in rank or type");
    out[axis] += t.shape[axis];
  }
  std::int64_t outer = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= out[d];
  Tensor y;
  y.shape = out;
  y.is_int = first.is_int;
  for (std::int64_t o = 0; o < outer; ++o) {
    for (const Tensor* t : in) {
      const std::int64_t chunk = t->size() / std::max<std::int64_t>(outer, 1);
      if (t->is_int) y.i.insert(y.i.end(), t->i.begin() + o * chunk, t->i.begin() + (o + 1) * chunk);
      else y.f.insert(y.f.end(), t->f.begin() + o * chunk, t->f.begin() + (o + 1) * chunk);
    }
  }
  return y;
}

Tensor gather(const Node& node, const std::vector<const Tensor*>& in) {
  const Tensor& data = need(node, in, 0);
  const Tensor& idx = need(node, in, 1);
  const auto axis = static_cast<std::size_t>(normalize_axis(node, node.attr_int("axis", 0), data.rank()));
  const auto indices = int_values(node, idx);
  Shape out;
  for (std::size_t d = 0; d < axis; ++d) out.push_back(data.shape[d]);
  for (auto d : idx.shape) out.push_back(d);
  for (std::size_t d = axis + 1; d < data.rank(); ++d) out.push_back(data.shape[d]);
  std::int64_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= data.shape[d];
  for (std::size_t d = axis + 1; d < data.rank(); ++d) inner *= data.shape[d];
  const std::int64_t len = data.shape[axis];
  Tensor y;
  y.shape = out;
  y.is_int = data.is_int;
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t k : indices) {
      if (k < 0) k += len;
      if (k < 0 || k >= len) fail(node, "index out of range");
      const std::int64_t off = (o * len + k) * inner;
      if (data.is_int) y.i.insert(y.i.end(), data.i.begin() + off, data.i.begin() + off + inner);
      else y.f.insert(y.f.end(), data.f.begin() + off, data.f.begin() + off + inner);
    }
  }
  return y;
}

Tensor transpose(const Node& node, const std::vector<const Tensor*>& in) {
  const Tensor& x = need(node, in, 0);
  std::vector<std::int64_t> perm = node.attr_ints("perm");
  if (perm.empty()) {
    for (std::size_t d = x.rank(); d-- > 0;) perm.push_back(static_cast<std::int64_t>(d));
  }
  if (perm.size() != x.rank()) fail(node, "perm rank mismatch");
  Shape out(x.rank());
  for (std::size_t d = 0; d < x.rank(); ++d) out[d] = x.shape[static_cast<std::size_t>(perm[d])];
  const auto si = strides_of(x.shape);
  const auto so = strides_of(out);
  Tensor y;
  y.shape = out;
  y.is_int = x.is_int;
  const std::int64_t count = x.size();
  if (x.is_int) y.i.resize(static_cast<std::size_t>(count));
  else y.f.resize(static_cast<std::size_t>(count));
  for (std::int64_t idx = 0; idx < count; ++idx) {
    std::int64_t rem = idx, src = 0;
    for (std::size_t d = 0; d < out.size(); ++d) {
      const std::int64_t coord = rem / so[d];
      rem -= coord * so[d];
      src += coord * si[static_cast<std::size_t>(perm[d])];
    }
    if (x.is_int) y.i[static_cast<std::size_t>(idx)] = x.i[static_cast<std::size_t>(src)];
    else y.f[static_cast<std::size_t>(idx)] = x.f[static_cast<std::size_t>(src)];
  }
  return y;
}

Tensor cast(const Node& node, const std::vector<const Tensor*>& in) {
  const Tensor& x = need(node, in, 0);
  const std::int64_t to = node.attr_int("to", 1);
  const bool want_int = to == 6 || to == 7;
  Tensor y;
  y.shape = x.shape;
  y.is_int = want_int;
  if (want_int) {
    y.i = x.is_int ? x.i : int_values(node, x);
  } else if (x.is_int) {
    for (auto v : x.i) y.f.push_back(static_cast<float>(v));
  } else {
    y.f = x.f;
  }
  return y;
}

Tensor clip(const Node& node, const std::vector<const Tensor*>& in, int opset) {
  float lo = -std::numeric_limits<float>::infinity();
  float hi = std::numeric_limits<float>::infinity();
  if (opset >= 11) {
    if (in.size() > 1 && in[1] != nullptr) lo = in[1]->f.at(0);
    if (in.size() > 2 && in[2] != nullptr) hi = in[2]->f.at(0);
  } else {
    lo = node.attr_float("min", lo);
    hi = node.attr_float("max", hi);
  }
  return unary(node, in, [lo, hi](float v) { return std::min(std::max(v, lo), hi); });
}

Tensor constant(const Node& node) {
  if (const Tensor* t = node.attr_tensor("value")) return *t;
  auto it = node.attributes.find("value_float");
  if (it != node.attributes.end()) return Tensor::floats({}, {std::get<float>(it->second)});
  it = node.attributes.find("value_floats");
  if (it != node.attributes.end()) {
    const auto& v = std::get<std::vector<float>>(it->second);
    return Tensor::floats({static_cast<std::int64_t>(v.size())}, v);
  }
  it = node.attributes.find("value_int");
  if (it != node.attributes.end()) return Tensor::ints({}, {std::get<std::int64_t>(it->second)});
  it = node.attributes.find("value_ints");
  if (it != node.attributes.end()) {
    const auto& v = std::get<std::vector<std::int64_t>>(it->second);
    return Tensor::ints({static_cast<std::int64_t>(v.size())}, v);
  }
  fail(node, "Constant without a supported value attribute");
}

const std::unordered_set<std::string>& supported_ops() {
  static const std::unordered_set<std::string> ops = {
      "Conv", "Relu", "LeakyRelu", "Sigmoid", "Tanh", "Clip", "MaxPool", "AveragePool",
      "GlobalAveragePool", "GlobalMaxPool", "Flatten", "Reshape", "Gemm", "MatMul", "Add", "Sub",
      "Mul", "Div", "Softmax", "Dropout", "Identity", "Constant", "BatchNormalization", "LRN",
      "Concat", "Squeeze", "Unsqueeze", "Shape", "Gather", "Transpose", "Cast"};
  return ops;
}

}  // namespace

bool is_supported_op(const std::string& op_type) { return supported_ops().count(op_type) > 0; }

std::vector<Tensor> run_node(const Node& node, const std::vector<const Tensor*>& in, int opset) {
  const std::string& op = node.op_type;
  if (op == "Conv") return {conv(node, in)};
  if (op == "Relu") return {unary(node, in, [](float v) { return v > 0.0F ? v : 0.0F; })};
  if (op == "LeakyRelu") {
    const float a = node.attr_float("alpha", 0.01F);
    return {unary(node, in, [a](float v) { return v >= 0.0F ? v : a * v; })};
  }
  if (op == "Sigmoid") return {unary(node, in, [](float v) { return 1.0F / (1.0F + std::exp(-v)); })};
  if (op == "Tanh") return {unary(node, in, [](float v) { return std::tanh(v); })};
  if (op == "Clip") return {clip(node, in, opset)};
  if (op == "MaxPool") return {pool(node, in, true)};
  if (op == "AveragePool") return {pool(node, in, false)};
  if (op == "GlobalAveragePool") return {global_pool(node, in, false)};
  if (op == "GlobalMaxPool") return {global_pool(node, in, true)};
  if (op == "Flatten") return {flatten(node, in)};
  if (op == "Reshape") return {reshape(node, in)};
  if (op == "Gemm") return {gemm(node, in)};
  if (op == "MatMul") return {matmul(node, in)};
  if (op == "Add") return {binary(node, in, '+')};
  if (op == "Sub") return {binary(node, in, '-')};
  if (op == "Mul") return {binary(node, in, '*')};
  if (op == "Div") return {binary(node, in, '/')};
  if (op == "Softmax") return {softmax(node, in, opset)};
  if (op == "Dropout" || op == "Identity") return {need(node, in, 0)};
  if (op == "Constant") return {constant(node)};
  if (op == "BatchNormalization") return {batch_norm(node, in)};
  if (op == "LRN") return {lrn(node, in)};
  if (op == "Concat") return {concat(node, in)};
  if (op == "Squeeze") return {squeeze(node, in, opset)};
  if (op == "Unsqueeze") return {unsqueeze(node, in, opset)};
  if (op == "Shape") {
    const Tensor& x = need(node, in, 0);
    return {Tensor::ints({static_cast<std::int64_t>(x.rank())}, x.shape)};
  }
  if (op == "Gather") return {gather(node, in)};
  if (op == "Transpose") return {transpose(node, in)};
  if (op == "Cast") return {cast(node, in)};
  throw Error(ErrorCode::kUnsupportedOperator, "unsupported operator " + op + " (node '" + node.name + "')");
}

}  // namespace clustercam::onnx_rt
