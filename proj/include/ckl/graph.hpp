#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ckl/tensor.hpp"

namespace ckl {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapCM = Eigen::Map<const MatRM>;

// C = A(m,k) * B(k,n), optionally transposing either input (dims given are the
// dims as used in the product) and optionally accumulating into C.
inline void gemm(const float* a, const float* b, float* c, int m, int k, int n, bool ta, bool tb, bool accum) {
  MapM C(c, m, n);
  auto run = [&](const auto& A, const auto& B) {
    if (accum)
      C.noalias() += A * B;
    else
      C.noalias() = A * B;
  };
  if (!ta && !tb)
    run(MapCM(a, m, k), MapCM(b, k, n));
  else if (ta && !tb)
    run(MapCM(a, k, m).transpose(), MapCM(b, k, n));
  else if (!ta && tb)
    run(MapCM(a, m, k), MapCM(b, n, k).transpose());
  else
    run(MapCM(a, k, m).transpose(), MapCM(b, n, k).transpose());
}

enum class Op {
  kLeaf,
  kInput,
  kEmbed,
  kMatmul,
  kTransposeLast2,
  kAdd,
  kMul,
  kScale,
  kRelu,
  kSoftmaxLast,
  kLayerNormLast,
  kSliceLast,
  kConcatLast,
  kReshape,
  kCrossEntropy,
  kMean,
  kSum,
};

constexpr float kLayerNormEps = 1e-5f;

// Dynamically built computation tape. Nodes are appended in topological order;
// forward() executes pending nodes, backward() sweeps the tape in reverse and
// accumulates leaf gradients additively into the referenced parameter tensors.
class Graph {
  struct Node {
    Op op = Op::kInput;
    std::vector<int> in;
    Tensor out;             // shape fixed at build, data filled at exec
    std::vector<float> grad;
    int grad_stamp = -1;
    bool needs_grad = false;
    std::string name;
    Tensor* param = nullptr;         // kLeaf
    std::vector<int> ids;            // kEmbed / kCrossEntropy targets
    std::vector<char> active;        // kCrossEntropy
    float scalar = 0.0f;             // kScale
    int start = 0, len = 0;          // kSliceLast
    std::vector<float> aux1, aux2;   // op caches (xhat / inv_std / probs)
  };

 public:
  int leaf(Tensor* t, std::string name = "") {
    if (t == nullptr) throw StateError("leaf with null tensor");
    Node n;
    n.op = Op::kLeaf;
    n.param = t;
    n.needs_grad = t->requires_grad;
    n.out.shape = t->shape;
    n.name = name.empty() ? "leaf" : std::move(name);
    return push(std::move(n));
  }

  int input(Tensor t, std::string name = "") {
    Node n;
    n.op = Op::kInput;
    n.out.shape = t.shape;
    n.aux1 = std::move(t.data);  // kept here; copied to out at exec
    n.name = name.empty() ? "input" : std::move(name);
    return push(std::move(n));
  }

  int embed(std::vector<int> ids, std::vector<int> idshape, int table) {
    const Node& tn = node(table, "embed table");
    if (tn.out.shape.size() != 2) throw ShapeError(err("embed", table, "table must be 2-d"));
    if (shape_numel(idshape) != static_cast<int64_t>(ids.size()))
      throw ShapeError("embed: id count does not match id shape");
    int vocab = tn.out.shape[0];
    for (int id : ids)
      if (id < 0 || id >= vocab) throw ShapeError("embed: id out of range");
    Node n;
    n.op = Op::kEmbed;
    n.in = {table};
    n.ids = std::move(ids);
    n.out.shape = idshape;
    n.out.shape.push_back(tn.out.shape[1]);
    return push(std::move(n));
  }

  // 2d*2d, 3d*2d (shared right operand) and 3d*3d (batched) products.
  int matmul(int a, int b) {
    const auto& sa = node(a, "matmul").out.shape;
    const auto& sb = node(b, "matmul").out.shape;
    Node n;
    n.op = Op::kMatmul;
    n.in = {a, b};
    if (sa.size() == 2 && sb.size() == 2) {
      if (sa[1] != sb[0]) throw ShapeError(mm_err(sa, sb));
      n.out.shape = {sa[0], sb[1]};
    } else if (sa.size() == 3 && sb.size() == 2) {
      if (sa[2] != sb[0]) throw ShapeError(mm_err(sa, sb));
      n.out.shape = {sa[0], sa[1], sb[1]};
    } else if (sa.size() == 3 && sb.size() == 3) {
      if (sa[0] != sb[0] || sa[2] != sb[1]) throw ShapeError(mm_err(sa, sb));
      n.out.shape = {sa[0], sa[1], sb[2]};
    } else {
      throw ShapeError(mm_err(sa, sb));
    }
    return push(std::move(n));
  }

  int transpose_last2(int a) {
    auto s = node(a, "transpose").out.shape;
    if (s.size() < 2) throw ShapeError("transpose_last2 needs rank >= 2");
    std::swap(s[s.size() - 1], s[s.size() - 2]);
    Node n;
    n.op = Op::kTransposeLast2;
    n.in = {a};
    n.out.shape = std::move(s);
    return push(std::move(n));
  }

  // b broadcasts against a: right-aligned, each b dim equal to a's or 1.
  int add(int a, int b) {
    const auto& sa = node(a, "add").out.shape;
    const auto& sb = node(b, "add").out.shape;
    if (sb.size() > sa.size()) throw ShapeError("add: right operand rank exceeds left");
    for (size_t i = 0; i < sb.size(); ++i) {
      int da = sa[sa.size() - sb.size() + i], db = sb[i];
      if (db != da && db != 1) throw ShapeError("add: shapes " + shape_str(sa) + " and " + shape_str(sb) + " do not broadcast");
    }
    Node n;
    n.op = Op::kAdd;
    n.in = {a, b};
    n.out.shape = sa;
    return push(std::move(n));
  }

  int mul(int a, int b) {
    const auto& sa = node(a, "mul").out.shape;
    if (sa != node(b, "mul").out.shape) throw ShapeError("mul: shape mismatch");
    Node n;
    n.op = Op::kMul;
    n.in = {a, b};
    n.out.shape = sa;
    return push(std::move(n));
  }

  int scale(int a, float c) {
    Node n;
    n.op = Op::kScale;
    n.in = {a};
    n.scalar = c;
    n.out.shape = node(a, "scale").out.shape;
    return push(std::move(n));
  }

  int relu(int a) {
    Node n;
    n.op = Op::kRelu;
    n.in = {a};
    n.out.shape = node(a, "relu").out.shape;
    return push(std::move(n));
  }

  int softmax_last(int a) {
    Node n;
    n.op = Op::kSoftmaxLast;
    n.in = {a};
    n.out.shape = node(a, "softmax").out.shape;
    return push(std::move(n));
  }

  int layernorm_last(int x, int gain, int bias) {
    const auto& sx = node(x, "layernorm").out.shape;
    const auto& sg = node(gain, "layernorm").out.shape;
    const auto& sb = node(bias, "layernorm").out.shape;
    int d = sx.back();
    if (sg != std::vector<int>{d} || sb != std::vector<int>{d})
      throw ShapeError("layernorm: gain/bias must be [" + std::to_string(d) + "]");
    Node n;
    n.op = Op::kLayerNormLast;
    n.in = {x, gain, bias};
    n.out.shape = sx;
    return push(std::move(n));
  }

  int slice_last(int a, int start, int len) {
    const auto& sa = node(a, "slice").out.shape;
    int d = sa.back();
    if (start < 0 || len <= 0 || start + len > d) throw ShapeError("slice_last out of range");
    Node n;
    n.op = Op::kSliceLast;
    n.in = {a};
    n.start = start;
    n.len = len;
    n.out.shape = sa;
    n.out.shape.back() = len;
    return push(std::move(n));
  }

  int concat_last(std::vector<int> parts) {
    if (parts.empty()) throw ShapeError("concat_last with no inputs");
    auto s = node(parts[0], "concat").out.shape;
    int total = s.back();
    for (size_t i = 1; i < parts.size(); ++i) {
      auto si = node(parts[i], "concat").out.shape;
      if (std::vector<int>(si.begin(), si.end() - 1) != std::vector<int>(s.begin(), s.end() - 1))
        throw ShapeError("concat_last: leading dims differ");
      total += si.back();
    }
    Node n;
    n.op = Op::kConcatLast;
    n.in = std::move(parts);
    n.out.shape = s;
    n.out.shape.back() = total;
    return push(std::move(n));
  }

  int reshape(int a, std::vector<int> shape) {
    if (shape_numel(shape) != shape_numel(node(a, "reshape").out.shape))
      throw ShapeError("reshape: element count mismatch");
    Node n;
    n.op = Op::kReshape;
    n.in = {a};
    n.out.shape = std::move(shape);
    return push(std::move(n));
  }

  // Mean token-level cross entropy over rows flagged active. logits [N, V].
  int cross_entropy(int logits, std::vector<int> targets, std::vector<char> active) {
    const auto& s = node(logits, "cross_entropy").out.shape;
    if (s.size() != 2) throw ShapeError("cross_entropy expects 2-d logits");
    if (static_cast<int>(targets.size()) != s[0] || active.size() != targets.size())
      throw ShapeError("cross_entropy: target/active length mismatch");
    int count = 0;
    for (size_t i = 0; i < targets.size(); ++i) {
      if (!active[i]) continue;
      ++count;
      if (targets[i] < 0 || targets[i] >= s[1]) throw ShapeError("cross_entropy: target id out of range");
    }
    if (count == 0) throw ConfigError("cross_entropy: no active positions");
    Node n;
    n.op = Op::kCrossEntropy;
    n.in = {logits};
    n.ids = std::move(targets);
    n.active = std::move(active);
    n.out.shape = {1};
    return push(std::move(n));
  }

  int mean_all(int a) { return reduce(Op::kMean, a); }
  int sum_all(int a) { return reduce(Op::kSum, a); }

  const Tensor& out(int id) const { return nodes_.at(static_cast<size_t>(id)).out; }
  const std::string& name(int id) const { return nodes_.at(static_cast<size_t>(id)).name; }
  Op op(int id) const { return nodes_.at(static_cast<size_t>(id)).op; }
  const std::vector<int>& inputs(int id) const { return nodes_.at(static_cast<size_t>(id)).in; }
  int size() const { return static_cast<int>(nodes_.size()); }

  std::vector<int> trainable_leaves() const {
    std::vector<int> out;
    for (size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].op == Op::kLeaf && nodes_[i].needs_grad) out.push_back(static_cast<int>(i));
    return out;
  }

  Tensor* leaf_param(int id) const { return nodes_.at(static_cast<size_t>(id)).param; }

  // Re-run from scratch (leaves re-read their parameter data).
  void invalidate() {
    executed_ = 0;
    forward_done_ = false;
  }

  const Tensor& forward() {
    if (nodes_.empty()) throw StateError("forward on empty graph");
    for (; executed_ < static_cast<int>(nodes_.size()); ++executed_) exec(nodes_[static_cast<size_t>(executed_)]);
    forward_done_ = true;
    return nodes_.back().out;
  }

  void backward() {
    Tensor seed = Tensor::full(nodes_.back().out.shape, 1.0f);
    if (seed.numel() != 1) throw StateError("backward without seed needs_grad scalar output");
    backward(seed);
  }

  void backward(const Tensor& seed) {
    if (!forward_done_) throw StateError("backward called before forward");
    Node& last = nodes_.back();
    if (seed.shape != last.out.shape) throw ShapeError("backward seed shape mismatch");
    ++pass_;
    grad_of(static_cast<int>(nodes_.size()) - 1) = seed.data;
    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (!n.needs_grad || n.grad_stamp != pass_) continue;
      step_back(n);
    }
  }

  // Test hook: scales gradients accumulated into leaf parameters so the
  // gradient checker's negative control has a deliberately wrong rule to catch.
  void set_leaf_grad_scale_for_tests(float s) { leaf_grad_scale_ = s; }

 private:
  std::vector<Node> nodes_;
  int executed_ = 0;
  bool forward_done_ = false;
  int pass_ = 0;
  float leaf_grad_scale_ = 1.0f;

  int push(Node n) {
    for (int i : n.in) n.needs_grad = n.needs_grad || nodes_.at(static_cast<size_t>(i)).needs_grad;
    if (n.name.empty()) n.name = op_name(n.op) + "#" + std::to_string(nodes_.size());
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  int reduce(Op op, int a) {
    Node n;
    n.op = op;
    n.in = {a};
    n.out.shape = {1};
    return push(std::move(n));
  }

  Node& node(int id, const char* who) {
    if (id < 0 || id >= static_cast<int>(nodes_.size())) throw StateError(std::string(who) + ": bad node id");
    return nodes_[static_cast<size_t>(id)];
  }

  std::string err(const char* op, int id, const std::string& msg) {
    return std::string(op) + " node " + std::to_string(id) + ": " + msg;
  }

  static std::string mm_err(const std::vector<int>& a, const std::vector<int>& b) {
    return "matmul: incompatible shapes " + shape_str(a) + " x " + shape_str(b);
  }

  static std::string op_name(Op op) {
    switch (op) {
      case Op::kLeaf: return "leaf";
      case Op::kInput: return "input";
      case Op::kEmbed: return "embed";
      case Op::kMatmul: return "matmul";
      case Op::kTransposeLast2: return "transpose";
      case Op::kAdd: return "add";
      case Op::kMul: return "mul";
      case Op::kScale: return "scale";
      case Op::kRelu: return "relu";
      case Op::kSoftmaxLast: return "softmax";
      case Op::kLayerNormLast: return "layernorm";
      case Op::kSliceLast: return "slice";
      case Op::kConcatLast: return "concat";
      case Op::kReshape: return "reshape";
      case Op::kCrossEntropy: return "cross_entropy";
      case Op::kMean: return "mean";
      case Op::kSum: return "sum";
    }
    return "?";
  }

  std::vector<float>& grad_of(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad_stamp != pass_) {
      n.grad.assign(n.out.data.size(), 0.0f);
      n.grad_stamp = pass_;
    }
    return n.grad;
  }

  // rows = product of all dims but the last.
  static int64_t rows_of(const Tensor& t) { return shape_numel(t.shape) / t.shape.back(); }

  void exec(Node& n) {
    switch (n.op) {
      case Op::kLeaf: {
        if (n.param->shape != n.out.shape)
          throw ShapeError("leaf " + n.name + ": parameter shape changed after graph build");
        n.out.data = n.param->data;
        break;
      }
      case Op::kInput:
        n.out.data = n.aux1;
        break;
      case Op::kEmbed: {
        const Tensor& tab = nodes_[static_cast<size_t>(n.in[0])].out;
        int d = tab.shape[1];
        n.out.data.resize(n.ids.size() * static_cast<size_t>(d));
        for (size_t r = 0; r < n.ids.size(); ++r)
          std::copy_n(tab.data.data() + static_cast<size_t>(n.ids[r]) * d, d, n.out.data.data() + r * static_cast<size_t>(d));
        break;
      }
      case Op::kMatmul: {
        const Tensor& a = nodes_[static_cast<size_t>(n.in[0])].out;
        const Tensor& b = nodes_[static_cast<size_t>(n.in[1])].out;
        n.out.data.resize(static_cast<size_t>(shape_numel(n.out.shape)));
        if (a.ndim() == 2) {
          gemm(a.data.data(), b.data.data(), n.out.data.data(), a.shape[0], a.shape[1], b.shape[1], false, false, false);
        } else if (b.ndim() == 2) {
          gemm(a.data.data(), b.data.data(), n.out.data.data(), a.shape[0] * a.shape[1], a.shape[2], b.shape[1], false, false, false);
        } else {
          int B = a.shape[0], m = a.shape[1], k = a.shape[2], p = b.shape[2];
          for (int i = 0; i < B; ++i)
            gemm(a.data.data() + static_cast<size_t>(i) * m * k, b.data.data() + static_cast<size_t>(i) * k * p,
                 n.out.data.data() + static_cast<size_t>(i) * m * p, m, k, p, false, false, false);
        }
        break;
      }
      case Op::kTransposeLast2: {
        const Tensor& a = nodes_[static_cast<size_t>(n.in[0])].out;
        int r = a.shape[a.ndim() - 2], c = a.shape[a.ndim() - 1];
        int64_t mats = a.numel() / (static_cast<int64_t>(r) * c);
        n.out.data.resize(a.data.size());
        for (int64_t m = 0; m < mats; ++m) {
          const float* src = a.data.data() + m * r * c;
          float* dst = n.out.data.data() + m * r * c;
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) dst[static_cast<size_t>(j) * r + i] = src[static_cast<size_t>(i) * c + j];
        }
        break;
      }
      case Op::kAdd: {
        const Tensor& a = nodes_[static_cast<size_t>(n.in[0])].out;
        const Tensor& b = nodes_[static_cast<size_t>(n.in[1])].out;
        n.out.data = a.data;
        broadcast_apply(n.out, b, [](float& dst, float src) { dst += src; });
        break;
      }
      case Op::kMul: {
        const Tensor& a = nodes_[static_cast<size_t>(n.in[0])].out;
        const Tensor& b = nodes_[static_cast<size_t>(n.in[1])].out;
        n.out.data.resize(a.data.size());
        for (size_t i = 0; i < a.data.size(); ++i) n.out.data[i] = a.data[i] * b.data[i];
        break;
      }
      case Op::kScale: {
        const Tensor& a = nodes_[static_cast<size_t>(n.in[0])].out;
        n.out.data.resize(a.data.size());
        for (size_t i = 0; i < a.data.size(); ++i) n.out.data[i] = a.data[i] * n.scalar;
        break;
      }
      case Op::kRelu: {
        const Tensor& a = nodes_[static_cast<size_t>(n.in[0])].out;
        n.out.data.resize(a.data.size());
        for (size_t i = 0; i < a.data.size(); ++i) n.out.data[i] = a.data[i] > 0.0f ? a.data[i] : 0.0f;
        break;
      }
      case Op::kSoftmaxLast: {
        const Tensor& a = nodes_[static_cast<size_t>(n.in[0])].out;
        int d = a.shape.back();
        int64_t rows = rows_of(a);
        n.out.data.resize(a.data.size());
        for (int64_t r = 0; r < rows; ++r) {
          const float* x = a.data.data() + r * d;
          float* y = n.out.data.data() + r * d;
          float m = x[0];
          for (int i = 1; i < d; ++i) m = std::max(m, x[i]);
          double z = 0.0;
          for (int i = 0; i < d; ++i) {
            y[i] = std::exp(x[i] - m);
            z += y[i];
          }
          float inv = static_cast<float>(1.0 / z);
          for (int i = 0; i < d; ++i) y[i] *= inv;
        }
        break;
      }
      case Op::kLayerNormLast: {
        const Tensor& x = nodes_[static_cast<size_t>(n.in[0])].out;
        const Tensor& g = nodes_[static_cast<size_t>(n.in[1])].out;
        const Tensor& b = nodes_[static_cast<size_t>(n.in[2])].out;
        int d = x.shape.back();
        int64_t rows = rows_of(x);
        n.out.data.resize(x.data.size());
        n.aux1.resize(x.data.size());                       // xhat
        n.aux2.resize(static_cast<size_t>(rows));           // 1/sigma
        for (int64_t r = 0; r < rows; ++r) {
          const float* xr = x.data.data() + r * d;
          double mu = 0.0;
          for (int i = 0; i < d; ++i) mu += xr[i];
          mu /= d;
          double var = 0.0;
          for (int i = 0; i < d; ++i) {
            double c = xr[i] - mu;
            var += c * c;
          }
          var /= d;
          float inv = static_cast<float>(1.0 / std::sqrt(var + kLayerNormEps));
          n.aux2[static_cast<size_t>(r)] = inv;
          float* xh = n.aux1.data() + r * d;
          float* y = n.out.data.data() + r * d;
          for (int i = 0; i < d; ++i) {
            xh[i] = (xr[i] - static_cast<float>(mu)) * inv;
            y[i] = xh[i] * g.data[static_cast<size_t>(i)] + b.data[static_cast<size_t>(i)];
          }
        }
        break;
      }
      case Op::kSliceLast: {
        const Tensor& a = nodes_[static_cast<size_t>(n.in[0])].out;
        int d = a.shape.back();
        int64_t rows = rows_of(a);
        n.out.data.resize(static_cast<size_t>(rows) * n.len);
        for (int64_t r = 0; r < rows; ++r)
          std::copy_n(a.data.data() + r * d + n.start, n.len, n.out.data.data() + r * n.len);
        break;
      }
      case Op::kConcatLast: {
        int d = n.out.shape.back();
        int64_t rows = rows_of(n.out);
        n.out.data.resize(static_cast<size_t>(rows) * d);
        int off = 0;
        for (int src : n.in) {
          const Tensor& a = nodes_[static_cast<size_t>(src)].out;
          int da = a.shape.back();
          for (int64_t r = 0; r < rows; ++r)
            std::copy_n(a.data.data() + r * da, da, n.out.data.data() + r * d + off);
          off += da;
        }
        break;
      }
      case Op::kReshape:
        n.out.data = nodes_[static_cast<size_t>(n.in[0])].out.data;
        break;
      case Op::kCrossEntropy: {
        const Tensor& lg = nodes_[static_cast<size_t>(n.in[0])].out;
        int V = lg.shape[1];
        int64_t N = lg.shape[0];
        n.aux1.resize(lg.data.size());  // probs for backward
        double total = 0.0;
        int count = 0;
        for (int64_t r = 0; r < N; ++r) {
          const float* x = lg.data.data() + r * V;
          float* p = n.aux1.data() + r * V;
          float m = x[0];
          for (int i = 1; i < V; ++i) m = std::max(m, x[i]);
          double z = 0.0;
          for (int i = 0; i < V; ++i) {
            p[i] = std::exp(x[i] - m);
            z += p[i];
          }
          float inv = static_cast<float>(1.0 / z);
          for (int i = 0; i < V; ++i) p[i] *= inv;
          if (n.active[static_cast<size_t>(r)]) {
            total += std::log(z) + m - x[n.ids[static_cast<size_t>(r)]];
            ++count;
          }
        }
        n.out.data.assign(1, static_cast<float>(total / count));
        break;
      }
      case Op::kMean:
      case Op::kSum: {
        const Tensor& a = nodes_[static_cast<size_t>(n.in[0])].out;
        double total = 0.0;
        for (float v : a.data) total += v;
        if (n.op == Op::kMean) total /= static_cast<double>(a.data.size());
        n.out.data.assign(1, static_cast<float>(total));
        break;
      }
    }
    double probe = 0.0;
    for (float v : n.out.data) probe += v;
    if (!std::isfinite(probe)) {
      for (float v : n.out.data)
        if (!std::isfinite(v)) throw DivergenceError("non-finite activation in node " + n.name);
    }
  }

  // Applies fn(dst_element, src_element) with src broadcast right-aligned
  // against dst (src dims equal or 1).
  template <class Fn>
  static void broadcast_apply(Tensor& dst, const Tensor& src, Fn fn) {
    if (dst.shape == src.shape) {
      for (size_t i = 0; i < dst.data.size(); ++i) fn(dst.data[i], src.data[i]);
      return;
    }
    int nd = dst.ndim();
    std::vector<int> sshape(static_cast<size_t>(nd), 1);
    for (int i = 0; i < src.ndim(); ++i) sshape[static_cast<size_t>(nd - src.ndim() + i)] = src.shape[static_cast<size_t>(i)];
    std::vector<int64_t> sstride(static_cast<size_t>(nd), 0);
    int64_t acc = 1;
    for (int i = nd - 1; i >= 0; --i) {
      sstride[static_cast<size_t>(i)] = sshape[static_cast<size_t>(i)] == 1 ? 0 : acc;
      acc *= sshape[static_cast<size_t>(i)];
    }
    std::vector<int> idx(static_cast<size_t>(nd), 0);
    int64_t soff = 0;
    for (size_t li = 0; li < dst.data.size(); ++li) {
      fn(dst.data[li], src.data[static_cast<size_t>(soff)]);
      for (int i = nd - 1; i >= 0; --i) {
        idx[static_cast<size_t>(i)]++;
        soff += sstride[static_cast<size_t>(i)];
        if (idx[static_cast<size_t>(i)] < dst.shape[static_cast<size_t>(i)]) break;
        soff -= sstride[static_cast<size_t>(i)] * dst.shape[static_cast<size_t>(i)];
        idx[static_cast<size_t>(i)] = 0;
      }
    }
  }

  // Reduce src (shaped like dst's broadcast) back into grad of the small side.
  static void broadcast_reduce(const std::vector<float>& big, const std::vector<int>& big_shape,
                               std::vector<float>& small, const std::vector<int>& small_shape) {
    if (big_shape == small_shape) {
      for (size_t i = 0; i < big.size(); ++i) small[i] += big[i];
      return;
    }
    int nd = static_cast<int>(big_shape.size());
    std::vector<int> sshape(static_cast<size_t>(nd), 1);
    int snd = static_cast<int>(small_shape.size());
    for (int i = 0; i < snd; ++i) sshape[static_cast<size_t>(nd - snd + i)] = small_shape[static_cast<size_t>(i)];
    std::vector<int64_t> sstride(static_cast<size_t>(nd), 0);
    int64_t acc = 1;
    for (int i = nd - 1; i >= 0; --i) {
      sstride[static_cast<size_t>(i)] = sshape[static_cast<size_t>(i)] == 1 ? 0 : acc;
      acc *= sshape[static_cast<size_t>(i)];
    }
    std::vector<int> idx(static_cast<size_t>(nd), 0);
    int64_t soff = 0;
    for (size_t li = 0; li < big.size(); ++li) {
      small[static_cast<size_t>(soff)] += big[li];
      for (int i = nd - 1; i >= 0; --i) {
        idx[static_cast<size_t>(i)]++;
        soff += sstride[static_cast<size_t>(i)];
        if (idx[static_cast<size_t>(i)] < big_shape[static_cast<size_t>(i)]) break;
        soff -= sstride[static_cast<size_t>(i)] * big_shape[static_cast<size_t>(i)];
        idx[static_cast<size_t>(i)] = 0;
      }
    }
  }

  void step_back(Node& n) {
    const std::vector<float>& gy = n.grad;
    switch (n.op) {
      case Op::kLeaf: {
        n.param->ensure_grad();
        for (size_t i = 0; i < gy.size(); ++i) n.param->grad[i] += gy[i] * leaf_grad_scale_;
        break;
      }
      case Op::kInput:
        break;
      case Op::kEmbed: {
        Node& tn = nodes_[static_cast<size_t>(n.in[0])];
        if (!tn.needs_grad) break;
        std::vector<float>& gt = grad_of(n.in[0]);
        int d = tn.out.shape[1];
        for (size_t r = 0; r < n.ids.size(); ++r) {
          float* dst = gt.data() + static_cast<size_t>(n.ids[r]) * d;
          const float* src = gy.data() + r * static_cast<size_t>(d);
          for (int i = 0; i < d; ++i) dst[i] += src[i];
        }
        break;
      }
      case Op::kMatmul: {
        Node& na = nodes_[static_cast<size_t>(n.in[0])];
        Node& nb = nodes_[static_cast<size_t>(n.in[1])];
        const Tensor& a = na.out;
        const Tensor& b = nb.out;
        if (a.ndim() == 2) {
          if (na.needs_grad) gemm(gy.data(), b.data.data(), grad_of(n.in[0]).data(), a.shape[0], b.shape[1], a.shape[1], false, true, true);
          if (nb.needs_grad) gemm(a.data.data(), gy.data(), grad_of(n.in[1]).data(), a.shape[1], a.shape[0], b.shape[1], true, false, true);
        } else if (b.ndim() == 2) {
          int m = a.shape[0] * a.shape[1];
          if (na.needs_grad) gemm(gy.data(), b.data.data(), grad_of(n.in[0]).data(), m, b.shape[1], a.shape[2], false, true, true);
          if (nb.needs_grad) gemm(a.data.data(), gy.data(), grad_of(n.in[1]).data(), a.shape[2], m, b.shape[1], true, false, true);
        } else {
          int B = a.shape[0], m = a.shape[1], k = a.shape[2], p = b.shape[2];
          for (int i = 0; i < B; ++i) {
            const float* ai = a.data.data() + static_cast<size_t>(i) * m * k;
            const float* bi = b.data.data() + static_cast<size_t>(i) * k * p;
            const float* gi = gy.data() + static_cast<size_t>(i) * m * p;
            if (na.needs_grad) gemm(gi, bi, grad_of(n.in[0]).data() + static_cast<size_t>(i) * m * k, m, p, k, false, true, true);
            if (nb.needs_grad) gemm(ai, gi, grad_of(n.in[1]).data() + static_cast<size_t>(i) * k * p, k, m, p, true, false, true);
          }
        }
        break;
      }
      case Op::kTransposeLast2: {
        Node& na = nodes_[static_cast<size_t>(n.in[0])];
        if (!na.needs_grad) break;
        std::vector<float>& ga = grad_of(n.in[0]);
        int r = n.out.shape[n.out.ndim() - 2], c = n.out.shape[n.out.ndim() - 1];
        int64_t mats = n.out.numel() / (static_cast<int64_t>(r) * c);
        for (int64_t m = 0; m < mats; ++m) {
          const float* src = gy.data() + m * r * c;
          float* dst = ga.data() + m * r * c;
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) dst[static_cast<size_t>(j) * r + i] += src[static_cast<size_t>(i) * c + j];
        }
        break;
      }
      case Op::kAdd: {
        Node& na = nodes_[static_cast<size_t>(n.in[0])];
        Node& nb = nodes_[static_cast<size_t>(n.in[1])];
        if (na.needs_grad) {
          std::vector<float>& ga = grad_of(n.in[0]);
          for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
        }
        if (nb.needs_grad) broadcast_reduce(gy, n.out.shape, grad_of(n.in[1]), nb.out.shape);
        break;
      }
      case Op::kMul: {
        Node& na = nodes_[static_cast<size_t>(n.in[0])];
        Node& nb = nodes_[static_cast<size_t>(n.in[1])];
        if (na.needs_grad) {
          std::vector<float>& ga = grad_of(n.in[0]);
          const auto& b = nb.out.data;
          for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * b[i];
        }
        if (nb.needs_grad) {
          std::vector<float>& gb = grad_of(n.in[1]);
          const auto& a = na.out.data;
          for (size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * a[i];
        }
        break;
      }
      case Op::kScale: {
        if (!nodes_[static_cast<size_t>(n.in[0])].needs_grad) break;
        std::vector<float>& ga = grad_of(n.in[0]);
        for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * n.scalar;
        break;
      }
      case Op::kRelu: {
        if (!nodes_[static_cast<size_t>(n.in[0])].needs_grad) break;
        std::vector<float>& ga = grad_of(n.in[0]);
        const auto& x = nodes_[static_cast<size_t>(n.in[0])].out.data;
        for (size_t i = 0; i < gy.size(); ++i)
          if (x[i] > 0.0f) ga[i] += gy[i];
        break;
      }
      case Op::kSoftmaxLast: {
        if (!nodes_[static_cast<size_t>(n.in[0])].needs_grad) break;
        std::vector<float>& ga = grad_of(n.in[0]);
        int d = n.out.shape.back();
        int64_t rows = rows_of(n.out);
        for (int64_t r = 0; r < rows; ++r) {
          const float* y = n.out.data.data() + r * d;
          const float* dy = gy.data() + r * d;
          double dot = 0.0;
          for (int i = 0; i < d; ++i) dot += static_cast<double>(dy[i]) * y[i];
          float* g = ga.data() + r * d;
          for (int i = 0; i < d; ++i) g[i] += y[i] * (dy[i] - static_cast<float>(dot));
        }
        break;
      }
      case Op::kLayerNormLast: {
        Node& nx = nodes_[static_cast<size_t>(n.in[0])];
        Node& ng = nodes_[static_cast<size_t>(n.in[1])];
        Node& nb = nodes_[static_cast<size_t>(n.in[2])];
        int d = n.out.shape.back();
        int64_t rows = rows_of(n.out);
        const auto& gain = ng.out.data;
        for (int64_t r = 0; r < rows; ++r) {
          const float* dy = gy.data() + r * d;
          const float* xh = n.aux1.data() + r * d;
          float inv = n.aux2[static_cast<size_t>(r)];
          if (ng.needs_grad) {
            std::vector<float>& gg = grad_of(n.in[1]);
            for (int i = 0; i < d; ++i) gg[static_cast<size_t>(i)] += dy[i] * xh[i];
          }
          if (nb.needs_grad) {
            std::vector<float>& gb = grad_of(n.in[2]);
            for (int i = 0; i < d; ++i) gb[static_cast<size_t>(i)] += dy[i];
          }
          if (nx.needs_grad) {
            std::vector<float>& gx = grad_of(n.in[0]);
            double m1 = 0.0, m2 = 0.0;
            for (int i = 0; i < d; ++i) {
              double dxh = static_cast<double>(dy[i]) * gain[static_cast<size_t>(i)];
              m1 += dxh;
              m2 += dxh * xh[i];
            }
            m1 /= d;
            m2 /= d;
            float* g = gx.data() + r * d;
            for (int i = 0; i < d; ++i) {
              double dxh = static_cast<double>(dy[i]) * gain[static_cast<size_t>(i)];
              g[i] += static_cast<float>(inv * (dxh - m1 - xh[i] * m2));
            }
          }
        }
        break;
      }
      case Op::kSliceLast: {
        if (!nodes_[static_cast<size_t>(n.in[0])].needs_grad) break;
        std::vector<float>& ga = grad_of(n.in[0]);
        int d = nodes_[static_cast<size_t>(n.in[0])].out.shape.back();
        int64_t rows = rows_of(n.out);
        for (int64_t r = 0; r < rows; ++r) {
          const float* src = gy.data() + r * n.len;
          float* dst = ga.data() + r * d + n.start;
          for (int i = 0; i < n.len; ++i) dst[i] += src[i];
        }
        break;
      }
      case Op::kConcatLast: {
        int d = n.out.shape.back();
        int64_t rows = rows_of(n.out);
        int off = 0;
        for (int src : n.in) {
          Node& ns = nodes_[static_cast<size_t>(src)];
          int da = ns.out.shape.back();
          if (ns.needs_grad) {
            std::vector<float>& gs = grad_of(src);
            for (int64_t r = 0; r < rows; ++r) {
              const float* s = gy.data() + r * d + off;
              float* dst = gs.data() + r * da;
              for (int i = 0; i < da; ++i) dst[i] += s[i];
            }
          }
          off += da;
        }
        break;
      }
      case Op::kReshape: {
        if (!nodes_[static_cast<size_t>(n.in[0])].needs_grad) break;
        std::vector<float>& ga = grad_of(n.in[0]);
        for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
        break;
      }
      case Op::kCrossEntropy: {
        if (!nodes_[static_cast<size_t>(n.in[0])].needs_grad) break;
        std::vector<float>& gl = grad_of(n.in[0]);
        const Tensor& lg = nodes_[static_cast<size_t>(n.in[0])].out;
        int V = lg.shape[1];
        int64_t N = lg.shape[0];
        int count = 0;
        for (char a : n.active) count += a ? 1 : 0;
        float s = gy[0] / static_cast<float>(count);
        for (int64_t r = 0; r < N; ++r) {
          if (!n.active[static_cast<size_t>(r)]) continue;
          const float* p = n.aux1.data() + r * V;
          float* g = gl.data() + r * V;
          for (int i = 0; i < V; ++i) g[i] += p[i] * s;
          g[n.ids[static_cast<size_t>(r)]] -= s;
        }
        break;
      }
      case Op::kMean: {
        if (!nodes_[static_cast<size_t>(n.in[0])].needs_grad) break;
        std::vector<float>& ga = grad_of(n.in[0]);
        float s = gy[0] / static_cast<float>(ga.size());
        for (float& v : ga) v += s;
        break;
      }
      case Op::kSum: {
        if (!nodes_[static_cast<size_t>(n.in[0])].needs_grad) break;
        std::vector<float>& ga = grad_of(n.in[0]);
        for (float& v : ga) v += gy[0];
        break;
      }
    }
  }
};

}  // namespace ckl
