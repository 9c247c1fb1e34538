#include "promptdoor/numkit/graph.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "promptdoor/error.hpp"
#include "promptdoor/rng.hpp"

namespace promptdoor::numkit {
namespace {

constexpr double kAlphaFloor = 1e-12;

const char* op_name(Op op) {
  switch (op) {
    case Op::kParam: return "param";
    case Op::kConstant: return "constant";
    case Op::kGather: return "gather";
    case Op::kMeanRows: return "mean_rows";
    case Op::kConcatRows: return "concat_rows";
    case Op::kConcatFlat: return "concat_flat";
    case Op::kAffine: return "affine";
    case Op::kSoftmax: return "softmax";
    case Op::kCrossEntropy: return "cross_entropy";
    case Op::kDot: return "dot";
    case Op::kScale: return "scale";
    case Op::kAdd: return "add";
    case Op::kGumbelMix: return "gumbel_mix";
  }
  return "?";
}

void add_into(Tensor2& dst, const Tensor2& src, double factor = 1.0) {
  auto d = dst.flat();
  auto s = src.flat();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * s[i];
}

}  // namespace

NodeId Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  forwarded_ = false;
  return NodeId{nodes_.size() - 1};
}

const Tensor2& Graph::val(NodeId id) const {
  const Node& n = nodes_[id.index];
  return n.op == Op::kParam ? n.param->value : n.value;
}

const Tensor2& Graph::value(NodeId id) const {
  require(id.index < nodes_.size(), ErrorKind::kInvalidArgument, "unknown node");
  const Node& n = nodes_[id.index];
  require(n.op == Op::kParam || n.op == Op::kConstant || forwarded_, ErrorKind::kState,
          "graph value read before forward()");
  return val(id);
}

double Graph::scalar(NodeId id) const {
  const Tensor2& v = value(id);
  require(v.size() == 1, ErrorKind::kInvalidArgument, "node is not a scalar");
  return v[0];
}

const std::vector<double>& Graph::mix_weights(NodeId id) const {
  require(id.index < nodes_.size() && nodes_[id.index].op == Op::kGumbelMix,
          ErrorKind::kInvalidArgument, "node is not a gumbel_mix");
  require(forwarded_, ErrorKind::kState, "mix weights read before forward()");
  return nodes_[id.index].weights;
}

NodeId Graph::param(Parameter& p) {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].op == Op::kParam && nodes_[i].param == &p) return NodeId{i};
  }
  if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) {
    p.grad = Tensor2(p.value.rows(), p.value.cols());
  }
  Node n;
  n.op = Op::kParam;
  n.param = &p;
  params_.push_back(&p);
  return push(std::move(n));
}

NodeId Graph::constant(Tensor2 value) {
  check_finite(value.flat(), "constant");
  Node n;
  n.op = Op::kConstant;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Graph::gather(NodeId table, std::span<const std::uint32_t> ids) {
  require(!ids.empty(), ErrorKind::kInvalidArgument, "gather with no ids");
  const Tensor2& t = val(table);
  for (auto id : ids) {
    require(id < t.rows(), ErrorKind::kInvalidArgument,
            "gather id " + std::to_string(id) + " out of range " + std::to_string(t.rows()));
  }
  Node n;
  n.op = Op::kGather;
  n.inputs = {table};
  n.ids.assign(ids.begin(), ids.end());
  n.value = Tensor2(ids.size(), t.cols());
  return push(std::move(n));
}

NodeId Graph::mean_rows(NodeId x) {
  const Tensor2& v = val(x);
  require(v.rows() > 0, ErrorKind::kInvalidArgument, "mean over zero rows");
  Node n;
  n.op = Op::kMeanRows;
  n.inputs = {x};
  n.value = Tensor2(1, v.cols());
  return push(std::move(n));
}

NodeId Graph::concat_rows(std::span<const NodeId> parts) {
  require(!parts.empty(), ErrorKind::kInvalidArgument, "concat of nothing");
  const std::size_t cols = val(parts[0]).cols();
  std::size_t rows = 0;
  for (auto p : parts) {
    require(val(p).cols() == cols, ErrorKind::kInvalidArgument, "concat_rows width mismatch");
    rows += val(p).rows();
  }
  Node n;
  n.op = Op::kConcatRows;
  n.inputs.assign(parts.begin(), parts.end());
  n.value = Tensor2(rows, cols);
  return push(std::move(n));
}

NodeId Graph::concat_flat(std::span<const NodeId> parts) {
  require(!parts.empty(), ErrorKind::kInvalidArgument, "concat of nothing");
  std::size_t total = 0;
  for (auto p : parts) total += val(p).size();
  Node n;
  n.op = Op::kConcatFlat;
  n.inputs.assign(parts.begin(), parts.end());
  n.value = Tensor2(1, total);
  return push(std::move(n));
}

NodeId Graph::affine(NodeId x, NodeId weight, NodeId bias) {
  const Tensor2& xv = val(x);
  const Tensor2& wv = val(weight);
  const Tensor2& bv = val(bias);
  require(xv.rows() == 1 && xv.cols() == wv.cols(), ErrorKind::kInvalidArgument,
          "affine input width mismatch");
  require(bv.rows() == 1 && bv.cols() == wv.rows(), ErrorKind::kInvalidArgument,
          "affine bias width mismatch");
  Node n;
  n.op = Op::kAffine;
  n.inputs = {x, weight, bias};
  n.value = Tensor2(1, wv.rows());
  return push(std::move(n));
}

NodeId Graph::softmax(NodeId logits) {
  const Tensor2& v = val(logits);
  require(v.rows() == 1 && v.cols() > 0, ErrorKind::kInvalidArgument, "softmax expects a row");
  Node n;
  n.op = Op::kSoftmax;
  n.inputs = {logits};
  n.value = Tensor2(1, v.cols());
  return push(std::move(n));
}

NodeId Graph::cross_entropy(NodeId logits, std::size_t label) {
  const Tensor2& v = val(logits);
  require(v.rows() == 1 && label < v.cols(), ErrorKind::kInvalidArgument,
          "cross_entropy label out of range");
  Node n;
  n.op = Op::kCrossEntropy;
  n.inputs = {logits};
  n.scalar = static_cast<double>(label);
  n.value = Tensor2(1, 1);
  return push(std::move(n));
}

NodeId Graph::dot(NodeId a, NodeId b) {
  require(val(a).size() == val(b).size(), ErrorKind::kInvalidArgument, "dot size mismatch");
  Node n;
  n.op = Op::kDot;
  n.inputs = {a, b};
  n.value = Tensor2(1, 1);
  return push(std::move(n));
}

NodeId Graph::scale(NodeId x, double factor) {
  require(std::isfinite(factor), ErrorKind::kNumericFault, "non-finite scale factor");
  Node n;
  n.op = Op::kScale;
  n.inputs = {x};
  n.scalar = factor;
  n.value = Tensor2(val(x).rows(), val(x).cols());
  return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
  require(val(a).same_shape(val(b)), ErrorKind::kInvalidArgument, "add shape mismatch");
  Node n;
  n.op = Op::kAdd;
  n.inputs = {a, b};
  n.value = Tensor2(val(a).rows(), val(a).cols());
  return push(std::move(n));
}

NodeId Graph::gumbel_mix(NodeId alpha, std::span<const NodeId> blocks, std::vector<double> noise,
                         double temperature, bool detach_weights) {
  const Tensor2& a = val(alpha);
  require(!blocks.empty(), ErrorKind::kInvalidArgument, "gumbel_mix with no blocks");
  require(a.rows() == 1 && a.cols() == blocks.size(), ErrorKind::kInvalidArgument,
          "gumbel_mix alpha/blocks count mismatch");
  require(noise.size() == blocks.size(), ErrorKind::kInvalidArgument,
          "gumbel_mix noise count mismatch");
  require(temperature > 0.0 && std::isfinite(temperature), ErrorKind::kInvalidArgument,
          "gumbel_mix temperature must be positive");
  check_finite(noise, "gumbel noise");
  const Tensor2& first = val(blocks[0]);
  for (auto b : blocks) {
    require(val(b).same_shape(first), ErrorKind::kInvalidArgument, "gumbel_mix block shape mismatch");
  }
  Node n;
  n.op = Op::kGumbelMix;
  n.inputs.push_back(alpha);
  n.inputs.insert(n.inputs.end(), blocks.begin(), blocks.end());
  n.aux = std::move(noise);
  n.scalar = temperature;
  n.detach = detach_weights;
  n.value = Tensor2(first.rows(), first.cols());
  return push(std::move(n));
}

void Graph::check(const Node& node, NodeId id) const {
  if (!node.value.all_finite()) {
    fail(ErrorKind::kNumericFault, std::string("non-finite output from ") + op_name(node.op) +
                                       " (node " + std::to_string(id.index) + ")");
  }
}

void Graph::eval(Node& n) {
  switch (n.op) {
    case Op::kParam:
    case Op::kConstant:
      return;
    case Op::kGather: {
      const Tensor2& t = val(n.inputs[0]);
      for (std::size_t r = 0; r < n.ids.size(); ++r) {
        auto src = t.row_span(n.ids[r]);
        std::copy(src.begin(), src.end(), n.value.row_span(r).begin());
      }
      return;
    }
    case Op::kMeanRows: {
      const Tensor2& x = val(n.inputs[0]);
      n.value.fill(0.0);
      for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < x.cols(); ++c) n.value[c] += x(r, c);
      }
      const double inv = 1.0 / static_cast<double>(x.rows());
      for (auto& v : n.value.flat()) v *= inv;
      return;
    }
    case Op::kConcatRows:
    case Op::kConcatFlat: {
      auto out = n.value.flat().begin();
      for (auto in : n.inputs) {
        auto src = val(in).flat();
        out = std::copy(src.begin(), src.end(), out);
      }
      return;
    }
    case Op::kAffine: {
      const Tensor2& x = val(n.inputs[0]);
      const Tensor2& w = val(n.inputs[1]);
      const Tensor2& b = val(n.inputs[2]);
      for (std::size_t o = 0; o < w.rows(); ++o) {
        n.value[o] = b[o] + numkit::dot(w.row_span(o), x.flat());
      }
      return;
    }
    case Op::kSoftmax: {
      auto p = numkit::softmax(val(n.inputs[0]).flat());
      std::copy(p.begin(), p.end(), n.value.flat().begin());
      return;
    }
    case Op::kCrossEntropy: {
      auto logits = val(n.inputs[0]).flat();
      check_finite(logits, "cross_entropy logits");
      const double peak = *std::max_element(logits.begin(), logits.end());
      double total = 0.0;
      for (double z : logits) total += std::exp(z - peak);
      const auto label = static_cast<std::size_t>(n.scalar);
      n.value[0] = -(logits[label] - peak - std::log(total));
      n.cache = numkit::softmax(logits);
      return;
    }
    case Op::kDot:
      n.value[0] = numkit::dot(val(n.inputs[0]).flat(), val(n.inputs[1]).flat());
      return;
    case Op::kScale: {
      auto src = val(n.inputs[0]).flat();
      for (std::size_t i = 0; i < src.size(); ++i) n.value[i] = n.scalar * src[i];
      return;
    }
    case Op::kAdd: {
      auto a = val(n.inputs[0]).flat();
      auto b = val(n.inputs[1]).flat();
      for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = a[i] + b[i];
      return;
    }
    case Op::kGumbelMix: {
      auto alpha = val(n.inputs[0]).flat();
      check_finite(alpha, "gumbel_mix alpha");
      const std::size_t k = alpha.size();
      std::vector<double> z(k);
      for (std::size_t i = 0; i < k; ++i) {
        z[i] = (std::log(std::max(alpha[i], kAlphaFloor)) + n.aux[i]) / n.scalar;
      }
      n.weights = numkit::softmax(z);
      n.value.fill(0.0);
      for (std::size_t i = 0; i < k; ++i) add_into(n.value, val(n.inputs[i + 1]), n.weights[i]);
      return;
    }
  }
}

void Graph::forward() {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (n.op == Op::kParam) {
      check_finite(n.param->value.flat(), n.param->name.c_str());
      continue;
    }
    eval(n);
    check(n, NodeId{i});
  }
  forwarded_ = true;
}

Tensor2* Graph::grad_target(NodeId id) {
  Node& n = nodes_[id.index];
  if (n.op == Op::kConstant) return nullptr;
  if (n.op == Op::kParam) return n.param->trainable ? &n.param->grad : nullptr;
  return &n.grad;
}

void Graph::propagate(Node& n) {
  const Tensor2& g = n.grad;
  switch (n.op) {
    case Op::kParam:
    case Op::kConstant:
      return;
    case Op::kGather: {
      Tensor2* dt = grad_target(n.inputs[0]);
      if (!dt) return;
      for (std::size_t r = 0; r < n.ids.size(); ++r) {
        auto dst = dt->row_span(n.ids[r]);
        auto src = g.row_span(r);
        for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
      }
      return;
    }
    case Op::kMeanRows: {
      Tensor2* dx = grad_target(n.inputs[0]);
      if (!dx) return;
      const double inv = 1.0 / static_cast<double>(dx->rows());
      for (std::size_t r = 0; r < dx->rows(); ++r) {
        for (std::size_t c = 0; c < dx->cols(); ++c) (*dx)(r, c) += g[c] * inv;
      }
      return;
    }
    case Op::kConcatRows:
    case Op::kConcatFlat: {
      std::size_t offset = 0;
      for (auto in : n.inputs) {
        const std::size_t len = val(in).size();
        if (Tensor2* d = grad_target(in)) {
          auto dst = d->flat();
          for (std::size_t i = 0; i < len; ++i) dst[i] += g[offset + i];
        }
        offset += len;
      }
      return;
    }
    case Op::kAffine: {
      const Tensor2& x = val(n.inputs[0]);
      const Tensor2& w = val(n.inputs[1]);
      if (Tensor2* dx = grad_target(n.inputs[0])) {
        for (std::size_t o = 0; o < w.rows(); ++o) {
          for (std::size_t i = 0; i < w.cols(); ++i) (*dx)[i] += g[o] * w(o, i);
        }
      }
      if (Tensor2* dw = grad_target(n.inputs[1])) {
        for (std::size_t o = 0; o < w.rows(); ++o) {
          for (std::size_t i = 0; i < w.cols(); ++i) (*dw)(o, i) += g[o] * x[i];
        }
      }
      if (Tensor2* db = grad_target(n.inputs[2])) add_into(*db, g);
      return;
    }
    case Op::kSoftmax: {
      Tensor2* dx = grad_target(n.inputs[0]);
      if (!dx) return;
      const auto& p = n.value;
      double inner = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) inner += p[i] * g[i];
      for (std::size_t i = 0; i < p.size(); ++i) (*dx)[i] += p[i] * (g[i] - inner);
      return;
    }
    case Op::kCrossEntropy: {
      Tensor2* dx = grad_target(n.inputs[0]);
      if (!dx) return;
      const auto label = static_cast<std::size_t>(n.scalar);
      for (std::size_t i = 0; i < n.cache.size(); ++i) {
        (*dx)[i] += g[0] * (n.cache[i] - (i == label ? 1.0 : 0.0));
      }
      return;
    }
    case Op::kDot: {
      const Tensor2& a = val(n.inputs[0]);
      const Tensor2& b = val(n.inputs[1]);
      if (Tensor2* da = grad_target(n.inputs[0])) add_into(*da, b, g[0]);
      if (Tensor2* db = grad_target(n.inputs[1])) add_into(*db, a, g[0]);
      return;
    }
    case Op::kScale:
      if (Tensor2* dx = grad_target(n.inputs[0])) add_into(*dx, g, n.scalar);
      return;
    case Op::kAdd:
      if (Tensor2* da = grad_target(n.inputs[0])) add_into(*da, g);
      if (Tensor2* db = grad_target(n.inputs[1])) add_into(*db, g);
      return;
    case Op::kGumbelMix: {
      const std::size_t k = n.weights.size();
      std::vector<double> dweight(k, 0.0);
      for (std::size_t i = 0; i < k; ++i) {
        const NodeId block = n.inputs[i + 1];
        if (Tensor2* db = grad_target(block)) add_into(*db, g, n.weights[i]);
        dweight[i] = numkit::dot(g.flat(), val(block).flat());
      }
      if (n.detach) return;
      Tensor2* dalpha = grad_target(n.inputs[0]);
      if (!dalpha) return;
      const auto alpha = val(n.inputs[0]).flat();
      double inner = 0.0;
      for (std::size_t i = 0; i < k; ++i) inner += n.weights[i] * dweight[i];
      for (std::size_t i = 0; i < k; ++i) {
        if (alpha[i] <= kAlphaFloor) continue;
        const double dz = n.weights[i] * (dweight[i] - inner);
        (*dalpha)[i] += dz / (n.scalar * alpha[i]);
      }
      return;
    }
  }
}

void Graph::backward(NodeId loss) {
  require(forwarded_, ErrorKind::kState, "backward() called before forward()");
  require(loss.index < nodes_.size(), ErrorKind::kInvalidArgument, "unknown loss node");
  require(nodes_[loss.index].value.size() == 1, ErrorKind::kInvalidArgument,
          "backward() needs a scalar loss");
  for (std::size_t i = 0; i <= loss.index; ++i) {
    Node& n = nodes_[i];
    if (n.op != Op::kParam && n.op != Op::kConstant) n.grad = Tensor2(n.value.rows(), n.value.cols());
  }
  nodes_[loss.index].grad[0] = 1.0;
  for (std::size_t i = loss.index + 1; i-- > 0;) {
    Node& n = nodes_[i];
    propagate(n);
  }
  for (Parameter* p : params_) {
    if (p->trainable && !p->grad.all_finite()) {
      fail(ErrorKind::kNumericFault, "non-finite gradient for " + p->name);
    }
  }
}

std::vector<Parameter*> Graph::trainable_parameters() const {
  std::vector<Parameter*> out;
  for (Parameter* p : params_) {
    if (p->trainable) out.push_back(p);
  }
  return out;
}

void Graph::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

double grad_check(Graph& graph, NodeId loss, std::size_t n_probes, double step, Rng& rng) {
  const auto trainable = graph.trainable_parameters();
  require(!trainable.empty(), ErrorKind::kPrecondition, "grad_check needs a trainable parameter");
  require(step > 0.0, ErrorKind::kInvalidArgument, "grad_check step must be positive");

  graph.zero_grad();
  graph.forward();
  graph.backward(loss);

  double worst = 0.0;
  for (std::size_t probe = 0; probe < n_probes; ++probe) {
    Parameter* p = trainable[rng.below(trainable.size())];
    const std::size_t idx = rng.below(p->value.size());
    const double analytic = p->grad[idx];
    const double saved = p->value[idx];

    p->value[idx] = saved + step;
    graph.forward();
    const double plus = graph.scalar(loss);
    p->value[idx] = saved - step;
    graph.forward();
    const double minus = graph.scalar(loss);
    p->value[idx] = saved;

    const double numeric = (plus - minus) / (2.0 * step);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  }
  graph.forward();
  return worst;
}

}  // namespace promptdoor::numkit
