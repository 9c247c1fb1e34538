#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "promptdoor/numkit/tensor.hpp"

namespace promptdoor {
class Rng;
}

namespace promptdoor::numkit {

// A named tensor with a gradient buffer of the same shape. Frozen parameters
// (trainable == false) are read by graphs but never receive gradient.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name_, Tensor2 value_, bool trainable_ = true)
      : name(std::move(name_)), value(std::move(value_)),
        grad(value.rows(), value.cols()), trainable(trainable_) {}

  void zero_grad() { grad.fill(0.0); }

  std::string name;
  Tensor2 value;
  Tensor2 grad;
  bool trainable = true;
};

struct NodeId {
  std::size_t index = 0;
  friend bool operator==(NodeId, NodeId) = default;
};

enum class Op : std::uint8_t {
  kParam,
  kConstant,
  kGather,
  kMeanRows,
  kConcatRows,
  kConcatFlat,
  kAffine,
  kSoftmax,
  kCrossEntropy,
  kDot,
  kScale,
  kAdd,
  kGumbelMix,
};

// Reverse-mode graph over a fixed set of primitive ops. Nodes are declared in
// topological order; forward() evaluates them in that order and backward()
// walks them in exact reverse. Parameter values are read in place, so a
// forward() after mutating a parameter re-evaluates against the new value.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  NodeId param(Parameter& p);
  NodeId constant(Tensor2 value);

  // Rows of `table` selected by `ids`, in order.
  NodeId gather(NodeId table, std::span<const std::uint32_t> ids);
  // 1 x cols mean over all rows.
  NodeId mean_rows(NodeId x);
  // Stacks equal-width blocks vertically.
  NodeId concat_rows(std::span<const NodeId> parts);
  // Flattens every part and joins them into one 1 x n row.
  NodeId concat_flat(std::span<const NodeId> parts);
  // x (1 x in) times weight^T (out x in) plus bias (1 x out).
  NodeId affine(NodeId x, NodeId weight, NodeId bias);
  NodeId softmax(NodeId logits);
  // -log softmax(logits)[label], fused for stability. Returns 1 x 1.
  NodeId cross_entropy(NodeId logits, std::size_t label);
  // Flat inner product of two equal-size tensors. Returns 1 x 1.
  NodeId dot(NodeId a, NodeId b);
  NodeId scale(NodeId x, double factor);
  NodeId add(NodeId a, NodeId b);
  // Gumbel-softmax mixture: weights = softmax((log max(alpha, 1e-12) + noise) / t),
  // output = sum_i weights_i * blocks_i. With detach_weights the weights are
  // treated as constants in backward.
  NodeId gumbel_mix(NodeId alpha, std::span<const NodeId> blocks, std::vector<double> noise,
                    double temperature, bool detach_weights = false);

  void forward();
  // Accumulates d(loss)/d(param) into every trainable parameter reached.
  // Requires a prior forward() and a 1 x 1 loss node.
  void backward(NodeId loss);

  const Tensor2& value(NodeId id) const;
  double scalar(NodeId id) const;
  // Relaxed weights computed by a gumbel_mix node on the last forward().
  const std::vector<double>& mix_weights(NodeId id) const;

  // Distinct parameters in registration order.
  const std::vector<Parameter*>& parameters() const noexcept { return params_; }
  std::vector<Parameter*> trainable_parameters() const;
  void zero_grad();

  std::size_t node_count() const noexcept { return nodes_.size(); }
  Op op(NodeId id) const { return nodes_.at(id.index).op; }
  bool forwarded() const noexcept { return forwarded_; }

 private:
  struct Node {
    Op op = Op::kConstant;
    std::vector<NodeId> inputs;
    Tensor2 value;
    Tensor2 grad;
    Parameter* param = nullptr;
    std::vector<std::uint32_t> ids;
    std::vector<double> aux;      // gumbel noise
    std::vector<double> weights;  // gumbel relaxed weights
    std::vector<double> cache;    // softmax probabilities for cross-entropy
    double scalar = 0.0;          // scale factor / temperature / label
    bool detach = false;
  };

  NodeId push(Node node);
  const Tensor2& val(NodeId id) const;
  Tensor2* grad_target(NodeId id);
  void eval(Node& node);
  void propagate(Node& node);
  void check(const Node& node, NodeId id) const;

  std::vector<Node> nodes_;
  std::vector<Parameter*> params_;
  bool forwarded_ = false;
};

// Compares analytic gradients of `loss` against central differences on
// `n_probes` randomly chosen trainable scalars. Returns the max relative
// error |a - f| / max(|a|, |f|, 1e-8). Parameter values are restored.
double grad_check(Graph& graph, NodeId loss, std::size_t n_probes, double step, Rng& rng);

}  // namespace promptdoor::numkit
