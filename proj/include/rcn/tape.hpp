#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rcn/tensor.hpp"

namespace rcn {

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
  bool valid() const { return id != std::numeric_limits<std::size_t>::max(); }
};

/// A trainable tensor and its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor4 value;
  Tensor4 grad;

  Parameter(std::string n, Tensor4 v) : name(std::move(n)), value(std::move(v)), grad(value.dims()) {}
  void zero_grad() { grad.fill(0.0); }
};

/// Records primitive ops during a forward pass and replays them in reverse.
///
/// Leaves are inputs (no gradient), constant references to externally owned
/// tensors, or Parameters whose `grad` receives accumulated gradients.
/// Referenced tensors must outlive the tape.
class Tape {
 public:
  Var input(Tensor4 value);
  Var constant(const Tensor4& value);
  Var parameter(Parameter& p);

  Var conv2d(Var x, Var kernels, Var bias);
  Var relu(Var x);
  Var maxpool(Var x, int size, int stride);
  Var upsample_tile(Var x, int factor);
  Var resize_bilinear(Var x, std::size_t out_h, std::size_t out_w);
  Var upsample_windows(Var x, int size, int stride, std::size_t out_h, std::size_t out_w);
  Var concat(Var a, Var b);
  Var weighted_sum(std::vector<Var> maps, Var alpha, std::vector<std::size_t> rows = {});
  Var softmax(Var pre_softmax);
  Var add(Var a, Var b);

  const Tensor4& value(Var v) const;
  /// Gradient accumulated at v by the last backward(); zero tensor if none.
  Tensor4 grad(Var v) const;

  /// Seeds d(output) = seed and propagates to every leaf that needs it.
  void backward(Var output, const Tensor4& seed);

  std::size_t size() const { return nodes_.size(); }
  std::string_view op(Var v) const { return nodes_.at(v.id).op; }
  /// Node ids of ops whose backward ran during the last backward(), in order.
  std::span<const std::size_t> visit_log() const { return visits_; }

  /// Smallest distance of any ReLU input from 0 and of any max-pool winner
  /// from its runner-up. Finite differences with a step well below this do
  /// not cross a kink.
  double kink_margin() const;

 private:
  struct Node {
    std::string_view op;
    Tensor4 owned;
    const Tensor4* ref = nullptr;
    Parameter* param = nullptr;
    bool needs_grad = false;
    Tensor4 grad;
    std::vector<std::size_t> inputs;
    std::function<void(Tape&, std::size_t)> backward;
    int size = 0;
    int stride = 0;
  };

  Var push(Node node);
  Var push_op(std::string_view op, Tensor4 value, std::vector<std::size_t> inputs,
              std::function<void(Tape&, std::size_t)> backward);
  const Tensor4& val(std::size_t id) const;
  bool wants(std::size_t id) const { return nodes_[id].needs_grad; }
  /// Gradient accumulator for node id, allocated on first use.
  Tensor4& acc(std::size_t id);
  const Tensor4& grad_of(std::size_t id) const { return nodes_[id].grad; }

  std::vector<Node> nodes_;
  std::vector<std::size_t> visits_;
};

}  // namespace rcn
