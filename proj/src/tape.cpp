#include "rcn/tape.hpp"

#include <algorithm>
#include <cmath>

#include "rcn/error.hpp"
#include "rcn/ops.hpp"

namespace rcn {

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Var Tape::push_op(std::string_view op, Tensor4 value, std::vector<std::size_t> inputs,
                  std::function<void(Tape&, std::size_t)> backward) {
  Node n;
  n.op = op;
  n.owned = std::move(value);
  n.needs_grad = std::any_of(inputs.begin(), inputs.end(), [this](std::size_t i) { return wants(i); });
  n.inputs = std::move(inputs);
  n.backward = std::move(backward);
  return push(std::move(n));
}

const Tensor4& Tape::val(std::size_t id) const {
  const Node& n = nodes_[id];
  if (n.param) return n.param->value;
  return n.ref ? *n.ref : n.owned;
}

const Tensor4& Tape::value(Var v) const {
  if (v.id >= nodes_.size()) throw ShapeError("tape: invalid variable");
  return val(v.id);
}

Tensor4& Tape::acc(std::size_t id) {
  Node& n = nodes_[id];
  if (n.param) return n.param->grad;
  if (n.grad.empty() && val(id).size() > 0) n.grad = Tensor4(val(id).dims());
  return n.grad;
}

Tensor4 Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.param) return n.param->grad;
  if (n.grad.empty()) return Tensor4(val(v.id).dims());
  return n.grad;
}

Var Tape::input(Tensor4 value) {
  Node n;
  n.op = "input";
  n.owned = std::move(value);
  return push(std::move(n));
}

Var Tape::constant(const Tensor4& value) {
  Node n;
  n.op = "constant";
  n.ref = &value;
  return push(std::move(n));
}

Var Tape::parameter(Parameter& p) {
  if (p.grad.dims() != p.value.dims()) p.grad = Tensor4(p.value.dims());
  Node n;
  n.op = "parameter";
  n.param = &p;
  n.needs_grad = true;
  return push(std::move(n));
}

Var Tape::conv2d(Var x, Var kernels, Var bias) {
  const Tensor4& b = value(bias);
  Tensor4 y = ops::conv2d_same(value(x), value(kernels), b.data());
  return push_op("conv2d", std::move(y), {x.id, kernels.id, bias.id}, [](Tape& t, std::size_t self) {
    const auto& in = t.nodes_[self].inputs;
    Tensor4* dx = t.wants(in[0]) ? &t.acc(in[0]) : nullptr;
    Tensor4* dk = t.wants(in[1]) ? &t.acc(in[1]) : nullptr;
    std::span<double> db = t.wants(in[2]) ? t.acc(in[2]).data() : std::span<double>{};
    ops::conv2d_same_backward(t.val(in[0]), t.val(in[1]), t.grad_of(self), dx, dk, db);
  });
}

Var Tape::relu(Var x) {
  return push_op("relu", ops::relu(value(x)), {x.id}, [](Tape& t, std::size_t self) {
    const std::size_t in = t.nodes_[self].inputs[0];
    ops::relu_backward(t.val(in), t.grad_of(self), t.acc(in));
  });
}

Var Tape::maxpool(Var x, int size, int stride) {
  ops::Pooled p = ops::maxpool(value(x), size, stride);
  Var v = push_op("maxpool", std::move(p.output), {x.id},
                  [argmax = std::move(p.argmax)](Tape& t, std::size_t self) {
                    const std::size_t in = t.nodes_[self].inputs[0];
                    ops::maxpool_backward(t.grad_of(self), argmax, t.acc(in));
                  });
  nodes_[v.id].size = size;
  nodes_[v.id].stride = stride;
  return v;
}

Var Tape::upsample_tile(Var x, int factor) {
  return push_op("upsample_tile", ops::upsample_tile(value(x), factor), {x.id},
                 [factor](Tape& t, std::size_t self) {
                   const std::size_t in = t.nodes_[self].inputs[0];
                   ops::upsample_tile_backward(t.grad_of(self), factor, t.acc(in));
                 });
}

Var Tape::resize_bilinear(Var x, std::size_t out_h, std::size_t out_w) {
  return push_op("resize_bilinear", ops::resize_bilinear(value(x), out_h, out_w), {x.id},
                 [](Tape& t, std::size_t self) {
                   const std::size_t in = t.nodes_[self].inputs[0];
                   ops::resize_bilinear_backward(t.grad_of(self), t.acc(in));
                 });
}

Var Tape::upsample_windows(Var x, int size, int stride, std::size_t out_h, std::size_t out_w) {
  return push_op("upsample_windows", ops::upsample_windows(value(x), size, stride, out_h, out_w),
                 {x.id}, [size, stride](Tape& t, std::size_t self) {
                   const std::size_t in = t.nodes_[self].inputs[0];
                   ops::upsample_windows_backward(t.grad_of(self), size, stride, t.acc(in));
                 });
}

Var Tape::concat(Var a, Var b) {
  return push_op("concat", ops::concat_channels(value(a), value(b)), {a.id, b.id},
                 [](Tape& t, std::size_t self) {
                   const auto& in = t.nodes_[self].inputs;
                   Tensor4* da = t.wants(in[0]) ? &t.acc(in[0]) : nullptr;
                   Tensor4* db = t.wants(in[1]) ? &t.acc(in[1]) : nullptr;
                   if (!da && !db) return;
                   // Channel split is derived from a when only b wants a gradient.
                   Tensor4 scratch;
                   if (!da) {
                     scratch = Tensor4(t.val(in[0]).dims());
                     da = &scratch;
                   }
                   ops::concat_channels_backward(t.grad_of(self), da, db);
                 });
}

Var Tape::weighted_sum(std::vector<Var> maps, Var alpha, std::vector<std::size_t> rows) {
  std::vector<const Tensor4*> values;
  std::vector<std::size_t> inputs;
  for (Var m : maps) {
    values.push_back(&value(m));
    inputs.push_back(m.id);
  }
  inputs.push_back(alpha.id);
  Tensor4 out = ops::weighted_sum_maps(values, value(alpha), rows);
  return push_op("weighted_sum", std::move(out), std::move(inputs),
                 [rows = std::move(rows)](Tape& t, std::size_t self) {
                   const auto& in = t.nodes_[self].inputs;
                   const std::size_t branches = in.size() - 1;
                   std::vector<const Tensor4*> mv;
                   std::vector<Tensor4*> gm;
                   for (std::size_t b = 0; b < branches; ++b) {
                     mv.push_back(&t.val(in[b]));
                     gm.push_back(t.wants(in[b]) ? &t.acc(in[b]) : nullptr);
                   }
                   Tensor4* ga = t.wants(in.back()) ? &t.acc(in.back()) : nullptr;
                   ops::weighted_sum_maps_backward(mv, t.val(in.back()), rows, t.grad_of(self), gm, ga);
                 });
}

Var Tape::softmax(Var pre_softmax) {
  return push_op("softmax", ops::spatial_softmax(value(pre_softmax)), {pre_softmax.id},
                 [](Tape& t, std::size_t self) {
                   const std::size_t in = t.nodes_[self].inputs[0];
                   ops::spatial_softmax_backward(t.val(self), t.grad_of(self), t.acc(in));
                 });
}

Var Tape::add(Var a, Var b) {
  return push_op("add", ops::add(value(a), value(b)), {a.id, b.id}, [](Tape& t, std::size_t self) {
    for (std::size_t in : t.nodes_[self].inputs) {
      if (t.wants(in)) t.acc(in).add(t.grad_of(self));
    }
  });
}

void Tape::backward(Var output, const Tensor4& seed) {
  if (output.id >= nodes_.size()) throw ShapeError("backward: invalid variable");
  if (seed.dims() != val(output.id).dims()) {
    throw ShapeError("backward: seed " + seed.dims().str() + " for output " +
                     val(output.id).dims().str());
  }
  visits_.clear();
  for (Node& n : nodes_) {
    if (!n.param) n.grad = Tensor4();
  }
  if (!wants(output.id)) return;
  acc(output.id).add(seed);
  for (std::size_t i = output.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || !n.needs_grad || n.grad.empty()) continue;
    visits_.push_back(i);
    n.backward(*this, i);
  }
}

double Tape::kink_margin() const {
  double margin = std::numeric_limits<double>::infinity();
  for (const Node& n : nodes_) {
    if (n.op == "relu") {
      for (double v : val(n.inputs[0]).data()) margin = std::min(margin, std::abs(v));
    } else if (n.op == "maxpool") {
      const Tensor4& x = val(n.inputs[0]);
      const Dims& d = x.dims();
      const auto sz = static_cast<std::size_t>(n.size);
      const auto st = static_cast<std::size_t>(n.stride);
      const std::size_t oh = ops::pooled_extent(d.h, n.size, n.stride);
      const std::size_t ow = ops::pooled_extent(d.w, n.size, n.stride);
      for (std::size_t b = 0; b < d.n; ++b) {
        for (std::size_t c = 0; c < d.c; ++c) {
          for (std::size_t i = 0; i < oh; ++i) {
            for (std::size_t j = 0; j < ow; ++j) {
              double first = -std::numeric_limits<double>::infinity();
              double second = first;
              for (std::size_t di = 0; di < sz; ++di) {
                for (std::size_t dj = 0; dj < sz; ++dj) {
                  const double v = x(b, c, i * st + di, j * st + dj);
                  if (v > first) {
                    second = first;
                    first = v;
                  } else if (v > second) {
                    second = v;
                  }
                }
              }
              // A tie at exactly 0 is between ReLU-clamped cells, which stay
              // clamped while the ReLU margin above holds.
              if (sz * sz > 1 && !(first == 0.0 && second == 0.0)) margin = std::min(margin, first - second);
            }
          }
        }
      }
    }
  }
  return margin;
}

}  // namespace rcn
