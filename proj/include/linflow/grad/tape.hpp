#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "linflow/core/dense_array.hpp"

namespace linflow {

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const DenseArray<T>& value() const { return tape_->value(*this); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape_->requires_grad(*this); }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode tape. Values live in slots; an operation whose inputs all
/// lack requires_grad produces a constant slot and records no node, so
/// frozen computations never appear in the backward sweep.
template <typename T>
class Tape {
 public:
  using Array = DenseArray<T>;

  struct Node;
  /// Receives the gradient of the node output and must accumulate into the
  /// node inputs via Tape::accumulate.
  using Rule = std::function<void(Tape&, const Node&, const Array& grad_out)>;

  struct Node {
    std::string name;
    std::vector<std::size_t> inputs;
    std::size_t output = 0;
    Rule rule;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Array value, bool requires_grad = false) {
    slots_.push_back(Slot{std::move(value), {}, requires_grad, false});
    return Var<T>(this, slots_.size() - 1);
  }
  Var<T> constant(Array value) { return leaf(std::move(value), false); }

  const Array& value(Var<T> v) const { return slot(v).value; }
  bool requires_grad(Var<T> v) const { return slot(v).requires_grad; }
  bool has_grad(Var<T> v) const { return slot(v).has_grad; }

  const Array& grad(Var<T> v) const {
    const Slot& s = slot(v);
    if (!s.has_grad) throw std::logic_error("Tape::grad: value has no gradient");
    return s.grad;
  }

  /// Records `out` as the result of an operation over `inputs`.
  Var<T> record(std::string name, Array out, std::initializer_list<Var<T>> inputs, Rule rule) {
    bool any = false;
    for (const auto& in : inputs) {
      check_owner(in);
      any = any || slots_[in.id()].requires_grad;
    }
    slots_.push_back(Slot{std::move(out), {}, any, false});
    const std::size_t out_id = slots_.size() - 1;
    if (any) {
      Node node;
      node.name = std::move(name);
      node.output = out_id;
      node.rule = std::move(rule);
      node.inputs.reserve(inputs.size());
      for (const auto& in : inputs) node.inputs.push_back(in.id());
      nodes_.push_back(std::move(node));
    }
    return Var<T>(this, out_id);
  }

  /// Adds `g` into the gradient of slot `id` if that slot requires one.
  void accumulate(std::size_t id, const Array& g) {
    Slot& s = slots_.at(id);
    if (!s.requires_grad) return;
    if (g.shape() != s.value.shape()) {
      throw ShapeError("Tape::accumulate: gradient " + shape_str(g.shape()) + " for value " +
                       shape_str(s.value.shape()));
    }
    if (!s.has_grad) {
      s.grad = g;
      s.has_grad = true;
      return;
    }
    T* dst = s.grad.data();
    const T* src = g.data();
    for (std::size_t i = 0; i < g.numel(); ++i) dst[i] += src[i];
  }
  void accumulate(std::size_t id, Array&& g) {
    Slot& s = slots_.at(id);
    if (s.requires_grad && !s.has_grad && g.shape() == s.value.shape()) {
      s.grad = std::move(g);
      s.has_grad = true;
      return;
    }
    accumulate(id, static_cast<const Array&>(g));
  }

  /// Seeds d(loss)/d(loss) = 1 and sweeps every recorded node once, newest first.
  void backward(Var<T> loss) {
    check_owner(loss);
    Slot& ls = slots_[loss.id()];
    if (ls.value.numel() != 1) {
      throw ShapeError("Tape::backward: loss must be a single element, got " +
                       shape_str(ls.value.shape()));
    }
    if (!ls.requires_grad) return;
    accumulate(loss.id(), Array(ls.value.shape(), T(1)));
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Slot& out = slots_[it->output];
      if (!out.has_grad) {
        out.grad = Array(out.value.shape(), T(0));
        out.has_grad = true;
      }
      // The rule may accumulate into earlier slots only, so `out` stays put.
      const Array g = std::move(out.grad);
      out.grad = Array();
      out.has_grad = false;
      it->rule(*this, *it, g);
      ++backward_calls_;
      if (it->output == loss.id() || keep_intermediate_grads_) {
        out.grad = g;
        out.has_grad = true;
      }
    }
  }

  /// Keep gradients of non-leaf values after backward (off by default to save memory).
  void keep_intermediate_grads(bool keep) { keep_intermediate_grads_ = keep; }

  std::size_t num_ops() const noexcept { return nodes_.size(); }
  std::size_t num_values() const noexcept { return slots_.size(); }
  std::size_t backward_calls() const noexcept { return backward_calls_; }
  const std::vector<Node>& nodes() const noexcept { return nodes_; }

  const Array& slot_value(std::size_t id) const { return slots_.at(id).value; }
  bool slot_requires_grad(std::size_t id) const { return slots_.at(id).requires_grad; }

 private:
  struct Slot {
    Array value;
    Array grad;
    bool requires_grad = false;
    bool has_grad = false;
  };

  const Slot& slot(Var<T> v) const {
    check_owner(v);
    return slots_[v.id()];
  }
  void check_owner(Var<T> v) const {
    if (!v.valid() || &v.tape() != this || v.id() >= slots_.size()) {
      throw std::logic_error("Tape: variable does not belong to this tape");
    }
  }

  std::vector<Slot> slots_;
  std::vector<Node> nodes_;
  std::size_t backward_calls_ = 0;
  bool keep_intermediate_grads_ = false;
};

}  // namespace linflow
