#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "dexined/tensor.hpp"

namespace dexined {

// Handle to a value recorded on a Tape.
struct Var {
  static constexpr std::size_t kInvalid = std::numeric_limits<std::size_t>::max();
  std::size_t id = kInvalid;
  bool valid() const { return id != kInvalid; }
};

template <typename Real>
struct Parameter {
  std::string name;
  Tensor<Real> value;
  Tensor<Real> grad;
  bool trainable = true;
  // Set by Tape::backward, cleared by zero_grad / the optimizer.
  bool has_grad = false;
};

// Named parameters in insertion order. Addresses are stable.
template <typename Real>
class ParameterStore {
 public:
  Parameter<Real>& add(std::string name, Tensor<Real> value, bool trainable = true);
  Parameter<Real>* find(std::string_view name);
  const Parameter<Real>* find(std::string_view name) const;
  Parameter<Real>& get(std::string_view name);
  const Parameter<Real>& get(std::string_view name) const;

  std::size_t size() const { return params_.size(); }
  Parameter<Real>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<Real>& operator[](std::size_t i) const { return *params_[i]; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad();
  std::size_t scalar_count(bool trainable_only = true) const;

 private:
  std::vector<std::unique_ptr<Parameter<Real>>> params_;
};

// Reverse-mode tape. Nodes are appended in evaluation order, so the node
// vector is already a topological order; backward walks it in reverse.
template <typename Real>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor<Real> value);
  // Constant that needs a gradient (for input-gradient checks).
  Var variable(Tensor<Real> value);
  // References the parameter's value without copying.
  Var parameter(Parameter<Real>& param);

  Var record(Tensor<Real> value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(Tensor<Real> value, const std::vector<Var>& inputs, BackwardFn backward);

  const Tensor<Real>& value(Var v) const;
  const Shape& shape(Var v) const { return value(v).shape(); }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  // Gradient slot, allocated (zero-filled) on first access.
  Tensor<Real>& grad(Var v);
  bool has_grad(Var v) const { return !nodes_.at(v.id).grad.empty(); }

  // Loss must be a scalar. Fails if any parameter on the tape still holds an
  // unconsumed gradient from an earlier backward.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Tensor<Real> owned;
    const Tensor<Real>* external = nullptr;
    Tensor<Real> grad;
    Parameter<Real>* param = nullptr;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
};

extern template class ParameterStore<float>;
extern template class ParameterStore<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace dexined
