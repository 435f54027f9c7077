#include "dexined/tape.hpp"

#include <unordered_set>

namespace dexined {

template <typename Real>
Parameter<Real>& ParameterStore<Real>::add(std::string name, Tensor<Real> value, bool trainable) {
  if (find(name) != nullptr) fail(ErrorKind::Argument, "duplicate parameter name '" + name + "'");
  auto p = std::make_unique<Parameter<Real>>();
  p->name = std::move(name);
  p->value = std::move(value);
  p->trainable = trainable;
  params_.push_back(std::move(p));
  return *params_.back();
}

template <typename Real>
Parameter<Real>* ParameterStore<Real>::find(std::string_view name) {
  for (auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

template <typename Real>
const Parameter<Real>* ParameterStore<Real>::find(std::string_view name) const {
  for (const auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

template <typename Real>
Parameter<Real>& ParameterStore<Real>::get(std::string_view name) {
  auto* p = find(name);
  if (p == nullptr) fail(ErrorKind::Argument, "unknown parameter '" + std::string(name) + "'");
  return *p;
}

template <typename Real>
const Parameter<Real>& ParameterStore<Real>::get(std::string_view name) const {
  const auto* p = find(name);
  if (p == nullptr) fail(ErrorKind::Argument, "unknown parameter '" + std::string(name) + "'");
  return *p;
}

template <typename Real>
void ParameterStore<Real>::zero_grad() {
  for (auto& p : params_) {
    p->has_grad = false;
    p->grad = Tensor<Real>();
  }
}

template <typename Real>
std::size_t ParameterStore<Real>::scalar_count(bool trainable_only) const {
  std::size_t total = 0;
  for (const auto& p : params_) {
    if (!trainable_only || p->trainable) total += p->value.size();
  }
  return total;
}

template <typename Real>
Var Tape<Real>::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

template <typename Real>
Var Tape<Real>::constant(Tensor<Real> value) {
  Node node;
  node.owned = std::move(value);
  return push(std::move(node));
}

template <typename Real>
Var Tape<Real>::variable(Tensor<Real> value) {
  Node node;
  node.owned = std::move(value);
  node.requires_grad = true;
  return push(std::move(node));
}

template <typename Real>
Var Tape<Real>::parameter(Parameter<Real>& param) {
  Node node;
  node.external = &param.value;
  node.param = &param;
  node.requires_grad = param.trainable;
  return push(std::move(node));
}

template <typename Real>
Var Tape<Real>::record(Tensor<Real> value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(std::move(value), std::vector<Var>(inputs), std::move(backward));
}

template <typename Real>
Var Tape<Real>::record(Tensor<Real> value, const std::vector<Var>& inputs, BackwardFn backward) {
  Node node;
  node.owned = std::move(value);
  for (Var in : inputs) {
    if (in.valid() && nodes_.at(in.id).requires_grad) node.requires_grad = true;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  return push(std::move(node));
}

template <typename Real>
const Tensor<Real>& Tape<Real>::value(Var v) const {
  const Node& node = nodes_.at(v.id);
  return node.external != nullptr ? *node.external : node.owned;
}

template <typename Real>
Tensor<Real>& Tape<Real>::grad(Var v) {
  Node& node = nodes_.at(v.id);
  if (node.grad.empty() && value(v).size() > 0) node.grad = Tensor<Real>(value(v).shape());
  return node.grad;
}

template <typename Real>
void Tape<Real>::backward(Var loss) {
  if (!loss.valid() || loss.id >= nodes_.size()) fail(ErrorKind::Argument, "backward: invalid loss handle");
  if (value(loss).size() != 1) {
    fail(ErrorKind::Argument, "backward: loss must be scalar, got shape " + value(loss).shape().str());
  }
  for (const Node& node : nodes_) {
    if (node.param != nullptr && node.param->trainable && node.param->has_grad) {
      fail(ErrorKind::Argument,
           "backward: gradient of '" + node.param->name + "' was not reset since the last backward");
    }
  }

  grad(loss)[0] = Real(1);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.backward || node.grad.empty()) continue;
    node.backward(*this, i);
  }

  // Parameters on the tape but off the loss path end with a zero gradient.
  std::unordered_set<Parameter<Real>*> seen;
  for (Node& node : nodes_) {
    if (node.param == nullptr || !node.param->trainable) continue;
    Parameter<Real>& p = *node.param;
    if (seen.insert(&p).second) {
      p.grad = Tensor<Real>(p.value.shape());
      p.has_grad = true;
    }
    if (!node.grad.empty()) p.grad.add_(node.grad);
  }
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace dexined
