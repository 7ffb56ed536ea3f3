// SPDX-License-Identifier: Apache-2.0

#include "ternarycl/tape.hpp"

#include <stdexcept>

namespace ternarycl {

template <typename T>
ParamId ParameterStore<T>::add(std::string name, Tensor<T> value) {
  if (find(name)) throw std::invalid_argument("parameter store: duplicate name " + name);
  params_.push_back(Parameter<T>{std::move(name), std::move(value)});
  return ParamId{static_cast<std::uint32_t>(params_.size() - 1)};
}

template <typename T>
std::optional<ParamId> ParameterStore<T>::find(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return ParamId{static_cast<std::uint32_t>(i)};
  }
  return std::nullopt;
}

template <typename T>
std::size_t ParameterStore<T>::total_elements() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
Gradients<T>::Gradients(const ParameterStore<T>& store) {
  grads_.reserve(store.size());
  for (const auto& p : store.all()) grads_.emplace_back(p.value.shape());
}

template <typename T>
void Gradients<T>::zero() {
  for (auto& g : grads_) g.fill(T{0});
}

template <typename T>
void Gradients<T>::add_(const Gradients& other) {
  if (other.grads_.size() != grads_.size()) throw std::invalid_argument("gradients: store size mismatch");
  for (std::size_t i = 0; i < grads_.size(); ++i) grads_[i].add_(other.grads_[i]);
}

template <typename T>
void Gradients<T>::scale_(T factor) {
  for (auto& g : grads_) {
    for (auto& x : g.data()) x *= factor;
  }
}

template <typename T>
NodeRef Tape<T>::constant(Tensor<T> value) {
  return record(std::move(value), nullptr);
}

template <typename T>
NodeRef Tape<T>::param(ParamId id) {
  if (id.index >= store_->size()) throw std::out_of_range("tape: unknown parameter id");
  if (param_nodes_.size() < store_->size()) param_nodes_.resize(store_->size(), -1);
  if (param_nodes_[id.index] >= 0) return NodeRef{static_cast<std::uint32_t>(param_nodes_[id.index])};
  nodes_.push_back(Node{Tensor<T>{}, id, nullptr});
  param_nodes_[id.index] = static_cast<std::int64_t>(nodes_.size() - 1);
  return NodeRef{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
NodeRef Tape<T>::record(Tensor<T> value, BackwardFn backward) {
  if (in_backward_ || done_backward_) throw std::logic_error("tape: cannot record after backward()");
  nodes_.push_back(Node{std::move(value), std::nullopt, std::move(backward)});
  return NodeRef{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
const Tensor<T>& Tape<T>::value(NodeRef node) const {
  const Node& n = nodes_.at(node.index);
  if (n.param) return (*store_)[*n.param].value;
  return n.owned;
}

template <typename T>
T Tape<T>::scalar(NodeRef node) const {
  const auto& v = value(node);
  if (v.size() != 1) throw ShapeError("scalar: node has shape " + shape_string(v.shape()));
  return v[0];
}

template <typename T>
Tensor<T>& Tape<T>::grad(NodeRef node) {
  if (!in_backward_ && !done_backward_) throw std::logic_error("tape: gradients requested before backward()");
  if (Tensor<T>* target = grad_targets_.at(node.index)) return *target;
  Tensor<T>& g = grads_[node.index];
  if (g.empty()) g = Tensor<T>(value(node).shape());
  return g;
}

template <typename T>
std::optional<Tensor<T>> Tape<T>::grad_of(NodeRef node) const {
  if (!done_backward_) return std::nullopt;
  if (const Tensor<T>* target = grad_targets_.at(node.index)) return *target;
  const Tensor<T>& g = grads_.at(node.index);
  if (g.empty()) return std::nullopt;
  return g;
}

template <typename T>
void Tape<T>::backward(NodeRef loss, Gradients<T>& grads) {
  if (done_backward_) throw std::logic_error("tape: backward() already ran");
  if (value(loss).size() != 1) {
    throw ShapeError("backward: loss must be scalar-shaped, got " + shape_string(value(loss).shape()));
  }
  if (grads.size() != store_->size()) throw std::invalid_argument("backward: gradients built for another store");

  grads_.assign(nodes_.size(), Tensor<T>{});
  grad_targets_.assign(nodes_.size(), nullptr);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].param) grad_targets_[i] = &grads[*nodes_[i].param];
  }
  in_backward_ = true;

  // parameter leaves write straight into `grads`; seed the loss separately
  // so that a loss which *is* a parameter still gets d(loss)/d(loss) = 1.
  grad(loss)[0] += T{1};
  for (std::int64_t i = loss.index; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.backward) continue;
    if (grads_[static_cast<std::size_t>(i)].empty()) continue;  // not reached from the loss
    n.backward(*this, NodeRef{static_cast<std::uint32_t>(i)});
  }
  in_backward_ = false;
  done_backward_ = true;
}

template <typename T>
void Tape<T>::mix_signature(std::uint64_t bits) {
  signature_ ^= bits;
  signature_ *= 0x100000001b3ULL;
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template class Gradients<float>;
template class Gradients<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace ternarycl
