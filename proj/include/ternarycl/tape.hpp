// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ternarycl/tensor.hpp"

namespace ternarycl {

struct ParamId {
  std::uint32_t index = 0;
  bool operator==(const ParamId&) const = default;
};

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
};

/// Owns every trainable tensor of a model. Parameters are addressed by the
/// ParamId returned from add(); ids are dense and stable for the lifetime of
/// the store, and copies of a store keep the same ids.
template <typename T>
class ParameterStore {
 public:
  ParamId add(std::string name, Tensor<T> value);

  Parameter<T>& operator[](ParamId id) { return params_.at(id.index); }
  const Parameter<T>& operator[](ParamId id) const { return params_.at(id.index); }

  std::size_t size() const { return params_.size(); }
  std::vector<Parameter<T>>& all() { return params_; }
  const std::vector<Parameter<T>>& all() const { return params_; }

  std::optional<ParamId> find(const std::string& name) const;
  std::size_t total_elements() const;

 private:
  std::vector<Parameter<T>> params_;
};

/// One dense gradient buffer per parameter of a store, zero-initialised
/// with the parameter's shape.
template <typename T>
class Gradients {
 public:
  explicit Gradients(const ParameterStore<T>& store);

  Tensor<T>& operator[](ParamId id) { return grads_.at(id.index); }
  const Tensor<T>& operator[](ParamId id) const { return grads_.at(id.index); }
  std::size_t size() const { return grads_.size(); }

  void zero();
  void add_(const Gradients& other);
  void scale_(T factor);

 private:
  std::vector<Tensor<T>> grads_;
};

struct NodeRef {
  std::uint32_t index = 0;
};

/// Records a DAG of tensor operations for one forward pass and replays it in
/// reverse to accumulate gradients. Nodes are appended in execution order,
/// so inputs always precede their consumers. A tape is single-threaded and
/// reads parameter values from the store it was built against; the store
/// must outlive the tape and stay unmodified while it is in use.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, NodeRef self)>;

  explicit Tape(const ParameterStore<T>& store) : store_(&store) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  NodeRef constant(Tensor<T> value);
  /// Leaf bound to a parameter; repeated calls return the same node.
  NodeRef param(ParamId id);
  NodeRef record(Tensor<T> value, BackwardFn backward);

  const Tensor<T>& value(NodeRef node) const;
  const Shape& shape(NodeRef node) const { return value(node).shape(); }
  T scalar(NodeRef node) const;

  /// Gradient buffer of a node. Only valid inside or after backward().
  Tensor<T>& grad(NodeRef node);
  /// Gradient of a node after backward(); nullopt when the node was not
  /// reached from the loss.
  std::optional<Tensor<T>> grad_of(NodeRef node) const;

  /// Reverse pass from a scalar-shaped loss. Parameter gradients are added
  /// into `grads`; gradients of intermediate nodes stay inspectable through
  /// grad_of().
  void backward(NodeRef loss, Gradients<T>& grads);

  std::size_t size() const { return nodes_.size(); }
  const ParameterStore<T>& store() const { return *store_; }

  /// Fingerprint of every recorded ReLU on/off decision. Finite-difference
  /// checks compare it across perturbations to skip kink crossings.
  std::uint64_t activation_signature() const { return signature_; }
  void mix_signature(std::uint64_t bits);

 private:
  struct Node {
    Tensor<T> owned;
    std::optional<ParamId> param;
    BackwardFn backward;
  };

  const ParameterStore<T>* store_;
  std::vector<Node> nodes_;
  std::vector<std::int64_t> param_nodes_;  // ParamId -> node index, -1 when unbound
  std::vector<Tensor<T>> grads_;
  std::vector<Tensor<T>*> grad_targets_;
  bool in_backward_ = false;
  bool done_backward_ = false;
  std::uint64_t signature_ = 0xcbf29ce484222325ULL;
};

}  // namespace ternarycl
