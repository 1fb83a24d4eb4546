#include "deskbot/nn/graph.hpp"

#include <fmt/format.h>

#include "deskbot/error.hpp"

namespace deskbot::nn {

const Graph::Node& Graph::node(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw ContractViolation(fmt::format("invalid graph variable {}", v.id));
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

Graph::Node& Graph::node(Var v) {
  return const_cast<Node&>(static_cast<const Graph&>(*this).node(v));
}

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), nullptr, {}, false, false, {}});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Graph::param(const ParamStore& store, std::string_view name) {
  if (auto it = params_.find(name); it != params_.end()) return Var{it->second};
  nodes_.push_back(Node{{}, &store.at(name), {}, record_, false, {}});
  const int id = static_cast<int>(nodes_.size()) - 1;
  params_.emplace(std::string(name), id);
  return Var{id};
}

Var Graph::record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
  return record(std::move(value), std::vector<Var>(parents), std::move(fn));
}

Var Graph::record(Tensor value, const std::vector<Var>& parents, BackwardFn fn) {
  bool needs = false;
  if (record_) {
    for (Var p : parents) needs = needs || node(p).requires_grad;
  }
  nodes_.push_back(Node{std::move(value), nullptr, {}, needs, false, needs ? std::move(fn) : BackwardFn{}});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Tensor& Graph::grad(Var v) {
  Node& n = node(v);
  if (!n.has_grad) {
    n.grad = Tensor(n.get().shape());
    n.has_grad = true;
  }
  return n.grad;
}

Gradients Graph::backward(Var loss, const ParamStore& store) {
  if (!record_) throw ContractViolation("backward on a graph built without recording");
  if (value(loss).size() != 1) {
    throw ContractViolation(fmt::format("backward needs a scalar loss, got shape {}",
                                        value(loss).shape_str()));
  }
  Gradients out = Gradients::zeros_like(store);
  if (!node(loss).requires_grad) return out;
  grad(loss)[0] = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.has_grad && n.backward) n.backward(*this);
  }
  for (const auto& [name, id] : params_) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.has_grad && out.contains(name)) out.at(name) = std::move(n.grad);
  }
  return out;
}

}  // namespace deskbot::nn
