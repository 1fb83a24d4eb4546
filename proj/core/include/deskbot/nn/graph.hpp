#pragma once

#include <deque>
#include <functional>
#include <initializer_list>
#include <map>
#include <string>
#include <string_view>

#include "deskbot/nn/params.hpp"
#include "deskbot/nn/tensor.hpp"

namespace deskbot::nn {

// Handle to a value recorded on a Graph.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Values are computed eagerly when an op is recorded; backward()
// sweeps the tape once in reverse creation order. A Graph is single-use and not
// thread-safe; build one per forward pass.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&)>;

  // With record == false no backward closures are kept (inference only).
  explicit Graph(bool record = true) : record_(record) {}

  Var constant(Tensor value);
  // Leaf bound to store[name] by reference, so the store must outlive the graph.
  // Repeated requests return the same Var.
  Var param(const ParamStore& store, std::string_view name);

  const Tensor& value(Var v) const { return node(v).get(); }
  const std::vector<int>& shape(Var v) const { return value(v).shape(); }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  bool recording() const { return record_; }

  // Gradients of a single-element loss for every tensor in `store`; parameters the
  // loss does not reach get zeros. Throws ContractViolation for non-scalar losses.
  Gradients backward(Var loss, const ParamStore& store);

  // Op plumbing: records `value`; `fn` runs during backward when the result
  // requires a gradient.
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn);
  Var record(Tensor value, const std::vector<Var>& parents, BackwardFn fn);
  // Gradient buffer of v, zero-initialised on first access.
  Tensor& grad(Var v);

  // Test fixture: makes tanh use a wrong derivative so gradient checks must fail.
  void inject_tanh_fault(bool on) { tanh_fault_ = on; }
  bool tanh_fault() const { return tanh_fault_; }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;  // parameters live in their store
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;

    const Tensor& get() const { return external != nullptr ? *external : value; }
  };

  const Node& node(Var v) const;
  Node& node(Var v);

  std::deque<Node> nodes_;
  std::map<std::string, int, std::less<>> params_;
  bool record_;
  bool tanh_fault_ = false;
};

// ---- forward operators -------------------------------------------------------
// Every op checks shapes and throws ContractViolation naming both shapes on mismatch.

Var add(Graph& g, Var a, Var b);
Var sub(Graph& g, Var a, Var b);
Var mul(Graph& g, Var a, Var b);
Var minimum(Graph& g, Var a, Var b);
Var scale(Graph& g, Var a, double c);
Var add_scalar(Graph& g, Var a, double c);
Var tanh(Graph& g, Var a);
Var exp(Graph& g, Var a);
Var square(Graph& g, Var a);
// Gradient passes only where lo <= a <= hi.
Var clamp(Graph& g, Var a, double lo, double hi);
Var sum(Graph& g, Var a);
Var mean(Graph& g, Var a);
Var reshape(Graph& g, Var a, std::vector<int> shape);

// x [N, in], w [out, in], optional b [out] -> [N, out].
Var linear(Graph& g, Var x, Var w, Var b = {});
// x [N, H, W, C] (NHWC), w [O, 3, 3, C], b [O]; stride 1, zero padding 1 -> [N, H, W, O].
Var conv2d(Graph& g, Var x, Var w, Var b);
// 2x2 window, stride 2, on NHWC input with even H and W.
Var maxpool2x2(Graph& g, Var x);
// Row-wise softmax over the last dimension of a rank-2 tensor.
Var softmax_rows(Graph& g, Var x);
// table [V, D], ids -> [ids.size(), D].
Var embedding(Graph& g, Var table, const std::vector<int>& ids);
// x [U, D] -> [idx.size(), D] with row i = x[idx[i]].
Var gather_rows(Graph& g, Var x, const std::vector<int>& idx);
// Concatenate rank-2 tensors with equal row counts along columns.
Var concat_cols(Graph& g, const std::vector<Var>& parts);
// Row-wise layer norm (epsilon 1e-5) with gain/bias [D].
Var layer_norm(Graph& g, Var x, Var gain, Var bias);

// Multi-head scaled dot-product self-attention over B sequences of length L stored
// as rows of q, k, v [B*L, D]. Keys with valid[row] == false get probability 0.
// When probs_out is given it receives the attention maps [B, heads, L, L].
Var self_attention(Graph& g, Var q, Var k, Var v, int seq_len, int heads,
                   const std::vector<bool>& valid, Tensor* probs_out = nullptr);
// Mean over valid rows of each length-L block: [B*L, D] -> [B, D].
Var masked_mean_rows(Graph& g, Var x, int seq_len, const std::vector<bool>& valid);

// x [N, d] -> x * scale[j] + shift[j] per column.
Var affine_cols(Graph& g, Var x, const std::vector<double>& scale, const std::vector<double>& shift);

// Diagonal Gaussian log-density of constant actions [N, d] under means [N, d] with a
// shared standard deviation -> [N].
Var gaussian_log_prob(Graph& g, Var mean, const Tensor& actions, double sigma);

}  // namespace deskbot::nn
