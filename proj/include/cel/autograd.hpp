#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cel/tensor.hpp"

// Define-by-run reverse-mode tape. Ops build nodes only while gradients are
// enabled; backward() walks the graph in reverse topological order. Graphs
// are per-step and dropped once the last Var handle dies.

namespace cel {

inline thread_local int g_no_grad_depth = 0;

inline bool grad_enabled() { return g_no_grad_depth == 0; }

struct NoGrad {
  NoGrad() { ++g_no_grad_depth; }
  ~NoGrad() { --g_no_grad_depth; }
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;
};

template <class T>
struct NodeT {
  TensorT<T> val;
  TensorT<T> grad;  // lazily allocated
  bool requires_grad = false;
  std::vector<std::shared_ptr<NodeT>> parents;
  std::function<void(NodeT&)> backfn;

  TensorT<T>& ensure_grad() {
    if (grad.v.empty()) grad = TensorT<T>(val.shape);
    return grad;
  }
};

template <class T>
class VarT {
 public:
  VarT() = default;
  explicit VarT(TensorT<T> v, bool requires_grad = false) : n_(std::make_shared<NodeT<T>>()) {
    n_->val = std::move(v);
    n_->requires_grad = requires_grad;
  }

  bool defined() const { return n_ != nullptr; }
  const TensorT<T>& val() const { return n_->val; }
  TensorT<T>& val() { return n_->val; }
  const Shape& shape() const { return n_->val.shape; }
  TensorT<T>& grad() const { return n_->ensure_grad(); }
  bool requires_grad() const { return n_ != nullptr && n_->requires_grad; }
  std::shared_ptr<NodeT<T>> node() const { return n_; }

 private:
  std::shared_ptr<NodeT<T>> n_;
};

using Var = VarT<float>;
using DVar = VarT<double>;

// Wires an op's output into the tape. backfn reads out.grad and accumulates
// into the parents it captured; it is only attached when a parent needs it.
template <class T>
VarT<T> make_op(TensorT<T> out, std::vector<VarT<T>> parents,
                std::function<void(NodeT<T>&)> backfn) {
  bool req = false;
  if (grad_enabled())
    for (const auto& p : parents) req = req || p.requires_grad();
  VarT<T> o(std::move(out), false);
  if (req) {
    o.node()->requires_grad = true;
    for (const auto& p : parents) o.node()->parents.push_back(p.node());
    o.node()->backfn = std::move(backfn);
  }
  return o;
}

template <class T>
void backward(const VarT<T>& root) {
  check(root.defined() && root.val().numel() == 1, "backward: root must be a scalar");
  if (!root.requires_grad()) return;

  std::vector<NodeT<T>*> order;
  std::unordered_set<NodeT<T>*> seen;
  struct Frame {
    NodeT<T>* n;
    size_t next;
  };
  std::vector<Frame> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.n->parents.size()) {
      NodeT<T>* p = f.n->parents[f.next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }
  root.node()->ensure_grad().fill(T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backfn) (*it)->backfn(**it);
}

}  // namespace cel
