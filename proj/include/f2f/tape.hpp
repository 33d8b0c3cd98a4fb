#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <vector>

#include "f2f/tensor.hpp"

// Reverse-mode tape, define-by-run. A Node holds a value, an optional
// same-shape gradient and the id of the tape that produced it (leaves carry
// id -1 and never get re-recorded). Ops append one pull closure per emitted
// node; backward() replays the record in reverse exactly once, so inputs
// always precede their consumers and fan-out accumulates additively.
//
// The tape is rebuilt for every forward pass. backward() may be called more
// than once on the same record (the two-stage fine-tuning needs one pass per
// loss); each call zeroes the gradients of tape-produced nodes first, while
// leaf gradients keep accumulating until their owner clears them.

namespace f2f::autodiff {

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until first needed; same shape as value afterwards
  bool requires_grad = false;
  int64_t tape_id = -1;

  bool grad_allocated() const { return !grad.data.empty(); }

  void ensure_grad() {
    if (!grad_allocated()) grad = Tensor<T>::zeros(value.shape);
  }

  void zero_grad() {
    if (grad_allocated()) grad.fill(T(0));
  }
};

template <class T>
using Var = std::shared_ptr<Node<T>>;

template <class T>
Var<T> make_leaf(Tensor<T> value, bool requires_grad = false) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

inline int64_t next_tape_id() {
  static std::atomic<int64_t> counter{0};
  return ++counter;
}

template <class T>
class Tape {
 public:
  Tape() : id_(next_tape_id()) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  int64_t id() const { return id_; }

  // Registers a freshly computed node plus the closure that pushes its
  // gradient into its parents. The closure runs only in backward() and
  // receives the emitted node (for its grad and value).
  Var<T> emit(Tensor<T> value, std::function<void(Node<T>&)> pull) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = true;
    n->tape_id = id_;
    steps_.push_back(Step{n, std::move(pull)});
    return n;
  }

  size_t size() const { return steps_.size(); }

  // Seeds d(loss)/d(loss) = 1 and replays the record in reverse. Rejects a
  // loss that is non-scalar or was not produced by this tape.
  void backward(const Var<T>& loss) {
    F2F_CHECK(loss != nullptr, "backward on null tensor");
    if (loss->tape_id != id_)
      throw Error("backward target is detached from this tape");
    if (loss->value.numel() != 1)
      throw Error("backward target must be scalar, got shape " + shape_str(loss->value.shape));
    for (auto& s : steps_) {
      s.node->ensure_grad();
      s.node->zero_grad();
    }
    loss->grad[0] = T(1);
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
      if (it->pull) it->pull(*it->node);
    }
  }

 private:
  struct Step {
    Var<T> node;
    std::function<void(Node<T>&)> pull;
  };

  int64_t id_;
  std::vector<Step> steps_;
};

// Detached nodes (leaves with requires_grad=false) never receive gradient.
template <class T>
inline bool wants_grad(const Var<T>& v) {
  return v->requires_grad || v->tape_id >= 0;
}

// Returns the gradient buffer to accumulate into, or nullptr for detached
// nodes. Allocates (zero-filled) on first use.
template <class T>
inline Tensor<T>* grad_dst(const Var<T>& v) {
  if (!wants_grad(v)) return nullptr;
  v->ensure_grad();
  return &v->grad;
}

}  // namespace f2f::autodiff
