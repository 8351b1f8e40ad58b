#pragma once

#include <concepts>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace oltr {

class TensorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string shape_str(const std::vector<int>& shape);
std::int64_t shape_numel(const std::vector<int>& shape);

// Thread-local autograd recording switch.
bool grad_mode_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <std::floating_point T>
class Tensor;

// One recorded op. `parents` are the op inputs; `backprop` receives the
// output gradient and accumulates into the parents' grad buffers.
template <std::floating_point T>
struct Node {
  std::string op;
  std::vector<Tensor<T>> parents;
  std::function<void(const std::vector<T>&)> backprop;
};

// Dense tensor handle with value semantics on the handle and shared storage
// underneath. Values are treated as immutable once an op has produced them;
// the mutable accessors exist for parameter initialization and optimizer
// updates between steps.
template <std::floating_point T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, T value, bool requires_grad = false);
  static Tensor from_values(std::vector<int> shape, std::vector<T> values,
                            bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return storage_ != nullptr; }
  const std::vector<int>& shape() const { return storage_->shape; }
  int rank() const { return static_cast<int>(storage_->shape.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(storage_->values.size()); }
  bool requires_grad() const { return storage_ && storage_->requires_grad; }

  // A Tensor is a shared handle: const-ness of the handle does not extend to
  // the storage, mirroring the usual tensor-library semantics.
  std::vector<T>& values() const { return storage_->values; }
  std::vector<T>& grad() const;
  void zero_grad() const;

  T item() const;

  // Value copy detached from the graph.
  Tensor detach() const;

  std::shared_ptr<Node<T>>& node() const { return storage_->node; }

  // Stable identity of the underlying storage (used by the tape and tests).
  const void* storage_id() const { return storage_.get(); }

 private:
  struct Storage {
    std::vector<int> shape;
    std::vector<T> values;
    std::vector<T> grad;  // allocated iff requires_grad
    bool requires_grad = false;
    std::shared_ptr<Node<T>> node;
  };

  std::shared_ptr<Storage> storage_;
};

// Topologically ordered record of the ops reachable from one root tensor:
// every op's inputs are produced by earlier entries, and a backward sweep
// visits each op exactly once.
template <std::floating_point T>
class Tape {
 public:
  static Tape linearize(const Tensor<T>& root);

  const std::vector<Tensor<T>>& order() const { return order_; }
  const Tensor<T>& root() const { return root_; }
  std::size_t size() const { return order_.size(); }

 private:
  Tensor<T> root_;
  std::vector<Tensor<T>> order_;
};

// Reverse sweep from a scalar loss. Gradients accumulate additively into
// every reachable tensor that requires grad; leaves off the path keep zeros.
template <std::floating_point T>
void backward(const Tape<T>& tape, const Tensor<T>& loss);

template <std::floating_point T>
void backward(const Tensor<T>& loss);

// ---------------------------------------------------------------------------
// Primitive ops. Each op validates shapes, checks the result for non-finite
// values, and records itself when grad mode is on and any input requires grad.
// ---------------------------------------------------------------------------

// (m,k)x(k,n)->(m,n). Rank-1 operands orient themselves: (k,)x(k,n)->(n,)
// and (m,k)x(k,)->(m,). Transpose flags apply to rank-2 operands only.
template <std::floating_point T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false,
                 bool trans_b = false);

// x: (C,H,W), weight: (Co,C,3,3), optional bias: (Co). Stride 1, zero pad 1.
template <std::floating_point T>
Tensor<T> conv2d_3x3(const Tensor<T>& x, const Tensor<T>& weight,
                     const Tensor<T>& bias = {});

// add/sub/elemwise_mul accept equal shapes or a single-element operand
// broadcast against the other side; elemwise_mul additionally accepts
// (C,H,W) x (1,H,W) with the single channel broadcast across C.
template <std::floating_point T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <std::floating_point T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <std::floating_point T>
Tensor<T> elemwise_mul(const Tensor<T>& a, const Tensor<T>& b);

template <std::floating_point T>
Tensor<T> relu(const Tensor<T>& x);  // derivative at 0 is 0
template <std::floating_point T>
Tensor<T> tanh(const Tensor<T>& x);
template <std::floating_point T>
Tensor<T> exp(const Tensor<T>& x);
// log floors its input at the smallest positive normal value.
template <std::floating_point T>
Tensor<T> log(const Tensor<T>& x);

// Numerically stable (max-subtracted) softmax along one axis.
template <std::floating_point T>
Tensor<T> softmax(const Tensor<T>& x, int axis);

template <std::floating_point T>
Tensor<T> sum(const Tensor<T>& x);
template <std::floating_point T>
Tensor<T> mean(const Tensor<T>& x);
template <std::floating_point T>
Tensor<T> l2_norm(const Tensor<T>& x);

template <std::floating_point T>
Tensor<T> scalar_mul(const Tensor<T>& x, T factor);

template <std::floating_point T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis);

template <std::floating_point T>
Tensor<T> reshape(const Tensor<T>& x, std::vector<int> new_shape);

// (C,H,W) -> (C,)
template <std::floating_point T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

// Hook for composite ops defined by higher modules (reachability, squash,
// cross-entropy...). Validates finiteness and records the node exactly like
// the built-in primitives. The backprop closure must not capture the output.
template <std::floating_point T>
Tensor<T> make_op(const std::string& name, std::vector<int> out_shape,
                  std::vector<T> out_values, std::vector<Tensor<T>> parents,
                  std::function<void(const std::vector<T>&)> backprop);

}  // namespace oltr
