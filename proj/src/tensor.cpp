#include "oltr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

namespace oltr {

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

std::int64_t shape_numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int extent : shape) n *= extent;
  return n;
}

namespace {

thread_local bool g_grad_mode = true;

void require(bool cond, const std::string& message) {
  if (!cond) throw TensorError(message);
}

template <std::floating_point T>
void check_finite(const std::string& op, const std::vector<T>& values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      std::ostringstream os;
      os << op << ": produced non-finite value at flat index " << i;
      throw TensorError(os.str());
    }
  }
}

}  // namespace

bool grad_mode_enabled() { return g_grad_mode; }

NoGradGuard::NoGradGuard() : previous_(g_grad_mode) { g_grad_mode = false; }
NoGradGuard::~NoGradGuard() { g_grad_mode = previous_; }

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

template <std::floating_point T>
Tensor<T> Tensor<T>::zeros(std::vector<int> shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <std::floating_point T>
Tensor<T> Tensor<T>::full(std::vector<int> shape, T value, bool requires_grad) {
  const std::int64_t n = shape_numel(shape);
  require(!shape.empty() && n > 0, "tensor: shape must have positive extents, got " + shape_str(shape));
  return from_values(std::move(shape), std::vector<T>(static_cast<std::size_t>(n), value),
                     requires_grad);
}

template <std::floating_point T>
Tensor<T> Tensor<T>::from_values(std::vector<int> shape, std::vector<T> values,
                                 bool requires_grad) {
  const std::int64_t n = shape_numel(shape);
  require(!shape.empty() && n > 0, "tensor: shape must have positive extents, got " + shape_str(shape));
  require(static_cast<std::int64_t>(values.size()) == n,
          "tensor: value count " + std::to_string(values.size()) + " does not match shape " +
              shape_str(shape));
  Tensor t;
  t.storage_ = std::make_shared<Storage>();
  t.storage_->shape = std::move(shape);
  t.storage_->values = std::move(values);
  t.storage_->requires_grad = requires_grad;
  if (requires_grad) t.storage_->grad.assign(t.storage_->values.size(), T(0));
  return t;
}

template <std::floating_point T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from_values({1}, {value}, requires_grad);
}

template <std::floating_point T>
std::vector<T>& Tensor<T>::grad() const {
  require(requires_grad(), "tensor: grad requested on a tensor without requires_grad");
  return storage_->grad;
}

template <std::floating_point T>
void Tensor<T>::zero_grad() const {
  if (requires_grad()) std::fill(storage_->grad.begin(), storage_->grad.end(), T(0));
}

template <std::floating_point T>
T Tensor<T>::item() const {
  require(defined() && numel() == 1,
          "tensor: item() requires exactly one element");
  return storage_->values[0];
}

template <std::floating_point T>
Tensor<T> Tensor<T>::detach() const {
  return from_values(storage_->shape, storage_->values, false);
}

// ---------------------------------------------------------------------------
// Tape and backward
// ---------------------------------------------------------------------------

template <std::floating_point T>
Tape<T> Tape<T>::linearize(const Tensor<T>& root) {
  Tape<T> tape;
  tape.root_ = root;
  if (!root.defined() || !root.node()) return tape;

  struct Frame {
    Tensor<T> tensor;
    std::size_t next_parent = 0;
  };
  std::unordered_set<const void*> visited;
  std::vector<Frame> stack;
  stack.push_back({root});
  visited.insert(root.storage_id());
  while (!stack.empty()) {
    Frame& frame = stack.back();
    const auto& node = frame.tensor.node();
    if (frame.next_parent < node->parents.size()) {
      Tensor<T> parent = node->parents[frame.next_parent++];
      if (parent.node() && visited.insert(parent.storage_id()).second) {
        stack.push_back({parent});
      }
    } else {
      tape.order_.push_back(frame.tensor);
      stack.pop_back();
    }
  }
  return tape;
}

template <std::floating_point T>
void backward(const Tape<T>& tape, const Tensor<T>& loss) {
  require(loss.defined() && loss.numel() == 1,
          "backward: loss must be a scalar (one element)");
  require(!tape.root().defined() || tape.root().storage_id() == loss.storage_id(),
          "backward: loss does not match the tape root");
  if (loss.requires_grad()) loss.grad()[0] += T(1);
  const auto& order = tape.order();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    it->node()->backprop(it->grad());
  }
}

template <std::floating_point T>
void backward(const Tensor<T>& loss) {
  backward(Tape<T>::linearize(loss), loss);
}

// ---------------------------------------------------------------------------
// Op recording
// ---------------------------------------------------------------------------

template <std::floating_point T>
Tensor<T> make_op(const std::string& name, std::vector<int> out_shape,
                  std::vector<T> out_values, std::vector<Tensor<T>> parents,
                  std::function<void(const std::vector<T>&)> backprop) {
  check_finite(name, out_values);
  bool wants_grad = false;
  if (grad_mode_enabled()) {
    for (const auto& p : parents) {
      if (p.requires_grad()) {
        wants_grad = true;
        break;
      }
    }
  }
  Tensor<T> out = Tensor<T>::from_values(std::move(out_shape), std::move(out_values), wants_grad);
  if (wants_grad) {
    auto node = std::make_shared<Node<T>>();
    node->op = name;
    node->parents = std::move(parents);
    node->backprop = std::move(backprop);
    out.node() = node;
  }
  return out;
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

namespace {

// C(m,n) += op(A) * op(B) with A stored (m,k) or (k,m) when transposed.
template <std::floating_point T>
void raw_matmul(const std::vector<T>& a, const std::vector<T>& b, std::vector<T>& out, int m,
                int k, int n, bool ta, bool tb) {
  for (int i = 0; i < m; ++i) {
    for (int l = 0; l < k; ++l) {
      const T av = ta ? a[static_cast<std::size_t>(l) * m + i] : a[static_cast<std::size_t>(i) * k + l];
      if (av == T(0)) continue;
      for (int j = 0; j < n; ++j) {
        const T bv = tb ? b[static_cast<std::size_t>(j) * k + l] : b[static_cast<std::size_t>(l) * n + j];
        out[static_cast<std::size_t>(i) * n + j] += av * bv;
      }
    }
  }
}

}  // namespace

template <std::floating_point T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a, bool trans_b) {
  require(a.defined() && b.defined(), "matmul: undefined operand");
  require(a.rank() <= 2 && b.rank() <= 2,
          "matmul: operands must be rank 1 or 2, got " + shape_str(a.shape()) + " x " +
              shape_str(b.shape()));
  const bool a_vec = a.rank() == 1;
  const bool b_vec = b.rank() == 1;
  require(!(a_vec && trans_a) && !(b_vec && trans_b),
          "matmul: transpose flag on a rank-1 operand");

  // Effective dims after orientation: A (m,k), B (k,n).
  const int m = a_vec ? 1 : (trans_a ? a.shape()[1] : a.shape()[0]);
  const int ka = a_vec ? a.shape()[0] : (trans_a ? a.shape()[0] : a.shape()[1]);
  const int kb = b_vec ? b.shape()[0] : (trans_b ? b.shape()[1] : b.shape()[0]);
  const int n = b_vec ? 1 : (trans_b ? b.shape()[0] : b.shape()[1]);
  require(ka == kb, "matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                        shape_str(b.shape()));
  const int k = ka;

  std::vector<T> out_values(static_cast<std::size_t>(m) * n, T(0));
  raw_matmul(a.values(), b.values(), out_values, m, k, n, trans_a, trans_b);

  std::vector<int> out_shape;
  if (a_vec && b_vec) {
    out_shape = {1};
  } else if (a_vec) {
    out_shape = {n};
  } else if (b_vec) {
    out_shape = {m};
  } else {
    out_shape = {m, n};
  }

  auto backprop = [a, b, m, k, n, trans_a, trans_b](const std::vector<T>& g) {
    if (a.requires_grad()) {
      // dA_eff(m,k) = G * B_eff^T, written back through a's layout.
      std::vector<T> da(static_cast<std::size_t>(m) * k, T(0));
      // B_eff^T is (n,k): entry (j,l) = B_eff(l,j).
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
          const T gv = g[static_cast<std::size_t>(i) * n + j];
          if (gv == T(0)) continue;
          for (int l = 0; l < k; ++l) {
            const T bv = trans_b ? b.values()[static_cast<std::size_t>(j) * k + l]
                                 : b.values()[static_cast<std::size_t>(l) * n + j];
            da[static_cast<std::size_t>(i) * k + l] += gv * bv;
          }
        }
      }
      auto& ga = a.grad();
      if (trans_a) {
        for (int i = 0; i < m; ++i)
          for (int l = 0; l < k; ++l) ga[static_cast<std::size_t>(l) * m + i] += da[static_cast<std::size_t>(i) * k + l];
      } else {
        for (std::size_t idx = 0; idx < da.size(); ++idx) ga[idx] += da[idx];
      }
    }
    if (b.requires_grad()) {
      // dB_eff(k,n) = A_eff^T * G.
      std::vector<T> db(static_cast<std::size_t>(k) * n, T(0));
      for (int i = 0; i < m; ++i) {
        for (int l = 0; l < k; ++l) {
          const T av = trans_a ? a.values()[static_cast<std::size_t>(l) * m + i]
                               : a.values()[static_cast<std::size_t>(i) * k + l];
          if (av == T(0)) continue;
          for (int j = 0; j < n; ++j) {
            db[static_cast<std::size_t>(l) * n + j] += av * g[static_cast<std::size_t>(i) * n + j];
          }
        }
      }
      auto& gb = b.grad();
      if (trans_b) {
        for (int l = 0; l < k; ++l)
          for (int j = 0; j < n; ++j) gb[static_cast<std::size_t>(j) * k + l] += db[static_cast<std::size_t>(l) * n + j];
      } else {
        for (std::size_t idx = 0; idx < db.size(); ++idx) gb[idx] += db[idx];
      }
    }
  };
  return make_op<T>("matmul", std::move(out_shape), std::move(out_values), {a, b},
                    std::move(backprop));
}

// ---------------------------------------------------------------------------
// conv2d 3x3, stride 1, zero padding 1
// ---------------------------------------------------------------------------

template <std::floating_point T>
Tensor<T> conv2d_3x3(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require(x.defined() && weight.defined(), "conv2d_3x3: undefined operand");
  require(x.rank() == 3, "conv2d_3x3: input must be (C,H,W), got " + shape_str(x.shape()));
  require(weight.rank() == 4 && weight.shape()[2] == 3 && weight.shape()[3] == 3,
          "conv2d_3x3: weight must be (Co,C,3,3), got " + shape_str(weight.shape()));
  const int c_in = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const int c_out = weight.shape()[0];
  require(weight.shape()[1] == c_in,
          "conv2d_3x3: channel mismatch, input " + shape_str(x.shape()) + " vs weight " +
              shape_str(weight.shape()));
  const bool has_bias = bias.defined();
  if (has_bias) {
    require(bias.rank() == 1 && bias.shape()[0] == c_out,
            "conv2d_3x3: bias must be (Co,), got " + shape_str(bias.shape()));
  }

  const auto& xv = x.values();
  const auto& wv = weight.values();
  std::vector<T> out(static_cast<std::size_t>(c_out) * h * w, T(0));
  auto xat = [&](int c, int i, int j) -> T {
    if (i < 0 || i >= h || j < 0 || j >= w) return T(0);
    return xv[(static_cast<std::size_t>(c) * h + i) * w + j];
  };
  for (int co = 0; co < c_out; ++co) {
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        T acc = has_bias ? bias.values()[co] : T(0);
        for (int c = 0; c < c_in; ++c) {
          for (int di = -1; di <= 1; ++di) {
            for (int dj = -1; dj <= 1; ++dj) {
              acc += xat(c, i + di, j + dj) *
                     wv[((static_cast<std::size_t>(co) * c_in + c) * 3 + (di + 1)) * 3 + (dj + 1)];
            }
          }
        }
        out[(static_cast<std::size_t>(co) * h + i) * w + j] = acc;
      }
    }
  }

  std::vector<Tensor<T>> parents = {x, weight};
  if (has_bias) parents.push_back(bias);
  auto backprop = [x, weight, bias, has_bias, c_in, c_out, h, w](const std::vector<T>& g) {
    const auto& xv2 = x.values();
    const auto& wv2 = weight.values();
    auto xat2 = [&](int c, int i, int j) -> T {
      if (i < 0 || i >= h || j < 0 || j >= w) return T(0);
      return xv2[(static_cast<std::size_t>(c) * h + i) * w + j];
    };
    for (int co = 0; co < c_out; ++co) {
      for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
          const T gv = g[(static_cast<std::size_t>(co) * h + i) * w + j];
          if (gv == T(0)) continue;
          if (has_bias && bias.requires_grad()) bias.grad()[co] += gv;
          for (int c = 0; c < c_in; ++c) {
            for (int di = -1; di <= 1; ++di) {
              for (int dj = -1; dj <= 1; ++dj) {
                const std::size_t widx =
                    ((static_cast<std::size_t>(co) * c_in + c) * 3 + (di + 1)) * 3 + (dj + 1);
                if (weight.requires_grad()) weight.grad()[widx] += gv * xat2(c, i + di, j + dj);
                const int ii = i + di, jj = j + dj;
                if (x.requires_grad() && ii >= 0 && ii < h && jj >= 0 && jj < w) {
                  x.grad()[(static_cast<std::size_t>(c) * h + ii) * w + jj] += gv * wv2[widx];
                }
              }
            }
          }
        }
      }
    }
  };
  return make_op<T>("conv2d_3x3", {c_out, h, w}, std::move(out), std::move(parents),
                    std::move(backprop));
}

// ---------------------------------------------------------------------------
// binary elementwise
// ---------------------------------------------------------------------------

namespace {

enum class BinaryMode { Equal, ScalarA, ScalarB, ChannelA, ChannelB };

template <std::floating_point T>
BinaryMode binary_mode(const char* op, const Tensor<T>& a, const Tensor<T>& b,
                       bool allow_channel) {
  if (a.shape() == b.shape()) return BinaryMode::Equal;
  if (a.numel() == 1) return BinaryMode::ScalarA;
  if (b.numel() == 1) return BinaryMode::ScalarB;
  if (allow_channel && a.rank() == 3 && b.rank() == 3 && b.shape()[0] == 1 &&
      a.shape()[1] == b.shape()[1] && a.shape()[2] == b.shape()[2]) {
    return BinaryMode::ChannelB;
  }
  if (allow_channel && a.rank() == 3 && b.rank() == 3 && a.shape()[0] == 1 &&
      a.shape()[1] == b.shape()[1] && a.shape()[2] == b.shape()[2]) {
    return BinaryMode::ChannelA;
  }
  throw TensorError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " vs " +
                    shape_str(b.shape()));
}

}  // namespace

template <std::floating_point T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const BinaryMode mode = binary_mode("add", a, b, false);
  const bool scalar_a = mode == BinaryMode::ScalarA;
  const bool scalar_b = mode == BinaryMode::ScalarB;
  const Tensor<T>& big = scalar_a ? b : a;
  std::vector<T> out(big.values());
  if (mode == BinaryMode::Equal) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  } else if (scalar_a) {
    for (auto& v : out) v += a.values()[0];
  } else {
    for (auto& v : out) v += b.values()[0];
  }
  auto backprop = [a, b, scalar_a, scalar_b](const std::vector<T>& g) {
    if (a.requires_grad()) {
      auto& ga = a.grad();
      if (scalar_a) {
        for (const T gv : g) ga[0] += gv;
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
    }
    if (b.requires_grad()) {
      auto& gb = b.grad();
      if (scalar_b) {
        for (const T gv : g) gb[0] += gv;
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    }
  };
  return make_op<T>("add", big.shape(), std::move(out), {a, b}, std::move(backprop));
}

template <std::floating_point T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  const BinaryMode mode = binary_mode("sub", a, b, false);
  const bool scalar_a = mode == BinaryMode::ScalarA;
  const bool scalar_b = mode == BinaryMode::ScalarB;
  const Tensor<T>& big = scalar_a ? b : a;
  std::vector<T> out(static_cast<std::size_t>(big.numel()));
  if (mode == BinaryMode::Equal) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  } else if (scalar_a) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[0] - b.values()[i];
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[0];
  }
  auto backprop = [a, b, scalar_a, scalar_b](const std::vector<T>& g) {
    if (a.requires_grad()) {
      auto& ga = a.grad();
      if (scalar_a) {
        for (const T gv : g) ga[0] += gv;
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
    }
    if (b.requires_grad()) {
      auto& gb = b.grad();
      if (scalar_b) {
        for (const T gv : g) gb[0] -= gv;
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    }
  };
  return make_op<T>("sub", big.shape(), std::move(out), {a, b}, std::move(backprop));
}

template <std::floating_point T>
Tensor<T> elemwise_mul(const Tensor<T>& a, const Tensor<T>& b) {
  const BinaryMode mode = binary_mode("elemwise_mul", a, b, true);
  const Tensor<T>& big = (mode == BinaryMode::ScalarA || mode == BinaryMode::ChannelA) ? b : a;
  const int ch = big.rank() == 3 ? big.shape()[0] : 1;
  const std::size_t plane = big.rank() == 3
                                ? static_cast<std::size_t>(big.shape()[1]) * big.shape()[2]
                                : static_cast<std::size_t>(big.numel());
  std::vector<T> out(static_cast<std::size_t>(big.numel()));
  switch (mode) {
    case BinaryMode::Equal:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
      break;
    case BinaryMode::ScalarA:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[0] * b.values()[i];
      break;
    case BinaryMode::ScalarB:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[0];
      break;
    case BinaryMode::ChannelB:
      for (int c = 0; c < ch; ++c)
        for (std::size_t p = 0; p < plane; ++p)
          out[c * plane + p] = a.values()[c * plane + p] * b.values()[p];
      break;
    case BinaryMode::ChannelA:
      for (int c = 0; c < ch; ++c)
        for (std::size_t p = 0; p < plane; ++p)
          out[c * plane + p] = a.values()[p] * b.values()[c * plane + p];
      break;
  }
  auto backprop = [a, b, mode, ch, plane](const std::vector<T>& g) {
    const auto& av = a.values();
    const auto& bv = b.values();
    if (a.requires_grad()) {
      auto& ga = a.grad();
      switch (mode) {
        case BinaryMode::Equal:
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
          break;
        case BinaryMode::ScalarA:
          for (std::size_t i = 0; i < g.size(); ++i) ga[0] += g[i] * bv[i];
          break;
        case BinaryMode::ScalarB:
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[0];
          break;
        case BinaryMode::ChannelB:
          for (int c = 0; c < ch; ++c)
            for (std::size_t p = 0; p < plane; ++p) ga[c * plane + p] += g[c * plane + p] * bv[p];
          break;
        case BinaryMode::ChannelA:
          for (int c = 0; c < ch; ++c)
            for (std::size_t p = 0; p < plane; ++p) ga[p] += g[c * plane + p] * bv[c * plane + p];
          break;
      }
    }
    if (b.requires_grad()) {
      auto& gb = b.grad();
      switch (mode) {
        case BinaryMode::Equal:
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
          break;
        case BinaryMode::ScalarA:
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[0];
          break;
        case BinaryMode::ScalarB:
          for (std::size_t i = 0; i < g.size(); ++i) gb[0] += g[i] * av[i];
          break;
        case BinaryMode::ChannelB:
          for (int c = 0; c < ch; ++c)
            for (std::size_t p = 0; p < plane; ++p) gb[p] += g[c * plane + p] * av[c * plane + p];
          break;
        case BinaryMode::ChannelA:
          for (int c = 0; c < ch; ++c)
            for (std::size_t p = 0; p < plane; ++p) gb[c * plane + p] += g[c * plane + p] * av[p];
          break;
      }
    }
  };
  return make_op<T>("elemwise_mul", big.shape(), std::move(out), {a, b}, std::move(backprop));
}

// ---------------------------------------------------------------------------
// unary elementwise
// ---------------------------------------------------------------------------

template <std::floating_point T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.values());
  for (auto& v : out) v = v > T(0) ? v : T(0);
  auto backprop = [x](const std::vector<T>& g) {
    if (!x.requires_grad()) return;
    auto& gx = x.grad();
    const auto& xv = x.values();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > T(0)) gx[i] += g[i];
    }
  };
  return make_op<T>("relu", x.shape(), std::move(out), {x}, std::move(backprop));
}

template <std::floating_point T>
Tensor<T> tanh(const Tensor<T>& x) {
  std::vector<T> out(x.values());
  for (auto& v : out) v = std::tanh(v);
  std::vector<T> y = out;
  auto backprop = [x, y = std::move(y)](const std::vector<T>& g) {
    if (!x.requires_grad()) return;
    auto& gx = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (T(1) - y[i] * y[i]);
  };
  return make_op<T>("tanh", x.shape(), std::move(out), {x}, std::move(backprop));
}

template <std::floating_point T>
Tensor<T> exp(const Tensor<T>& x) {
  std::vector<T> out(x.values());
  for (auto& v : out) v = std::exp(v);
  std::vector<T> y = out;
  auto backprop = [x, y = std::move(y)](const std::vector<T>& g) {
    if (!x.requires_grad()) return;
    auto& gx = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i];
  };
  return make_op<T>("exp", x.shape(), std::move(out), {x}, std::move(backprop));
}

template <std::floating_point T>
Tensor<T> log(const Tensor<T>& x) {
  constexpr T tiny = std::numeric_limits<T>::min();
  std::vector<T> out(x.values());
  for (auto& v : out) v = std::log(std::max(v, tiny));
  auto backprop = [x](const std::vector<T>& g) {
    if (!x.requires_grad()) return;
    auto& gx = x.grad();
    const auto& xv = x.values();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] >= tiny) gx[i] += g[i] / xv[i];
    }
  };
  return make_op<T>("log", x.shape(), std::move(out), {x}, std::move(backprop));
}

// ---------------------------------------------------------------------------
// softmax along one axis
// ---------------------------------------------------------------------------

template <std::floating_point T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  require(x.defined(), "softmax: undefined operand");
  require(axis >= 0 && axis < x.rank(),
          "softmax: axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
  const auto& shape = x.shape();
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[i];
  for (int i = axis + 1; i < x.rank(); ++i) inner *= shape[i];
  const int len = shape[axis];

  std::vector<T> out(x.values().size());
  const auto& xv = x.values();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in = 0; in < inner; ++in) {
      const std::size_t base = static_cast<std::size_t>(o) * len * inner + in;
      T max_v = xv[base];
      for (int l = 1; l < len; ++l) max_v = std::max(max_v, xv[base + static_cast<std::size_t>(l) * inner]);
      T denom = T(0);
      for (int l = 0; l < len; ++l) {
        const T e = std::exp(xv[base + static_cast<std::size_t>(l) * inner] - max_v);
        out[base + static_cast<std::size_t>(l) * inner] = e;
        denom += e;
      }
      for (int l = 0; l < len; ++l) out[base + static_cast<std::size_t>(l) * inner] /= denom;
    }
  }

  std::vector<T> y = out;
  auto backprop = [x, y = std::move(y), outer, inner, len](const std::vector<T>& g) {
    if (!x.requires_grad()) return;
    auto& gx = x.grad();
    for (std::int64_t o = 0; o < outer; ++o) {
      for (std::int64_t in = 0; in < inner; ++in) {
        const std::size_t base = static_cast<std::size_t>(o) * len * inner + in;
        T dot = T(0);
        for (int l = 0; l < len; ++l) {
          const std::size_t idx = base + static_cast<std::size_t>(l) * inner;
          dot += g[idx] * y[idx];
        }
        for (int l = 0; l < len; ++l) {
          const std::size_t idx = base + static_cast<std::size_t>(l) * inner;
          gx[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  };
  return make_op<T>("softmax", x.shape(), std::move(out), {x}, std::move(backprop));
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <std::floating_point T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (const T v : x.values()) acc += v;
  auto backprop = [x](const std::vector<T>& g) {
    if (!x.requires_grad()) return;
    auto& gx = x.grad();
    for (auto& gv : gx) gv += g[0];
  };
  return make_op<T>("sum", {1}, {acc}, {x}, std::move(backprop));
}

template <std::floating_point T>
Tensor<T> mean(const Tensor<T>& x) {
  T acc = T(0);
  for (const T v : x.values()) acc += v;
  const T inv_n = T(1) / static_cast<T>(x.numel());
  acc *= inv_n;
  auto backprop = [x, inv_n](const std::vector<T>& g) {
    if (!x.requires_grad()) return;
    auto& gx = x.grad();
    for (auto& gv : gx) gv += g[0] * inv_n;
  };
  return make_op<T>("mean", {1}, {acc}, {x}, std::move(backprop));
}

template <std::floating_point T>
Tensor<T> l2_norm(const Tensor<T>& x) {
  T acc = T(0);
  for (const T v : x.values()) acc += v * v;
  const T norm = std::sqrt(acc);
  auto backprop = [x, norm](const std::vector<T>& g) {
    if (!x.requires_grad()) return;
    constexpr T tiny = std::numeric_limits<T>::min();
    const T scale = g[0] / std::max(norm, tiny);
    auto& gx = x.grad();
    const auto& xv = x.values();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += scale * xv[i];
  };
  return make_op<T>("l2_norm", {1}, {norm}, {x}, std::move(backprop));
}

template <std::floating_point T>
Tensor<T> scalar_mul(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.values());
  for (auto& v : out) v *= factor;
  auto backprop = [x, factor](const std::vector<T>& g) {
    if (!x.requires_grad()) return;
    auto& gx = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
  };
  return make_op<T>("scalar_mul", x.shape(), std::move(out), {x}, std::move(backprop));
}

// ---------------------------------------------------------------------------
// concat / reshape / pooling
// ---------------------------------------------------------------------------

template <std::floating_point T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  require(!parts.empty(), "concat: needs at least one tensor");
  const int rank = parts[0].rank();
  require(axis >= 0 && axis < rank,
          "concat: axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  std::vector<int> out_shape = parts[0].shape();
  int total_axis = 0;
  for (const auto& p : parts) {
    require(p.rank() == rank, "concat: rank mismatch");
    for (int i = 0; i < rank; ++i) {
      if (i != axis) {
        require(p.shape()[i] == out_shape[i],
                "concat: shape mismatch at axis " + std::to_string(i) + ": " +
                    shape_str(p.shape()) + " vs " + shape_str(out_shape));
      }
    }
    total_axis += p.shape()[axis];
  }
  out_shape[axis] = total_axis;

  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= out_shape[i];
  for (int i = axis + 1; i < rank; ++i) inner *= out_shape[i];

  std::vector<T> out(static_cast<std::size_t>(shape_numel(out_shape)));
  std::size_t axis_offset = 0;
  std::vector<std::size_t> offsets(parts.size());
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    offsets[pi] = axis_offset;
    const int len = parts[pi].shape()[axis];
    const auto& pv = parts[pi].values();
    for (std::int64_t o = 0; o < outer; ++o) {
      const std::size_t src = static_cast<std::size_t>(o) * len * inner;
      const std::size_t dst = (static_cast<std::size_t>(o) * total_axis + axis_offset) * inner;
      std::copy(pv.begin() + src, pv.begin() + src + static_cast<std::size_t>(len) * inner,
                out.begin() + dst);
    }
    axis_offset += static_cast<std::size_t>(len);
  }

  auto backprop = [parts, offsets, outer, inner, total_axis, axis](const std::vector<T>& g) {
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
      const auto& p = parts[pi];
      if (!p.requires_grad()) continue;
      const int len = p.shape()[axis];
      auto& gp = p.grad();
      for (std::int64_t o = 0; o < outer; ++o) {
        const std::size_t dst = static_cast<std::size_t>(o) * len * inner;
        const std::size_t src = (static_cast<std::size_t>(o) * total_axis + offsets[pi]) * inner;
        for (std::size_t i = 0; i < static_cast<std::size_t>(len) * inner; ++i) gp[dst + i] += g[src + i];
      }
    }
  };
  return make_op<T>("concat", std::move(out_shape), std::move(out), parts, std::move(backprop));
}

template <std::floating_point T>
Tensor<T> reshape(const Tensor<T>& x, std::vector<int> new_shape) {
  require(shape_numel(new_shape) == x.numel(),
          "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(new_shape));
  std::vector<T> out(x.values());
  auto backprop = [x](const std::vector<T>& g) {
    if (!x.requires_grad()) return;
    auto& gx = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  };
  return make_op<T>("reshape", std::move(new_shape), std::move(out), {x}, std::move(backprop));
}

template <std::floating_point T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  require(x.rank() == 3, "global_avg_pool: input must be (C,H,W), got " + shape_str(x.shape()));
  const int c = x.shape()[0];
  const std::size_t plane = static_cast<std::size_t>(x.shape()[1]) * x.shape()[2];
  const T inv = T(1) / static_cast<T>(plane);
  std::vector<T> out(static_cast<std::size_t>(c), T(0));
  const auto& xv = x.values();
  for (int ci = 0; ci < c; ++ci) {
    T acc = T(0);
    for (std::size_t p = 0; p < plane; ++p) acc += xv[ci * plane + p];
    out[ci] = acc * inv;
  }
  auto backprop = [x, c, plane, inv](const std::vector<T>& g) {
    if (!x.requires_grad()) return;
    auto& gx = x.grad();
    for (int ci = 0; ci < c; ++ci) {
      const T gv = g[ci] * inv;
      for (std::size_t p = 0; p < plane; ++p) gx[ci * plane + p] += gv;
    }
  };
  return make_op<T>("global_avg_pool", {c}, std::move(out), {x}, std::move(backprop));
}

// ---------------------------------------------------------------------------
// explicit instantiation
// ---------------------------------------------------------------------------

#define OLTR_INSTANTIATE_TENSOR(T)                                                              \
  template class Tensor<T>;                                                                     \
  template class Tape<T>;                                                                       \
  template void backward<T>(const Tape<T>&, const Tensor<T>&);                                  \
  template void backward<T>(const Tensor<T>&);                                                  \
  template Tensor<T> make_op<T>(const std::string&, std::vector<int>, std::vector<T>,           \
                                std::vector<Tensor<T>>, std::function<void(const std::vector<T>&)>);

OLTR_INSTANTIATE_TENSOR(float)
OLTR_INSTANTIATE_TENSOR(double)

#undef OLTR_INSTANTIATE_TENSOR

// GCC 11 mis-handles explicit instantiation of function templates whose body
// converts a local lambda to std::function (PR51048), so the op templates are
// instantiated implicitly by odr-using each specialization here.
namespace detail {

template <std::floating_point T>
void* op_instantiations[] = {
    reinterpret_cast<void*>(
        static_cast<Tensor<T> (*)(const Tensor<T>&, const Tensor<T>&, bool, bool)>(&matmul<T>)),
    reinterpret_cast<void*>(
        static_cast<Tensor<T> (*)(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&)>(
            &conv2d_3x3<T>)),
    reinterpret_cast<void*>(static_cast<Tensor<T> (*)(const Tensor<T>&, const Tensor<T>&)>(&add<T>)),
    reinterpret_cast<void*>(static_cast<Tensor<T> (*)(const Tensor<T>&, const Tensor<T>&)>(&sub<T>)),
    reinterpret_cast<void*>(
        static_cast<Tensor<T> (*)(const Tensor<T>&, const Tensor<T>&)>(&elemwise_mul<T>)),
    reinterpret_cast<void*>(static_cast<Tensor<T> (*)(const Tensor<T>&)>(&relu<T>)),
    reinterpret_cast<void*>(static_cast<Tensor<T> (*)(const Tensor<T>&)>(&tanh<T>)),
    reinterpret_cast<void*>(static_cast<Tensor<T> (*)(const Tensor<T>&)>(&exp<T>)),
    reinterpret_cast<void*>(static_cast<Tensor<T> (*)(const Tensor<T>&)>(&log<T>)),
    reinterpret_cast<void*>(static_cast<Tensor<T> (*)(const Tensor<T>&, int)>(&softmax<T>)),
    reinterpret_cast<void*>(static_cast<Tensor<T> (*)(const Tensor<T>&)>(&sum<T>)),
    reinterpret_cast<void*>(static_cast<Tensor<T> (*)(const Tensor<T>&)>(&mean<T>)),
    reinterpret_cast<void*>(static_cast<Tensor<T> (*)(const Tensor<T>&)>(&l2_norm<T>)),
    reinterpret_cast<void*>(static_cast<Tensor<T> (*)(const Tensor<T>&, T)>(&scalar_mul<T>)),
    reinterpret_cast<void*>(
        static_cast<Tensor<T> (*)(const std::vector<Tensor<T>>&, int)>(&concat<T>)),
    reinterpret_cast<void*>(
        static_cast<Tensor<T> (*)(const Tensor<T>&, std::vector<int>)>(&reshape<T>)),
    reinterpret_cast<void*>(static_cast<Tensor<T> (*)(const Tensor<T>&)>(&global_avg_pool<T>)),
};

template void* op_instantiations<float>[];
template void* op_instantiations<double>[];

}  // namespace detail

}  // namespace oltr
