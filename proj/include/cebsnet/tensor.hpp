#pragma once

// Rank-4 tensor (batch, channel, height, width) with reverse-mode gradient
// tracking. Every operation in ops.hpp produces a new node on a tape; calling
// backward() on a scalar result propagates exact gradients to all leaves.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace cebsnet {

using i64 = std::int64_t;

// Contract violations (shape mismatch, bad config, schedule errors). The CLI
// maps these to exit code 1.
class ContractError : public std::runtime_error {
 public:
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem and codec failures. The CLI maps these to exit code 2.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

struct Shape {
  i64 n = 0;
  i64 c = 0;
  i64 h = 0;
  i64 w = 0;

  i64 numel() const { return n * c * h * w; }
  i64 operator[](int i) const {
    switch (i) {
      case 0: return n;
      case 1: return c;
      case 2: return h;
      default: return w;
    }
  }
  bool operator==(const Shape& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    std::ostringstream os;
    os << "[" << n << "," << c << "," << h << "," << w << "]";
    return os.str();
  }
};

inline void check_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw ContractError(std::string(op) + ": shape mismatch " + a.str() +
                        " vs " + b.str());
  }
}

// Grad recording is on by default; NoGradGuard disables it for a scope
// (evaluation passes build no tape and free intermediates eagerly).
namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode_flag()) {
    detail::grad_mode_flag() = false;
  }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
class Tensor {
 public:
  struct Node {
    Shape shape;
    std::vector<T> values;
    std::vector<T> grad;  // allocated lazily during backward
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backward;  // pushes this node's grad to parents

    bool leaf() const { return requires_grad && parents.empty(); }
  };
  using NodePtr = std::shared_ptr<Node>;

  Tensor() = default;

  static Tensor zeros(Shape s, bool requires_grad = false) {
    return filled(s, T(0), requires_grad);
  }
  static Tensor filled(Shape s, T v, bool requires_grad = false) {
    check(s.n >= 0 && s.c >= 0 && s.h >= 0 && s.w >= 0,
          "tensor: negative extent in " + s.str());
    auto n = std::make_shared<Node>();
    n->shape = s;
    n->values.assign(static_cast<size_t>(s.numel()), v);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }
  static Tensor from_values(Shape s, std::vector<T> vals,
                            bool requires_grad = false) {
    check(static_cast<i64>(vals.size()) == s.numel(),
          "tensor: value count " + std::to_string(vals.size()) +
              " does not match shape " + s.str());
    auto n = std::make_shared<Node>();
    n->shape = s;
    n->values = std::move(vals);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }
  static Tensor scalar(T v, bool requires_grad = false) {
    return filled({1, 1, 1, 1}, v, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  i64 numel() const { return node_->shape.numel(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }

  const std::vector<T>& values() const { return node_->values; }
  std::vector<T>& values_mut() { return node_->values; }
  const std::vector<T>& grad() const { return node_->grad; }
  std::vector<T>& grad_mut() { return node_->grad; }
  bool has_grad() const { return node_ && !node_->grad.empty(); }

  T item() const {
    check(numel() == 1, "item(): tensor has " + std::to_string(numel()) +
                            " elements, expected 1");
    return node_->values[0];
  }

  void zero_grad() {
    if (node_) node_->grad.assign(node_->values.size(), T(0));
  }

  // Copy of values with no tape history.
  Tensor detach() const {
    auto n = std::make_shared<Node>();
    n->shape = node_->shape;
    n->values = node_->values;
    n->requires_grad = false;
    return Tensor(std::move(n));
  }

  void backward() {
    check(numel() == 1, "backward(): implicit seed requires a scalar output");
    backward(std::vector<T>{T(1)});
  }

  void backward(const std::vector<T>& seed) {
    check(node_ != nullptr, "backward(): undefined tensor");
    check(static_cast<i64>(seed.size()) == numel(),
          "backward(): seed size mismatch");
    if (!node_->requires_grad) return;

    std::vector<Node*> topo = topo_order(node_.get());
    for (Node* n : topo) {
      if (n->grad.size() != n->values.size()) {
        n->grad.assign(n->values.size(), T(0));
      }
    }
    for (size_t i = 0; i < seed.size(); ++i) node_->grad[i] += seed[i];

    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
      Node* n = *it;
      if (n->backward) n->backward();
      if (!n->leaf()) {
        n->grad.clear();
        n->grad.shrink_to_fit();
      }
    }
  }

  // Raw graph access for op construction.
  const NodePtr& node() const { return node_; }
  Node* raw() const { return node_.get(); }
  explicit Tensor(NodePtr n) : node_(std::move(n)) {}

 private:
  static std::vector<Node*> topo_order(Node* root) {
    std::vector<Node*> topo;
    std::unordered_set<Node*> visited;
    struct Frame {
      Node* n;
      size_t next;
    };
    std::vector<Frame> stack;
    stack.push_back({root, 0});
    visited.insert(root);
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next < f.n->parents.size()) {
        Node* p = f.n->parents[f.next++].get();
        if (p->requires_grad && !visited.count(p)) {
          visited.insert(p);
          stack.push_back({p, 0});
        }
      } else {
        topo.push_back(f.n);
        stack.pop_back();
      }
    }
    return topo;
  }

  NodePtr node_;
};

namespace detail {

// Output-node builder shared by all ops. Parents are attached only when the
// tape is recording and some input needs gradients.
template <typename T>
typename Tensor<T>::NodePtr make_node(
    Shape s, std::vector<typename Tensor<T>::NodePtr> inputs) {
  auto out = std::make_shared<typename Tensor<T>::Node>();
  out->shape = s;
  out->values.resize(static_cast<size_t>(s.numel()));
  if (grad_enabled()) {
    for (const auto& in : inputs) {
      if (in->requires_grad) {
        out->requires_grad = true;
        break;
      }
    }
    if (out->requires_grad) out->parents = std::move(inputs);
  }
  return out;
}

template <typename T>
void accum_grad(typename Tensor<T>::Node* n, size_t idx, T v) {
  if (n->requires_grad) n->grad[idx] += v;
}

template <typename T>
void ensure_grad(typename Tensor<T>::Node* n) {
  if (n->grad.size() != n->values.size()) {
    n->grad.assign(n->values.size(), T(0));
  }
}

template <typename T>
void check_finite(const std::vector<T>& v, const char* op) {
  for (T x : v) {
    if (!std::isfinite(static_cast<double>(x))) {
      throw ContractError(std::string(op) +
                          ": produced a non-finite value (NaN/Inf)");
    }
  }
}

}  // namespace detail

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace cebsnet
