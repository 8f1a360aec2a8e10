#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "mm/tensor.hpp"

namespace mm {

// Reverse-mode autodiff over Tensor. Graphs are built define-by-run; each op
// records a closure that scatters its upstream gradient into its parents.
// Creation order doubles as a topological order (parents are always created
// before children), so backward() just replays nodes newest-first.

struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily during backward
    bool requires_grad = false;
    int64_t order = 0;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;

    Tensor& ensure_grad();
};

class Var {
  public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Tensor& val() const { return node_->value; }
    Tensor& mutable_val() { return node_->value; }
    const std::vector<int64_t>& shape() const { return node_->value.shape; }
    bool requires_grad() const { return node_ && node_->requires_grad; }

    // Gradient accumulated by the last backward(); zeros if never reached.
    Tensor& grad() const { return node_->ensure_grad(); }
    void zero_grad() const;

    Var detach() const;

    std::shared_ptr<Node> node_;
};

// Runs reverse-mode accumulation from a scalar loss.
void backward(const Var& loss);

// Scoped guard that disables graph construction (inference / data prep).
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};
bool grad_enabled();

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double c);
Var neg(const Var& a);
Var gelu(const Var& a);
Var exp_op(const Var& a);
Var square(const Var& a);

// ---- matrix ----
Var matmul(const Var& a, const Var& b);          // [m,k] x [k,n]
Var bmm(const Var& a, const Var& b);             // [B,m,k] x [B,k,n]
Var transpose_last2(const Var& a);               // [..,m,n] -> [..,n,m]

// ---- structure ----
Var permute(const Var& a, const std::vector<int>& perm);
Var reshape(const Var& a, std::vector<int64_t> s);
Var concat(const std::vector<Var>& parts, int axis);
Var slice(const Var& a, int axis, int64_t start, int64_t len);
// Nearest-neighbour 2x upsampling of the two spatial axes of (T, h, w, C).
Var upsample2x_hw(const Var& a);

// ---- broadcast over trailing axis ----
Var add_vec(const Var& x, const Var& v);  // x[..,D] + v[D]
Var mul_vec(const Var& x, const Var& v);  // x[..,D] * v[D]

// ---- normalization / reductions ----
Var layernorm(const Var& x, double eps = 1e-6);  // last axis, no affine
Var softmax_last(const Var& x);
Var sum_all(const Var& x);   // -> [1]
Var mean_all(const Var& x);  // -> [1]
Var mse(const Var& a, const Var& b);

}  // namespace mm
