#pragma once

// Reverse-mode autodiff on dense double tensors.
//
// Every primitive expresses its backward pass in terms of the same
// primitive set, so gradients are themselves differentiable graphs:
// backward(..., create_graph=true) yields gradient tensors that can be
// differentiated again. The guided reverse step of the purifier embeds a
// gradient in its forward computation, and the adaptive attack then
// differentiates through that, which is why second-order support is
// non-negotiable here.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "puridiff/errors.hpp"

namespace puridiff {

using Shape = std::vector<int>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);
bool same_shape(const Shape& a, const Shape& b);

class Tensor;

struct TensorNode {
    std::shared_ptr<std::vector<double>> value;
    Shape shape;
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<Tensor> parents;
    // grad wrt output, parents, this node -> grads wrt parents (same order;
    // an undefined Tensor means "no gradient for this parent")
    std::function<std::vector<Tensor>(const Tensor&, const std::vector<Tensor>&, const Tensor&)>
        backward;
};

class Tensor {
public:
    Tensor() = default;

    static Tensor constant(Shape shape, std::vector<double> values);
    static Tensor constant_like(const Tensor& t, std::vector<double> values);
    static Tensor scalar(double v);
    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double v);
    // Leaf that participates in differentiation.
    static Tensor leaf(Shape shape, std::vector<double> values, bool requires_grad = true);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int64_t size() const { return static_cast<int64_t>(node_->value->size()); }
    const std::vector<double>& data() const { return *node_->value; }
    // Only meaningful on leaves/constants; mutating an interior node would
    // desynchronize the recorded graph.
    std::vector<double>& mutable_data();
    double item() const;
    bool requires_grad() const { return node_ && node_->requires_grad; }
    // Leaves only. Trained models freeze their parameters so that
    // evaluation graphs never traverse them.
    void set_requires_grad(bool b);
    Tensor detach() const;

    TensorNode* node() const { return node_.get(); }

    static Tensor make(Shape shape, std::vector<double> values, const char* op,
                       std::vector<Tensor> parents,
                       std::function<std::vector<Tensor>(const Tensor&, const std::vector<Tensor>&,
                                                         const Tensor&)>
                           backward);
    // Zero-copy view with a new shape (shares the value buffer).
    static Tensor view(const Tensor& base, Shape shape, const char* op,
                       std::function<std::vector<Tensor>(const Tensor&, const std::vector<Tensor>&,
                                                         const Tensor&)>
                           backward);

private:
    std::shared_ptr<TensorNode> node_;
};

// ------------------------------------------------------------------ grad mode
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool saved_;
};

class GradModeGuard {
public:
    explicit GradModeGuard(bool enable);
    ~GradModeGuard();
    GradModeGuard(const GradModeGuard&) = delete;
    GradModeGuard& operator=(const GradModeGuard&) = delete;

private:
    bool saved_;
};

// ------------------------------------------------------------------ primitives
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
// Clamp to [0,1]; gradient masked to the interior (subgradient convention).
Tensor clamp01(const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);  // (m,k) x (k,n)
Tensor transpose2d(const Tensor& a);

// reductions / broadcasts (mutually adjoint pairs)
Tensor sum(const Tensor& a);                       // -> {1}
Tensor bcast_all(const Tensor& s, Shape shape);    // {1} -> shape
Tensor rowsum(const Tensor& a);                    // (m,n) -> (m,1)
Tensor repeat_cols(const Tensor& a, int n);        // (m,1) -> (m,n)
Tensor colsum(const Tensor& a);                    // (m,n) -> (1,n)
Tensor repeat_rows(const Tensor& a, int m);        // (1,n) -> (m,n)

// (B,C,H,W) helpers
Tensor bcast_chan_c(const Tensor& b, const Shape& bchw);   // (C)   -> (B,C,H,W)
Tensor sum_chan_c(const Tensor& x);                        // (B,C,H,W) -> (C)
Tensor bcast_chan_bc(const Tensor& b, const Shape& bchw);  // (B,C) -> (B,C,H,W)
Tensor sum_chan_bc(const Tensor& x);                       // (B,C,H,W) -> (B,C)

// stride-1 convolution plumbing
Tensor im2col(const Tensor& x, int k, int pad);            // -> (C*k*k, B*Ho*Wo)
Tensor col2im(const Tensor& cols, Shape x_shape, int k, int pad);
Tensor cbhw_to_bchw(const Tensor& a, int B, int C, int H, int W);  // (C,B*H*W) -> (B,C,H,W)
Tensor bchw_to_cbhw(const Tensor& a);                              // inverse

Tensor sumpool2(const Tensor& x);       // (B,C,H,W) -> (B,C,H/2,W/2), 2x2 sums
Tensor upsample2(const Tensor& x);      // nearest-neighbour 2x
Tensor concat_chan(const Tensor& a, const Tensor& b);
Tensor slice_chan(const Tensor& x, int c0, int len);
Tensor zeropad_chan(const Tensor& x, int c0, int c_total);
Tensor reflect_pad2(const Tensor& x, int p);
Tensor reflect_pad2_adjoint(const Tensor& x, Shape in_shape, int p);

// per-row element selection, used by cross-entropy
Tensor pick_per_row(const Tensor& a, std::shared_ptr<const std::vector<int>> idx);
Tensor scatter_per_row(const Tensor& g, std::shared_ptr<const std::vector<int>> idx, int n);

Tensor reshape(const Tensor& a, Shape shape);

// ------------------------------------------------------------------ composites
Tensor square(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_squares(const Tensor& a);                        // -> {1}
Tensor l2_norm(const Tensor& a, double eps_sq = 0.0);       // sqrt(sum a^2 + eps_sq)
Tensor silu(const Tensor& a);                               // a * sigmoid(a)
Tensor scale_by(const Tensor& a, const Tensor& s);          // a * bcast(s)
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int pad);
Tensor avgpool2(const Tensor& x);
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);  // x(B,D) w(C,D) b(1,C)

Tensor concat_cols(const Tensor& a, const Tensor& b);  // (m,n1)+(m,n2) -> (m,n1+n2)

// numerically stable per-row log-sum-exp; the row max enters as a constant
Tensor logsumexp_rows(const Tensor& logits);
// mean cross-entropy of logits (B,C) against integer labels
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);
Tensor softmax_rows(const Tensor& logits);

// ------------------------------------------------------------------ backward
class GradMap {
public:
    bool has(const Tensor& t) const;
    Tensor grad_of(const Tensor& t) const;       // undefined Tensor if absent
    Tensor grad_or_zeros(const Tensor& t) const;
    std::unordered_map<TensorNode*, Tensor>& raw() { return grads_; }

private:
    std::unordered_map<TensorNode*, Tensor> grads_;
    friend GradMap backward(const Tensor&, const Tensor&, bool);
};

// Gradients of `root` wrt every reachable requires_grad node. `seed` must
// match root's shape; pass an undefined Tensor for a scalar root to seed
// with 1. With create_graph the returned gradients are differentiable.
GradMap backward(const Tensor& root, const Tensor& seed = Tensor(), bool create_graph = false);

// ------------------------------------------------------------------ misc
bool all_finite(const Tensor& t);
void check_finite(const Tensor& t, const std::string& context);

}  // namespace puridiff
