#include "puridiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace puridiff {

int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

namespace {

thread_local bool g_grad_enabled = true;

void require(bool cond, const std::string& msg) {
    if (!cond) throw argument_error(msg);
}

std::shared_ptr<TensorNode> new_node(Shape shape, std::vector<double> values) {
    auto n = std::make_shared<TensorNode>();
    require(static_cast<int64_t>(values.size()) == numel(shape),
            "tensor value count does not match shape " + shape_str(shape));
    n->value = std::make_shared<std::vector<double>>(std::move(values));
    n->shape = std::move(shape);
    return n;
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : saved_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = saved_; }

GradModeGuard::GradModeGuard(bool enable) : saved_(g_grad_enabled) { g_grad_enabled = enable; }
GradModeGuard::~GradModeGuard() { g_grad_enabled = saved_; }

// ----------------------------------------------------------------- Tensor
Tensor Tensor::constant(Shape shape, std::vector<double> values) {
    Tensor t;
    t.node_ = new_node(std::move(shape), std::move(values));
    return t;
}

Tensor Tensor::constant_like(const Tensor& t, std::vector<double> values) {
    return constant(t.shape(), std::move(values));
}

Tensor Tensor::scalar(double v) { return constant({1}, {v}); }

Tensor Tensor::zeros(Shape shape) {
    std::vector<double> v(static_cast<size_t>(numel(shape)), 0.0);
    return constant(std::move(shape), std::move(v));
}

Tensor Tensor::full(Shape shape, double x) {
    std::vector<double> v(static_cast<size_t>(numel(shape)), x);
    return constant(std::move(shape), std::move(v));
}

Tensor Tensor::leaf(Shape shape, std::vector<double> values, bool requires_grad) {
    Tensor t = constant(std::move(shape), std::move(values));
    t.node_->requires_grad = requires_grad;
    return t;
}

std::vector<double>& Tensor::mutable_data() {
    if (!node_->parents.empty())
        throw numerical_error("mutable_data() on a non-leaf tensor");
    return *node_->value;
}

double Tensor::item() const {
    require(size() == 1, "item() on tensor with " + std::to_string(size()) + " elements");
    return (*node_->value)[0];
}

void Tensor::set_requires_grad(bool b) {
    if (!node_->parents.empty())
        throw numerical_error("set_requires_grad() on a non-leaf tensor");
    node_->requires_grad = b;
}

Tensor Tensor::detach() const {
    Tensor t;
    t.node_ = std::make_shared<TensorNode>();
    t.node_->value = node_->value;  // share the buffer
    t.node_->shape = node_->shape;
    t.node_->op = "detach";
    return t;
}

Tensor Tensor::make(Shape shape, std::vector<double> values, const char* op,
                    std::vector<Tensor> parents,
                    std::function<std::vector<Tensor>(const Tensor&, const std::vector<Tensor>&,
                                                      const Tensor&)>
                        backward) {
    Tensor t;
    t.node_ = new_node(std::move(shape), std::move(values));
    t.node_->op = op;
    if (g_grad_enabled) {
        bool needs = false;
        for (const Tensor& p : parents)
            if (p.requires_grad()) needs = true;
        if (needs) {
            t.node_->requires_grad = true;
            t.node_->parents = std::move(parents);
            t.node_->backward = std::move(backward);
        }
    }
    return t;
}

Tensor Tensor::view(const Tensor& base, Shape shape, const char* op,
                    std::function<std::vector<Tensor>(const Tensor&, const std::vector<Tensor>&,
                                                      const Tensor&)>
                        backward) {
    require(numel(shape) == base.size(),
            "view shape " + shape_str(shape) + " incompatible with " + shape_str(base.shape()));
    Tensor t;
    t.node_ = std::make_shared<TensorNode>();
    t.node_->value = base.node_->value;
    t.node_->shape = std::move(shape);
    t.node_->op = op;
    if (g_grad_enabled && base.requires_grad()) {
        t.node_->requires_grad = true;
        t.node_->parents = {base};
        t.node_->backward = std::move(backward);
    }
    return t;
}

// ----------------------------------------------------------------- helpers
namespace {

using Bwd = std::function<std::vector<Tensor>(const Tensor&, const std::vector<Tensor>&,
                                              const Tensor&)>;

Tensor ew2(const Tensor& a, const Tensor& b, const char* op, double (*f)(double, double),
           Bwd bwd) {
    require(same_shape(a.shape(), b.shape()),
            std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                shape_str(b.shape()));
    const auto& av = a.data();
    const auto& bv = b.data();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = f(av[i], bv[i]);
    return Tensor::make(a.shape(), std::move(out), op, {a, b}, std::move(bwd));
}

Tensor ew1(const Tensor& a, const char* op, double (*f)(double), Bwd bwd) {
    const auto& av = a.data();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
    return Tensor::make(a.shape(), std::move(out), op, {a}, std::move(bwd));
}

}  // namespace

// ----------------------------------------------------------------- elementwise
Tensor add(const Tensor& a, const Tensor& b) {
    return ew2(a, b, "add", [](double x, double y) { return x + y; },
               [](const Tensor& g, const std::vector<Tensor>&, const Tensor&) {
                   return std::vector<Tensor>{g, g};
               });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return ew2(a, b, "sub", [](double x, double y) { return x - y; },
               [](const Tensor& g, const std::vector<Tensor>&, const Tensor&) {
                   return std::vector<Tensor>{g, neg(g)};
               });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return ew2(a, b, "mul", [](double x, double y) { return x * y; },
               [](const Tensor& g, const std::vector<Tensor>& p, const Tensor&) {
                   return std::vector<Tensor>{mul(g, p[1]), mul(g, p[0])};
               });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return ew2(a, b, "div", [](double x, double y) { return x / y; },
               [](const Tensor& g, const std::vector<Tensor>& p, const Tensor& self) {
                   // d/db (a/b) = -(a/b)/b
                   return std::vector<Tensor>{div(g, p[1]), neg(div(mul(g, self), p[1]))};
               });
}

Tensor neg(const Tensor& a) {
    return ew1(a, "neg", [](double x) { return -x; },
               [](const Tensor& g, const std::vector<Tensor>&, const Tensor&) {
                   return std::vector<Tensor>{neg(g)};
               });
}

Tensor exp(const Tensor& a) {
    return ew1(a, "exp", [](double x) { return std::exp(x); },
               [](const Tensor& g, const std::vector<Tensor>&, const Tensor& self) {
                   return std::vector<Tensor>{mul(g, self)};
               });
}

Tensor log(const Tensor& a) {
    return ew1(a, "log", [](double x) { return std::log(x); },
               [](const Tensor& g, const std::vector<Tensor>& p, const Tensor&) {
                   return std::vector<Tensor>{div(g, p[0])};
               });
}

Tensor sqrt(const Tensor& a) {
    return ew1(a, "sqrt", [](double x) { return std::sqrt(x); },
               [](const Tensor& g, const std::vector<Tensor>&, const Tensor& self) {
                   return std::vector<Tensor>{div(g, mul_scalar(self, 2.0))};
               });
}

Tensor sigmoid(const Tensor& a) {
    return ew1(a, "sigmoid",
               [](double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                              : std::exp(x) / (1.0 + std::exp(x)); },
               [](const Tensor& g, const std::vector<Tensor>&, const Tensor& self) {
                   Tensor one_minus = add_scalar(neg(self), 1.0);
                   return std::vector<Tensor>{mul(g, mul(self, one_minus))};
               });
}

Tensor add_scalar(const Tensor& a, double c) {
    const auto& av = a.data();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] + c;
    return Tensor::make(a.shape(), std::move(out), "add_scalar", {a},
                        [](const Tensor& g, const std::vector<Tensor>&, const Tensor&) {
                            return std::vector<Tensor>{g};
                        });
}

Tensor mul_scalar(const Tensor& a, double c) {
    const auto& av = a.data();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * c;
    return Tensor::make(a.shape(), std::move(out), "mul_scalar", {a},
                        [c](const Tensor& g, const std::vector<Tensor>&, const Tensor&) {
                            return std::vector<Tensor>{mul_scalar(g, c)};
                        });
}

Tensor clamp01(const Tensor& a) {
    const auto& av = a.data();
    std::vector<double> out(av.size());
    std::vector<double> mask(av.size());
    for (size_t i = 0; i < av.size(); ++i) {
        out[i] = std::min(1.0, std::max(0.0, av[i]));
        mask[i] = (av[i] > 0.0 && av[i] < 1.0) ? 1.0 : 0.0;
    }
    Tensor mask_t = Tensor::constant(a.shape(), std::move(mask));
    return Tensor::make(a.shape(), std::move(out), "clamp01", {a},
                        [mask_t](const Tensor& g, const std::vector<Tensor>&, const Tensor&) {
                            return std::vector<Tensor>{mul(g, mask_t)};
                        });
}

// ----------------------------------------------------------------- matmul
Tensor matmul(const Tensor& a, const Tensor& b) {
    require(a.shape().size() == 2 && b.shape().size() == 2, "matmul: operands must be 2-D");
    int m = a.shape()[0], k = a.shape()[1];
    int k2 = b.shape()[0], n = b.shape()[1];
    require(k == k2, "matmul: inner dims " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const double* A = a.data().data();
    const double* B = b.data().data();
    std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
    double* O = out.data();
    for (int i = 0; i < m; ++i) {
        const double* Ai = A + static_cast<size_t>(i) * k;
        double* Oi = O + static_cast<size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            double aik = Ai[kk];
            if (aik == 0.0) continue;
            const double* Bk = B + static_cast<size_t>(kk) * n;
            for (int j = 0; j < n; ++j) Oi[j] += aik * Bk[j];
        }
    }
    return Tensor::make({m, n}, std::move(out), "matmul", {a, b},
                        [](const Tensor& g, const std::vector<Tensor>& p, const Tensor&) {
                            return std::vector<Tensor>{matmul(g, transpose2d(p[1])),
                                                       matmul(transpose2d(p[0]), g)};
                        });
}

Tensor transpose2d(const Tensor& a) {
    require(a.shape().size() == 2, "transpose2d: operand must be 2-D");
    int m = a.shape()[0], n = a.shape()[1];
    const auto& av = a.data();
    std::vector<double> out(av.size());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[static_cast<size_t>(j) * m + i] = av[static_cast<size_t>(i) * n + j];
    return Tensor::make({n, m}, std::move(out), "transpose2d", {a},
                        [](const Tensor& g, const std::vector<Tensor>&, const Tensor&) {
                            return std::vector<Tensor>{transpose2d(g)};
                        });
}

// ----------------------------------------------------------------- reductions
Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    Shape in_shape = a.shape();
    return Tensor::make({1}, {s}, "sum", {a},
                        [in_shape](const Tensor& g, const std::vector<Tensor>&, const Tensor&) {
                            return std::vector<Tensor>{bcast_all(g, in_shape)};
                        });
}

Tensor bcast_all(const Tensor& s, Shape shape) {
    require(s.size() == 1, "bcast_all: source must be a scalar tensor");
    std::vector<double> out(static_cast<size_t>(numel(shape)), s.data()[0]);
    return Tensor::make(std::move(shape), std::move(out), "bcast_all", {s},
                        [](const Tensor& g, const std::vector<Tensor>&, const Tensor&) {
                            return std::vector<Tensor>{sum(g)};
                        });
}

Tensor rowsum(const Tensor& a) {
    require(a.shape().size() == 2, "rowsum: operand must be 2-D");
    int m = a.shape()[0], n = a.shape()[1];
    const auto& av = a.data();
    std::vector<double> out(m, 0.0);
    for (int i = 0; i < m; ++i) {
        double s = 0.0;
        const double* row = av.data() + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) s += row[j];
        out[i] = s;
    }
    return Tensor::make({m, 1}, std::move(out), "rowsum", {a},
                        [n](const Tensor& g, const std::vector<Tensor>&, const Tensor&) {
                            return std::vector<Tensor>{repeat_cols(g, n)};
                        });
}

Tensor repeat_cols(const Tensor& a, int n) {
    require(a.shape().size() == 2 && a.shape()[1] == 1, "repeat_cols: operand must be (m,1)");
    int m = a.shape()[0];
    const auto& av = a.data();
    std::vector<double> out(static_cast<size_t>(m) * n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[static_cast<size_t>(i) * n + j] = av[i];
    return Tensor::make({m, n}, std::move(out), "repeat_cols", {a},
                        [](const Tensor& g, const std::vector<Tensor>&, const Tensor&) {
                            return std::vector<Tensor>{rowsum(g)};
                        });
}

Tensor colsum(const Tensor& a) {
    require(a.shape().size() == 2, "colsum: operand must be 2-D");
    int m = a.shape()[0], n = a.shape()[1];
    const auto& av = a.data();
    std::vector<double> out(n, 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[j] += av[static_cast<size_t>(i) * n + j];
    return Tensor::make({1, n}, std::move(out), "colsum", {a},
                        [m](const Tensor& g, const std::vector<Tensor>&, const Tensor&) {
                            return std::vector<Tensor>{repeat_rows(g, m)};
                        });
}

Tensor repeat_rows(const Tensor& a, int m) {
    require(a.shape().size() == 2 && a.shape()[0] == 1, "repeat_rows: operand must be (1,n)");
    int n = a.shape()[1];
    const auto& av = a.data();
    std::vector<double> out(static_cast<size_t>(m) * n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[static_cast<size_t>(i) * n + j] = av[j];
    return Tensor::make({m, n}, std::move(out), "repeat_rows", {a},
                        [](const Tensor& g, const std::vector<Tensor>&, const Tensor&) {
                            return std::vector<Tensor>{colsum(g)};
                        });
}

// ----------------------------------------------------------------- channel broadcasts
namespace {
void check_bchw(const Shape& s, const char* op) {
    require(s.size() == 4, std::string(op) + ": operand must be (B,C,H,W), got " + shape_str(s));
}
}  // namespace

Tensor bcast_chan_c(const Tensor& b, const Shape& bchw) {
    check_bchw(bchw, "bcast_chan_c");
    int B = bchw[0], C = bchw[1], H = bchw[2], W = bchw[3];
    require(b.size() == C, "bcast_chan_c: bias size must equal channel count");
    const auto& bv = b.data();
    std::vector<double> out(static_cast<size_t>(B) * C * H * W);
    size_t hw = static_cast<size_t>(H) * W;
    for (int n = 0; n < B; ++n)
        for (int c = 0; c < C; ++c) {
            double v = bv[c];
            double* dst = out.data() + (static_cast<size_t>(n) * C + c) * hw;
            for (size_t i = 0; i < hw; ++i) dst[i] = v;
        }
    return Tensor::make(bchw, std::move(out), "bcast_chan_c", {b},
                        [](const Tensor& g, const std::vector<Tensor>&, const Tensor&) {
                            return std::vector<Tensor>{sum_chan_c(g)};
                        });
}

Tensor sum_chan_c(const Tensor& x) {
    check_bchw(x.shape(), "sum_chan_c");
    int B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const auto& xv = x.data();
    std::vector<double> out(C, 0.0);
    size_t hw = static_cast<size_t>(H) * W;
    for (int n = 0; n < B; ++n)
        for (int c = 0; c < C; ++c) {
            const double* src = xv.data() + (static_cast<size_t>(n) * C + c) * hw;
            double s = 0.0;
            for (size_t i = 0; i < hw; ++i) s += src[i];
            out[c] += s;
        }
    Shape in_shape = x.shape();
    return Tensor::make({C}, std::move(out), "sum_chan_c", {x},
                        [in_shape](const Tensor& g, const std::vector<Tensor>&, const Tensor&) {
                            return std::vector<Tensor>{bcast_chan_c(g, in_shape)};
                        });
}

Tensor bcast_chan_bc(const Tensor& b, const Shape& bchw) {
    check_bchw(bchw, "bcast_chan_bc");
    int B = bchw[0], C = bchw[1], H = bchw[2], W = bchw[3];
    require(b.shape().size() == 2 && b.shape()[0] == B && b.shape()[1] == C,
            "bcast_chan_bc: source must be (B,C)");
    const auto& bv = b.data();
    std::vector<double> out(static_cast<size_t>(B) * C * H * W);
    size_t hw = static_cast<size_t>(H) * W;
    for (int n = 0; n < B; ++n)
        for (int c = 0; c < C; ++c) {
            double v = bv[static_cast<size_t>(n) * C + c];
            double* dst = out.data() + (static_cast<size_t>(n) * C + c) * hw;
            for (size_t i = 0; i < hw; ++i) dst[i] = v;
        }
    return Tensor::make(bchw, std::move(out), "bcast_chan_bc", {b},
                        [](const Tensor& g, const std::vector<Tensor>&, const Tensor&) {
                            return std::vector<Tensor>{sum_chan_bc(g)};
                        });
}

Tensor sum_chan_bc(const Tensor& x) {
    check_bchw(x.shape(), "sum_chan_bc");
    int B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const auto& xv = x.data();
    std::vector<double> out(static_cast<size_t>(B) * C, 0.0);
    size_t hw = static_cast<size_t>(H) * W;
    for (int n = 0; n < B; ++n)
        for (int c = 0; c < C; ++c) {
            const double* src = xv.data() + (static_cast<size_t>(n) * C + c) * hw;
            double s = 0.0;
            for (size_t i = 0; i < hw; ++i) s += src[i];
            out[static_cast<size_t>(n) * C + c] = s;
        }
    Shape in_shape = x.shape();
    return Tensor::make({B, C}, std::move(out), "sum_chan_bc", {x},
                        [in_shape](const Tensor& g, const std::vector<Tensor>&, const Tensor&) {
                            return std::vector<Tensor>{bcast_chan_bc(g, in_shape)};
                        });
}

// ----------------------------------------------------------------- im2col / col2im
Tensor im2col(const Tensor& x, int k, int pad) {
    check_bchw(x.shape(), "im2col");
    int B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    int Ho = H + 2 * pad - k + 1, Wo = W + 2 * pad - k + 1;
    require(Ho >= 1 && Wo >= 1, "im2col: kernel larger than padded input");
    const auto& xv = x.data();
    std::vector<double> out(static_cast<size_t>(C) * k * k * B * Ho * Wo, 0.0);
    size_t ncols = static_cast<size_t>(B) * Ho * Wo;
    for (int c = 0; c < C; ++c)
        for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
                size_t r = (static_cast<size_t>(c) * k + ki) * k + kj;
                double* dst = out.data() + r * ncols;
                for (int b = 0; b < B; ++b) {
                    const double* src = xv.data() + (static_cast<size_t>(b) * C + c) * H * W;
                    for (int i = 0; i < Ho; ++i) {
                        int ii = i + ki - pad;
                        double* drow = dst + (static_cast<size_t>(b) * Ho + i) * Wo;
                        if (ii < 0 || ii >= H) continue;  // stays zero
                        const double* srow = src + static_cast<size_t>(ii) * W;
                        int jj0 = kj - pad;
                        int j_lo = std::max(0, -jj0);
                        int j_hi = std::min(Wo, W - jj0);
                        for (int j = j_lo; j < j_hi; ++j) drow[j] = srow[j + jj0];
                    }
                }
            }
    Shape in_shape = x.shape();
    return Tensor::make({C * k * k, static_cast<int>(ncols)}, std::move(out), "im2col", {x},
                        [in_shape, k, pad](const Tensor& g, const std::vector<Tensor>&,
                                           const Tensor&) {
                            return std::vector<Tensor>{col2im(g, in_shape, k, pad)};
                        });
}

Tensor col2im(const Tensor& cols, Shape x_shape, int k, int pad) {
    check_bchw(x_shape, "col2im");
    int B = x_shape[0], C = x_shape[1], H = x_shape[2], W = x_shape[3];
    int Ho = H + 2 * pad - k + 1, Wo = W + 2 * pad - k + 1;
    size_t ncols = static_cast<size_t>(B) * Ho * Wo;
    require(cols.shape().size() == 2 && cols.shape()[0] == C * k * k &&
                cols.shape()[1] == static_cast<int>(ncols),
            "col2im: column matrix shape mismatch");
    const auto& cv = cols.data();
    std::vector<double> out(static_cast<size_t>(numel(x_shape)), 0.0);
    for (int c = 0; c < C; ++c)
        for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
                size_t r = (static_cast<size_t>(c) * k + ki) * k + kj;
                const double* src = cv.data() + r * ncols;
                for (int b = 0; b < B; ++b) {
                    double* dst = out.data() + (static_cast<size_t>(b) * C + c) * H * W;
                    for (int i = 0; i < Ho; ++i) {
                        int ii = i + ki - pad;
                        if (ii < 0 || ii >= H) continue;
                        const double* srow = src + (static_cast<size_t>(b) * Ho + i) * Wo;
                        double* drow = dst + static_cast<size_t>(ii) * W;
                        int jj0 = kj - pad;
                        int j_lo = std::max(0, -jj0);
                        int j_hi = std::min(Wo, W - jj0);
                        for (int j = j_lo; j < j_hi; ++j) drow[j + jj0] += srow[j];
                    }
                }
            }
    return Tensor::make(x_shape, std::move(out), "col2im", {cols},
                        [k, pad](const Tensor& g, const std::vector<Tensor>&, const Tensor&) {
                            return std::vector<Tensor>{im2col(g, k, pad)};
                        });
}

Tensor cbhw_to_bchw(const Tensor& a, int B, int C, int H, int W) {
    require(a.shape().size() == 2 && a.shape()[0] == C &&
                a.shape()[1] == B * H * W,
            "cbhw_to_bchw: shape mismatch");
    const auto& av = a.data();
    std::vector<double> out(av.size());
    size_t hw = static_cast<size_t>(H) * W;
    size_t bhw = static_cast<size_t>(B) * hw;
    for (int c = 0; c < C; ++c)
        for (int b = 0; b < B; ++b) {
            const double* src = av.data() + c * bhw + b * hw;
            double* dst = out.data() + (static_cast<size_t>(b) * C + c) * hw;
            for (size_t i = 0; i < hw; ++i) dst[i] = src[i];
        }
    return Tensor::make({B, C, H, W}, std::move(out), "cbhw_to_bchw", {a},
                        [](const Tensor& g, const std::vector<Tensor>&, const Tensor&) {
                            return std::vector<Tensor>{bchw_to_cbhw(g)};
                        });
}

Tensor bchw_to_cbhw(const Tensor& a) {
    check_bchw(a.shape(), "bchw_to_cbhw");
    int B = a.shape()[0], C = a.shape()[1], H = a.shape()[2], W = a.shape()[3];
    const auto& av = a.data();
    std::vector<double> out(av.size());
    size_t hw = static_cast<size_t>(H) * W;
    size_t bhw = static_cast<size_t>(B) * hw;
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const double* src = av.data() + (static_cast<size_t>(b) * C + c) * hw;
            double* dst = out.data() + c * bhw + b * hw;
            for (size_t i = 0; i < hw; ++i) dst[i] = src[i];
        }
    return Tensor::make({C, B * H * W}, std::move(out), "bchw_to_cbhw", {a},
                        [B, C, H, W](const Tensor& g, const std::vector<Tensor>&, const Tensor&) {
                            return std::vector<Tensor>{cbhw_to_bchw(g, B, C, H, W)};
                        });
}

// ----------------------------------------------------------------- pooling
Tensor sumpool2(const Tensor& x) {
    check_bchw(x.shape(), "sumpool2");
    int B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    require(H % 2 == 0 && W % 2 == 0, "sumpool2: H and W must be even");
    int Ho = H / 2, Wo = W / 2;
    const auto& xv = x.data();
    std::vector<double> out(static_cast<size_t>(B) * C * Ho * Wo);
    for (int bc = 0; bc < B * C; ++bc) {
        const double* src = xv.data() + static_cast<size_t>(bc) * H * W;
        double* dst = out.data() + static_cast<size_t>(bc) * Ho * Wo;
        for (int i = 0; i < Ho; ++i)
            for (int j = 0; j < Wo; ++j)
                dst[static_cast<size_t>(i) * Wo + j] =
                    src[static_cast<size_t>(2 * i) * W + 2 * j] +
                    src[static_cast<size_t>(2 * i) * W + 2 * j + 1] +
                    src[static_cast<size_t>(2 * i + 1) * W + 2 * j] +
                    src[static_cast<size_t>(2 * i + 1) * W + 2 * j + 1];
    }
    return Tensor::make({B, C, Ho, Wo}, std::move(out), "sumpool2", {x},
                        [](const Tensor& g, const std::vector<Tensor>&, const Tensor&) {
                            return std::vector<Tensor>{upsample2(g)};
                        });
}

Tensor upsample2(const Tensor& x) {
    check_bchw(x.shape(), "upsample2");
    int B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    int Ho = H * 2, Wo = W * 2;
    const auto& xv = x.data();
    std::vector<double> out(static_cast<size_t>(B) * C * Ho * Wo);
    for (int bc = 0; bc < B * C; ++bc) {
        const double* src = xv.data() + static_cast<size_t>(bc) * H * W;
        double* dst = out.data() + static_cast<size_t>(bc) * Ho * Wo;
        for (int i = 0; i < Ho; ++i)
            for (int j = 0; j < Wo; ++j)
                dst[static_cast<size_t>(i) * Wo + j] = src[static_cast<size_t>(i / 2) * W + j / 2];
    }
    return Tensor::make({B, C, Ho, Wo}, std::move(out), "upsample2", {x},
                        [](const Tensor& g, const std::vector<Tensor>&, const Tensor&) {
                            return std::vector<Tensor>{sumpool2(g)};
                        });
}

// ----------------------------------------------------------------- channel cat/slice
Tensor concat_chan(const Tensor& a, const Tensor& b) {
    check_bchw(a.shape(), "concat_chan");
    check_bchw(b.shape(), "concat_chan");
    int B = a.shape()[0], C1 = a.shape()[1], H = a.shape()[2], W = a.shape()[3];
    int C2 = b.shape()[1];
    require(b.shape()[0] == B && b.shape()[2] == H && b.shape()[3] == W,
            "concat_chan: spatial/batch dims must match");
    const auto& av = a.data();
    const auto& bv = b.data();
    std::vector<double> out(static_cast<size_t>(B) * (C1 + C2) * H * W);
    size_t hw = static_cast<size_t>(H) * W;
    for (int n = 0; n < B; ++n) {
        std::copy(av.begin() + static_cast<size_t>(n) * C1 * hw,
                  av.begin() + static_cast<size_t>(n + 1) * C1 * hw,
                  out.begin() + static_cast<size_t>(n) * (C1 + C2) * hw);
        std::copy(bv.begin() + static_cast<size_t>(n) * C2 * hw,
                  bv.begin() + static_cast<size_t>(n + 1) * C2 * hw,
                  out.begin() + static_cast<size_t>(n) * (C1 + C2) * hw + C1 * hw);
    }
    return Tensor::make({B, C1 + C2, H, W}, std::move(out), "concat_chan", {a, b},
                        [C1, C2](const Tensor& g, const std::vector<Tensor>&, const Tensor&) {
                            return std::vector<Tensor>{slice_chan(g, 0, C1), slice_chan(g, C1, C2)};
                        });
}

Tensor slice_chan(const Tensor& x, int c0, int len) {
    check_bchw(x.shape(), "slice_chan");
    int B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    require(c0 >= 0 && c0 + len <= C, "slice_chan: channel range out of bounds");
    const auto& xv = x.data();
    std::vector<double> out(static_cast<size_t>(B) * len * H * W);
    size_t hw = static_cast<size_t>(H) * W;
    for (int n = 0; n < B; ++n)
        std::copy(xv.begin() + (static_cast<size_t>(n) * C + c0) * hw,
                  xv.begin() + (static_cast<size_t>(n) * C + c0 + len) * hw,
                  out.begin() + static_cast<size_t>(n) * len * hw);
    return Tensor::make({B, len, H, W}, std::move(out), "slice_chan", {x},
                        [c0, C](const Tensor& g, const std::vector<Tensor>&, const Tensor&) {
                            return std::vector<Tensor>{zeropad_chan(g, c0, C)};
                        });
}

Tensor zeropad_chan(const Tensor& x, int c0, int c_total) {
    check_bchw(x.shape(), "zeropad_chan");
    int B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    require(c0 >= 0 && c0 + C <= c_total, "zeropad_chan: channel range out of bounds");
    const auto& xv = x.data();
    std::vector<double> out(static_cast<size_t>(B) * c_total * H * W, 0.0);
    size_t hw = static_cast<size_t>(H) * W;
    for (int n = 0; n < B; ++n)
        std::copy(xv.begin() + static_cast<size_t>(n) * C * hw,
                  xv.begin() + static_cast<size_t>(n + 1) * C * hw,
                  out.begin() + (static_cast<size_t>(n) * c_total + c0) * hw);
    int len = C;
    return Tensor::make({B, c_total, H, W}, std::move(out), "zeropad_chan", {x},
                        [c0, len](const Tensor& g, const std::vector<Tensor>&, const Tensor&) {
                            return std::vector<Tensor>{slice_chan(g, c0, len)};
                        });
}

// ----------------------------------------------------------------- reflect pad
namespace {
inline int reflect_idx(int i, int n) {
    // 'reflect' without edge repetition: -1 -> 1, n -> n-2
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
}
}  // namespace

Tensor reflect_pad2(const Tensor& x, int p) {
    check_bchw(x.shape(), "reflect_pad2");
    int B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    require(p < H && p < W, "reflect_pad2: pad must be smaller than image side");
    int Ho = H + 2 * p, Wo = W + 2 * p;
    const auto& xv = x.data();
    std::vector<double> out(static_cast<size_t>(B) * C * Ho * Wo);
    for (int bc = 0; bc < B * C; ++bc) {
        const double* src = xv.data() + static_cast<size_t>(bc) * H * W;
        double* dst = out.data() + static_cast<size_t>(bc) * Ho * Wo;
        for (int i = 0; i < Ho; ++i) {
            int si = reflect_idx(i - p, H);
            for (int j = 0; j < Wo; ++j)
                dst[static_cast<size_t>(i) * Wo + j] =
                    src[static_cast<size_t>(si) * W + reflect_idx(j - p, W)];
        }
    }
    Shape in_shape = x.shape();
    return Tensor::make({B, C, Ho, Wo}, std::move(out), "reflect_pad2", {x},
                        [in_shape, p](const Tensor& g, const std::vector<Tensor>&, const Tensor&) {
                            return std::vector<Tensor>{reflect_pad2_adjoint(g, in_shape, p)};
                        });
}

Tensor reflect_pad2_adjoint(const Tensor& y, Shape in_shape, int p) {
    check_bchw(y.shape(), "reflect_pad2_adjoint");
    check_bchw(in_shape, "reflect_pad2_adjoint");
    int B = in_shape[0], C = in_shape[1], H = in_shape[2], W = in_shape[3];
    int Ho = H + 2 * p, Wo = W + 2 * p;
    require(y.shape()[2] == Ho && y.shape()[3] == Wo, "reflect_pad2_adjoint: shape mismatch");
    const auto& yv = y.data();
    std::vector<double> out(static_cast<size_t>(numel(in_shape)), 0.0);
    for (int bc = 0; bc < B * C; ++bc) {
        const double* src = yv.data() + static_cast<size_t>(bc) * Ho * Wo;
        double* dst = out.data() + static_cast<size_t>(bc) * H * W;
        for (int i = 0; i < Ho; ++i) {
            int si = reflect_idx(i - p, H);
            for (int j = 0; j < Wo; ++j)
                dst[static_cast<size_t>(si) * W + reflect_idx(j - p, W)] +=
                    src[static_cast<size_t>(i) * Wo + j];
        }
    }
    return Tensor::make(in_shape, std::move(out), "reflect_pad2_adjoint", {y},
                        [p](const Tensor& g, const std::vector<Tensor>&, const Tensor&) {
                            return std::vector<Tensor>{reflect_pad2(g, p)};
                        });
}

// ----------------------------------------------------------------- per-row pick
Tensor pick_per_row(const Tensor& a, std::shared_ptr<const std::vector<int>> idx) {
    require(a.shape().size() == 2, "pick_per_row: operand must be 2-D");
    int m = a.shape()[0], n = a.shape()[1];
    require(static_cast<int>(idx->size()) == m, "pick_per_row: index count mismatch");
    const auto& av = a.data();
    std::vector<double> out(m);
    for (int i = 0; i < m; ++i) {
        int j = (*idx)[i];
        require(j >= 0 && j < n, "pick_per_row: index out of range");
        out[i] = av[static_cast<size_t>(i) * n + j];
    }
    return Tensor::make({m, 1}, std::move(out), "pick_per_row", {a},
                        [idx, n](const Tensor& g, const std::vector<Tensor>&, const Tensor&) {
                            return std::vector<Tensor>{scatter_per_row(g, idx, n)};
                        });
}

Tensor scatter_per_row(const Tensor& g, std::shared_ptr<const std::vector<int>> idx, int n) {
    require(g.shape().size() == 2 && g.shape()[1] == 1, "scatter_per_row: operand must be (m,1)");
    int m = g.shape()[0];
    const auto& gv = g.data();
    std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i) out[static_cast<size_t>(i) * n + (*idx)[i]] = gv[i];
    return Tensor::make({m, n}, std::move(out), "scatter_per_row", {g},
                        [idx](const Tensor& gg, const std::vector<Tensor>&, const Tensor&) {
                            return std::vector<Tensor>{pick_per_row(gg, idx)};
                        });
}

Tensor reshape(const Tensor& a, Shape shape) {
    Shape in_shape = a.shape();
    return Tensor::view(a, std::move(shape), "reshape",
                        [in_shape](const Tensor& g, const std::vector<Tensor>&, const Tensor&) {
                            return std::vector<Tensor>{reshape(g, in_shape)};
                        });
}

// ----------------------------------------------------------------- composites
Tensor square(const Tensor& a) { return mul(a, a); }

Tensor mean(const Tensor& a) { return mul_scalar(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor sum_squares(const Tensor& a) { return sum(square(a)); }

Tensor l2_norm(const Tensor& a, double eps_sq) {
    return sqrt(add_scalar(sum_squares(a), eps_sq));
}

Tensor silu(const Tensor& a) { return mul(a, sigmoid(a)); }

Tensor scale_by(const Tensor& a, const Tensor& s) { return mul(a, bcast_all(s, a.shape())); }

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int pad) {
    check_bchw(x.shape(), "conv2d");
    require(w.shape().size() == 4, "conv2d: weight must be (Co,Ci,k,k)");
    int B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    int Co = w.shape()[0], Ci = w.shape()[1], k = w.shape()[2];
    require(w.shape()[3] == k && Ci == C, "conv2d: weight shape incompatible with input");
    int Ho = H + 2 * pad - k + 1, Wo = W + 2 * pad - k + 1;
    Tensor cols = im2col(x, k, pad);
    Tensor wmat = reshape(w, {Co, C * k * k});
    Tensor out = cbhw_to_bchw(matmul(wmat, cols), B, Co, Ho, Wo);
    if (bias.defined()) out = add(out, bcast_chan_c(bias, out.shape()));
    return out;
}

Tensor avgpool2(const Tensor& x) { return mul_scalar(sumpool2(x), 0.25); }

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    Tensor out = matmul(x, transpose2d(w));
    if (b.defined()) out = add(out, repeat_rows(b, out.shape()[0]));
    return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    require(a.shape().size() == 2 && b.shape().size() == 2 && a.shape()[0] == b.shape()[0],
            "concat_cols: operands must be 2-D with equal row counts");
    int m = a.shape()[0], n1 = a.shape()[1], n2 = b.shape()[1];
    Tensor a4 = reshape(a, {m, n1, 1, 1});
    Tensor b4 = reshape(b, {m, n2, 1, 1});
    return reshape(concat_chan(a4, b4), {m, n1 + n2});
}

Tensor logsumexp_rows(const Tensor& logits) {
    require(logits.shape().size() == 2, "logsumexp_rows: operand must be 2-D");
    int m = logits.shape()[0], n = logits.shape()[1];
    const auto& lv = logits.data();
    std::vector<double> mx(m, -1e300);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) mx[i] = std::max(mx[i], lv[static_cast<size_t>(i) * n + j]);
    Tensor m_const = Tensor::constant({m, 1}, std::move(mx));
    Tensor z = sub(logits, repeat_cols(m_const, n));
    return add(log(rowsum(exp(z))), m_const);
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    require(logits.shape().size() == 2, "cross_entropy: logits must be (B,C)");
    require(static_cast<int>(labels.size()) == logits.shape()[0],
            "cross_entropy: label count mismatch");
    int C = logits.shape()[1];
    for (int y : labels)
        require(y >= 0 && y < C, "cross_entropy: label out of range");
    auto idx = std::make_shared<const std::vector<int>>(labels);
    Tensor lse = logsumexp_rows(logits);
    Tensor picked = pick_per_row(logits, idx);
    return mean(sub(lse, picked));
}

Tensor softmax_rows(const Tensor& logits) {
    require(logits.shape().size() == 2, "softmax_rows: operand must be 2-D");
    int m = logits.shape()[0], n = logits.shape()[1];
    const auto& lv = logits.data();
    std::vector<double> mx(m, -1e300);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) mx[i] = std::max(mx[i], lv[static_cast<size_t>(i) * n + j]);
    Tensor m_const = Tensor::constant({m, 1}, std::move(mx));
    Tensor e = exp(sub(logits, repeat_cols(m_const, n)));
    return div(e, repeat_cols(rowsum(e), n));
}

// ----------------------------------------------------------------- backward
bool GradMap::has(const Tensor& t) const { return grads_.count(t.node()) > 0; }

Tensor GradMap::grad_of(const Tensor& t) const {
    auto it = grads_.find(t.node());
    return it == grads_.end() ? Tensor() : it->second;
}

Tensor GradMap::grad_or_zeros(const Tensor& t) const {
    Tensor g = grad_of(t);
    return g.defined() ? g : Tensor::zeros(t.shape());
}

GradMap backward(const Tensor& root, const Tensor& seed, bool create_graph) {
    GradMap gm;
    if (!root.requires_grad()) return gm;

    // reverse post-order DFS = topological order (consumers first)
    struct Frame {
        Tensor t;
        size_t next;
    };
    std::vector<Frame> stack;
    std::vector<Tensor> order;
    std::unordered_set<TensorNode*> visited;
    stack.push_back({root, 0});
    visited.insert(root.node());
    while (!stack.empty()) {
        Frame& f = stack.back();
        const auto& parents = f.t.node()->parents;
        if (f.next < parents.size()) {
            const Tensor& p = parents[f.next++];
            if (p.requires_grad() && !visited.count(p.node())) {
                visited.insert(p.node());
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.t);
            stack.pop_back();
        }
    }

    Tensor seed_t = seed;
    if (!seed_t.defined()) seed_t = Tensor::full(root.shape(), 1.0);
    if (!same_shape(seed_t.shape(), root.shape()))
        throw argument_error("backward: seed shape " + shape_str(seed_t.shape()) +
                             " does not match root " + shape_str(root.shape()));
    gm.grads_[root.node()] = seed_t;

    std::unique_ptr<NoGradGuard> guard;
    if (!create_graph) guard = std::make_unique<NoGradGuard>();

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const Tensor& t = *it;
        TensorNode* n = t.node();
        auto git = gm.grads_.find(n);
        if (git == gm.grads_.end() || !n->backward) continue;
        std::vector<Tensor> pgrads = n->backward(git->second, n->parents, t);
        for (size_t i = 0; i < n->parents.size(); ++i) {
            const Tensor& p = n->parents[i];
            if (!p.requires_grad() || i >= pgrads.size() || !pgrads[i].defined()) continue;
            auto pit = gm.grads_.find(p.node());
            if (pit == gm.grads_.end())
                gm.grads_.emplace(p.node(), pgrads[i]);
            else
                pit->second = add(pit->second, pgrads[i]);
        }
    }
    return gm;
}

// ----------------------------------------------------------------- misc
bool all_finite(const Tensor& t) {
    for (double v : t.data())
        if (!std::isfinite(v)) return false;
    return true;
}

void check_finite(const Tensor& t, const std::string& context) {
    if (!all_finite(t)) throw numerical_error("non-finite values in " + context);
}

}  // namespace puridiff
