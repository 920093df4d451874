#pragma once

// Parameter bookkeeping, layer helpers and optimizers shared by the
// classifier and the noise-prediction networks.

#include <string>
#include <vector>

#include "puridiff/rng.hpp"
#include "puridiff/tensor.hpp"

namespace puridiff {

struct Param {
    std::string name;
    Tensor value;  // leaf tensor
};

class ParamSet {
public:
    Tensor add(const std::string& name, Shape shape, std::vector<double> values);
    const std::vector<Param>& all() const { return params_; }
    std::vector<Param>& all() { return params_; }
    Tensor find(const std::string& name) const;
    int64_t count() const;
    void set_trainable(bool trainable);
    bool all_finite() const;

private:
    std::vector<Param> params_;
};

// He-style normal init for silu networks.
std::vector<double> init_normal(Rng& rng, int64_t n, double stddev);

struct Dense {
    Tensor w;  // (out, in)
    Tensor b;  // (1, out)
    Tensor operator()(const Tensor& x) const { return linear(x, w, b); }
};
Dense make_dense(ParamSet& ps, const std::string& prefix, int in, int out, Rng& rng,
                 double w_scale = 1.0);

struct Conv3x3 {
    Tensor w;  // (co, ci, 3, 3)
    Tensor b;  // (co)
    Tensor operator()(const Tensor& x) const { return conv2d(x, w, b, 1); }
};
Conv3x3 make_conv3x3(ParamSet& ps, const std::string& prefix, int ci, int co, Rng& rng,
                     double w_scale = 1.0);

// Sinusoidal embedding of an integer step index.
std::vector<double> time_embedding(int t, int dim);
// One embedding row per batch entry, as a constant (B, dim) tensor.
Tensor time_embedding_batch(const std::vector<int>& ts, int dim);

class SgdOptimizer {
public:
    explicit SgdOptimizer(double lr) : lr_(lr) {}
    void step(ParamSet& ps, const GradMap& grads);

private:
    double lr_;
};

class AdamOptimizer {
public:
    AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
    void step(ParamSet& ps, const GradMap& grads);

private:
    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

}  // namespace puridiff
