#include "puridiff/nn.hpp"

#include <cmath>

namespace puridiff {

Tensor ParamSet::add(const std::string& name, Shape shape, std::vector<double> values) {
    Tensor t = Tensor::leaf(std::move(shape), std::move(values), true);
    params_.push_back({name, t});
    return t;
}

Tensor ParamSet::find(const std::string& name) const {
    for (const auto& p : params_)
        if (p.name == name) return p.value;
    throw argument_error("unknown parameter '" + name + "'");
}

int64_t ParamSet::count() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

void ParamSet::set_trainable(bool trainable) {
    for (auto& p : params_) p.value.set_requires_grad(trainable);
}

bool ParamSet::all_finite() const {
    for (const auto& p : params_)
        if (!puridiff::all_finite(p.value)) return false;
    return true;
}

std::vector<double> init_normal(Rng& rng, int64_t n, double stddev) {
    std::vector<double> v(static_cast<size_t>(n));
    for (double& x : v) x = stddev * rng.normal();
    return v;
}

Dense make_dense(ParamSet& ps, const std::string& prefix, int in, int out, Rng& rng,
                 double w_scale) {
    double stddev = w_scale * std::sqrt(2.0 / static_cast<double>(in));
    Dense d;
    d.w = ps.add(prefix + ".w", {out, in}, init_normal(rng, static_cast<int64_t>(out) * in, stddev));
    d.b = ps.add(prefix + ".b", {1, out}, std::vector<double>(out, 0.0));
    return d;
}

Conv3x3 make_conv3x3(ParamSet& ps, const std::string& prefix, int ci, int co, Rng& rng,
                     double w_scale) {
    double stddev = w_scale * std::sqrt(2.0 / (9.0 * ci));
    Conv3x3 c;
    c.w = ps.add(prefix + ".w", {co, ci, 3, 3},
                 init_normal(rng, static_cast<int64_t>(co) * ci * 9, stddev));
    c.b = ps.add(prefix + ".b", {co}, std::vector<double>(co, 0.0));
    return c;
}

std::vector<double> time_embedding(int t, int dim) {
    std::vector<double> e(static_cast<size_t>(dim));
    int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                               std::max(1, half - 1));
        e[i] = std::sin(t * freq);
        e[half + i] = std::cos(t * freq);
    }
    return e;
}

Tensor time_embedding_batch(const std::vector<int>& ts, int dim) {
    int b = static_cast<int>(ts.size());
    std::vector<double> all(static_cast<size_t>(b) * dim);
    for (int i = 0; i < b; ++i) {
        auto e = time_embedding(ts[i], dim);
        std::copy(e.begin(), e.end(), all.begin() + static_cast<size_t>(i) * dim);
    }
    return Tensor::constant({b, dim}, std::move(all));
}

void SgdOptimizer::step(ParamSet& ps, const GradMap& grads) {
    for (auto& p : ps.all()) {
        Tensor g = grads.grad_of(p.value);
        if (!g.defined()) continue;
        auto& v = p.value.mutable_data();
        const auto& gv = g.data();
        for (size_t i = 0; i < v.size(); ++i) v[i] -= lr_ * gv[i];
    }
}

void AdamOptimizer::step(ParamSet& ps, const GradMap& grads) {
    auto& params = ps.all();
    if (m_.empty()) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (size_t k = 0; k < params.size(); ++k) {
            m_[k].assign(params[k].value.data().size(), 0.0);
            v_[k].assign(params[k].value.data().size(), 0.0);
        }
    }
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t k = 0; k < params.size(); ++k) {
        Tensor g = grads.grad_of(params[k].value);
        if (!g.defined()) continue;
        auto& val = params[k].value.mutable_data();
        const auto& gv = g.data();
        auto& m = m_[k];
        auto& v = v_[k];
        for (size_t i = 0; i < val.size(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * gv[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * gv[i] * gv[i];
            val[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
        }
    }
}

}  // namespace puridiff
