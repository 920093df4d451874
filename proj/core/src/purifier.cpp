#include "puridiff/purifier.hpp"

#include <algorithm>
#include <cmath>

#include "puridiff/errors.hpp"
#include "puridiff/metrics.hpp"

namespace puridiff {

const char* distance_mode_name(DistanceMode m) {
    switch (m) {
        case DistanceMode::logit_l2_plus_ssim: return "logit_l2_plus_ssim";
        case DistanceMode::logit_l2_only: return "logit_l2_only";
        case DistanceMode::mse_only: return "mse_only";
        case DistanceMode::none: return "none";
    }
    return "unknown";
}

DistanceMode distance_mode_from_name(const std::string& name) {
    if (name == "logit_l2_plus_ssim") return DistanceMode::logit_l2_plus_ssim;
    if (name == "logit_l2_only") return DistanceMode::logit_l2_only;
    if (name == "mse_only") return DistanceMode::mse_only;
    if (name == "none") return DistanceMode::none;
    throw argument_error("unknown distance mode '" + name + "'");
}

int default_t_star(const NoiseSchedule& schedule) {
    return static_cast<int>(0.3 * schedule.T);
}

namespace {

bool guidance_active(const GuidanceConfig& cfg) {
    return cfg.distance != DistanceMode::none && cfg.s != 0.0;
}

std::vector<double> reference_noise(const GuidanceConfig& cfg, uint64_t seed, int t,
                                    const std::vector<double>& eps_star) {
    if (!cfg.fresh_reference_noise) return eps_star;
    std::vector<double> e(eps_star.size());
    Rng(derive_seed(seed, "ref_noise/" + std::to_string(t))).fill_normal(e);
    return e;
}

std::vector<double> noised_reference(const NoiseSchedule& sched, const std::vector<double>& x_in,
                                     const std::vector<double>& eps_ref, int t) {
    double sa = std::sqrt(sched.alpha_bar_at(t));
    double sn = std::sqrt(1.0 - sched.alpha_bar_at(t));
    std::vector<double> out(x_in.size());
    for (size_t i = 0; i < x_in.size(); ++i) out[i] = sa * x_in[i] + sn * eps_ref[i];
    return out;
}

double mean_row_norm(const Tensor& g) {
    int b = g.shape()[0];
    int dim = static_cast<int>(g.size() / std::max(1, b));
    const auto& v = g.data();
    double acc = 0.0;
    for (int i = 0; i < b; ++i) {
        double ss = 0.0;
        for (int j = 0; j < dim; ++j) {
            double x = v[static_cast<size_t>(i) * dim + j];
            ss += x * x;
        }
        acc += std::sqrt(ss);
    }
    return b > 0 ? acc / b : 0.0;
}

double mean_value(const Tensor& t) {
    double s = 0.0;
    for (double v : t.data()) s += v;
    return t.size() > 0 ? s / t.size() : 0.0;
}

}  // namespace

Tensor guidance_distance_t(const ClassifierModel& clf, const Tensor& x_t, const Tensor& x_ref_t,
                           const Tensor& x_in, double phi, DistanceMode mode,
                           bool literal_similarity_sign, bool use_probabilities) {
    if (!same_shape(x_t.shape(), x_ref_t.shape()) || !same_shape(x_t.shape(), x_in.shape()))
        throw argument_error("guidance_distance: operand shapes must match");
    int b = x_t.shape()[0];
    bool image = x_t.shape().size() == 4;

    switch (mode) {
        case DistanceMode::none:
            return Tensor::zeros({b, 1});
        case DistanceMode::mse_only: {
            int dim = static_cast<int>(x_t.size() / std::max(1, b));
            Tensor d = sub(reshape(x_t, {b, dim}), reshape(x_ref_t, {b, dim}));
            return mul_scalar(rowsum(square(d)), 1.0 / dim);
        }
        case DistanceMode::logit_l2_only:
        case DistanceMode::logit_l2_plus_ssim: {
            Tensor fa = clf.logits_t(x_ref_t);
            Tensor fb = clf.logits_t(x_t);
            if (use_probabilities) {
                fa = softmax_rows(fa);
                fb = softmax_rows(fb);
            }
            // smoothed row norms keep the gradient defined at zero distance
            Tensor norm = sqrt(add_scalar(rowsum(square(sub(fa, fb))), 1e-12));
            if (mode == DistanceMode::logit_l2_only) return norm;
            if (!image)
                throw argument_error(
                    "guidance_distance: logit_l2_plus_ssim is unsupported for point data");
            Tensor sim = ssim_t(x_in, x_t);
            Tensor sim_term = literal_similarity_sign
                                  ? mul_scalar(sim, phi)
                                  : mul_scalar(add_scalar(neg(sim), 1.0), phi);
            return add(norm, sim_term);
        }
    }
    throw argument_error("guidance_distance: unknown mode");
}

double guidance_distance(const ClassifierModel& clf, const Tensor& x_t, const Tensor& x_ref_t,
                         const Tensor& x_in, double phi, DistanceMode mode) {
    NoGradGuard ng;
    return mean_value(guidance_distance_t(clf, x_t, x_ref_t, x_in, phi, mode));
}

GuidedStepResult guided_reverse_step(const DiffusionModel& diff, const ClassifierModel& clf,
                                     const Tensor& x_t, const Tensor& x_ref_t, const Tensor& x_in,
                                     int t, const GuidanceConfig& cfg, uint64_t seed) {
    const NoiseSchedule& s = diff.schedule;
    double beta = s.beta_at(t);
    double coef = beta / std::sqrt(1.0 - s.alpha_bar_at(t));
    double inv_sqrt_alpha = 1.0 / std::sqrt(s.alpha_at(t));
    double pvar = s.posterior_var_at(t);

    GuidedStepResult res;
    Tensor mean;
    {
        NoGradGuard ng;
        Tensor eps = diff.eps_t(x_t, t);
        mean = mul_scalar(sub(x_t, mul_scalar(eps, coef)), inv_sqrt_alpha);
    }
    if (guidance_active(cfg)) {
        GradModeGuard gg(true);
        Tensor xt_leaf = Tensor::leaf(x_t.shape(), x_t.data(), true);
        Tensor d_vec = guidance_distance_t(clf, xt_leaf, x_ref_t.detach(), x_in.detach(), cfg.phi,
                                           cfg.distance, cfg.literal_similarity_sign,
                                           cfg.use_probabilities);
        Tensor grad = backward(sum(d_vec)).grad_or_zeros(xt_leaf);
        if (!all_finite(grad))
            throw numerical_error("guided_reverse_step: non-finite guidance gradient at step t=" +
                                  std::to_string(t));
        res.distance_value = mean_value(d_vec);
        res.grad_norm = mean_row_norm(grad);
        NoGradGuard ng;
        mean = sub(mean, mul_scalar(grad, cfg.s * pvar));
    }
    if (t == 1) {
        res.x_prev = mean.detach();
        return res;
    }
    NoGradGuard ng;
    double sigma = std::sqrt(pvar);
    std::vector<double> z(static_cast<size_t>(mean.size()));
    Rng(seed).fill_normal(z);
    res.x_prev = add(mean, mul_scalar(Tensor::constant(mean.shape(), std::move(z)), sigma));
    return res;
}

namespace {

// Tape-enabled replay of one guided step; x_t and x_in are graph tensors.
// The inner guidance gradient is built with create_graph so the outer VJP
// differentiates through it.
Tensor guided_step_graph(const DiffusionModel& diff, const ClassifierModel& clf,
                         const Tensor& x_t, const Tensor& x_in, int t, const GuidanceConfig& cfg,
                         const std::vector<double>& eps_ref, const std::vector<double>& z) {
    const NoiseSchedule& s = diff.schedule;
    double beta = s.beta_at(t);
    double coef = beta / std::sqrt(1.0 - s.alpha_bar_at(t));
    double inv_sqrt_alpha = 1.0 / std::sqrt(s.alpha_at(t));
    double pvar = s.posterior_var_at(t);

    Tensor eps = diff.eps_t(x_t, t);
    Tensor mean = mul_scalar(sub(x_t, mul_scalar(eps, coef)), inv_sqrt_alpha);
    if (guidance_active(cfg) && pvar > 0.0) {
        double sa = std::sqrt(s.alpha_bar_at(t));
        double sn = std::sqrt(1.0 - s.alpha_bar_at(t));
        std::vector<double> scaled(eps_ref.size());
        for (size_t i = 0; i < scaled.size(); ++i) scaled[i] = sn * eps_ref[i];
        Tensor x_ref = add(mul_scalar(x_in, sa), Tensor::constant(x_in.shape(), std::move(scaled)));
        Tensor d_vec = guidance_distance_t(clf, x_t, x_ref, x_in, cfg.phi, cfg.distance,
                                           cfg.literal_similarity_sign, cfg.use_probabilities);
        Tensor grad = backward(sum(d_vec), Tensor(), /*create_graph=*/true).grad_of(x_t);
        if (grad.defined()) {
            if (!all_finite(grad))
                throw numerical_error(
                    "purify_vjp: non-finite guidance gradient at reverse step t=" +
                    std::to_string(t));
            mean = sub(mean, mul_scalar(grad, cfg.s * pvar));
        }
    }
    if (t == 1) return mean;
    std::vector<double> zz(z);
    double sigma = std::sqrt(pvar);
    for (double& v : zz) v *= sigma;
    return add(mean, Tensor::constant(mean.shape(), std::move(zz)));
}

}  // namespace

std::pair<Tensor, PurifyTrace> purify(const DiffusionModel& diff, const ClassifierModel& clf,
                                      const Tensor& x_in, const GuidanceConfig& cfg,
                                      uint64_t seed, PurifyForwardRecord* record) {
    const NoiseSchedule& sched = diff.schedule;
    if (cfg.t_star < 0 || cfg.t_star > sched.T)
        throw argument_error("purify: t_star " + std::to_string(cfg.t_star) +
                             " outside [0," + std::to_string(sched.T) + "]");
    Shape per_sample(x_in.shape().begin() + 1, x_in.shape().end());
    if (!same_shape(per_sample, diff.sample_shape))
        throw argument_error("purify: input shape " + shape_str(x_in.shape()) +
                             " does not match diffusion model samples " +
                             shape_str(diff.sample_shape));

    PurifyTrace trace;
    if (cfg.t_star == 0) {
        if (record) {
            record->t_star = 0;
            record->batch_shape = x_in.shape();
            record->x_in = x_in.data();
            record->clamped = false;
        }
        return {Tensor::constant(x_in.shape(), x_in.data()), trace};
    }

    bool image = x_in.shape().size() == 4;
    NoGradGuard ng;

    std::vector<double> eps_star(static_cast<size_t>(x_in.size()));
    Rng(derive_seed(seed, "eps_star")).fill_normal(eps_star);

    if (record) {
        record->t_star = cfg.t_star;
        record->seed = seed;
        record->batch_shape = x_in.shape();
        record->x_in = x_in.data();
        record->eps_star = eps_star;
        record->step_inputs.clear();
        record->step_noise.clear();
    }

    Tensor x = forward_sample(sched, x_in, cfg.t_star,
                              Tensor::constant(x_in.shape(), eps_star));
    for (int t = cfg.t_star; t >= 1; --t) {
        uint64_t step_seed = derive_seed(seed, "step/" + std::to_string(t));
        std::vector<double> eps_ref = reference_noise(cfg, seed, t, eps_star);
        Tensor x_ref = Tensor::constant(x_in.shape(),
                                        noised_reference(sched, x_in.data(), eps_ref, t));
        if (record) {
            record->step_inputs.push_back(x.data());
            std::vector<double> z;
            if (t > 1) {
                z.resize(static_cast<size_t>(x.size()));
                Rng(step_seed).fill_normal(z);
            }
            record->step_noise.push_back(std::move(z));
        }
        GuidedStepResult step = guided_reverse_step(diff, clf, x, x_ref, x_in, t, cfg, step_seed);
        if (!all_finite(step.x_prev))
            throw numerical_error("purify: non-finite state at reverse step t=" +
                                  std::to_string(t));
        trace.steps.push_back({t, step.distance_value, step.grad_norm});
        x = step.x_prev;
    }

    if (record) record->x0_preclamp = x.data();
    if (image) {
        std::vector<double> v = x.data();
        for (double& u : v) u = std::min(1.0, std::max(0.0, u));
        x = Tensor::constant(x.shape(), std::move(v));
        if (record) record->clamped = true;
    }
    return {x, trace};
}

Tensor purify_vjp(const DiffusionModel& diff, const ClassifierModel& clf,
                  const GuidanceConfig& cfg, const PurifyForwardRecord& record,
                  const Tensor& grad_out) {
    if (!same_shape(grad_out.shape(), record.batch_shape))
        throw argument_error("purify_vjp: gradient shape does not match recorded batch");
    if (record.t_star == 0) return Tensor::constant(grad_out.shape(), grad_out.data());

    std::vector<double> u = grad_out.data();
    if (record.clamped) {
        for (size_t i = 0; i < u.size(); ++i) {
            double v = record.x0_preclamp[i];
            if (!(v > 0.0 && v < 1.0)) u[i] = 0.0;
        }
    }
    std::vector<double> gx_in(u.size(), 0.0);

    GradModeGuard gg(true);
    // ascending t: step t consumed x_t and produced x_{t-1}
    for (int t = 1; t <= record.t_star; ++t) {
        size_t k = static_cast<size_t>(record.t_star - t);
        std::vector<double> eps_ref = reference_noise(cfg, record.seed, t, record.eps_star);
        Tensor xt_leaf = Tensor::leaf(record.batch_shape, record.step_inputs[k], true);
        Tensor xin_leaf = Tensor::leaf(record.batch_shape, record.x_in, true);
        Tensor x_prev = guided_step_graph(diff, clf, xt_leaf, xin_leaf, t, cfg, eps_ref,
                                          record.step_noise[k]);
        GradMap gm = backward(x_prev, Tensor::constant(record.batch_shape, u));
        Tensor gxt = gm.grad_or_zeros(xt_leaf);
        if (!all_finite(gxt))
            throw numerical_error("purify_vjp: non-finite pipeline gradient at reverse step t=" +
                                  std::to_string(t));
        u = gxt.data();
        Tensor gxi = gm.grad_of(xin_leaf);
        if (gxi.defined()) {
            const auto& g = gxi.data();
            for (size_t i = 0; i < gx_in.size(); ++i) gx_in[i] += g[i];
        }
    }
    double sa = std::sqrt(diff.schedule.alpha_bar_at(record.t_star));
    for (size_t i = 0; i < gx_in.size(); ++i) gx_in[i] += sa * u[i];
    return Tensor::constant(record.batch_shape, std::move(gx_in));
}

Tensor PurifierPipeline::purified(const Tensor& x) const {
    return purify(*diff, *clf, x, cfg, seed).first;
}

Tensor PurifierPipeline::logits(const Tensor& x) const {
    return puridiff::logits(*clf, purified(x));
}

std::vector<int> PurifierPipeline::predict(const Tensor& x) const {
    return argmax_rows(logits(x));
}

std::pair<double, Tensor> PurifierPipeline::loss_and_input_grad(
    const Tensor& x, const std::vector<int>& y) const {
    PurifyForwardRecord rec;
    Tensor x0 = purify(*diff, *clf, x, cfg, seed, &rec).first;
    GradModeGuard gg(true);
    Tensor x0_leaf = Tensor::leaf(x0.shape(), x0.data(), true);
    Tensor loss = cross_entropy(clf->logits_t(x0_leaf), y);
    Tensor g0 = backward(loss).grad_or_zeros(x0_leaf);
    Tensor gin = purify_vjp(*diff, *clf, cfg, rec, g0);
    return {loss.item(), gin};
}

}  // namespace puridiff
