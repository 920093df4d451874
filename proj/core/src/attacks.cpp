#include "puridiff/attacks.hpp"

#include <algorithm>
#include <cmath>

#include "puridiff/errors.hpp"

namespace puridiff {

const char* norm_kind_name(NormKind n) { return n == NormKind::linf ? "linf" : "l2"; }

NormKind norm_kind_from_name(const std::string& name) {
    if (name == "linf") return NormKind::linf;
    if (name == "l2") return NormKind::l2;
    throw argument_error("unknown norm kind '" + name + "'");
}

double AttackSpec::resolved_step_size() const {
    if (step_size.has_value()) return *step_size;
    return norm == NormKind::linf ? epsilon / 4.0 : 2.0 * epsilon / std::max(1, steps);
}

void AttackSpec::validate() const {
    if (epsilon < 0.0) throw argument_error("attack: epsilon must be >= 0");
    if (steps < 1) throw argument_error("attack: steps must be >= 1");
    if (step_size.has_value() && *step_size <= 0.0)
        throw argument_error("attack: step_size must be > 0");
    if (targeted) throw argument_error("attack: targeted attacks are not supported");
}

double AttackResult::success_rate() const {
    if (success.empty()) return 0.0;
    double s = 0.0;
    for (uint8_t b : success) s += b;
    return s / success.size();
}

std::vector<double> perturbation_norms(const Tensor& x, const Tensor& x_adv, NormKind norm) {
    int b = x.shape()[0];
    int dim = static_cast<int>(x.size() / std::max(1, b));
    const auto& a = x.data();
    const auto& c = x_adv.data();
    std::vector<double> out(b, 0.0);
    for (int i = 0; i < b; ++i) {
        double acc = 0.0;
        for (int j = 0; j < dim; ++j) {
            double d = c[static_cast<size_t>(i) * dim + j] - a[static_cast<size_t>(i) * dim + j];
            if (norm == NormKind::linf)
                acc = std::max(acc, std::abs(d));
            else
                acc += d * d;
        }
        out[i] = norm == NormKind::linf ? acc : std::sqrt(acc);
    }
    return out;
}

namespace {

void fill_result(AttackResult& res, const Tensor& x, const Tensor& x_adv,
                 const std::vector<int>& y, NormKind norm, const BatchPredictFn& predict) {
    res.adversarial = x_adv;
    res.norms = perturbation_norms(x, x_adv, norm);
    res.pred_before = predict(x);
    res.pred_after = predict(x_adv);
    res.success.resize(y.size());
    for (size_t i = 0; i < y.size(); ++i) res.success[i] = res.pred_after[i] != y[i];
}

// project delta onto the eps-ball, then re-apply the unit box through x
void project(std::vector<double>& adv, const std::vector<double>& x0, int b, int dim,
             NormKind norm, double eps, bool clip_box) {
    for (int i = 0; i < b; ++i) {
        double* a = adv.data() + static_cast<size_t>(i) * dim;
        const double* x = x0.data() + static_cast<size_t>(i) * dim;
        if (norm == NormKind::linf) {
            for (int j = 0; j < dim; ++j)
                a[j] = x[j] + std::clamp(a[j] - x[j], -eps, eps);
        } else {
            double ss = 0.0;
            for (int j = 0; j < dim; ++j) ss += (a[j] - x[j]) * (a[j] - x[j]);
            double nrm = std::sqrt(ss);
            if (nrm > eps && nrm > 0.0) {
                double scale = eps / nrm;
                for (int j = 0; j < dim; ++j) a[j] = x[j] + scale * (a[j] - x[j]);
            }
        }
        if (clip_box)
            for (int j = 0; j < dim; ++j) a[j] = std::clamp(a[j], 0.0, 1.0);
    }
}

}  // namespace

AttackResult pgd_generic(const BatchLossGradFn& loss_grad, const BatchPredictFn& predict,
                         const Tensor& x, const std::vector<int>& y, const AttackSpec& spec,
                         uint64_t seed, bool clip_to_unit_box) {
    spec.validate();
    if (static_cast<size_t>(x.shape()[0]) != y.size())
        throw argument_error("pgd: batch/label count mismatch");
    int b = x.shape()[0];
    int dim = static_cast<int>(x.size() / std::max(1, b));
    AttackResult res;
    if (spec.epsilon == 0.0) {
        fill_result(res, x, x, y, spec.norm, predict);
        return res;
    }
    double alpha = spec.resolved_step_size();
    const auto& x0 = x.data();
    std::vector<double> adv(x0);

    // random start inside the eps-ball
    Rng rng(derive_seed(seed, "pgd_start"));
    if (spec.norm == NormKind::linf) {
        for (double& v : adv) v += rng.uniform(-spec.epsilon, spec.epsilon);
    } else {
        for (int i = 0; i < b; ++i) {
            std::vector<double> dir(dim);
            double ss = 0.0;
            for (int j = 0; j < dim; ++j) {
                dir[j] = rng.normal();
                ss += dir[j] * dir[j];
            }
            double r = spec.epsilon * rng.uniform();
            double scale = ss > 0.0 ? r / std::sqrt(ss) : 0.0;
            for (int j = 0; j < dim; ++j) adv[static_cast<size_t>(i) * dim + j] += scale * dir[j];
        }
    }
    project(adv, x0, b, dim, spec.norm, spec.epsilon, clip_to_unit_box);

    for (int it = 0; it < spec.steps; ++it) {
        auto [loss, grad] = loss_grad(Tensor::constant(x.shape(), adv), y);
        (void)loss;
        const auto& gv = grad.data();
        for (int i = 0; i < b; ++i) {
            double* a = adv.data() + static_cast<size_t>(i) * dim;
            const double* g = gv.data() + static_cast<size_t>(i) * dim;
            if (spec.norm == NormKind::linf) {
                for (int j = 0; j < dim; ++j)
                    a[j] += alpha * (g[j] > 0.0 ? 1.0 : (g[j] < 0.0 ? -1.0 : 0.0));
            } else {
                double ss = 0.0;
                for (int j = 0; j < dim; ++j) ss += g[j] * g[j];
                double nrm = std::sqrt(ss);
                if (nrm > 0.0)
                    for (int j = 0; j < dim; ++j) a[j] += alpha * g[j] / nrm;
            }
        }
        project(adv, x0, b, dim, spec.norm, spec.epsilon, clip_to_unit_box);
    }
    fill_result(res, x, Tensor::constant(x.shape(), std::move(adv)), y, spec.norm, predict);
    res.steps_used = spec.steps;
    return res;
}

AttackResult fgsm(const ClassifierModel& model, const Tensor& x, const std::vector<int>& y,
                  double epsilon) {
    if (epsilon < 0.0) throw argument_error("fgsm: epsilon must be >= 0");
    if (static_cast<size_t>(x.shape()[0]) != y.size())
        throw argument_error("fgsm: batch/label count mismatch");
    bool image = x.shape().size() == 4;
    auto [loss, grad] = loss_and_input_grad(model, x, y);
    (void)loss;
    const auto& gv = grad.data();
    std::vector<double> adv(x.data());
    for (size_t i = 0; i < adv.size(); ++i) {
        adv[i] += epsilon * (gv[i] > 0.0 ? 1.0 : (gv[i] < 0.0 ? -1.0 : 0.0));
        if (image) adv[i] = std::clamp(adv[i], 0.0, 1.0);
    }
    AttackResult res;
    fill_result(res, x, Tensor::constant(x.shape(), std::move(adv)), y, NormKind::linf,
                [&](const Tensor& b) { return model.predict(b); });
    res.steps_used = 1;
    return res;
}

AttackResult pgd(const ClassifierModel& model, const Tensor& x, const std::vector<int>& y,
                 const AttackSpec& spec, uint64_t seed) {
    bool image = x.shape().size() == 4;
    return pgd_generic(
        [&](const Tensor& xb, const std::vector<int>& yb) {
            return loss_and_input_grad(model, xb, yb);
        },
        [&](const Tensor& xb) { return model.predict(xb); }, x, y, spec, seed, image);
}

AttackResult adaptive_pgd(const PurifierPipeline& pipeline, const Tensor& x,
                          const std::vector<int>& y, const AttackSpec& spec, uint64_t seed) {
    if (!pipeline.cfg.differentiable_mode)
        throw argument_error("adaptive_pgd: pipeline must run in differentiable mode");
    bool image = x.shape().size() == 4;
    return pgd_generic(
        [&](const Tensor& xb, const std::vector<int>& yb) {
            return pipeline.loss_and_input_grad(xb, yb);
        },
        [&](const Tensor& xb) { return pipeline.predict(xb); }, x, y, spec, seed, image);
}

}  // namespace puridiff
