#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "puridiff/classifier.hpp"
#include "puridiff/purifier.hpp"
#include "puridiff/tensor.hpp"

namespace puridiff {

enum class NormKind { linf, l2 };
const char* norm_kind_name(NormKind n);
NormKind norm_kind_from_name(const std::string& name);

struct AttackSpec {
    NormKind norm = NormKind::linf;
    double epsilon = 8.0 / 255.0;
    int steps = 40;
    // unset -> epsilon/4 for linf, 2*epsilon/steps for l2
    std::optional<double> step_size;
    bool targeted = false;  // non-targeted only

    double resolved_step_size() const;
    void validate() const;
};

struct AttackResult {
    Tensor adversarial;
    std::vector<uint8_t> success;     // prediction differs from the label
    std::vector<double> norms;        // achieved per-sample perturbation norm
    std::vector<int> pred_before;
    std::vector<int> pred_after;
    int steps_used = 0;

    double success_rate() const;
};

// x_adv = clip(x + eps * sign(grad J)); [0,1] clipping for image data.
AttackResult fgsm(const ClassifierModel& model, const Tensor& x, const std::vector<int>& y,
                  double epsilon);

// Iterated projected ascent with a seeded random start in the eps-ball.
AttackResult pgd(const ClassifierModel& model, const Tensor& x, const std::vector<int>& y,
                 const AttackSpec& spec, uint64_t seed);

// PGD against an arbitrary differentiable loss; building block for the
// adaptive attack.
using BatchLossGradFn =
    std::function<std::pair<double, Tensor>(const Tensor& x, const std::vector<int>& y)>;
using BatchPredictFn = std::function<std::vector<int>(const Tensor& x)>;

AttackResult pgd_generic(const BatchLossGradFn& loss_grad, const BatchPredictFn& predict,
                         const Tensor& x, const std::vector<int>& y, const AttackSpec& spec,
                         uint64_t seed, bool clip_to_unit_box);

// Exact-gradient attack through forward diffusion, every guided reverse
// step, and the classifier. Requires cfg.differentiable_mode on the
// pipeline so the gradients are of a deterministic function.
AttackResult adaptive_pgd(const PurifierPipeline& pipeline, const Tensor& x,
                          const std::vector<int>& y, const AttackSpec& spec, uint64_t seed);

// Per-sample perturbation norm of the given kind.
std::vector<double> perturbation_norms(const Tensor& x, const Tensor& x_adv, NormKind norm);

}  // namespace puridiff
