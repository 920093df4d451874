#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "puridiff/classifier.hpp"
#include "puridiff/diffusion.hpp"
#include "puridiff/tensor.hpp"

namespace puridiff {

enum class DistanceMode { logit_l2_plus_ssim, logit_l2_only, mse_only, none };
const char* distance_mode_name(DistanceMode m);
DistanceMode distance_mode_from_name(const std::string& name);

struct GuidanceConfig {
    int t_star = 0;      // 0 = identity (no transfer)
    double s = 1.0;      // guidance scale
    double phi = 0.5;    // similarity coordination factor
    DistanceMode distance = DistanceMode::logit_l2_plus_ssim;
    bool differentiable_mode = false;
    // One shared noise draw defines the reference trajectory by default;
    // this switches to a fresh draw per reverse step.
    bool fresh_reference_noise = false;
    // Minimize phi*SSIM directly instead of phi*(1 - SSIM).
    bool literal_similarity_sign = false;
    // Compare post-softmax outputs instead of raw logits.
    bool use_probabilities = false;
};

int default_t_star(const NoiseSchedule& schedule);  // floor(0.3 T)

struct PurifyStepRecord {
    int t = 0;
    double distance_value = 0.0;
    double grad_norm = 0.0;  // mean per-sample L2 norm of the guidance gradient
};

struct PurifyTrace {
    std::vector<PurifyStepRecord> steps;
};

// Forward bookkeeping that lets the adaptive attack backpropagate through
// the chain one step at a time (checkpointed, constant memory in t*).
struct PurifyForwardRecord {
    int t_star = 0;
    uint64_t seed = 0;
    Shape batch_shape;
    std::vector<double> x_in;
    std::vector<double> eps_star;
    // entry k corresponds to step t = t_star - k
    std::vector<std::vector<double>> step_inputs;
    std::vector<std::vector<double>> step_noise;  // empty at t = 1
    std::vector<double> x0_preclamp;
    bool clamped = false;
};

// Per-sample guidance distances (B,1) on the tape. x_ref_t is the noised
// reference at the current step, x_in the purification input.
Tensor guidance_distance_t(const ClassifierModel& clf, const Tensor& x_t, const Tensor& x_ref_t,
                           const Tensor& x_in, double phi, DistanceMode mode,
                           bool literal_similarity_sign = false, bool use_probabilities = false);

// Batch-mean scalar form.
double guidance_distance(const ClassifierModel& clf, const Tensor& x_t, const Tensor& x_ref_t,
                         const Tensor& x_in, double phi, DistanceMode mode);

struct GuidedStepResult {
    Tensor x_prev;
    double distance_value = 0.0;
    double grad_norm = 0.0;
};

// One reverse step with the mean shifted by -s * posterior_var * grad(D).
// The gradient is taken through x_t only; with s = 0 or distance none the
// output is bitwise equal to reverse_step under a shared seed.
GuidedStepResult guided_reverse_step(const DiffusionModel& diff, const ClassifierModel& clf,
                                     const Tensor& x_t, const Tensor& x_ref_t, const Tensor& x_in,
                                     int t, const GuidanceConfig& cfg, uint64_t seed);

// Distribution transfer: diffuse x_in forward to depth t_star, then run
// guided reverse steps back to a sample near the data distribution.
std::pair<Tensor, PurifyTrace> purify(const DiffusionModel& diff, const ClassifierModel& clf,
                                      const Tensor& x_in, const GuidanceConfig& cfg,
                                      uint64_t seed, PurifyForwardRecord* record = nullptr);

// Exact vector-Jacobian product of the purification map, replayed step by
// step (second order through the guidance gradient).
Tensor purify_vjp(const DiffusionModel& diff, const ClassifierModel& clf,
                  const GuidanceConfig& cfg, const PurifyForwardRecord& record,
                  const Tensor& grad_out);

// purify -> classifier, with exact end-to-end input gradients. The internal
// purification seed is fixed so the composite map is deterministic.
struct PurifierPipeline {
    const DiffusionModel* diff = nullptr;
    const ClassifierModel* clf = nullptr;
    GuidanceConfig cfg;
    uint64_t seed = 0;

    Tensor purified(const Tensor& x) const;
    Tensor logits(const Tensor& x) const;
    std::vector<int> predict(const Tensor& x) const;
    std::pair<double, Tensor> loss_and_input_grad(const Tensor& x,
                                                  const std::vector<int>& y) const;
};

}  // namespace puridiff
