#pragma once

#include <cstdint>
#include <vector>

#include "puridiff/dataset.hpp"
#include "puridiff/nn.hpp"
#include "puridiff/tensor.hpp"

namespace puridiff {

// beta/alpha sequences plus posterior variances; steps are 1-based.
struct NoiseSchedule {
    int T = 0;
    double beta_start = 0.0, beta_end = 0.0;
    std::vector<double> beta;           // beta[t-1]
    std::vector<double> alpha;          // 1 - beta
    std::vector<double> alpha_bar;      // running product
    std::vector<double> posterior_var;  // beta_t (1 - abar_{t-1}) / (1 - abar_t), abar_0 := 1

    double beta_at(int t) const { return beta[check(t) - 1]; }
    double alpha_at(int t) const { return alpha[check(t) - 1]; }
    double alpha_bar_at(int t) const { return t == 0 ? 1.0 : alpha_bar[check(t) - 1]; }
    double posterior_var_at(int t) const { return posterior_var[check(t) - 1]; }

private:
    int check(int t) const;
};

// Linear beta interpolation; throws on ordering violations.
NoiseSchedule make_schedule(int T, double beta_start, double beta_end);

enum class EpsArch { mlp2d, unet };
const char* eps_arch_name(EpsArch a);
EpsArch eps_arch_from_name(const std::string& name);

inline constexpr int kTimeEmbedDim = 32;

// Noise-prediction network plus its schedule.
struct DiffusionModel {
    NoiseSchedule schedule;
    EpsArch arch = EpsArch::mlp2d;
    Shape sample_shape;  // {2} or {1,H,W}
    uint64_t seed = 0;
    ParamSet params;

    // mlp2d
    Dense fc1, fc2, fc3, fc_out;
    // unet
    Conv3x3 conv_in, conv_d1, conv_d2, conv_u1, conv_u0, conv_out;
    Dense tproj0, tproj1, tproj2;

    // eps_net(x_t, t); per-sample step indices, output shaped like x_t.
    Tensor eps_t(const Tensor& x_t, const std::vector<int>& t_batch) const;
    Tensor eps_t(const Tensor& x_t, int t) const;
};

DiffusionModel make_diffusion_model(EpsArch arch, Shape sample_shape,
                                    const NoiseSchedule& schedule, uint64_t seed);

// sqrt(abar_t) x0 + sqrt(1 - abar_t) noise, no clamping.
Tensor forward_sample(const NoiseSchedule& schedule, const Tensor& x0, int t,
                      const Tensor& noise);

// t sequential q(x_s | x_{s-1}) Gaussian steps.
Tensor forward_chain(const NoiseSchedule& schedule, const Tensor& x0, int t, uint64_t seed);

struct DiffusionTrainOptions {
    double learning_rate = 1e-3;
    int batch_size = 64;
};

DiffusionModel train_diffusion(const LabeledDataset& data, const NoiseSchedule& schedule,
                               int epochs, uint64_t seed,
                               const DiffusionTrainOptions& opts = {},
                               std::vector<double>* epoch_losses = nullptr);

// One ancestral sampling step from x_t to x_{t-1}; adds no noise at t=1.
Tensor reverse_step(const DiffusionModel& model, const Tensor& x_t, int t, uint64_t seed);

// Full reverse chain from standard Gaussian noise; returns a (B, ...) batch.
Tensor sample_from_noise(const DiffusionModel& model, int n, uint64_t seed);

}  // namespace puridiff
