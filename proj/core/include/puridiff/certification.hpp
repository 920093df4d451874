#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "puridiff/diffusion.hpp"
#include "puridiff/tensor.hpp"

namespace puridiff {

using PredictFn = std::function<std::vector<int>(const Tensor& batch)>;

// n noisy evaluations of the pipeline at x under N(0, sigma^2 I); returns
// the per-class vote histogram.
std::vector<int64_t> smooth_predict(const PredictFn& pipeline, const Tensor& x, double sigma,
                                    int n, int class_count, uint64_t seed);

struct CertifyParams {
    double sigma = 0.25;
    int n0 = 100;
    int n = 1000;
    double alpha = 0.01;
};

struct ExtendedRadiusParams {
    double delta = 0.0;        // adversarial perturbation bound
    double gamma_tstar = 0.0;  // forward-depth contraction exponent
    double c_alpha = 0.0;
    double c_s = 0.0;

    void validate() const;
};

struct CertificateRecord {
    int predicted_class = -1;  // -1 encodes ABSTAIN
    bool abstain = true;
    double p_a_lower = 0.0;
    double p_b_upper = 1.0;
    double sigma = 0.0;
    double radius_cohen = 0.0;
    double radius_extended = 0.0;
    int n0 = 0;
    int n = 0;
    double alpha = 0.0;
};

// (sigma/2) (ppf(pA) - ppf(pB)); quantiles evaluated at p clamped away
// from {0,1} by 1e-12.
double cohen_radius(double sigma, double p_a, double p_b);

// ((delta + sqrt(e^{2 gamma} - 1) c_alpha + gamma c_s) / 2)(ppf(pA) - ppf(pB)),
// floored at zero.
double extended_radius(const ExtendedRadiusParams& params, double p_a, double p_b);

// -0.5 ln(abar_{t*}): exponent such that e^{2 gamma} - 1 equals the variance
// of the rescaled forward noise (1 - abar)/abar.
double gamma_from_schedule(const NoiseSchedule& schedule, int t_star);

// Monte-Carlo smoothed certification: class selection from n0 draws, exact
// one-sided binomial lower bound on p_A from n fresh draws, conservative
// p_B = 1 - p_A bound; abstains when the bound does not exceed 1/2.
CertificateRecord certify(const PredictFn& pipeline, const Tensor& x, const CertifyParams& params,
                          int class_count, uint64_t seed,
                          const ExtendedRadiusParams* ext = nullptr);

}  // namespace puridiff
