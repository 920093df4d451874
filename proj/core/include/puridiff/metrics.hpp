#pragma once

#include <functional>
#include <string>
#include <vector>

#include "puridiff/classifier.hpp"
#include "puridiff/dataset.hpp"
#include "puridiff/tensor.hpp"

namespace puridiff {

// Gaussian-window SSIM, L = 1, 7x7 window, sigma 1.5, reflective padding.
inline constexpr int kSsimWindow = 7;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 1e-4;  // (0.01 L)^2
inline constexpr double kSsimC2 = 9e-4;  // (0.03 L)^2

// Tape-enabled per-sample SSIM of two (B,1,H,W) batches -> (B,1).
// Differentiable wrt both arguments; the guidance term relies on it.
Tensor ssim_t(const Tensor& a, const Tensor& b);

// Scalar SSIM of one image pair; accepts (H,W), (1,H,W) or (1,1,H,W).
double ssim(const Tensor& a, const Tensor& b);

// 10 log10(1/MSE) with L = 1; identical images return the 99 dB cap.
double psnr(const Tensor& a, const Tensor& b);

using ClassifyFn = std::function<std::vector<int>(const Tensor& batch)>;

double accuracy(const ClassifyFn& classify, const LabeledDataset& data, int batch_size = 256);
double accuracy(const ClassifierModel& model, const LabeledDataset& data, int batch_size = 256);

struct MetricReport {
    std::string name;
    std::vector<double> values;
    double mean = 0.0;
    double stddev = 0.0;  // population
};
MetricReport make_metric_report(const std::string& name, std::vector<double> values);

struct GradSensitivityResult {
    // order: clean, augmented, adversarial
    double means[3] = {0, 0, 0};
    double stderrs[3] = {0, 0, 0};
};

// Mean L2 norm of the per-sample input gradient of the cross-entropy loss
// on each of three aligned datasets.
GradSensitivityResult grad_sensitivity_probe(const ClassifierModel& model,
                                             const LabeledDataset& clean,
                                             const LabeledDataset& augmented,
                                             const LabeledDataset& adversarial);

// Probe companion: Gaussian noise of scale epsilon/2 plus a random one-pixel
// shift for images, so the comparison runs at a matched perturbation radius.
LabeledDataset make_augmented_probe_set(const LabeledDataset& data, double epsilon,
                                        uint64_t seed);

// Per-sample gradient norms for one dataset.
std::vector<double> per_sample_grad_norms(const ClassifierModel& model,
                                          const LabeledDataset& data, int batch_size = 128);

}  // namespace puridiff
