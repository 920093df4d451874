#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "puridiff/rng.hpp"
#include "puridiff/tensor.hpp"

namespace puridiff {

// Samples are (N, D) points or (N, 1, H, W) grayscale images in [0,1].
struct LabeledDataset {
    Tensor samples;
    std::vector<int> labels;
    int class_count = 0;
    std::string generator;
    uint64_t seed = 0;

    int size() const { return samples.defined() ? samples.shape()[0] : 0; }
    bool is_image() const { return samples.defined() && samples.shape().size() == 4; }
    // per-sample shape, e.g. {2} or {1,16,16}
    Shape sample_shape() const;
    int sample_dim() const;

    Tensor batch(const std::vector<int>& indices) const;
    Tensor row(int i) const;  // single-sample batch
    LabeledDataset subset(const std::vector<int>& indices) const;

    void validate() const;  // range/labels/shape invariants
};

// Class c sits on the c-th vertex of a regular n_classes-gon of unit
// circumradius, with isotropic Gaussian spread.
LabeledDataset make_gaussian_mixture(int n_per_class, int n_classes, double spread,
                                     uint64_t seed);

// Three classes (filled square / disk / triangle) at randomized position,
// scale and intensity on a black background.
LabeledDataset make_shape_images(int n_per_class, int side, uint64_t seed);

namespace shapes {
// fractions of the image side
inline constexpr double kMinHalfExtent = 0.18;
inline constexpr double kMaxHalfExtent = 0.35;
inline constexpr double kMinIntensity = 0.55;
inline constexpr double kMaxIntensity = 1.0;
// area of a maximal-scale square as a fraction of the image
inline constexpr double kMaxAreaRatio = (2.0 * kMaxHalfExtent) * (2.0 * kMaxHalfExtent);

void raster_square(std::vector<double>& img, int side, double cx, double cy, double half,
                   double intensity);
void raster_disk(std::vector<double>& img, int side, double cx, double cy, double radius,
                 double intensity);
void raster_triangle(std::vector<double>& img, int side, double cx, double cy, double half,
                     double intensity);
}  // namespace shapes

enum class CorruptionFamily { gaussian_noise, glass_blur, impulse_noise, jpeg_like, shot_noise };

const char* corruption_family_name(CorruptionFamily f);
CorruptionFamily corruption_family_from_name(const std::string& name);

struct CorruptionSpec {
    CorruptionFamily family = CorruptionFamily::gaussian_noise;
    int severity = 1;  // 0..5, 0 is the identity
};

namespace severity_tables {
inline constexpr double kGaussianNoiseSigma[5] = {0.04, 0.08, 0.12, 0.18, 0.26};
inline constexpr double kShotNoisePhotons[5] = {60.0, 25.0, 12.0, 5.0, 3.0};
inline constexpr double kImpulseFlipProb[5] = {0.01, 0.03, 0.06, 0.10, 0.17};
inline constexpr int kGlassBlurRadius[5] = {1, 1, 2, 2, 3};
inline constexpr int kGlassBlurIters[5] = {1, 2, 2, 3, 3};
inline constexpr double kJpegQuantStep[5] = {0.05, 0.10, 0.18, 0.30, 0.45};
}  // namespace severity_tables

// Image datasets only; outputs clamped to [0,1]; severity 0 returns the
// input unchanged.
LabeledDataset corrupt(const LabeledDataset& dataset, const CorruptionSpec& spec, uint64_t seed);

}  // namespace puridiff
