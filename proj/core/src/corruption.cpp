#include <algorithm>
#include <cmath>

#include "puridiff/dataset.hpp"
#include "puridiff/errors.hpp"

namespace puridiff {

namespace {

using severity_tables::kGaussianNoiseSigma;
using severity_tables::kGlassBlurIters;
using severity_tables::kGlassBlurRadius;
using severity_tables::kImpulseFlipProb;
using severity_tables::kJpegQuantStep;
using severity_tables::kShotNoisePhotons;

inline double clamp01v(double v) { return std::min(1.0, std::max(0.0, v)); }

void apply_gaussian_noise(std::vector<double>& img, double sigma, Rng& rng) {
    for (double& v : img) v = clamp01v(v + sigma * rng.normal());
}

void apply_shot_noise(std::vector<double>& img, double photons, Rng& rng) {
    for (double& v : img) v = clamp01v(rng.poisson(v * photons) / photons);
}

void apply_impulse_noise(std::vector<double>& img, double p, Rng& rng) {
    for (double& v : img) {
        if (rng.uniform() < p) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
    }
}

void apply_glass_blur(std::vector<double>& img, int side, int radius, int iters, Rng& rng) {
    for (int it = 0; it < iters; ++it)
        for (int i = 0; i < side; ++i)
            for (int j = 0; j < side; ++j) {
                int di = static_cast<int>(rng.uniform_int(-radius, radius));
                int dj = static_cast<int>(rng.uniform_int(-radius, radius));
                int ii = std::clamp(i + di, 0, side - 1);
                int jj = std::clamp(j + dj, 0, side - 1);
                std::swap(img[static_cast<size_t>(i) * side + j],
                          img[static_cast<size_t>(ii) * side + jj]);
            }
}

// 4x4 orthonormal block DCT-II with uniform quantization; edge-replicated
// padding when the side is not a multiple of 4.
struct Dct4 {
    double c[4][4];
    Dct4() {
        const double pi = 3.14159265358979323846;
        for (int u = 0; u < 4; ++u) {
            double s = u == 0 ? std::sqrt(0.25) : std::sqrt(0.5);
            for (int x = 0; x < 4; ++x) c[u][x] = s * std::cos(pi * (2 * x + 1) * u / 8.0);
        }
    }
};

void apply_jpeg_like(std::vector<double>& img, int side, double qstep) {
    static const Dct4 dct;
    int padded = (side + 3) / 4 * 4;
    std::vector<double> buf(static_cast<size_t>(padded) * padded);
    for (int i = 0; i < padded; ++i)
        for (int j = 0; j < padded; ++j)
            buf[static_cast<size_t>(i) * padded + j] =
                img[static_cast<size_t>(std::min(i, side - 1)) * side + std::min(j, side - 1)];

    double blk[4][4], coef[4][4];
    for (int bi = 0; bi < padded; bi += 4)
        for (int bj = 0; bj < padded; bj += 4) {
            for (int u = 0; u < 4; ++u)
                for (int v = 0; v < 4; ++v) {
                    double s = 0.0;
                    for (int x = 0; x < 4; ++x)
                        for (int y = 0; y < 4; ++y)
                            s += dct.c[u][x] * dct.c[v][y] *
                                 buf[static_cast<size_t>(bi + x) * padded + bj + y];
                    coef[u][v] = std::round(s / qstep) * qstep;
                }
            for (int x = 0; x < 4; ++x)
                for (int y = 0; y < 4; ++y) {
                    double s = 0.0;
                    for (int u = 0; u < 4; ++u)
                        for (int v = 0; v < 4; ++v) s += dct.c[u][x] * dct.c[v][y] * coef[u][v];
                    blk[x][y] = s;
                }
            for (int x = 0; x < 4; ++x)
                for (int y = 0; y < 4; ++y)
                    buf[static_cast<size_t>(bi + x) * padded + bj + y] = blk[x][y];
        }
    for (int i = 0; i < side; ++i)
        for (int j = 0; j < side; ++j)
            img[static_cast<size_t>(i) * side + j] =
                clamp01v(buf[static_cast<size_t>(i) * padded + j]);
}

}  // namespace

LabeledDataset corrupt(const LabeledDataset& dataset, const CorruptionSpec& spec, uint64_t seed) {
    if (!dataset.is_image())
        throw argument_error("corrupt: unsupported shape, dataset must be image-shaped");
    if (spec.severity < 0 || spec.severity > 5)
        throw argument_error("corrupt: severity must be in 0..5");

    LabeledDataset out;
    out.labels = dataset.labels;
    out.class_count = dataset.class_count;
    out.generator = dataset.generator + "+" + corruption_family_name(spec.family) + "@" +
                    std::to_string(spec.severity);
    out.seed = seed;

    if (spec.severity == 0) {
        out.samples = Tensor::constant(dataset.samples.shape(), dataset.samples.data());
        return out;
    }
    int sev = spec.severity - 1;
    int n = dataset.size();
    int side = dataset.samples.shape()[2];
    if (dataset.samples.shape()[3] != side)
        throw argument_error("corrupt: images must be square");
    size_t px = static_cast<size_t>(side) * side;

    std::vector<double> all(dataset.samples.data());
    for (int i = 0; i < n; ++i) {
        Rng rng(derive_seed(seed, "corrupt/" + std::to_string(i)));
        std::vector<double> img(all.begin() + i * px, all.begin() + (i + 1) * px);
        switch (spec.family) {
            case CorruptionFamily::gaussian_noise:
                apply_gaussian_noise(img, kGaussianNoiseSigma[sev], rng);
                break;
            case CorruptionFamily::shot_noise:
                apply_shot_noise(img, kShotNoisePhotons[sev], rng);
                break;
            case CorruptionFamily::impulse_noise:
                apply_impulse_noise(img, kImpulseFlipProb[sev], rng);
                break;
            case CorruptionFamily::glass_blur:
                apply_glass_blur(img, side, kGlassBlurRadius[sev], kGlassBlurIters[sev], rng);
                break;
            case CorruptionFamily::jpeg_like:
                apply_jpeg_like(img, side, kJpegQuantStep[sev]);
                break;
        }
        std::copy(img.begin(), img.end(), all.begin() + i * px);
    }
    out.samples = Tensor::constant(dataset.samples.shape(), std::move(all));
    return out;
}

}  // namespace puridiff
