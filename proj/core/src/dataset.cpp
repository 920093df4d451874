#include "puridiff/dataset.hpp"

#include <algorithm>
#include <cmath>

#include "puridiff/errors.hpp"

namespace puridiff {

Shape LabeledDataset::sample_shape() const {
    Shape s = samples.shape();
    s.erase(s.begin());
    return s;
}

int LabeledDataset::sample_dim() const { return static_cast<int>(numel(sample_shape())); }

Tensor LabeledDataset::batch(const std::vector<int>& indices) const {
    int d = sample_dim();
    std::vector<double> out(indices.size() * static_cast<size_t>(d));
    const auto& src = samples.data();
    for (size_t k = 0; k < indices.size(); ++k) {
        int i = indices[k];
        if (i < 0 || i >= size()) throw argument_error("batch: sample index out of range");
        std::copy(src.begin() + static_cast<size_t>(i) * d, src.begin() + static_cast<size_t>(i + 1) * d,
                  out.begin() + k * static_cast<size_t>(d));
    }
    Shape s = samples.shape();
    s[0] = static_cast<int>(indices.size());
    return Tensor::constant(std::move(s), std::move(out));
}

Tensor LabeledDataset::row(int i) const { return batch({i}); }

LabeledDataset LabeledDataset::subset(const std::vector<int>& indices) const {
    LabeledDataset d;
    d.samples = batch(indices);
    d.labels.reserve(indices.size());
    for (int i : indices) d.labels.push_back(labels[i]);
    d.class_count = class_count;
    d.generator = generator;
    d.seed = seed;
    return d;
}

void LabeledDataset::validate() const {
    if (!samples.defined() || size() < 1) throw argument_error("dataset: empty sample array");
    if (static_cast<int>(labels.size()) != size())
        throw argument_error("dataset: label count does not match sample count");
    if (class_count < 1) throw argument_error("dataset: class count must be >= 1");
    for (int y : labels)
        if (y < 0 || y >= class_count) throw argument_error("dataset: label out of range");
    if (is_image()) {
        for (double v : samples.data())
            if (!(v >= 0.0 && v <= 1.0))
                throw argument_error("dataset: image values must lie in [0,1]");
    }
}

LabeledDataset make_gaussian_mixture(int n_per_class, int n_classes, double spread,
                                     uint64_t seed) {
    if (n_per_class < 1) throw argument_error("make_gaussian_mixture: n_per_class must be >= 1");
    if (n_classes < 2) throw argument_error("make_gaussian_mixture: n_classes must be >= 2");
    if (!(spread > 0.0)) throw argument_error("make_gaussian_mixture: spread must be > 0");

    Rng rng(seed);
    int n = n_per_class * n_classes;
    std::vector<double> pts(static_cast<size_t>(n) * 2);
    std::vector<int> labels(n);
    const double two_pi = 6.283185307179586477;
    for (int c = 0; c < n_classes; ++c) {
        double cx = std::cos(two_pi * c / n_classes);
        double cy = std::sin(two_pi * c / n_classes);
        for (int i = 0; i < n_per_class; ++i) {
            int idx = c * n_per_class + i;
            pts[2 * static_cast<size_t>(idx)] = cx + spread * rng.normal();
            pts[2 * static_cast<size_t>(idx) + 1] = cy + spread * rng.normal();
            labels[idx] = c;
        }
    }
    LabeledDataset d;
    d.samples = Tensor::constant({n, 2}, std::move(pts));
    d.labels = std::move(labels);
    d.class_count = n_classes;
    d.generator = "gaussian_mixture";
    d.seed = seed;
    return d;
}

namespace shapes {

void raster_square(std::vector<double>& img, int side, double cx, double cy, double half,
                   double intensity) {
    for (int i = 0; i < side; ++i)
        for (int j = 0; j < side; ++j) {
            if (std::abs(i - cy) <= half && std::abs(j - cx) <= half)
                img[static_cast<size_t>(i) * side + j] = intensity;
        }
}

void raster_disk(std::vector<double>& img, int side, double cx, double cy, double radius,
                 double intensity) {
    double r2 = radius * radius;
    for (int i = 0; i < side; ++i)
        for (int j = 0; j < side; ++j) {
            double dy = i - cy, dx = j - cx;
            if (dx * dx + dy * dy <= r2) img[static_cast<size_t>(i) * side + j] = intensity;
        }
}

void raster_triangle(std::vector<double>& img, int side, double cx, double cy, double half,
                     double intensity) {
    // isoceles, apex up: A=(cx, cy-half), B=(cx-half, cy+half), C=(cx+half, cy+half)
    double ax = cx, ay = cy - half;
    double bx = cx - half, by = cy + half;
    double cx2 = cx + half, cy2 = cy + half;
    auto edge = [](double px, double py, double x0, double y0, double x1, double y1) {
        return (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0);
    };
    for (int i = 0; i < side; ++i)
        for (int j = 0; j < side; ++j) {
            double e0 = edge(j, i, ax, ay, bx, by);
            double e1 = edge(j, i, bx, by, cx2, cy2);
            double e2 = edge(j, i, cx2, cy2, ax, ay);
            bool inside = (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
            if (inside) img[static_cast<size_t>(i) * side + j] = intensity;
        }
}

}  // namespace shapes

LabeledDataset make_shape_images(int n_per_class, int side, uint64_t seed) {
    if (n_per_class < 1) throw argument_error("make_shape_images: n_per_class must be >= 1");
    if (side < 12) throw argument_error("make_shape_images: side must be >= 12");

    Rng rng(seed);
    int n = n_per_class * 3;
    std::vector<double> all(static_cast<size_t>(n) * side * side, 0.0);
    std::vector<int> labels(n);
    for (int c = 0; c < 3; ++c) {
        for (int i = 0; i < n_per_class; ++i) {
            int idx = c * n_per_class + i;
            labels[idx] = c;
            double half = rng.uniform(shapes::kMinHalfExtent, shapes::kMaxHalfExtent) * side;
            double margin = half + 1.0;
            double cx = rng.uniform(margin, side - 1 - margin);
            double cy = rng.uniform(margin, side - 1 - margin);
            double intensity = rng.uniform(shapes::kMinIntensity, shapes::kMaxIntensity);
            std::vector<double> img(static_cast<size_t>(side) * side, 0.0);
            switch (c) {
                case 0: shapes::raster_square(img, side, cx, cy, half, intensity); break;
                case 1: shapes::raster_disk(img, side, cx, cy, half, intensity); break;
                case 2: shapes::raster_triangle(img, side, cx, cy, half, intensity); break;
            }
            std::copy(img.begin(), img.end(),
                      all.begin() + static_cast<size_t>(idx) * side * side);
        }
    }
    LabeledDataset d;
    d.samples = Tensor::constant({n, 1, side, side}, std::move(all));
    d.labels = std::move(labels);
    d.class_count = 3;
    d.generator = "shape_images";
    d.seed = seed;
    return d;
}

const char* corruption_family_name(CorruptionFamily f) {
    switch (f) {
        case CorruptionFamily::gaussian_noise: return "gaussian_noise";
        case CorruptionFamily::glass_blur: return "glass_blur";
        case CorruptionFamily::impulse_noise: return "impulse_noise";
        case CorruptionFamily::jpeg_like: return "jpeg_like";
        case CorruptionFamily::shot_noise: return "shot_noise";
    }
    return "unknown";
}

CorruptionFamily corruption_family_from_name(const std::string& name) {
    if (name == "gaussian_noise") return CorruptionFamily::gaussian_noise;
    if (name == "glass_blur") return CorruptionFamily::glass_blur;
    if (name == "impulse_noise") return CorruptionFamily::impulse_noise;
    if (name == "jpeg_like") return CorruptionFamily::jpeg_like;
    if (name == "shot_noise") return CorruptionFamily::shot_noise;
    throw argument_error("unknown corruption family '" + name + "'");
}

}  // namespace puridiff
