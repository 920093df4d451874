#include "puridiff/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "puridiff/errors.hpp"

namespace puridiff {

namespace {

Tensor gaussian_window() {
    static const std::vector<double> w = [] {
        std::vector<double> v(kSsimWindow * kSsimWindow);
        int c = kSsimWindow / 2;
        double s = 0.0;
        for (int i = 0; i < kSsimWindow; ++i)
            for (int j = 0; j < kSsimWindow; ++j) {
                double d2 = (i - c) * (i - c) + (j - c) * (j - c);
                v[static_cast<size_t>(i) * kSsimWindow + j] =
                    std::exp(-d2 / (2.0 * kSsimSigma * kSsimSigma));
                s += v[static_cast<size_t>(i) * kSsimWindow + j];
            }
        for (double& x : v) x /= s;
        return v;
    }();
    return Tensor::constant({1, 1, kSsimWindow, kSsimWindow}, w);
}

Tensor window_filter(const Tensor& x) {
    // reflect-padded 'same' filtering
    return conv2d(reflect_pad2(x, kSsimWindow / 2), gaussian_window(), Tensor(), 0);
}

Tensor as_image_batch(const Tensor& t) {
    const Shape& s = t.shape();
    if (s.size() == 2) return reshape(t, {1, 1, s[0], s[1]});
    if (s.size() == 3) return reshape(t, {1, s[0], s[1], s[2]});
    if (s.size() == 4) return t;
    throw argument_error("expected an image tensor, got shape " + shape_str(s));
}

}  // namespace

Tensor ssim_t(const Tensor& a, const Tensor& b) {
    if (!same_shape(a.shape(), b.shape()))
        throw argument_error("ssim: shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    if (a.shape().size() != 4 || a.shape()[1] != 1)
        throw argument_error("ssim: expected (B,1,H,W) single-channel images");
    int B = a.shape()[0], H = a.shape()[2], W = a.shape()[3];

    Tensor mu_a = window_filter(a);
    Tensor mu_b = window_filter(b);
    Tensor mu_a2 = square(mu_a);
    Tensor mu_b2 = square(mu_b);
    Tensor mu_ab = mul(mu_a, mu_b);
    Tensor sigma_a2 = sub(window_filter(square(a)), mu_a2);
    Tensor sigma_b2 = sub(window_filter(square(b)), mu_b2);
    Tensor sigma_ab = sub(window_filter(mul(a, b)), mu_ab);

    Tensor num = mul(add_scalar(mul_scalar(mu_ab, 2.0), kSsimC1),
                     add_scalar(mul_scalar(sigma_ab, 2.0), kSsimC2));
    Tensor den = mul(add_scalar(add(mu_a2, mu_b2), kSsimC1),
                     add_scalar(add(sigma_a2, sigma_b2), kSsimC2));
    Tensor map = div(num, den);
    return mul_scalar(rowsum(reshape(map, {B, H * W})), 1.0 / (H * W));
}

double ssim(const Tensor& a, const Tensor& b) {
    NoGradGuard ng;
    Tensor ab = as_image_batch(a);
    Tensor bb = as_image_batch(b);
    if (ab.shape()[0] != 1)
        throw argument_error("ssim: scalar form takes a single image pair");
    return ssim_t(ab, bb).item();
}

double psnr(const Tensor& a, const Tensor& b) {
    if (!same_shape(a.shape(), b.shape()))
        throw argument_error("psnr: shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    const auto& av = a.data();
    const auto& bv = b.data();
    double mse = 0.0;
    for (size_t i = 0; i < av.size(); ++i) mse += (av[i] - bv[i]) * (av[i] - bv[i]);
    mse /= static_cast<double>(av.size());
    if (mse == 0.0) return 99.0;
    return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

double accuracy(const ClassifyFn& classify, const LabeledDataset& data, int batch_size) {
    if (data.size() < 1) throw argument_error("accuracy: empty dataset");
    int correct = 0;
    for (int start = 0; start < data.size(); start += batch_size) {
        int stop = std::min(data.size(), start + batch_size);
        std::vector<int> idx;
        for (int i = start; i < stop; ++i) idx.push_back(i);
        std::vector<int> preds = classify(data.batch(idx));
        for (int i = start; i < stop; ++i)
            if (preds[i - start] == data.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / data.size();
}

double accuracy(const ClassifierModel& model, const LabeledDataset& data, int batch_size) {
    return accuracy([&](const Tensor& b) { return model.predict(b); }, data, batch_size);
}

MetricReport make_metric_report(const std::string& name, std::vector<double> values) {
    MetricReport r;
    r.name = name;
    r.values = std::move(values);
    if (!r.values.empty()) {
        double s = 0.0;
        for (double v : r.values) s += v;
        r.mean = s / r.values.size();
        double ss = 0.0;
        for (double v : r.values) ss += (v - r.mean) * (v - r.mean);
        r.stddev = std::sqrt(ss / r.values.size());
    }
    return r;
}

std::vector<double> per_sample_grad_norms(const ClassifierModel& model,
                                          const LabeledDataset& data, int batch_size) {
    std::vector<double> norms;
    norms.reserve(data.size());
    int dim = data.sample_dim();
    for (int start = 0; start < data.size(); start += batch_size) {
        int stop = std::min(data.size(), start + batch_size);
        int b = stop - start;
        std::vector<int> idx;
        std::vector<int> ys;
        for (int i = start; i < stop; ++i) {
            idx.push_back(i);
            ys.push_back(data.labels[i]);
        }
        auto [loss, grad] = loss_and_input_grad(model, data.batch(idx), ys);
        (void)loss;
        // grad rows carry 1/B from the batch mean; undo it for per-sample norms
        const auto& gv = grad.data();
        for (int k = 0; k < b; ++k) {
            double ss = 0.0;
            for (int j = 0; j < dim; ++j) {
                double g = gv[static_cast<size_t>(k) * dim + j] * b;
                ss += g * g;
            }
            norms.push_back(std::sqrt(ss));
        }
    }
    return norms;
}

GradSensitivityResult grad_sensitivity_probe(const ClassifierModel& model,
                                             const LabeledDataset& clean,
                                             const LabeledDataset& augmented,
                                             const LabeledDataset& adversarial) {
    if (clean.size() < 1) throw argument_error("grad_sensitivity_probe: empty dataset");
    if (clean.size() != augmented.size() || clean.size() != adversarial.size())
        throw argument_error("grad_sensitivity_probe: datasets must be aligned");

    GradSensitivityResult out;
    const LabeledDataset* sets[3] = {&clean, &augmented, &adversarial};
    for (int k = 0; k < 3; ++k) {
        std::vector<double> norms = per_sample_grad_norms(model, *sets[k]);
        MetricReport r = make_metric_report("grad_norm", std::move(norms));
        out.means[k] = r.mean;
        out.stderrs[k] = r.stddev / std::sqrt(static_cast<double>(r.values.size()));
    }
    return out;
}

LabeledDataset make_augmented_probe_set(const LabeledDataset& data, double epsilon,
                                        uint64_t seed) {
    Rng rng(seed);
    std::vector<double> all(data.samples.data());
    int n = data.size();
    int dim = data.sample_dim();
    double sigma = epsilon / 2.0;
    if (data.is_image()) {
        int h = data.samples.shape()[2], w = data.samples.shape()[3];
        std::vector<double> shifted(static_cast<size_t>(h) * w);
        for (int i = 0; i < n; ++i) {
            double* img = all.data() + static_cast<size_t>(i) * dim;
            int di = static_cast<int>(rng.uniform_int(-1, 1));
            int dj = static_cast<int>(rng.uniform_int(-1, 1));
            for (int r = 0; r < h; ++r)
                for (int c = 0; c < w; ++c) {
                    int sr = std::clamp(r + di, 0, h - 1);
                    int sc = std::clamp(c + dj, 0, w - 1);
                    shifted[static_cast<size_t>(r) * w + c] = img[static_cast<size_t>(sr) * w + sc];
                }
            for (int p = 0; p < dim; ++p)
                img[p] = std::min(1.0, std::max(0.0, shifted[p] + sigma * rng.normal()));
        }
    } else {
        for (double& v : all) v += sigma * rng.normal();
    }
    LabeledDataset out;
    out.samples = Tensor::constant(data.samples.shape(), std::move(all));
    out.labels = data.labels;
    out.class_count = data.class_count;
    out.generator = data.generator + "+augmented";
    out.seed = seed;
    return out;
}

}  // namespace puridiff
