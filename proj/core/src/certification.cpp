#include "puridiff/certification.hpp"

#include <algorithm>
#include <cmath>

#include "puridiff/errors.hpp"
#include "puridiff/rng.hpp"
#include "puridiff/statfun.hpp"

namespace puridiff {

std::vector<int64_t> smooth_predict(const PredictFn& pipeline, const Tensor& x, double sigma,
                                    int n, int class_count, uint64_t seed) {
    if (n < 1) throw argument_error("smooth_predict: n must be >= 1");
    if (sigma < 0.0) throw argument_error("smooth_predict: sigma must be >= 0");
    if (class_count < 1) throw argument_error("smooth_predict: class_count must be >= 1");
    if (x.shape()[0] != 1) throw argument_error("smooth_predict: x must be a single-sample batch");

    const int kChunk = 256;
    int dim = static_cast<int>(x.size());
    const auto& xv = x.data();
    Rng rng(seed);
    std::vector<int64_t> hist(class_count, 0);
    for (int done = 0; done < n; done += kChunk) {
        int b = std::min(kChunk, n - done);
        Shape shape = x.shape();
        shape[0] = b;
        std::vector<double> batch(static_cast<size_t>(b) * dim);
        for (int i = 0; i < b; ++i)
            for (int j = 0; j < dim; ++j)
                batch[static_cast<size_t>(i) * dim + j] = xv[j] + sigma * rng.normal();
        std::vector<int> preds = pipeline(Tensor::constant(shape, std::move(batch)));
        for (int c : preds) {
            if (c < 0 || c >= class_count)
                throw argument_error("smooth_predict: pipeline returned class out of range");
            ++hist[c];
        }
    }
    return hist;
}

void ExtendedRadiusParams::validate() const {
    if (delta < 0.0 || gamma_tstar < 0.0 || c_alpha < 0.0 || c_s < 0.0)
        throw argument_error("extended_radius: parameters must be nonnegative");
}

namespace {
double clamp_prob(double p) { return std::min(1.0 - 1e-12, std::max(1e-12, p)); }
}  // namespace

double cohen_radius(double sigma, double p_a, double p_b) {
    if (sigma < 0.0) throw argument_error("cohen_radius: sigma must be >= 0");
    if (p_a < p_b) throw argument_error("cohen_radius: p_a must be >= p_b");
    return 0.5 * sigma * (norm_ppf(clamp_prob(p_a)) - norm_ppf(clamp_prob(p_b)));
}

double extended_radius(const ExtendedRadiusParams& params, double p_a, double p_b) {
    params.validate();
    if (!(0.0 <= p_b && p_b <= p_a && p_a <= 1.0))
        throw argument_error("extended_radius: need 0 <= p_b <= p_a <= 1");
    double prefactor =
        0.5 * (params.delta + std::sqrt(std::expm1(2.0 * params.gamma_tstar)) * params.c_alpha +
               params.gamma_tstar * params.c_s);
    double r = prefactor * (norm_ppf(clamp_prob(p_a)) - norm_ppf(clamp_prob(p_b)));
    return std::max(r, 0.0);
}

double gamma_from_schedule(const NoiseSchedule& schedule, int t_star) {
    return -0.5 * std::log(schedule.alpha_bar_at(t_star));
}

CertificateRecord certify(const PredictFn& pipeline, const Tensor& x, const CertifyParams& params,
                          int class_count, uint64_t seed, const ExtendedRadiusParams* ext) {
    if (!(params.alpha > 0.0 && params.alpha < 1.0))
        throw argument_error("certify: alpha must be in (0,1)");
    if (params.n0 < 1 || params.n < 1) throw argument_error("certify: n0 and n must be >= 1");

    CertificateRecord rec;
    rec.sigma = params.sigma;
    rec.n0 = params.n0;
    rec.n = params.n;
    rec.alpha = params.alpha;

    std::vector<int64_t> hist0 = smooth_predict(pipeline, x, params.sigma, params.n0, class_count,
                                                derive_seed(seed, "selection"));
    int top = 0;
    for (int c = 1; c < class_count; ++c)
        if (hist0[c] > hist0[top]) top = c;

    std::vector<int64_t> hist = smooth_predict(pipeline, x, params.sigma, params.n, class_count,
                                               derive_seed(seed, "estimation"));
    int64_t k = hist[top];
    double pa = clopper_pearson_lower(static_cast<int>(k), params.n, params.alpha);
    if (pa <= 0.5) {
        rec.abstain = true;
        rec.predicted_class = -1;
        rec.p_a_lower = pa;
        rec.p_b_upper = 1.0 - pa;
        rec.radius_cohen = 0.0;
        rec.radius_extended = 0.0;
        return rec;
    }
    rec.abstain = false;
    rec.predicted_class = top;
    rec.p_a_lower = pa;
    rec.p_b_upper = 1.0 - pa;
    rec.radius_cohen = cohen_radius(params.sigma, rec.p_a_lower, rec.p_b_upper);
    rec.radius_extended = ext ? extended_radius(*ext, rec.p_a_lower, rec.p_b_upper) : 0.0;
    return rec;
}

}  // namespace puridiff
