#include "puridiff/statfun.hpp"

#include <cmath>

#include "puridiff/errors.hpp"

namespace puridiff {

double norm_cdf(double x) { return 0.5 * std::erfc(-x / 1.4142135623730950488); }

namespace {

// AS241 coefficients
const double kA[8] = {3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
                      1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
                      3.3430575583588128105e4, 2.5090809287301226727e3};
const double kB[8] = {1.0, 4.2313330701600911252e1, 6.8718700749205790830e2,
                      5.3941960214247511077e3, 2.1213794301586595867e4, 3.9307895800092710610e4,
                      2.8729085735721942674e4, 5.2264952788528545610e3};
const double kC[8] = {1.42343711074968357734e0, 4.63033784615654529590e0,
                      5.76949722146069140550e0, 3.64784832476320460504e0,
                      1.27045825245236838258e0, 2.41780725177450611770e-1,
                      2.27238449892691845833e-2, 7.74545014278341407640e-4};
const double kD[8] = {1.0, 2.05319162663775882187e0, 1.67638483018380384940e0,
                      6.89767334985100004550e-1, 1.48103976427480074590e-1,
                      1.51986665636164571966e-2, 5.47593808499534494600e-4,
                      1.05075007164441684324e-9};
const double kE[8] = {6.65790464350110377720e0, 5.46378491116411436990e0,
                      1.78482653991729133580e0, 2.96560571828504891230e-1,
                      2.65321895265761230930e-2, 1.24266094738807843860e-3,
                      2.71155556874348757815e-5, 2.01033439929228813265e-7};
const double kF[8] = {1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1,
                      1.48753612908506148525e-2, 7.86869131145613259100e-4,
                      1.84631831751005468180e-5, 1.42151175831644588870e-7,
                      2.04426310338993978564e-15};

// coefficients listed lowest-degree first
double horner_desc(const double* c, double r) {
    double num = 0.0;
    for (int i = 7; i >= 0; --i) num = num * r + c[i];
    return num;
}

}  // namespace

double norm_ppf(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        if (p <= 0.0) p = 1e-300;
        else p = 1.0 - 1e-16;
    }
    double q = p - 0.5;
    double x;
    if (std::abs(q) <= 0.425) {
        double r = 0.180625 - q * q;
        x = q * horner_desc(kA, r) / horner_desc(kB, r);
    } else {
        double r = q < 0.0 ? p : 1.0 - p;
        r = std::sqrt(-std::log(r));
        if (r <= 5.0) {
            r -= 1.6;
            x = horner_desc(kC, r) / horner_desc(kD, r);
        } else {
            r -= 5.0;
            x = horner_desc(kE, r) / horner_desc(kF, r);
        }
        if (q < 0.0) x = -x;
    }
    // one Newton step against the erfc-based CDF
    double pdf = std::exp(-0.5 * x * x) * 0.39894228040143267794;
    if (pdf > 1e-280) x -= (norm_cdf(x) - p) / pdf;
    return x;
}

namespace {

// Lentz continued fraction for the incomplete beta (Numerical Recipes style).
double betacf(double a, double b, double x) {
    const int kMaxIter = 300;
    const double kEps = 3e-16, kFpMin = 1e-300;
    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::abs(d) < kFpMin) d = kFpMin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::abs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::abs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) break;
    }
    return h;
}

}  // namespace

double incbeta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    double ln_bt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                   b * std::log(1.0 - x);
    double bt = std::exp(ln_bt);
    if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
    return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

double clopper_pearson_lower(int k, int n, double alpha) {
    if (n < 1) throw argument_error("clopper_pearson_lower: n must be >= 1");
    if (k < 0 || k > n) throw argument_error("clopper_pearson_lower: k out of range");
    if (!(alpha > 0.0 && alpha < 1.0))
        throw argument_error("clopper_pearson_lower: alpha must be in (0,1)");
    if (k == 0) return 0.0;
    // lower bound = alpha-quantile of Beta(k, n-k+1); I_p is increasing in p
    double a = k, b = n - k + 1;
    double lo = 0.0, hi = 1.0;
    for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        if (incbeta(a, b, mid) < alpha)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace puridiff
