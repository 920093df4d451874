#include "puridiff/rng.hpp"

#include <cmath>

namespace puridiff {

uint64_t fnv1a64(std::string_view bytes, uint64_t basis) {
    uint64_t h = basis;
    for (unsigned char c : bytes) {
        h ^= static_cast<uint64_t>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

uint64_t derive_seed(uint64_t master_seed, std::string_view cell_id) {
    char buf[16];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((master_seed >> (8 * i)) & 0xff);
    uint64_t h = fnv1a64(std::string_view(buf, 8));
    return fnv1a64(cell_id, h);
}

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
    uint64_t range = static_cast<uint64_t>(hi - lo) + 1;
    if (range == 0) return static_cast<int64_t>(eng_());  // full 64-bit span
    uint64_t limit = UINT64_MAX - UINT64_MAX % range;
    uint64_t v;
    do {
        v = eng_();
    } while (v >= limit);
    return lo + static_cast<int64_t>(v % range);
}

int Rng::poisson(double lambda) {
    if (lambda <= 0.0) return 0;
    double l = std::exp(-lambda);
    int k = 0;
    double p = 1.0;
    do {
        ++k;
        p *= uniform();
    } while (p > l);
    return k - 1;
}

void Rng::fill_normal(std::vector<double>& out) {
    for (double& v : out) v = normal();
}

void Rng::fill_uniform(std::vector<double>& out, double lo, double hi) {
    for (double& v : out) v = uniform(lo, hi);
}

Rng Rng::child(std::string_view label) {
    return Rng(derive_seed(eng_(), label));
}

std::vector<int> random_permutation(int n, Rng& rng) {
    std::vector<int> p(n);
    for (int i = 0; i < n; ++i) p[i] = i;
    for (int i = n - 1; i > 0; --i) {
        int j = static_cast<int>(rng.uniform_int(0, i));
        std::swap(p[i], p[j]);
    }
    return p;
}

}  // namespace puridiff
