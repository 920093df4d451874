#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace puridiff {

// 64-bit FNV-1a. Used to derive per-cell seeds from a master seed plus a
// cell identifier, so adding experiment cells never shifts the randomness
// of existing ones.
uint64_t fnv1a64(std::string_view bytes, uint64_t basis = 0xcbf29ce484222325ull);
uint64_t derive_seed(uint64_t master_seed, std::string_view cell_id);

// Deterministic RNG. The engine (mt19937_64) is fully specified by the
// standard; uniforms and normals are generated from raw engine output
// rather than std::*_distribution, whose algorithms are
// implementation-defined.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    // [0, 1)
    double uniform() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller on engine uniforms.
    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Uniform integer in [lo, hi], unbiased rejection sampling.
    int64_t uniform_int(int64_t lo, int64_t hi);

    // Knuth's product method; fine for the small rates used here.
    int poisson(double lambda);

    void fill_normal(std::vector<double>& out);
    void fill_uniform(std::vector<double>& out, double lo, double hi);

    // Child generator with a seed derived from this engine's next output
    // and a label, for order-independent per-sample streams.
    Rng child(std::string_view label);

    std::mt19937_64& engine() { return eng_; }

private:
    std::mt19937_64 eng_;
};

// Deterministic Fisher-Yates permutation of 0..n-1.
std::vector<int> random_permutation(int n, Rng& rng);

}  // namespace puridiff
