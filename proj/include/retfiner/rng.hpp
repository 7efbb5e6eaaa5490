#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace retfiner {

// Deterministic RNG. The mt19937_64 engine is fully specified by the standard,
// but the std:: distributions are not, so all draws go through the explicit
// mappings below. Same seed => same stream on every platform.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    // Derive an independent stream from (seed, index) pairs, e.g. one per sample.
    static Rng derive(uint64_t seed, uint64_t index) {
        return Rng(mix(mix(seed) ^ index));
    }

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n) via rejection sampling (unbiased).
    uint64_t below(uint64_t n) {
        if (n == 0) {
            throw std::invalid_argument("Rng::below: n must be positive");
        }
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t r = engine_();
        while (r >= limit) {
            r = engine_();
        }
        return r % n;
    }

    int64_t uniform_int(int64_t lo, int64_t hi) {  // inclusive range
        return lo + static_cast<int64_t>(below(static_cast<uint64_t>(hi - lo + 1)));
    }

    // Box-Muller with cached spare.
    double normal(double mean = 0.0, double stddev = 1.0) {
        if (has_spare_) {
            has_spare_ = false;
            return mean + stddev * spare_;
        }
        const double u1 = 1.0 - uniform();  // avoid log(0)
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return mean + stddev * r * std::cos(theta);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

    // k distinct indices from [0, n), in random order.
    std::vector<size_t> sample_without_replacement(size_t n, size_t k) {
        if (k > n) {
            throw std::invalid_argument("Rng::sample_without_replacement: k > n");
        }
        std::vector<size_t> idx(n);
        for (size_t i = 0; i < n; ++i) {
            idx[i] = i;
        }
        for (size_t i = 0; i < k; ++i) {  // partial Fisher-Yates
            std::swap(idx[i], idx[i + below(n - i)]);
        }
        idx.resize(k);
        return idx;
    }

    // Draw an index with probability weights[i] / sum(weights).
    size_t categorical(const std::vector<double>& weights) {
        double total = 0.0;
        for (double w : weights) {
            if (w < 0.0 || !std::isfinite(w)) {
                throw std::invalid_argument("Rng::categorical: weights must be finite and >= 0");
            }
            total += w;
        }
        if (total <= 0.0) {
            throw std::invalid_argument("Rng::categorical: weights sum to zero");
        }
        const double r = uniform() * total;
        double c = 0.0;
        for (size_t i = 0; i < weights.size(); ++i) {
            c += weights[i];
            if (r < c) {
                return i;
            }
        }
        return weights.size() - 1;
    }

private:
    static uint64_t mix(uint64_t x) {  // splitmix64 finalizer
        x += 0x9E3779B97F4A7C15ull;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
        return x ^ (x >> 31);
    }

    std::mt19937_64 engine_;
    bool has_spare_{false};
    double spare_{0.0};
};

}  // namespace retfiner
