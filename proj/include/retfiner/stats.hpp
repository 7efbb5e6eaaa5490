#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "retfiner/common.hpp"

namespace retfiner {

namespace detail {

// Midranks of |values|: tied magnitudes share the mean of their rank block.
inline std::vector<double> midranks(const std::vector<double>& magnitudes) {
    const size_t n = magnitudes.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return magnitudes[a] < magnitudes[b]; });
    std::vector<double> ranks(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j < n && magnitudes[order[j]] == magnitudes[order[i]]) {
            ++j;
        }
        const double mid = 0.5 * static_cast<double>(i + 1 + j);
        for (size_t k = i; k < j; ++k) {
            ranks[order[k]] = mid;
        }
        i = j;
    }
    return ranks;
}

// Exact distribution of W+ = Σ ranks of positive signs over all 2^n equally
// likely sign assignments, computed by subset-sum counting over the doubled
// (integer) ranks. counts[s] = #assignments with 2·W+ == s.
inline std::vector<double> wilcoxon_counts(const std::vector<double>& ranks) {
    std::vector<int64_t> r2;
    int64_t total2 = 0;
    for (const double r : ranks) {
        const double d = 2.0 * r;
        const int64_t i = std::llround(d);
        if (std::abs(d - static_cast<double>(i)) > 1e-9) {
            throw NumericError("wilcoxon: ranks are not half-integers");
        }
        r2.push_back(i);
        total2 += i;
    }
    std::vector<double> counts(static_cast<size_t>(total2) + 1, 0.0);
    counts[0] = 1.0;
    int64_t reach = 0;
    for (const int64_t r : r2) {
        reach += r;
        for (int64_t s = reach; s >= r; --s) {
            counts[static_cast<size_t>(s)] += counts[static_cast<size_t>(s - r)];
        }
    }
    return counts;
}

// Regularized incomplete beta I_x(a, b) by the Lentz continued fraction.
inline double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 3e-14;
    constexpr double kTiny = 1e-300;
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) {
        d = kTiny;
    }
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) {
            d = kTiny;
        }
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) {
            c = kTiny;
        }
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) {
            d = kTiny;
        }
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) {
            c = kTiny;
        }
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) {
            return h;
        }
    }
    throw NumericError("incomplete beta continued fraction did not converge");
}

inline double regularized_incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) {
        return 0.0;
    }
    if (x >= 1.0) {
        return 1.0;
    }
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return front * betacf(a, b, x) / a;
    }
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

inline double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace detail

struct WilcoxonResult {
    double statistic;  // W+ (rank sum of positive differences)
    double p_value;
    int n_nonzero;
    bool exact;  // enumeration (n <= 25) vs normal approximation
};

// Two-sided Wilcoxon signed-rank test on paired samples. Zero differences are
// discarded; ties in |d| take midranks. For n <= 25 the p-value enumerates
// all 2^n sign assignments exactly; larger n uses the tie-corrected normal
// approximation.
inline WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a,
                                           const std::vector<double>& b,
                                           std::ostream* warn = &std::cerr) {
    if (a.size() != b.size() || a.empty()) {
        throw InputError("wilcoxon: paired samples must be nonempty and equal length");
    }
    std::vector<double> diffs;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        if (d != 0.0) {
            diffs.push_back(d);
        }
    }
    if (diffs.empty()) {
        if (warn) {
            (*warn) << "warning: wilcoxon: all paired differences are zero; p = 1" << std::endl;
        }
        return {0.0, 1.0, 0, true};
    }
    const int n = static_cast<int>(diffs.size());
    if (n < 5) {
        throw DataError("wilcoxon: need at least 5 non-zero paired differences, got " +
                        std::to_string(n));
    }
    std::vector<double> mags(diffs.size());
    for (size_t i = 0; i < diffs.size(); ++i) {
        mags[i] = std::abs(diffs[i]);
    }
    const auto ranks = detail::midranks(mags);
    double w_plus = 0;
    for (size_t i = 0; i < diffs.size(); ++i) {
        if (diffs[i] > 0) {
            w_plus += ranks[i];
        }
    }

    if (n <= 25) {
        const auto counts = detail::wilcoxon_counts(ranks);
        const int64_t w2 = std::llround(2.0 * w_plus);
        double le = 0, ge = 0, total = 0;
        for (size_t s = 0; s < counts.size(); ++s) {
            total += counts[s];
            if (static_cast<int64_t>(s) <= w2) {
                le += counts[s];
            }
            if (static_cast<int64_t>(s) >= w2) {
                ge += counts[s];
            }
        }
        const double p = std::min(1.0, 2.0 * std::min(le, ge) / total);
        return {w_plus, p, n, true};
    }

    // Normal approximation with tie correction.
    const double nn = static_cast<double>(n);
    const double mean = nn * (nn + 1.0) / 4.0;
    double tie_term = 0;
    std::map<double, int> tie_counts;
    for (const double m : mags) {
        ++tie_counts[m];
    }
    for (const auto& [mag, t] : tie_counts) {
        (void)mag;
        tie_term += static_cast<double>(t) * t * t - static_cast<double>(t);
    }
    const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
    if (var <= 0) {
        if (warn) {
            (*warn) << "warning: wilcoxon: zero variance under ties; p = 1" << std::endl;
        }
        return {w_plus, 1.0, n, false};
    }
    const double z = (w_plus - mean) / std::sqrt(var);
    return {w_plus, std::min(1.0, 2.0 * detail::normal_sf(std::abs(z))), n, false};
}

struct TTestResult {
    double t;
    double p_value;
    int df;
};

// Two-sample two-sided Student's t-test with pooled variance; p from the
// regularized incomplete beta (p = I_{df/(df+t²)}(df/2, 1/2)).
inline TTestResult students_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() < 2 || b.size() < 2) {
        throw InputError("t-test: both samples need at least 2 observations");
    }
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / na;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / nb;
    double va = 0, vb = 0;
    for (const double x : a) {
        va += (x - ma) * (x - ma);
    }
    for (const double x : b) {
        vb += (x - mb) * (x - mb);
    }
    const int df = static_cast<int>(na + nb) - 2;
    const double sp2 = (va + vb) / static_cast<double>(df);
    const double denom = std::sqrt(sp2 * (1.0 / na + 1.0 / nb));
    if (denom == 0.0) {
        // Zero pooled variance: identical constants are a certain tie, any
        // separation is a certain difference.
        return {ma == mb ? 0.0 : std::numeric_limits<double>::infinity(),
                ma == mb ? 1.0 : 0.0, df};
    }
    const double t = (ma - mb) / denom;
    const double dfd = static_cast<double>(df);
    const double p = detail::regularized_incomplete_beta(dfd / 2.0, 0.5, dfd / (dfd + t * t));
    return {t, std::min(1.0, p), df};
}

// Star annotation for significance thresholds.
inline std::string significance_stars(double p) {
    if (p < 0.001) {
        return "***";
    }
    if (p < 0.01) {
        return "**";
    }
    if (p < 0.05) {
        return "*";
    }
    return "";
}

}  // namespace retfiner
