// Metric and paired-test oracles. Reference values for the statistical tests
// were frozen from an independent reference implementation before this suite
// was written; rank metrics are checked against exhaustive pair enumeration.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <sstream>
#include <vector>

#include "retfiner/metrics.hpp"
#include "retfiner/rng.hpp"
#include "retfiner/stats.hpp"

using namespace retfiner;
using Catch::Approx;

namespace {

// AUROC by definition: the fraction of (positive, negative) pairs ranked
// correctly, ties counting one half.
double auroc_pairs(const std::vector<int>& y, const std::vector<double>& s) {
    double num = 0;
    int64_t pairs = 0;
    for (size_t i = 0; i < y.size(); ++i) {
        if (y[i] != 1) continue;
        for (size_t j = 0; j < y.size(); ++j) {
            if (y[j] != 0) continue;
            ++pairs;
            if (s[i] > s[j]) {
                num += 1.0;
            } else if (s[i] == s[j]) {
                num += 0.5;
            }
        }
    }
    return 100.0 * num / static_cast<double>(pairs);
}

// Average precision from scratch: walk the distinct thresholds descending and
// accumulate (R_k - R_{k-1}) * P_k with counts recomputed per threshold.
double ap_thresholds(const std::vector<int>& y, const std::vector<double>& s) {
    std::vector<double> cuts = s;
    std::sort(cuts.begin(), cuts.end(), std::greater<>());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    int64_t total_pos = 0;
    for (const int v : y) {
        total_pos += v;
    }
    double ap = 0, recall_prev = 0;
    for (const double t : cuts) {
        int64_t tp = 0, fp = 0;
        for (size_t i = 0; i < y.size(); ++i) {
            if (s[i] >= t) {
                (y[i] == 1 ? tp : fp) += 1;
            }
        }
        const double recall = static_cast<double>(tp) / static_cast<double>(total_pos);
        const double precision =
            static_cast<double>(tp) / static_cast<double>(tp + fp);
        ap += (recall - recall_prev) * precision;
        recall_prev = recall;
    }
    return 100.0 * ap;
}

}  // namespace

// ---------------------------------------------------------------------------
// Classification metrics
// ---------------------------------------------------------------------------

TEST_CASE("balanced accuracy is the mean of per-class recalls") {
    // class 0 recall 1/3, class 1 recall 1 -> (1/3 + 1)/2 = 66.67
    REQUIRE(balanced_accuracy({0, 0, 0, 1}, {0, 1, 1, 1}) == Approx(200.0 / 3.0).margin(1e-9));
    REQUIRE(balanced_accuracy({0, 1, 2}, {0, 1, 2}) == Approx(100.0));
    REQUIRE(balanced_accuracy({1, 1, 1, 0}, {0, 0, 0, 1}) == Approx(0.0));
    // Imbalance does not shift it: perfect on the rare class still averages.
    REQUIRE(balanced_accuracy({0, 0, 0, 0, 0, 0, 1}, {0, 0, 0, 0, 0, 0, 1}) == Approx(100.0));
    REQUIRE_THROWS_AS(balanced_accuracy({}, {}), InputError);
    REQUIRE_THROWS_AS(balanced_accuracy({0, 1}, {0}), InputError);
}

TEST_CASE("binary auroc and ap match the worked example") {
    const std::vector<int> y = {1, 0, 1, 0};
    const std::vector<double> s = {0.9, 0.8, 0.4, 0.2};
    REQUIRE(auroc_binary(y, s) == Approx(75.0).margin(1e-9));
    REQUIRE(average_precision_binary(y, s) == Approx(100.0 * (0.5 + 1.0 / 3.0)).margin(1e-9));
    REQUIRE(average_precision_binary(y, s) == Approx(83.33).margin(0.01));
}

TEST_CASE("binary auroc handles perfect, inverted, and tied scores") {
    REQUIRE(auroc_binary({0, 0, 1, 1}, {0.1, 0.2, 0.8, 0.9}) == Approx(100.0));
    REQUIRE(auroc_binary({1, 1, 0, 0}, {0.1, 0.2, 0.8, 0.9}) == Approx(0.0));
    REQUIRE(auroc_binary({0, 1, 0, 1}, {0.5, 0.5, 0.5, 0.5}) == Approx(50.0));
    REQUIRE_THROWS_AS(auroc_binary({1, 1}, {0.5, 0.6}), DataError);   // one class
    REQUIRE_THROWS_AS(auroc_binary({0, 2}, {0.5, 0.6}), InputError);  // bad label
}

TEST_CASE("rank metrics agree with exhaustive enumeration on 200 random cases") {
    Rng rng = Rng::derive(2026, 1);
    int done = 0;
    while (done < 200) {
        const size_t n = static_cast<size_t>(rng.uniform_int(6, 50));
        std::vector<int> y(n);
        std::vector<double> s(n);
        size_t pos = 0;
        for (size_t i = 0; i < n; ++i) {
            y[i] = static_cast<int>(rng.below(2));
            pos += static_cast<size_t>(y[i]);
            // A coarse score grid forces plenty of exact ties.
            s[i] = static_cast<double>(rng.uniform_int(0, 5)) / 5.0;
        }
        if (pos == 0 || pos == n) {
            continue;  // redraw degenerate labelings
        }
        REQUIRE(auroc_binary(y, s) == Approx(auroc_pairs(y, s)).margin(1e-9));
        REQUIRE(average_precision_binary(y, s) == Approx(ap_thresholds(y, s)).margin(1e-9));
        ++done;
    }
}

TEST_CASE("binary f1 from the confusion counts") {
    // tp=2, fp=1, fn=1 -> 2*2/(4+1+1) = 66.67
    REQUIRE(f1_binary({1, 1, 0, 1}, {1, 1, 1, 0}) == Approx(200.0 / 3.0).margin(1e-9));
    REQUIRE(f1_binary({1, 1}, {1, 1}) == Approx(100.0));
    REQUIRE(f1_binary({0, 0}, {0, 0}) == Approx(0.0));  // vanishing denominator
}

TEST_CASE("macro f1 averages one-vs-rest over classes present in y_true") {
    const std::vector<int> yt = {0, 0, 1, 1, 1};
    const std::vector<int> yp = {0, 1, 1, 1, 2};
    // Scratch per-class confusion counts.
    // class 0: tp=1 fp=0 fn=1 -> 2/(2+0+1) = 2/3
    // class 1: tp=2 fp=1 fn=1 -> 4/(4+1+1) = 2/3
    const double expected = 100.0 * (2.0 / 3.0 + 2.0 / 3.0) / 2.0;
    REQUIRE(f1_macro(yt, yp) == Approx(expected).margin(1e-9));
    // Class 2 appears only in predictions: not part of the macro mean.
}

TEST_CASE("macro ovr auroc/ap average per-class binary scores") {
    const std::vector<int> y = {0, 0, 1, 1, 2};
    Mat<double> scores(5, 3);
    scores << 0.8, 0.1, 0.1,  //
        0.4, 0.5, 0.1,        //
        0.2, 0.7, 0.1,        //
        0.3, 0.3, 0.4,        //
        0.1, 0.2, 0.7;
    std::vector<double> c0 = {0.8, 0.4, 0.2, 0.3, 0.1};
    std::vector<double> c1 = {0.1, 0.5, 0.7, 0.3, 0.2};
    std::vector<double> c2 = {0.1, 0.1, 0.1, 0.4, 0.7};
    const std::vector<int> b0 = {1, 1, 0, 0, 0}, b1 = {0, 0, 1, 1, 0}, b2 = {0, 0, 0, 0, 1};
    const double want_auroc =
        (auroc_binary(b0, c0) + auroc_binary(b1, c1) + auroc_binary(b2, c2)) / 3.0;
    const double want_ap = (average_precision_binary(b0, c0) +
                            average_precision_binary(b1, c1) +
                            average_precision_binary(b2, c2)) /
                           3.0;
    REQUIRE(auroc_ovr_macro(y, scores, nullptr) == Approx(want_auroc).margin(1e-9));
    REQUIRE(ap_ovr_macro(y, scores, nullptr) == Approx(want_ap).margin(1e-9));
}

TEST_CASE("absent classes are excluded from the macro mean with a warning") {
    const std::vector<int> y = {0, 0, 1, 1};  // class 2 never occurs
    Mat<double> scores(4, 3);
    scores << 0.9, 0.1, 0.0,  //
        0.8, 0.2, 0.0,        //
        0.1, 0.9, 0.0,        //
        0.2, 0.8, 0.0;
    std::ostringstream warn;
    const double got = auroc_ovr_macro(y, scores, &warn);
    const std::vector<int> b0 = {1, 1, 0, 0}, b1 = {0, 0, 1, 1};
    const std::vector<double> c0 = {0.9, 0.8, 0.1, 0.2}, c1 = {0.1, 0.2, 0.9, 0.8};
    REQUIRE(got == Approx((auroc_binary(b0, c0) + auroc_binary(b1, c1)) / 2.0).margin(1e-9));
    REQUIRE(warn.str().find("class 2") != std::string::npos);

    REQUIRE_THROWS_AS(auroc_ovr_macro({0, 3}, scores, nullptr), InputError);  // label >= cols
}

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank
// ---------------------------------------------------------------------------

TEST_CASE("wilcoxon: five positive differences reach the two-sided floor") {
    const std::vector<double> a = {1, 2, 3, 4, 5};
    const std::vector<double> b = {0, 0, 0, 0, 0};
    const WilcoxonResult r = wilcoxon_signed_rank(a, b, nullptr);
    REQUIRE(r.statistic == 15.0);  // W+ = 1+2+3+4+5
    REQUIRE(r.p_value == Approx(0.0625).margin(1e-12));
    REQUIRE(r.n_nonzero == 5);
    REQUIRE(r.exact);
}

TEST_CASE("wilcoxon: mixed-sign exact case") {
    // d = [2.5, -1.0, 3.0, -0.5, 1.5, 2.0, -2.2, 0.7]
    const std::vector<double> a = {2.5, -1.0, 3.0, -0.5, 1.5, 2.0, -2.2, 0.7};
    const std::vector<double> b(8, 0.0);
    const WilcoxonResult r = wilcoxon_signed_rank(a, b, nullptr);
    REQUIRE(r.statistic == 26.0);
    REQUIRE(r.p_value == Approx(0.3125).margin(1e-12));
    REQUIRE(r.exact);
}

TEST_CASE("wilcoxon: tied magnitudes take midranks in the exact branch") {
    // d = [1, 1, -1, 2, 3, -2]: |d| midranks {1:2, 2:4.5, 3:6}, W+ = 14.5
    const std::vector<double> a = {1, 1, -1, 2, 3, -2};
    const std::vector<double> b(6, 0.0);
    const WilcoxonResult r = wilcoxon_signed_rank(a, b, nullptr);
    REQUIRE(r.statistic == 14.5);
    REQUIRE(r.p_value == Approx(0.53125).margin(1e-12));
    REQUIRE(r.exact);
}

TEST_CASE("wilcoxon: normal approximation matches the frozen reference") {
    const std::vector<double> d30 = {
        0.42573022109339331,   0.1678951367086981,   0.94042265044328199,
        0.4049001171530397,    -0.23566937316111097, 0.66159505490948467,
        1.6040000451301373,    1.2470809631292421,   -0.40373523580699261,
        -0.96542147104605247,  -0.3232744625373522,  0.34132597934724357,
        -2.0250307746388345,   0.081208336067454256, -0.94591094725306513,
        -0.43226735470345162,  -0.2442589828573099,  -0.01630015636915455,
        0.71163053637413287,   1.3425133694426776,   0.17146533705596573,
        1.6664634705496859,    -0.36519467348661355, 0.65151007009301964,
        1.2034701816518085,    0.39401229776087454,  -0.44349924935380841,
        -0.62172537625841939,  -0.15772582566733917, 0.52019512347004937};
    const std::vector<double> zeros(d30.size(), 0.0);
    const WilcoxonResult r = wilcoxon_signed_rank(d30, zeros, nullptr);
    REQUIRE_FALSE(r.exact);
    REQUIRE(r.n_nonzero == 30);
    REQUIRE(r.p_value == Approx(0.22102157481330342).margin(1e-10));
}

TEST_CASE("wilcoxon: identical samples warn and return p = 1") {
    const std::vector<double> a = {3, 1, 4, 1, 5};
    std::ostringstream warn;
    const WilcoxonResult r = wilcoxon_signed_rank(a, a, &warn);
    REQUIRE(r.p_value == 1.0);
    REQUIRE(r.statistic == 0.0);
    REQUIRE(r.n_nonzero == 0);
    REQUIRE(warn.str().find("zero") != std::string::npos);
}

TEST_CASE("wilcoxon: swapping the samples preserves the p-value") {
    const std::vector<double> a = {2.5, -1.0, 3.0, -0.5, 1.5, 2.0, -2.2, 0.7};
    const std::vector<double> b(8, 0.0);
    const WilcoxonResult ab = wilcoxon_signed_rank(a, b, nullptr);
    const WilcoxonResult ba = wilcoxon_signed_rank(b, a, nullptr);
    REQUIRE(ab.p_value == Approx(ba.p_value).margin(1e-12));
    // W+ and its mirror partition the total rank sum n(n+1)/2 = 36.
    REQUIRE(ab.statistic + ba.statistic == Approx(36.0).margin(1e-12));
}

TEST_CASE("wilcoxon: a perfectly centered statistic caps p at one") {
    const std::vector<double> a = {1, -1, 2, -2, 3, -3};
    const std::vector<double> b(6, 0.0);
    const WilcoxonResult r = wilcoxon_signed_rank(a, b, nullptr);
    REQUIRE(r.statistic == Approx(10.5));  // exactly n(n+1)/4
    REQUIRE(r.p_value == 1.0);
}

TEST_CASE("wilcoxon: input validation") {
    REQUIRE_THROWS_AS(wilcoxon_signed_rank({}, {}, nullptr), InputError);
    REQUIRE_THROWS_AS(wilcoxon_signed_rank({1, 2}, {1}, nullptr), InputError);
    // Fewer than 5 non-zero differences (zeros are discarded first).
    REQUIRE_THROWS_AS(
        wilcoxon_signed_rank({1, 2, 3, 4, 5, 6}, {1, 2, 0, 0, 0, 0}, nullptr), DataError);
}

// ---------------------------------------------------------------------------
// Student's t-test
// ---------------------------------------------------------------------------

TEST_CASE("t-test matches the frozen reference") {
    const std::vector<double> a = {80, 81, 82, 79, 80};
    const std::vector<double> b = {84, 85, 83, 86, 84};
    const TTestResult r = students_t_test(a, b);
    REQUIRE(r.df == 8);
    REQUIRE(r.t == Approx(-5.547001962252291).margin(1e-12));
    REQUIRE(r.p_value == Approx(0.00054287969402081902).margin(1e-12));
}

TEST_CASE("t-test is antisymmetric with an invariant p") {
    const std::vector<double> a = {80, 81, 82, 79, 80};
    const std::vector<double> b = {84, 85, 83, 86, 84};
    const TTestResult ab = students_t_test(a, b);
    const TTestResult ba = students_t_test(b, a);
    REQUIRE(ab.t == Approx(-ba.t).margin(1e-12));
    REQUIRE(ab.p_value == Approx(ba.p_value).margin(1e-12));
}

TEST_CASE("t-test degenerate variance cases") {
    const TTestResult same = students_t_test({5, 5, 5}, {5, 5});
    REQUIRE(same.t == 0.0);
    REQUIRE(same.p_value == 1.0);
    const TTestResult apart = students_t_test({5, 5}, {6, 6});
    REQUIRE(std::isinf(apart.t));
    REQUIRE(apart.p_value == 0.0);
    REQUIRE_THROWS_AS(students_t_test({1}, {2, 3}), InputError);
}

// ---------------------------------------------------------------------------
// Stars
// ---------------------------------------------------------------------------

TEST_CASE("significance stars follow the usual thresholds") {
    REQUIRE(significance_stars(0.0005) == "***");
    REQUIRE(significance_stars(0.005) == "**");
    REQUIRE(significance_stars(0.049) == "*");
    REQUIRE(significance_stars(0.05) == "");
    REQUIRE(significance_stars(0.5) == "");
}
