#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "retfiner/common.hpp"

namespace retfiner {

// All metrics return percentages in [0, 100]. Multiclass AUROC/AP/F1 use
// one-vs-rest macro averaging; classes absent from y_true are excluded from
// the macro mean with a warning rather than polluting it with NaNs.

inline void check_paired(size_t a, size_t b, const char* what) {
    if (a == 0) {
        throw InputError(std::string(what) + ": empty input");
    }
    if (a != b) {
        throw InputError(std::string(what) + ": length mismatch");
    }
}

// Mean of per-class recalls over the classes present in y_true.
inline double balanced_accuracy(const std::vector<int>& y_true, const std::vector<int>& y_pred) {
    check_paired(y_true.size(), y_pred.size(), "balanced_accuracy");
    std::map<int, std::pair<int64_t, int64_t>> per_class;  // label -> (correct, total)
    for (size_t i = 0; i < y_true.size(); ++i) {
        auto& [correct, total] = per_class[y_true[i]];
        ++total;
        if (y_pred[i] == y_true[i]) {
            ++correct;
        }
    }
    double sum = 0;
    for (const auto& [label, counts] : per_class) {
        (void)label;
        sum += static_cast<double>(counts.first) / static_cast<double>(counts.second);
    }
    return 100.0 * sum / static_cast<double>(per_class.size());
}

// Binary AUROC by the Mann-Whitney rank statistic with midranks, which
// scores tied positive/negative pairs as 1/2 exactly.
inline double auroc_binary(const std::vector<int>& y_true, const std::vector<double>& scores) {
    check_paired(y_true.size(), scores.size(), "auroc");
    const size_t n = y_true.size();
    size_t pos = 0;
    for (const int y : y_true) {
        if (y != 0 && y != 1) {
            throw InputError("auroc: labels must be 0/1");
        }
        pos += static_cast<size_t>(y);
    }
    const size_t neg = n - pos;
    if (pos == 0 || neg == 0) {
        throw DataError("auroc: need both a positive and a negative example");
    }
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) {
        order[i] = i;
    }
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    double rank_sum_pos = 0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) {
            ++j;
        }
        // Tied block occupies ranks i+1 .. j (1-based); everyone gets the mean.
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);
        for (size_t k = i; k < j; ++k) {
            if (y_true[order[k]] == 1) {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    const double u = rank_sum_pos -
                     static_cast<double>(pos) * (static_cast<double>(pos) + 1.0) / 2.0;
    return 100.0 * u / (static_cast<double>(pos) * static_cast<double>(neg));
}

// Binary average precision: the step-wise sum Σ (R_k − R_{k−1})·P_k over
// distinct score thresholds in descending order (tied scores form one step).
inline double average_precision_binary(const std::vector<int>& y_true,
                                       const std::vector<double>& scores) {
    check_paired(y_true.size(), scores.size(), "average_precision");
    const size_t n = y_true.size();
    size_t pos = 0;
    for (const int y : y_true) {
        if (y != 0 && y != 1) {
            throw InputError("average_precision: labels must be 0/1");
        }
        pos += static_cast<size_t>(y);
    }
    if (pos == 0) {
        throw DataError("average_precision: no positive examples");
    }
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) {
        order[i] = i;
    }
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] > scores[b]; });
    double ap = 0;
    double recall_prev = 0;
    size_t tp = 0, fp = 0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) {
            ++j;
        }
        for (size_t k = i; k < j; ++k) {
            if (y_true[order[k]] == 1) {
                ++tp;
            } else {
                ++fp;
            }
        }
        const double recall = static_cast<double>(tp) / static_cast<double>(pos);
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        ap += (recall - recall_prev) * precision;
        recall_prev = recall;
        i = j;
    }
    return 100.0 * ap;
}

// Binary F1 for the positive class; 0 when the denominator vanishes.
inline double f1_binary(const std::vector<int>& y_true, const std::vector<int>& y_pred) {
    check_paired(y_true.size(), y_pred.size(), "f1");
    int64_t tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < y_true.size(); ++i) {
        if (y_pred[i] == 1 && y_true[i] == 1) {
            ++tp;
        } else if (y_pred[i] == 1) {
            ++fp;
        } else if (y_true[i] == 1) {
            ++fn;
        }
    }
    const int64_t denom = 2 * tp + fp + fn;
    return denom == 0 ? 0.0 : 100.0 * 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

namespace detail {

inline std::set<int> classes_present(const std::vector<int>& y_true) {
    return std::set<int>(y_true.begin(), y_true.end());
}

inline void warn_absent_class(const char* metric, Index c, std::ostream* warn) {
    if (warn) {
        (*warn) << "warning: " << metric << ": class " << c
                << " absent from y_true, excluded from the macro average" << std::endl;
    }
}

}  // namespace detail

// Macro one-vs-rest AUROC over score columns; `scores` is [N, num_classes].
inline double auroc_ovr_macro(const std::vector<int>& y_true, const Mat<double>& scores,
                              std::ostream* warn = &std::cerr) {
    check_paired(y_true.size(), static_cast<size_t>(scores.rows()), "auroc");
    const Index num_classes = scores.cols();
    const auto present = detail::classes_present(y_true);
    for (const int y : y_true) {
        if (y < 0 || y >= num_classes) {
            throw InputError("auroc: label outside score columns");
        }
    }
    double sum = 0;
    Index used = 0;
    for (Index c = 0; c < num_classes; ++c) {
        if (!present.count(static_cast<int>(c))) {
            detail::warn_absent_class("auroc", c, warn);
            continue;
        }
        std::vector<int> bin(y_true.size());
        std::vector<double> col(y_true.size());
        for (size_t i = 0; i < y_true.size(); ++i) {
            bin[i] = y_true[i] == static_cast<int>(c) ? 1 : 0;
            col[i] = scores(static_cast<Index>(i), c);
        }
        if (static_cast<size_t>(std::count(bin.begin(), bin.end(), 1)) == bin.size()) {
            // Only this class present: no negatives to rank against.
            detail::warn_absent_class("auroc (no negatives)", c, warn);
            continue;
        }
        sum += auroc_binary(bin, col);
        ++used;
    }
    if (used == 0) {
        throw DataError("auroc: no class was scorable");
    }
    return sum / static_cast<double>(used);
}

inline double ap_ovr_macro(const std::vector<int>& y_true, const Mat<double>& scores,
                           std::ostream* warn = &std::cerr) {
    check_paired(y_true.size(), static_cast<size_t>(scores.rows()), "average_precision");
    const Index num_classes = scores.cols();
    const auto present = detail::classes_present(y_true);
    for (const int y : y_true) {
        if (y < 0 || y >= num_classes) {
            throw InputError("average_precision: label outside score columns");
        }
    }
    double sum = 0;
    Index used = 0;
    for (Index c = 0; c < num_classes; ++c) {
        if (!present.count(static_cast<int>(c))) {
            detail::warn_absent_class("average_precision", c, warn);
            continue;
        }
        std::vector<int> bin(y_true.size());
        std::vector<double> col(y_true.size());
        for (size_t i = 0; i < y_true.size(); ++i) {
            bin[i] = y_true[i] == static_cast<int>(c) ? 1 : 0;
            col[i] = scores(static_cast<Index>(i), c);
        }
        sum += average_precision_binary(bin, col);
        ++used;
    }
    if (used == 0) {
        throw DataError("average_precision: no class was scorable");
    }
    return sum / static_cast<double>(used);
}

// Macro F1 over the classes present in y_true (one-vs-rest).
inline double f1_macro(const std::vector<int>& y_true, const std::vector<int>& y_pred) {
    check_paired(y_true.size(), y_pred.size(), "f1");
    const auto present = detail::classes_present(y_true);
    double sum = 0;
    for (const int c : present) {
        std::vector<int> bt(y_true.size()), bp(y_true.size());
        for (size_t i = 0; i < y_true.size(); ++i) {
            bt[i] = y_true[i] == c ? 1 : 0;
            bp[i] = y_pred[i] == c ? 1 : 0;
        }
        sum += f1_binary(bt, bp);
    }
    return sum / static_cast<double>(present.size());
}

}  // namespace retfiner
