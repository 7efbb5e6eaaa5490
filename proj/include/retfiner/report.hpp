#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "retfiner/common.hpp"
#include "retfiner/probe.hpp"
#include "retfiner/stats.hpp"

namespace retfiner {

inline const std::vector<std::string>& metric_names() {
    static const std::vector<std::string> v = {"bacc", "auroc", "ap", "f1"};
    return v;
}

inline double metric_value(const ProbeRun& r, const std::string& metric) {
    if (metric == "bacc") {
        return r.bacc;
    }
    if (metric == "auroc") {
        return r.auroc;
    }
    if (metric == "ap") {
        return r.ap;
    }
    if (metric == "f1") {
        return r.f1;
    }
    throw UsageError("unknown metric '" + metric + "'");
}

struct MetricCell {
    double mean{0};
    double stdev{0};  // sample standard deviation over seeds
};

inline MetricCell summarize(const std::vector<double>& values) {
    MetricCell cell;
    const double n = static_cast<double>(values.size());
    for (const double v : values) {
        cell.mean += v;
    }
    cell.mean /= n;
    if (values.size() > 1) {
        double acc = 0;
        for (const double v : values) {
            acc += (v - cell.mean) * (v - cell.mean);
        }
        cell.stdev = std::sqrt(acc / (n - 1.0));
    }
    return cell;
}

struct ComparisonRow {
    std::string dataset;
    std::string metric;
    MetricCell model;
    MetricCell baseline;
    double delta{0};  // model.mean - baseline.mean
    double p_value{1};
    std::string stars;
};

struct MetricReport {
    std::string model_name;
    std::string baseline_name;
    std::string test_name;  // "wilcoxon" or "ttest"
    std::vector<ComparisonRow> rows;
};

namespace detail {

// dataset -> seed -> run, with duplicate protection.
inline std::map<std::string, std::map<int, ProbeRun>> index_runs(
    const std::vector<ProbeRun>& runs, const std::string& which) {
    std::map<std::string, std::map<int, ProbeRun>> out;
    for (const auto& r : runs) {
        if (!out[r.dataset].emplace(r.seed, r).second) {
            throw DataError(which + " runs hold a duplicate (dataset '" + r.dataset +
                            "', seed " + std::to_string(r.seed) + ")");
        }
    }
    return out;
}

}  // namespace detail

// Paired comparison of two run sets. Every (dataset, seed) present on the
// model side must exist on the baseline side — the tests below are paired per
// (dataset, seed) — and a missing counterpart is an error, not a skip.
inline MetricReport build_report(const std::vector<ProbeRun>& model_runs,
                                 const std::vector<ProbeRun>& baseline_runs,
                                 const std::string& model_name,
                                 const std::string& baseline_name, const std::string& test) {
    if (test != "wilcoxon" && test != "ttest") {
        throw UsageError("unknown test '" + test + "' (expected wilcoxon | ttest)");
    }
    if (model_runs.empty() || baseline_runs.empty()) {
        throw InputError("build_report: empty run set");
    }
    const auto model_idx = detail::index_runs(model_runs, "model");
    const auto base_idx = detail::index_runs(baseline_runs, "baseline");

    MetricReport report;
    report.model_name = model_name;
    report.baseline_name = baseline_name;
    report.test_name = test;
    for (const auto& [dataset, by_seed] : model_idx) {
        const auto bit = base_idx.find(dataset);
        for (const auto& [seed, run] : by_seed) {
            (void)run;
            if (bit == base_idx.end() || !bit->second.count(seed)) {
                throw DataError("no baseline run for (dataset '" + dataset + "', seed " +
                                std::to_string(seed) + ")");
            }
        }
        for (const auto& metric : metric_names()) {
            std::vector<double> mv, bv;
            for (const auto& [seed, run] : by_seed) {
                mv.push_back(metric_value(run, metric));
                bv.push_back(metric_value(bit->second.at(seed), metric));
            }
            ComparisonRow row;
            row.dataset = dataset;
            row.metric = metric;
            row.model = summarize(mv);
            row.baseline = summarize(bv);
            row.delta = row.model.mean - row.baseline.mean;
            if (test == "wilcoxon") {
                row.p_value = wilcoxon_signed_rank(mv, bv).p_value;
            } else {
                row.p_value = students_t_test(mv, bv).p_value;
            }
            row.stars = significance_stars(row.p_value);
            report.rows.push_back(row);
        }
    }
    return report;
}

namespace detail {

inline std::string fmt(double v, const char* spec = "%.2f") {
    char buf[64];
    std::snprintf(buf, sizeof(buf), spec, v);
    return buf;
}

}  // namespace detail

// Markdown rendering: one table per dataset; the best mean per metric is
// bold, the best baseline mean is underlined, deltas sit in parentheses on
// the model row with the significance stars appended.
inline std::string render_markdown(const MetricReport& report) {
    std::string md = "# Probe comparison: " + report.model_name + " vs " +
                     report.baseline_name + "\n\n";
    md += "Significance (" + report.test_name + "): `*`: p < 0.05, `**`: p < 0.01, `***`: p < "
          "0.001. Deltas are " +
          report.model_name + " − " + report.baseline_name + " in points.\n";

    std::map<std::string, std::vector<const ComparisonRow*>> by_dataset;
    for (const auto& row : report.rows) {
        by_dataset[row.dataset].push_back(&row);
    }
    for (const auto& [dataset, rows] : by_dataset) {
        md += "\n## " + dataset + "\n\n";
        md += "| model |";
        for (const auto* r : rows) {
            md += " " + r->metric + " |";
        }
        md += "\n|---|";
        for (size_t i = 0; i < rows.size(); ++i) {
            md += "---|";
        }
        md += "\n| " + report.model_name + " |";
        for (const auto* r : rows) {
            std::string cell = detail::fmt(r->model.mean) + " ± " + detail::fmt(r->model.stdev);
            if (r->model.mean >= r->baseline.mean) {
                cell = "<b>" + cell + "</b>";
            }
            const std::string sign = r->delta >= 0 ? "+" : "";
            cell += " (" + sign + detail::fmt(r->delta) + ")" + r->stars;
            md += " " + cell + " |";
        }
        md += "\n| " + report.baseline_name + " |";
        for (const auto* r : rows) {
            std::string cell = detail::fmt(r->baseline.mean) + " ± " +
                               detail::fmt(r->baseline.stdev);
            // Single-baseline comparison: the baseline row is the best
            // baseline by construction, and bold if it beats the model.
            cell = "<u>" + cell + "</u>";
            if (r->baseline.mean > r->model.mean) {
                cell = "<b>" + cell + "</b>";
            }
            md += " " + cell + " |";
        }
        md += "\n";
    }
    return md;
}

inline std::string render_csv(const MetricReport& report) {
    std::string csv =
        "dataset,metric,model_mean,model_std,baseline_mean,baseline_std,delta,p_value,stars\n";
    for (const auto& row : report.rows) {
        csv += row.dataset + "," + row.metric + "," + detail::fmt(row.model.mean, "%.10g") + "," +
               detail::fmt(row.model.stdev, "%.10g") + "," +
               detail::fmt(row.baseline.mean, "%.10g") + "," +
               detail::fmt(row.baseline.stdev, "%.10g") + "," +
               detail::fmt(row.delta, "%.10g") + "," + detail::fmt(row.p_value, "%.10g") + "," +
               row.stars + "\n";
    }
    return csv;
}

// Writes report.md plus a sibling report.csv with full-precision values.
inline void write_report(const MetricReport& report, const std::filesystem::path& md_path) {
    {
        std::ofstream f(md_path, std::ios::trunc);
        if (!f) {
            throw InputError("cannot write " + md_path.string());
        }
        f << render_markdown(report);
    }
    std::filesystem::path csv_path = md_path;
    csv_path.replace_extension(".csv");
    std::ofstream f(csv_path, std::ios::trunc);
    if (!f) {
        throw InputError("cannot write " + csv_path.string());
    }
    f << render_csv(report);
}

// Table-3-style summary for loss-subset ablations: one row per subset.
inline std::string render_ablation_markdown(
    const std::vector<std::pair<std::string, std::vector<ProbeRun>>>& subsets) {
    std::string md = "# Loss-subset ablation\n\n| losses |";
    for (const auto& m : metric_names()) {
        md += " " + m + " |";
    }
    md += "\n|---|";
    for (size_t i = 0; i < metric_names().size(); ++i) {
        md += "---|";
    }
    md += "\n";
    for (const auto& [name, runs] : subsets) {
        md += "| " + name + " |";
        for (const auto& metric : metric_names()) {
            std::vector<double> vals;
            for (const auto& r : runs) {
                vals.push_back(metric_value(r, metric));
            }
            const MetricCell cell = summarize(vals);
            md += " " + detail::fmt(cell.mean) + " ± " + detail::fmt(cell.stdev) + " |";
        }
        md += "\n";
    }
    return md;
}

}  // namespace retfiner
