#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "retfiner/common.hpp"
#include "retfiner/corpus.hpp"
#include "retfiner/encoders.hpp"
#include "retfiner/metrics.hpp"
#include "retfiner/rng.hpp"

namespace retfiner {

// ---------------------------------------------------------------------------
// Pooling strategies
// ---------------------------------------------------------------------------

enum class Pooling : uint8_t { Cls, PatchMean, AllMean, Concat };

inline Pooling pooling_from_string(const std::string& s) {
    if (s == "cls") {
        return Pooling::Cls;
    }
    if (s == "patch_mean") {
        return Pooling::PatchMean;
    }
    if (s == "all_mean") {
        return Pooling::AllMean;
    }
    if (s == "concat") {
        return Pooling::Concat;
    }
    throw UsageError("unknown pooling strategy '" + s +
                     "' (expected cls | patch_mean | all_mean | concat)");
}

inline std::string to_string(Pooling p) {
    switch (p) {
        case Pooling::Cls:
            return "cls";
        case Pooling::PatchMean:
            return "patch_mean";
        case Pooling::AllMean:
            return "all_mean";
        case Pooling::Concat:
            return "concat";
    }
    return "?";
}

inline Index pooled_dim(Pooling p, Index embed_dim) {
    return p == Pooling::Concat ? 2 * embed_dim : embed_dim;
}

// ---------------------------------------------------------------------------
// Feature extraction
// ---------------------------------------------------------------------------

// Frozen-encoder features for a labeled image set: cls / patch_mean /
// all_mean are D-dimensional, concat is [cls ‖ patch_mean] at 2D.
// Deterministic; the encoder is never mutated.
template <typename T>
Mat<double> extract_features(const RefinerModel<T>& model, const std::vector<Mat<float>>& images,
                             Pooling pooling, Index batch_size = 64) {
    if (images.empty()) {
        throw InputError("extract_features: no images");
    }
    const Index d = model.vision_config().embed_dim;
    const Index np = model.vision_config().num_patches();
    Mat<double> features(static_cast<Index>(images.size()), pooled_dim(pooling, d));
    for (size_t start = 0; start < images.size(); start += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(images.size(), start + static_cast<size_t>(batch_size));
        const std::vector<Mat<float>> part(images.begin() + static_cast<std::ptrdiff_t>(start),
                                           images.begin() + static_cast<std::ptrdiff_t>(end));
        Tape<T> g(false);
        const auto patches = images_to_patches<T>(part, model.vision_config());
        const auto out = model.vision().forward(g, patches, static_cast<Index>(part.size()));
        const Mat<T>& cls = out.cls->value;       // [B, D]
        const Mat<T>& tokens = out.tokens->value;  // [B*np, D]
        for (Index bi = 0; bi < static_cast<Index>(part.size()); ++bi) {
            const Index row = static_cast<Index>(start) + bi;
            Vec<double> patch_mean = Vec<double>::Zero(d);
            for (Index p = 0; p < np; ++p) {
                for (Index c = 0; c < d; ++c) {
                    patch_mean(c) += static_cast<double>(tokens(bi * np + p, c));
                }
            }
            patch_mean /= static_cast<double>(np);
            switch (pooling) {
                case Pooling::Cls:
                    for (Index c = 0; c < d; ++c) {
                        features(row, c) = static_cast<double>(cls(bi, c));
                    }
                    break;
                case Pooling::PatchMean:
                    for (Index c = 0; c < d; ++c) {
                        features(row, c) = patch_mean(c);
                    }
                    break;
                case Pooling::AllMean:
                    for (Index c = 0; c < d; ++c) {
                        features(row, c) = (static_cast<double>(cls(bi, c)) +
                                            static_cast<double>(np) * patch_mean(c)) /
                                           static_cast<double>(np + 1);
                    }
                    break;
                case Pooling::Concat:
                    for (Index c = 0; c < d; ++c) {
                        features(row, c) = static_cast<double>(cls(bi, c));
                        features(row, d + c) = patch_mean(c);
                    }
                    break;
            }
        }
    }
    if (!all_finite(features)) {
        throw NumericError("extract_features: non-finite feature values");
    }
    return features;
}

// ---------------------------------------------------------------------------
// Linear probe
// ---------------------------------------------------------------------------

struct LinearProbe {
    Mat<double> w;       // [d, C]
    Vec<double> b;       // [C]
    Vec<double> mean;    // feature standardization
    Vec<double> stdev;
    int iterations{0};
    double final_grad_norm{0};
};

// Multinomial logistic regression by full-batch Nesterov-accelerated gradient
// descent with L2 regularization. The problem is convex and the recipe is
// deterministic (zero init, Lipschitz step from a power-iteration bound), so
// identical inputs give identical heads regardless of seed.
inline LinearProbe train_linear_probe(const Mat<double>& features, const std::vector<int>& labels,
                                      uint64_t seed, double l2 = 1e-4, int max_iters = 2000,
                                      double grad_tol = 1e-5) {
    const Index n = features.rows();
    const Index d = features.cols();
    if (static_cast<size_t>(n) != labels.size() || n == 0) {
        throw InputError("train_linear_probe: features/labels mismatch");
    }
    int num_classes = 0;
    for (const int y : labels) {
        if (y < 0) {
            throw InputError("train_linear_probe: negative label");
        }
        num_classes = std::max(num_classes, y + 1);
    }
    {
        std::vector<bool> seen(static_cast<size_t>(num_classes), false);
        for (const int y : labels) {
            seen[static_cast<size_t>(y)] = true;
        }
        int distinct = 0;
        for (const bool s : seen) {
            distinct += s ? 1 : 0;
        }
        if (distinct < 2) {
            throw DataError("train_linear_probe: training labels hold a single class");
        }
    }

    LinearProbe probe;
    probe.mean = features.colwise().mean().transpose();
    probe.stdev = Vec<double>::Zero(d);
    for (Index c = 0; c < d; ++c) {
        double acc = 0;
        for (Index r = 0; r < n; ++r) {
            const double dv = features(r, c) - probe.mean(c);
            acc += dv * dv;
        }
        const double s = std::sqrt(acc / static_cast<double>(n));
        probe.stdev(c) = s < 1e-12 ? 1.0 : s;
    }
    Mat<double> x(n, d);
    for (Index r = 0; r < n; ++r) {
        for (Index c = 0; c < d; ++c) {
            x(r, c) = (features(r, c) - probe.mean(c)) / probe.stdev(c);
        }
    }

    // Largest singular value of X via power iteration on XᵀX gives the
    // softmax-CE Lipschitz bound L = σ²/(2n) + λ; step = 1/L.
    Rng rng = Rng::derive(seed, 0x70726f6265ull);
    Vec<double> v(d);
    for (Index c = 0; c < d; ++c) {
        v(c) = rng.normal(0.0, 1.0);
    }
    v.normalize();
    double sigma2 = 0;
    for (int it = 0; it < 30; ++it) {
        Vec<double> u = x.transpose() * (x * v);
        const double norm = u.norm();
        if (norm < 1e-30) {
            break;
        }
        sigma2 = norm;
        v = u / norm;
    }
    const double lips = sigma2 / (2.0 * static_cast<double>(n)) + l2;
    const double step = 1.0 / std::max(lips, 1e-12);

    Mat<double> onehot = Mat<double>::Zero(n, num_classes);
    for (Index r = 0; r < n; ++r) {
        onehot(r, labels[static_cast<size_t>(r)]) = 1.0;
    }

    Mat<double> w = Mat<double>::Zero(d, num_classes);
    Vec<double> bias = Vec<double>::Zero(num_classes);
    Mat<double> w_prev = w;
    Vec<double> b_prev = bias;

    auto grad_at = [&](const Mat<double>& wq, const Vec<double>& bq, Mat<double>& gw,
                       Vec<double>& gb) {
        Mat<double> p = x * wq;
        p.rowwise() += bq.transpose();
        for (Index r = 0; r < n; ++r) {
            double mx = p(r, 0);
            for (Index c = 1; c < num_classes; ++c) {
                mx = std::max(mx, p(r, c));
            }
            double sum = 0;
            for (Index c = 0; c < num_classes; ++c) {
                p(r, c) = std::exp(p(r, c) - mx);
                sum += p(r, c);
            }
            p.row(r) /= sum;
        }
        p -= onehot;
        gw = x.transpose() * p / static_cast<double>(n) + l2 * wq;
        gb = p.colwise().sum().transpose() / static_cast<double>(n);
    };

    Mat<double> gw(d, num_classes);
    Vec<double> gb(num_classes);
    for (int it = 1; it <= max_iters; ++it) {
        const double momentum = static_cast<double>(it - 1) / static_cast<double>(it + 2);
        const Mat<double> wy = w + momentum * (w - w_prev);
        const Vec<double> by = bias + momentum * (bias - b_prev);
        grad_at(wy, by, gw, gb);
        w_prev = w;
        b_prev = bias;
        w = wy - step * gw;
        bias = by - step * gb;
        probe.iterations = it;
        // Convergence is judged at the current iterate, not the lookahead.
        grad_at(w, bias, gw, gb);
        probe.final_grad_norm = std::sqrt(gw.squaredNorm() + gb.squaredNorm());
        if (probe.final_grad_norm < grad_tol) {
            break;
        }
    }
    probe.w = std::move(w);
    probe.b = std::move(bias);
    return probe;
}

// Softmax class probabilities under the probe, with standardization applied.
inline Mat<double> probe_scores(const LinearProbe& probe, const Mat<double>& features) {
    if (features.cols() != probe.w.rows()) {
        throw ConfigError("probe_scores: feature dimension mismatch (got " +
                          std::to_string(features.cols()) + ", probe expects " +
                          std::to_string(probe.w.rows()) + ")");
    }
    const Index n = features.rows();
    Mat<double> x(n, features.cols());
    for (Index r = 0; r < n; ++r) {
        for (Index c = 0; c < features.cols(); ++c) {
            x(r, c) = (features(r, c) - probe.mean(c)) / probe.stdev(c);
        }
    }
    Mat<double> p = x * probe.w;
    p.rowwise() += probe.b.transpose();
    for (Index r = 0; r < n; ++r) {
        double mx = p(r, 0);
        for (Index c = 1; c < p.cols(); ++c) {
            mx = std::max(mx, p(r, c));
        }
        double sum = 0;
        for (Index c = 0; c < p.cols(); ++c) {
            p(r, c) = std::exp(p(r, c) - mx);
            sum += p(r, c);
        }
        p.row(r) /= sum;
    }
    return p;
}

inline std::vector<int> argmax_labels(const Mat<double>& scores) {
    std::vector<int> out(static_cast<size_t>(scores.rows()));
    for (Index r = 0; r < scores.rows(); ++r) {
        Index best = 0;
        for (Index c = 1; c < scores.cols(); ++c) {
            if (scores(r, c) > scores(r, best)) {
                best = c;
            }
        }
        out[static_cast<size_t>(r)] = static_cast<int>(best);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Multi-seed protocol
// ---------------------------------------------------------------------------

struct ProbeRun {
    int seed{0};
    std::string strategy;
    std::string dataset;
    double bacc{0}, auroc{0}, ap{0}, f1{0};
};

inline void to_json(nlohmann::json& j, const ProbeRun& r) {
    j = nlohmann::json{{"seed", r.seed},   {"strategy", r.strategy}, {"dataset", r.dataset},
                       {"bacc", r.bacc},   {"auroc", r.auroc},       {"ap", r.ap},
                       {"f1", r.f1}};
}

inline void from_json(const nlohmann::json& j, ProbeRun& r) {
    j.at("seed").get_to(r.seed);
    j.at("strategy").get_to(r.strategy);
    j.at("dataset").get_to(r.dataset);
    j.at("bacc").get_to(r.bacc);
    j.at("auroc").get_to(r.auroc);
    j.at("ap").get_to(r.ap);
    j.at("f1").get_to(r.f1);
}

struct ProbeDataset {
    std::string id;
    std::vector<Mat<float>> images;
    std::vector<int> labels;
};

// One probing experiment on pre-extracted features: stratified 80/20 split
// keyed only by (labels, master_seed, seed), probe fit on the train part,
// metrics on the held-out part.
inline ProbeRun run_probe_seed(const Mat<double>& features, const std::vector<int>& labels,
                               const std::string& dataset_id, const std::string& strategy,
                               uint64_t master_seed, int seed) {
    const uint64_t split_seed = Rng::derive(master_seed, static_cast<uint64_t>(seed)).next_u64();
    const auto parts = split_corpus(labels, {0.8, 0.2}, split_seed);
    const auto& train = parts[0];
    const auto& test = parts[1];
    if (train.empty() || test.empty()) {
        throw DataError("run_probe_seed: split produced an empty part");
    }
    Mat<double> ftr(static_cast<Index>(train.size()), features.cols());
    std::vector<int> ytr(train.size());
    for (size_t i = 0; i < train.size(); ++i) {
        ftr.row(static_cast<Index>(i)) = features.row(train[i]);
        ytr[i] = labels[static_cast<size_t>(train[i])];
    }
    Mat<double> fte(static_cast<Index>(test.size()), features.cols());
    std::vector<int> yte(test.size());
    for (size_t i = 0; i < test.size(); ++i) {
        fte.row(static_cast<Index>(i)) = features.row(test[i]);
        yte[i] = labels[static_cast<size_t>(test[i])];
    }
    const LinearProbe probe = train_linear_probe(ftr, ytr, split_seed);
    const Mat<double> scores = probe_scores(probe, fte);
    const std::vector<int> pred = argmax_labels(scores);

    ProbeRun run;
    run.seed = seed;
    run.strategy = strategy;
    run.dataset = dataset_id;
    run.bacc = balanced_accuracy(yte, pred);
    run.auroc = auroc_ovr_macro(yte, scores);
    run.ap = ap_ovr_macro(yte, scores);
    run.f1 = f1_macro(yte, pred);
    return run;
}

// The multi-seed protocol: features are extracted once, then each seed draws
// its own split and trains its own probe. Seeds are independent, so they can
// run on `n_workers` threads; results are written into per-seed slots and the
// output is identical for every worker count.
template <typename T>
std::vector<ProbeRun> run_protocol(const RefinerModel<T>& model, const ProbeDataset& dataset,
                                   Pooling pooling, int n_seeds, uint64_t master_seed,
                                   std::ostream* progress = nullptr, int n_workers = 1) {
    if (n_seeds < 1) {
        throw ConfigError("run_protocol: n_seeds must be >= 1");
    }
    if (n_workers < 1) {
        throw ConfigError("run_protocol: n_workers must be >= 1");
    }
    const Mat<double> features = extract_features(model, dataset.images, pooling);
    const std::string strategy = to_string(pooling);
    std::vector<ProbeRun> runs(static_cast<size_t>(n_seeds));

    if (n_workers == 1 || n_seeds == 1) {
        for (int s = 0; s < n_seeds; ++s) {
            runs[static_cast<size_t>(s)] =
                run_probe_seed(features, dataset.labels, dataset.id, strategy, master_seed, s);
        }
    } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(static_cast<size_t>(n_workers));
        const int workers = std::min(n_workers, n_seeds);
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&, w]() {
                try {
                    for (int s = w; s < n_seeds; s += workers) {
                        runs[static_cast<size_t>(s)] = run_probe_seed(
                            features, dataset.labels, dataset.id, strategy, master_seed, s);
                    }
                } catch (...) {
                    errors[static_cast<size_t>(w)] = std::current_exception();
                }
            });
        }
        for (auto& t : pool) {
            t.join();
        }
        for (const auto& e : errors) {
            if (e) {
                std::rethrow_exception(e);
            }
        }
    }
    if (progress) {
        for (const auto& run : runs) {
            char line[160];
            std::snprintf(line, sizeof(line),
                          "seed %d  bacc %.2f  auroc %.2f  ap %.2f  f1 %.2f\n", run.seed,
                          run.bacc, run.auroc, run.ap, run.f1);
            (*progress) << line << std::flush;
        }
    }
    return runs;
}

inline void save_runs(const std::vector<ProbeRun>& runs, const std::filesystem::path& path) {
    nlohmann::json j = runs;
    std::ofstream f(path, std::ios::trunc);
    if (!f) {
        throw InputError("cannot write " + path.string());
    }
    f << j.dump(2) << "\n";
}

inline std::vector<ProbeRun> load_runs(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) {
        throw InputError("runs file not found: " + path.string());
    }
    nlohmann::json j;
    try {
        f >> j;
        return j.get<std::vector<ProbeRun>>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed runs file " + path.string() + ": " + e.what());
    }
}

}  // namespace retfiner
