// Linear-probe protocol tests: pooling identities, probe training on
// separable data, seed determinism, and worker-count invariance.

#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <sstream>
#include <vector>

#include "retfiner/probe.hpp"

using namespace retfiner;
using Catch::Approx;

namespace {

struct ProbeRig {
    RefinerModel<float> model;
    ProbeDataset dataset;
    Index embed_dim{16};

    explicit ProbeRig(Index n = 24, uint64_t seed = 19) {
        VisionConfig vc;
        vc.image_size = 32;
        vc.patch_size = 16;
        vc.embed_dim = embed_dim;
        vc.depth = 1;
        vc.num_heads = 2;
        TextConfig tc;
        tc.vocab_size = 23;
        tc.max_len = 8;
        tc.embed_dim = embed_dim;
        tc.depth = 1;
        tc.num_heads = 2;
        tc.cross_dim = embed_dim;
        model.init(vc, tc, ObjectiveConfig{}, seed);

        const Corpus corpus = generate_corpus(n, 2, 0.3, seed, 32);
        dataset.id = "toy";
        for (const auto& s : corpus) {
            dataset.images.push_back(s.image);
            dataset.labels.push_back(s.class_label);
        }
    }
};

// Cleanly separable two-feature layout: class k lives at (k, -k) plus a
// deterministic jitter far smaller than the class gap.
void separable(Index n, int classes, Mat<double>& f, std::vector<int>& y, uint64_t seed = 3) {
    Rng rng = Rng::derive(seed, 0);
    f.resize(n, 2);
    y.resize(static_cast<size_t>(n));
    for (Index i = 0; i < n; ++i) {
        const int k = static_cast<int>(i) % classes;
        y[static_cast<size_t>(i)] = k;
        f(i, 0) = k + rng.uniform(-0.05, 0.05);
        f(i, 1) = -k + rng.uniform(-0.05, 0.05);
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

TEST_CASE("pooling names round-trip") {
    for (Pooling p : {Pooling::Cls, Pooling::PatchMean, Pooling::AllMean, Pooling::Concat}) {
        REQUIRE(pooling_from_string(to_string(p)) == p);
    }
    REQUIRE(to_string(Pooling::Concat) == "concat");
    REQUIRE_THROWS_AS(pooling_from_string("meanpool"), UsageError);
    REQUIRE(pooled_dim(Pooling::Concat, 16) == 32);
    REQUIRE(pooled_dim(Pooling::Cls, 16) == 16);
}

TEST_CASE("pooling strategies satisfy their defining identities") {
    ProbeRig rig;
    const Index d = rig.embed_dim;
    const Index np = rig.model.vision_config().num_patches();

    const Mat<double> cls = extract_features(rig.model, rig.dataset.images, Pooling::Cls);
    const Mat<double> pm = extract_features(rig.model, rig.dataset.images, Pooling::PatchMean);
    const Mat<double> am = extract_features(rig.model, rig.dataset.images, Pooling::AllMean);
    const Mat<double> cat = extract_features(rig.model, rig.dataset.images, Pooling::Concat);

    REQUIRE(cls.cols() == d);
    REQUIRE(cat.cols() == 2 * d);
    REQUIRE(cat.rows() == static_cast<Index>(rig.dataset.images.size()));

    // concat = [cls ‖ patch_mean], exactly.
    REQUIRE(cat.leftCols(d) == cls);
    REQUIRE(cat.rightCols(d) == pm);

    // all_mean is the token mean with CLS included: (cls + np·patch_mean)/(np+1).
    const Mat<double> expect =
        (cls + static_cast<double>(np) * pm) / static_cast<double>(np + 1);
    REQUIRE((am - expect).cwiseAbs().maxCoeff() <= 1e-12);

    // A second extraction is bit-identical (the encoder is never mutated).
    const Mat<double> again = extract_features(rig.model, rig.dataset.images, Pooling::Concat);
    REQUIRE(again == cat);

    REQUIRE_THROWS_AS(extract_features(rig.model, {}, Pooling::Cls), InputError);
}

// ---------------------------------------------------------------------------
// Probe training
// ---------------------------------------------------------------------------

TEST_CASE("the probe separates linearly separable data perfectly") {
    Mat<double> f;
    std::vector<int> y;
    separable(50, 2, f, y);
    const LinearProbe probe = train_linear_probe(f, y, 1);
    const Mat<double> scores = probe_scores(probe, f);
    const auto pred = argmax_labels(scores);
    REQUIRE(balanced_accuracy(y, pred) == Approx(100.0));
    REQUIRE(auroc_ovr_macro(y, scores, nullptr) == Approx(100.0));
    REQUIRE(ap_ovr_macro(y, scores, nullptr) == Approx(100.0));
    REQUIRE(f1_macro(y, pred) == Approx(100.0));
}

TEST_CASE("the probe handles more than two classes") {
    Mat<double> f;
    std::vector<int> y;
    separable(60, 3, f, y);
    const LinearProbe probe = train_linear_probe(f, y, 5);
    const auto pred = argmax_labels(probe_scores(probe, f));
    REQUIRE(balanced_accuracy(y, pred) == Approx(100.0));
    REQUIRE(probe.w.cols() == 3);
    REQUIRE(probe.w.rows() == 2);
}

TEST_CASE("probe training is deterministic given the seed") {
    Mat<double> f;
    std::vector<int> y;
    separable(40, 2, f, y);
    const LinearProbe p1 = train_linear_probe(f, y, 9);
    const LinearProbe p2 = train_linear_probe(f, y, 9);
    REQUIRE(p1.w == p2.w);
    REQUIRE(p1.b == p2.b);
    REQUIRE(p1.iterations == p2.iterations);

    // A different power-iteration seed converges to the same separator: the
    // predictions and scores agree even if the last bits of w differ.
    const LinearProbe p3 = train_linear_probe(f, y, 10);
    const auto pred1 = argmax_labels(probe_scores(p1, f));
    const auto pred3 = argmax_labels(probe_scores(p3, f));
    REQUIRE(pred1 == pred3);
}

TEST_CASE("probe scores are softmax probabilities") {
    Mat<double> f;
    std::vector<int> y;
    separable(30, 3, f, y);
    const LinearProbe probe = train_linear_probe(f, y, 2);
    const Mat<double> scores = probe_scores(probe, f);
    for (Index r = 0; r < scores.rows(); ++r) {
        REQUIRE(scores.row(r).sum() == Approx(1.0).margin(1e-9));
        REQUIRE(scores.row(r).minCoeff() >= 0.0);
    }
    Mat<double> wrong(2, 5);
    wrong.setZero();
    REQUIRE_THROWS_AS(probe_scores(probe, wrong), ConfigError);
}

TEST_CASE("probe training validation") {
    Mat<double> f = Mat<double>::Zero(4, 2);
    REQUIRE_THROWS_AS(train_linear_probe(f, {0, 1, 0}, 1), InputError);   // mismatch
    REQUIRE_THROWS_AS(train_linear_probe(f, {0, 1, 0, -1}, 1), InputError);
    REQUIRE_THROWS_AS(train_linear_probe(f, {1, 1, 1, 1}, 1), DataError);  // one class
}

// ---------------------------------------------------------------------------
// Multi-seed protocol
// ---------------------------------------------------------------------------

TEST_CASE("probe seeds are deterministic and distinct") {
    // Noisy features so different splits measurably differ.
    Rng rng = Rng::derive(77, 0);
    const Index n = 60;
    Mat<double> f(n, 3);
    std::vector<int> y(static_cast<size_t>(n));
    for (Index i = 0; i < n; ++i) {
        const int k = static_cast<int>(i) % 2;
        y[static_cast<size_t>(i)] = k;
        f(i, 0) = k + rng.normal(0.0, 1.2);
        f(i, 1) = -k + rng.normal(0.0, 1.2);
        f(i, 2) = rng.normal(0.0, 1.0);
    }
    const ProbeRun a = run_probe_seed(f, y, "ds", "cls", 42, 0);
    const ProbeRun b = run_probe_seed(f, y, "ds", "cls", 42, 0);
    REQUIRE(a.bacc == b.bacc);
    REQUIRE(a.auroc == b.auroc);
    REQUIRE(a.ap == b.ap);
    REQUIRE(a.f1 == b.f1);

    bool any_diff = false;
    for (int s = 1; s < 5 && !any_diff; ++s) {
        const ProbeRun c = run_probe_seed(f, y, "ds", "cls", 42, s);
        any_diff = c.bacc != a.bacc || c.auroc != a.auroc;
    }
    REQUIRE(any_diff);  // different seeds draw different splits
}

TEST_CASE("the protocol is invariant to the worker count") {
    ProbeRig rig;
    const auto serial =
        run_protocol(rig.model, rig.dataset, Pooling::Concat, 5, 1234, nullptr, 1);
    const auto threaded =
        run_protocol(rig.model, rig.dataset, Pooling::Concat, 5, 1234, nullptr, 3);
    const auto oversub =
        run_protocol(rig.model, rig.dataset, Pooling::Concat, 5, 1234, nullptr, 16);
    REQUIRE(serial.size() == 5);
    for (size_t i = 0; i < serial.size(); ++i) {
        REQUIRE(serial[i].seed == static_cast<int>(i));
        REQUIRE(serial[i].strategy == "concat");
        REQUIRE(serial[i].dataset == "toy");
        for (const auto* runs : {&threaded, &oversub}) {
            REQUIRE((*runs)[i].bacc == serial[i].bacc);
            REQUIRE((*runs)[i].auroc == serial[i].auroc);
            REQUIRE((*runs)[i].ap == serial[i].ap);
            REQUIRE((*runs)[i].f1 == serial[i].f1);
        }
    }
}

TEST_CASE("worker exceptions surface to the caller") {
    ProbeRig rig;
    for (auto& label : rig.dataset.labels) {
        label = 0;  // single-class labels make every probe fit fail
    }
    REQUIRE_THROWS_AS(run_protocol(rig.model, rig.dataset, Pooling::Cls, 4, 1, nullptr, 2),
                      DataError);
}

TEST_CASE("protocol validation and progress stream") {
    ProbeRig rig;
    REQUIRE_THROWS_AS(run_protocol(rig.model, rig.dataset, Pooling::Cls, 0, 1, nullptr, 1),
                      ConfigError);
    REQUIRE_THROWS_AS(run_protocol(rig.model, rig.dataset, Pooling::Cls, 1, 1, nullptr, 0),
                      ConfigError);
    std::ostringstream progress;
    const auto runs = run_protocol(rig.model, rig.dataset, Pooling::Cls, 2, 7, &progress, 1);
    REQUIRE(runs.size() == 2);
    REQUIRE(progress.str().find("seed 0") != std::string::npos);
    REQUIRE(progress.str().find("seed 1") != std::string::npos);
}

TEST_CASE("probe runs serialize to json and back") {
    ProbeRun r;
    r.seed = 3;
    r.strategy = "concat";
    r.dataset = "oct";
    r.bacc = 91.25;
    r.auroc = 97.5;
    r.ap = 95.125;
    r.f1 = 90.0;
    nlohmann::json j = r;
    const ProbeRun back = j.get<ProbeRun>();
    REQUIRE(back.seed == r.seed);
    REQUIRE(back.strategy == r.strategy);
    REQUIRE(back.dataset == r.dataset);
    REQUIRE(back.bacc == r.bacc);
    REQUIRE(back.auroc == r.auroc);
    REQUIRE(back.ap == r.ap);
    REQUIRE(back.f1 == r.f1);
}
