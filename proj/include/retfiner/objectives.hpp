#pragma once

#include <cmath>
#include <cstdint>
#include <iostream>
#include <utility>
#include <vector>

#include "retfiner/autograd.hpp"
#include "retfiner/common.hpp"
#include "retfiner/config.hpp"
#include "retfiner/encoders.hpp"
#include "retfiner/rng.hpp"

namespace retfiner {

// One training batch: patchified images plus padded token ids. All reports in
// a batch share one length L (the batch maximum), never more than max_len.
template <typename T>
struct TrainBatch {
    Mat<T> patches;                      // [B * num_patches, patch_dim]
    std::vector<std::vector<int>> ids;   // [B][L]
    std::vector<std::vector<bool>> pad;  // [B][L], true at padding
    std::vector<int> labels;             // optional class labels (probing only)

    Index batch_size() const { return static_cast<Index>(ids.size()); }
    Index len() const { return ids.empty() ? 0 : static_cast<Index>(ids[0].size()); }
};

// ---------------------------------------------------------------------------
// ITC
// ---------------------------------------------------------------------------

// InfoNCE over unit-norm projected embeddings: mean of the image→text and
// text→image cross-entropies of S/τ against diagonal targets.
template <typename T>
NodePtr<T> itc_loss(Tape<T>& g, NodePtr<T> img_emb, NodePtr<T> txt_emb, NodePtr<T> log_tau) {
    const Index b = img_emb->value.rows();
    if (b == 0 || txt_emb->value.rows() != b ||
        img_emb->value.cols() != txt_emb->value.cols()) {
        throw ConfigError("itc_loss: embedding shape mismatch");
    }
    for (const auto* m : {&img_emb->value, &txt_emb->value}) {
        for (Index r = 0; r < m->rows(); ++r) {
            const T n = m->row(r).norm();
            if (std::abs(n - T(1)) > T(1e-3)) {
                throw InputError("itc_loss: embedding rows must be unit-norm");
            }
        }
    }
    auto sims = g.matmul_nt(img_emb, txt_emb);                 // [B, B]
    auto inv_tau = g.exp_elem(g.scale(log_tau, T(-1)));        // 1/τ as a [1,1] node
    auto logits = g.mul_scalar_node(sims, inv_tau);
    std::vector<int> diag(static_cast<size_t>(b));
    for (Index i = 0; i < b; ++i) {
        diag[static_cast<size_t>(i)] = static_cast<int>(i);
    }
    auto i2t = g.softmax_cross_entropy(logits, diag);
    auto t2i = g.softmax_cross_entropy(g.transpose(logits), diag);
    return g.scale(g.add(i2t, t2i), T(0.5));
}

// Value-only convenience used by oracle tests.
template <typename T>
T itc_loss_value(const Mat<T>& img_emb, const Mat<T>& txt_emb, T tau) {
    Tape<T> g(false);
    Mat<T> lt(1, 1);
    lt(0, 0) = std::log(tau);
    return itc_loss(g, g.constant(img_emb), g.constant(txt_emb), g.constant(std::move(lt)))
        ->scalar();
}

// ---------------------------------------------------------------------------
// Hard-negative sampling (ITM)
// ---------------------------------------------------------------------------

// Draws j != self_index with probability softmax(sim_row/τ) restricted to the
// negatives; higher-similarity candidates are proportionally more likely.
inline size_t sample_hard_negative(const std::vector<double>& sim_row, size_t self_index,
                                   double tau, Rng& rng) {
    const size_t b = sim_row.size();
    if (b < 2) {
        throw InputError("sample_hard_negative: need at least 2 candidates");
    }
    if (self_index >= b) {
        throw InputError("sample_hard_negative: self_index out of range");
    }
    if (!(tau > 0.0)) {
        throw ConfigError("sample_hard_negative: tau must be positive");
    }
    double max_logit = -std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < b; ++j) {
        if (j != self_index) {
            max_logit = std::max(max_logit, sim_row[j] / tau);
        }
    }
    std::vector<double> w(b, 0.0);
    for (size_t j = 0; j < b; ++j) {
        if (j != self_index) {
            w[j] = std::exp(sim_row[j] / tau - max_logit);
        }
    }
    return rng.categorical(w);
}

// Uniform fallback used when ITC is absent and no similarity signal exists.
inline size_t sample_uniform_negative(size_t b, size_t self_index, Rng& rng) {
    if (b < 2) {
        throw InputError("sample_uniform_negative: need at least 2 candidates");
    }
    const size_t r = static_cast<size_t>(rng.below(b - 1));
    return r < self_index ? r : r + 1;
}

// ---------------------------------------------------------------------------
// ITM
// ---------------------------------------------------------------------------

// Builds the 3B-example set (B positives, B image-anchored hard negatives,
// B report-anchored hard negatives), encodes each pair cross-bidirectionally
// and scores the text CLS with the 2-way head. `sims` drives the mining; pass
// an empty matrix to mine uniformly (loss subsets without ITC).
template <typename T>
NodePtr<T> itm_loss(Tape<T>& g, const RefinerModel<T>& model, NodePtr<T> visual_tokens,
                    const TrainBatch<T>& batch, const Mat<T>& sims, Rng& rng) {
    const Index b = batch.batch_size();
    if (b < 2) {
        throw InputError("itm_loss: batch must hold at least 2 pairs");
    }
    const bool uniform = sims.size() == 0;
    if (!uniform && (sims.rows() != b || sims.cols() != b)) {
        throw ConfigError("itm_loss: similarity matrix shape mismatch");
    }
    const double tau = static_cast<double>(model.tau());

    // Image-anchored: image i keeps its row of report similarities.
    // Report-anchored: report j ranks images by column j ("swapping places").
    std::vector<size_t> neg_report(static_cast<size_t>(b));
    std::vector<size_t> neg_image(static_cast<size_t>(b));
    for (Index i = 0; i < b; ++i) {
        if (uniform) {
            neg_report[static_cast<size_t>(i)] =
                sample_uniform_negative(static_cast<size_t>(b), static_cast<size_t>(i), rng);
        } else {
            std::vector<double> row(static_cast<size_t>(b));
            for (Index j = 0; j < b; ++j) {
                row[static_cast<size_t>(j)] = static_cast<double>(sims(i, j));
            }
            neg_report[static_cast<size_t>(i)] =
                sample_hard_negative(row, static_cast<size_t>(i), tau, rng);
        }
    }
    for (Index j = 0; j < b; ++j) {
        if (uniform) {
            neg_image[static_cast<size_t>(j)] =
                sample_uniform_negative(static_cast<size_t>(b), static_cast<size_t>(j), rng);
        } else {
            std::vector<double> col(static_cast<size_t>(b));
            for (Index i = 0; i < b; ++i) {
                col[static_cast<size_t>(i)] = static_cast<double>(sims(i, j));
            }
            neg_image[static_cast<size_t>(j)] =
                sample_hard_negative(col, static_cast<size_t>(j), tau, rng);
        }
    }

    const Index total = 3 * b;
    std::vector<Index> img_of(static_cast<size_t>(total));
    std::vector<Index> rep_of(static_cast<size_t>(total));
    std::vector<int> label(static_cast<size_t>(total));
    for (Index e = 0; e < b; ++e) {
        img_of[static_cast<size_t>(e)] = e;
        rep_of[static_cast<size_t>(e)] = e;
        label[static_cast<size_t>(e)] = 1;
        img_of[static_cast<size_t>(b + e)] = e;
        rep_of[static_cast<size_t>(b + e)] = static_cast<Index>(neg_report[static_cast<size_t>(e)]);
        label[static_cast<size_t>(b + e)] = 0;
        img_of[static_cast<size_t>(2 * b + e)] =
            static_cast<Index>(neg_image[static_cast<size_t>(e)]);
        rep_of[static_cast<size_t>(2 * b + e)] = e;
        label[static_cast<size_t>(2 * b + e)] = 0;
    }

    const Index np = model.vision_config().num_patches();
    std::vector<Index> gather(static_cast<size_t>(total * np));
    for (Index e = 0; e < total; ++e) {
        for (Index p = 0; p < np; ++p) {
            gather[static_cast<size_t>(e * np + p)] = img_of[static_cast<size_t>(e)] * np + p;
        }
    }
    auto vis = g.gather_rows(visual_tokens, std::move(gather));

    std::vector<std::vector<int>> ids(static_cast<size_t>(total));
    std::vector<std::vector<bool>> pad(static_cast<size_t>(total));
    for (Index e = 0; e < total; ++e) {
        ids[static_cast<size_t>(e)] = batch.ids[static_cast<size_t>(rep_of[static_cast<size_t>(e)])];
        pad[static_cast<size_t>(e)] = batch.pad[static_cast<size_t>(rep_of[static_cast<size_t>(e)])];
    }
    auto out = model.text().forward(g, ids, pad, TextMode::CrossBidirectional, vis);
    auto logits = model.itm_logits(g, out.cls);
    return g.softmax_cross_entropy(logits, label);
}

// ---------------------------------------------------------------------------
// Masking plans (MLM / GM)
// ---------------------------------------------------------------------------

inline constexpr int kNoLabel = -1;

struct MaskPlan {
    std::vector<std::vector<int>> input_ids;  // ids fed to the encoder
    std::vector<std::vector<int>> labels;     // original id at selected positions, -1 elsewhere
    std::vector<std::pair<Index, Index>> positions;  // (sample, position)
};

namespace detail {

inline bool special_token(int id) { return id >= 0 && id < kNumSpecialTokens; }

inline MaskPlan make_mask_plan(const std::vector<std::vector<int>>& ids,
                               const std::vector<std::vector<bool>>& pad, double rate,
                               bool replace_with_mask, Rng& rng) {
    if (!(rate > 0.0 && rate <= 1.0)) {
        throw ConfigError("mask plan: rate must lie in (0, 1]");
    }
    MaskPlan plan;
    plan.input_ids = ids;
    plan.labels.resize(ids.size());
    for (size_t s = 0; s < ids.size(); ++s) {
        const auto& row = ids[s];
        if (pad[s].size() != row.size()) {
            throw InputError("mask plan: ids/pad length mismatch");
        }
        plan.labels[s].assign(row.size(), kNoLabel);
        std::vector<size_t> maskable;
        for (size_t p = 0; p < row.size(); ++p) {
            if (!pad[s][p] && !special_token(row[p])) {
                maskable.push_back(p);
            }
        }
        if (maskable.empty()) {
            throw DataError("mask plan: report " + std::to_string(s) +
                            " has no maskable (non-special) tokens");
        }
        const size_t count = std::max<size_t>(
            1, static_cast<size_t>(std::llround(rate * static_cast<double>(maskable.size()))));
        const auto picks = rng.sample_without_replacement(maskable.size(), count);
        for (size_t k : picks) {
            const size_t p = maskable[k];
            plan.labels[s][p] = row[p];
            if (replace_with_mask) {
                plan.input_ids[s][p] = kMaskId;
            }
            plan.positions.emplace_back(static_cast<Index>(s), static_cast<Index>(p));
        }
    }
    return plan;
}

}  // namespace detail

// Selects max(1, round(rate·n_maskable)) positions per report and replaces
// them with the MASK id. Specials and padding are never selected.
inline MaskPlan mlm_mask(const std::vector<std::vector<int>>& ids,
                         const std::vector<std::vector<bool>>& pad, double rate, Rng& rng) {
    return detail::make_mask_plan(ids, pad, rate, true, rng);
}

// Same selection rule at the generative rate, but inputs stay intact: the
// causal attention mask is the information barrier, not token replacement.
inline MaskPlan gm_mask(const std::vector<std::vector<int>>& ids,
                        const std::vector<std::vector<bool>>& pad, double rate, Rng& rng) {
    return detail::make_mask_plan(ids, pad, rate, false, rng);
}

// ---------------------------------------------------------------------------
// MLM
// ---------------------------------------------------------------------------

// Cross-bidirectional forward on the masked inputs; CE over the masked
// positions only, averaged across every masked position in the batch.
template <typename T>
NodePtr<T> mlm_loss(Tape<T>& g, const RefinerModel<T>& model, NodePtr<T> visual_tokens,
                    const TrainBatch<T>& batch, const MaskPlan& plan) {
    if (plan.positions.empty()) {
        throw InputError("mlm_loss: mask plan selects no positions");
    }
    auto out = model.text().forward(g, plan.input_ids, batch.pad, TextMode::CrossBidirectional,
                                    visual_tokens);
    auto logits = model.lm_logits(g, out.hidden);
    const Index len = out.len;
    std::vector<int> targets(static_cast<size_t>(batch.batch_size() * len), kNoLabel);
    for (const auto& [s, p] : plan.positions) {
        targets[static_cast<size_t>(s * len + p)] = plan.labels[static_cast<size_t>(s)]
                                                               [static_cast<size_t>(p)];
    }
    return g.softmax_cross_entropy(logits, std::move(targets));
}

// ---------------------------------------------------------------------------
// GM
// ---------------------------------------------------------------------------

// Causal forward on the unmodified inputs; the hidden state at position t−1
// (which sees tokens 0..t−1 plus the image through cross-attention) predicts
// the token at each target position t.
template <typename T>
NodePtr<T> gm_loss(Tape<T>& g, const RefinerModel<T>& model, NodePtr<T> visual_tokens,
                   const TrainBatch<T>& batch, const MaskPlan& plan) {
    if (plan.positions.empty()) {
        throw InputError("gm_loss: mask plan selects no positions");
    }
    auto out = model.text().forward(g, plan.input_ids, batch.pad, TextMode::CrossCausal,
                                    visual_tokens);
    auto logits = model.lm_logits(g, out.hidden);
    const Index len = out.len;
    std::vector<int> targets(static_cast<size_t>(batch.batch_size() * len), kNoLabel);
    for (const auto& [s, p] : plan.positions) {
        if (p < 1) {
            throw IntegrityError("gm_loss: target at position 0 cannot be predicted");
        }
        targets[static_cast<size_t>(s * len + (p - 1))] =
            plan.labels[static_cast<size_t>(s)][static_cast<size_t>(p)];
    }
    return g.softmax_cross_entropy(logits, std::move(targets));
}

// ---------------------------------------------------------------------------
// Combined forward
// ---------------------------------------------------------------------------

template <typename T>
struct LossNodes {
    NodePtr<T> itc, itm, mlm, gm, total;
    bool itm_skipped{false};
    Mat<T> similarity;  // cosine similarity matrix (empty when ITC is off)
};

struct LossBundle {
    double itc{0}, itm{0}, mlm{0}, gm{0}, total{0};
};

template <typename T>
LossBundle to_bundle(const LossNodes<T>& n) {
    LossBundle b;
    b.itc = static_cast<double>(n.itc->scalar());
    b.itm = static_cast<double>(n.itm->scalar());
    b.mlm = static_cast<double>(n.mlm->scalar());
    b.gm = static_cast<double>(n.gm->scalar());
    b.total = static_cast<double>(n.total->scalar());
    return b;
}

// Runs the selected objectives over one batch and returns their graph nodes.
// The vision encoder runs once; its token grid feeds every cross-modal pass.
// Deselected objectives are exact zero constants outside the gradient graph.
// Randomness is split per objective from `batch_seed`, so each objective's
// draws are independent of which other objectives are enabled.
template <typename T>
LossNodes<T> compute_losses(Tape<T>& g, const RefinerModel<T>& model, const TrainBatch<T>& batch,
                            const LossSelection& sel, uint64_t batch_seed,
                            bool warn_itm_skip = true) {
    const Index b = batch.batch_size();
    if (b < 1) {
        throw InputError("compute_losses: empty batch");
    }
    const auto& oc = model.objective_config();
    LossNodes<T> out;
    auto zero = [&] { return g.scalar_constant(T(0)); };

    auto vis = model.vision().forward(g, batch.patches, b);

    // ITC (and the similarity matrix that drives ITM's mining).
    if (sel.itc) {
        auto img_emb = model.image_projection().project(g, vis.cls);
        auto txt = model.text().forward(g, batch.ids, batch.pad, TextMode::Unimodal, nullptr);
        auto txt_emb = model.text_projection().project(g, txt.cls);
        out.itc = itc_loss(g, img_emb, txt_emb, model.log_tau());
        out.similarity = (img_emb->value * txt_emb->value.transpose()).eval();
    } else {
        out.itc = zero();
    }

    // ITM with hard negatives (uniform mining when ITC is deselected).
    if (sel.itm) {
        if (b == 1) {
            if (warn_itm_skip) {
                std::cerr << "warning: itm skipped for this batch (batch of 1 has no negatives)"
                          << std::endl;
            }
            out.itm = zero();
            out.itm_skipped = true;
        } else {
            Rng itm_rng = Rng::derive(batch_seed, 0x49544dull);
            out.itm = itm_loss(g, model, vis.tokens, batch, out.similarity, itm_rng);
        }
    } else {
        out.itm = zero();
    }

    // MLM.
    if (sel.mlm) {
        Rng mlm_rng = Rng::derive(batch_seed, 0x4d4c4dull);
        const MaskPlan plan = mlm_mask(batch.ids, batch.pad, oc.mlm_rate, mlm_rng);
        out.mlm = mlm_loss(g, model, vis.tokens, batch, plan);
    } else {
        out.mlm = zero();
    }

    // GM.
    if (sel.gm) {
        Rng gm_rng = Rng::derive(batch_seed, 0x474dull);
        const MaskPlan plan = gm_mask(batch.ids, batch.pad, oc.gm_rate, gm_rng);
        out.gm = gm_loss(g, model, vis.tokens, batch, plan);
    } else {
        out.gm = zero();
    }

    // Eq.-style direct sum in a fixed order; exact, no reweighting.
    out.total = g.add(g.add(g.add(out.itc, out.itm), out.mlm), out.gm);
    return out;
}

}  // namespace retfiner
