#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "retfiner/autograd.hpp"
#include "retfiner/common.hpp"
#include "retfiner/config.hpp"
#include "retfiner/rng.hpp"

namespace retfiner {

using ag::Node;
using ag::NodePtr;
using ag::Tape;

enum class TextMode : uint8_t { Unimodal, CrossBidirectional, CrossCausal };

// Per-modality encoder output at the value level: one CLS vector per sample
// plus the token sequence, with optional captured attention maps.
template <typename T>
struct FeatureSet {
    Mat<T> cls;     // [B, D]
    Mat<T> tokens;  // [B * L, D], sample-major
    Index batch{0};
    Index len{0};                 // tokens per sample (patches or padded report length)
    std::vector<Mat<T>> attn;     // optional: per (layer, sample, head) attention rows

    void validate() const {
        if (!all_finite(cls) || !all_finite(tokens)) {
            throw NumericError("feature set contains NaN/Inf entries");
        }
    }
};

template <typename T>
struct ParamEntry {
    NodePtr<T> node;
    bool decay{true};
};

// Owns every trainable tensor in registration order; that order defines the
// checkpoint layout and the gradient accumulation order.
template <typename T>
class ParamRegistry {
public:
    NodePtr<T> add(Mat<T> value, const std::string& name, bool decay) {
        auto n = ag::make_param<T>(std::move(value), name);
        entries_.push_back({n, decay});
        return n;
    }

    const std::vector<ParamEntry<T>>& entries() const { return entries_; }
    std::vector<ParamEntry<T>>& entries() { return entries_; }

    NodePtr<T> find(const std::string& name) const {
        for (const auto& e : entries_) {
            if (e.node->name == name) {
                return e.node;
            }
        }
        return nullptr;
    }

    void zero_grads() {
        for (auto& e : entries_) {
            e.node->zero_grad();
        }
    }

private:
    std::vector<ParamEntry<T>> entries_;
};

namespace detail {

template <typename T>
Mat<T> normal_init(Rng& rng, Index rows, Index cols, double stddev = 0.02) {
    Mat<T> m(rows, cols);
    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) {
            m(r, c) = static_cast<T>(rng.normal(0.0, stddev));
        }
    }
    return m;
}

}  // namespace detail

// One transformer block, pre-norm. Text blocks carry an additional
// cross-attention sublayer between self-attention and the feed-forward;
// the vision blocks never allocate it.
template <typename T>
struct TransformerBlock {
    NodePtr<T> ln1_g, ln1_b;
    NodePtr<T> wq, bq, wk, bk, wv, bv, wo, bo;
    // cross-attention sublayer (text only)
    NodePtr<T> ln_ca_g, ln_ca_b;
    NodePtr<T> ca_wq, ca_bq, ca_wk, ca_bk, ca_wv, ca_bv, ca_wo, ca_bo;
    NodePtr<T> ln2_g, ln2_b;
    NodePtr<T> w_ff1, b_ff1, w_ff2, b_ff2;
    Index num_heads{0};
    bool has_cross{false};

    void init(ParamRegistry<T>& reg, Rng& rng, const std::string& prefix, Index dim,
              Index cross_dim, Index heads, bool cross) {
        num_heads = heads;
        has_cross = cross;
        const Index ff = 4 * dim;
        auto ones = [&](Index n) { return Mat<T>::Ones(1, n); };
        auto zeros = [&](Index r, Index c) { return Mat<T>::Zero(r, c); };
        ln1_g = reg.add(ones(dim), prefix + ".ln1.gamma", false);
        ln1_b = reg.add(zeros(1, dim), prefix + ".ln1.beta", false);
        wq = reg.add(detail::normal_init<T>(rng, dim, dim), prefix + ".attn.wq", true);
        bq = reg.add(zeros(1, dim), prefix + ".attn.bq", false);
        wk = reg.add(detail::normal_init<T>(rng, dim, dim), prefix + ".attn.wk", true);
        bk = reg.add(zeros(1, dim), prefix + ".attn.bk", false);
        wv = reg.add(detail::normal_init<T>(rng, dim, dim), prefix + ".attn.wv", true);
        bv = reg.add(zeros(1, dim), prefix + ".attn.bv", false);
        wo = reg.add(detail::normal_init<T>(rng, dim, dim), prefix + ".attn.wo", true);
        bo = reg.add(zeros(1, dim), prefix + ".attn.bo", false);
        if (cross) {
            ln_ca_g = reg.add(ones(dim), prefix + ".ln_ca.gamma", false);
            ln_ca_b = reg.add(zeros(1, dim), prefix + ".ln_ca.beta", false);
            ca_wq = reg.add(detail::normal_init<T>(rng, dim, dim), prefix + ".cross.wq", true);
            ca_bq = reg.add(zeros(1, dim), prefix + ".cross.bq", false);
            ca_wk = reg.add(detail::normal_init<T>(rng, cross_dim, dim), prefix + ".cross.wk", true);
            ca_bk = reg.add(zeros(1, dim), prefix + ".cross.bk", false);
            ca_wv = reg.add(detail::normal_init<T>(rng, cross_dim, dim), prefix + ".cross.wv", true);
            ca_bv = reg.add(zeros(1, dim), prefix + ".cross.bv", false);
            ca_wo = reg.add(detail::normal_init<T>(rng, dim, dim), prefix + ".cross.wo", true);
            ca_bo = reg.add(zeros(1, dim), prefix + ".cross.bo", false);
        }
        ln2_g = reg.add(ones(dim), prefix + ".ln2.gamma", false);
        ln2_b = reg.add(zeros(1, dim), prefix + ".ln2.beta", false);
        w_ff1 = reg.add(detail::normal_init<T>(rng, dim, ff), prefix + ".ffn.w1", true);
        b_ff1 = reg.add(zeros(1, ff), prefix + ".ffn.b1", false);
        w_ff2 = reg.add(detail::normal_init<T>(rng, ff, dim), prefix + ".ffn.w2", true);
        b_ff2 = reg.add(zeros(1, dim), prefix + ".ffn.b2", false);
    }

    // x: [B*L, D]. self_mask: empty or [B*L, L] additive.
    // visual: null to skip the cross sublayer (unimodal forward).
    NodePtr<T> forward(Tape<T>& g, NodePtr<T> x, Index batch, const Mat<T>& self_mask,
                       NodePtr<T> visual, std::vector<Mat<T>>* capture = nullptr) const {
        constexpr T ln_eps = T(1e-5);
        auto h = g.layer_norm(x, ln1_g, ln1_b, ln_eps);
        auto q = g.linear(h, wq, bq);
        auto k = g.linear(h, wk, bk);
        auto v = g.linear(h, wv, bv);
        auto a = g.attention(q, k, v, batch, num_heads, self_mask);
        x = g.add(x, g.linear(a, wo, bo));
        if (visual) {
            if (!has_cross) {
                throw UsageError("visual context passed to a block without cross-attention");
            }
            static const Mat<T> no_mask;
            auto hc = g.layer_norm(x, ln_ca_g, ln_ca_b, ln_eps);
            auto qc = g.linear(hc, ca_wq, ca_bq);
            auto kc = g.linear(visual, ca_wk, ca_bk);
            auto vc = g.linear(visual, ca_wv, ca_bv);
            auto ac = g.attention(qc, kc, vc, batch, num_heads, no_mask, capture);
            x = g.add(x, g.linear(ac, ca_wo, ca_bo));
        }
        auto h2 = g.layer_norm(x, ln2_g, ln2_b, ln_eps);
        auto f = g.gelu(g.linear(h2, w_ff1, b_ff1));
        x = g.add(x, g.linear(f, w_ff2, b_ff2));
        return x;
    }
};

template <typename T>
struct VisionForward {
    NodePtr<T> cls;     // [B, D]
    NodePtr<T> tokens;  // [B * num_patches, D], CLS excluded
};

template <typename T>
class VisionEncoder {
public:
    void init(ParamRegistry<T>& reg, Rng& rng, const VisionConfig& cfg) {
        cfg.validate();
        cfg_ = cfg;
        // Fan-in-scaled init for the pixel-to-embedding bridge. The default
        // 0.02 leaves the image-dependent part of the token stream so far
        // below the positional/CLS component that the contrastive objective
        // starts at a near-saddle and stalls for hundreds of steps.
        patch_w_ = reg.add(detail::normal_init<T>(rng, cfg.patch_dim(), cfg.embed_dim,
                                                  1.0 / std::sqrt(double(cfg.patch_dim()))),
                           "vision.patch_embed.w", true);
        patch_b_ = reg.add(Mat<T>::Zero(1, cfg.embed_dim), "vision.patch_embed.b", false);
        cls_ = reg.add(detail::normal_init<T>(rng, 1, cfg.embed_dim), "vision.cls", true);
        pos_ = reg.add(detail::normal_init<T>(rng, cfg.num_patches() + 1, cfg.embed_dim),
                       "vision.pos", true);
        blocks_.resize(static_cast<size_t>(cfg.depth));
        for (Index i = 0; i < cfg.depth; ++i) {
            blocks_[static_cast<size_t>(i)].init(reg, rng, "vision.blocks." + std::to_string(i),
                                                 cfg.embed_dim, 0, cfg.num_heads, false);
        }
        ln_f_g_ = reg.add(Mat<T>::Ones(1, cfg.embed_dim), "vision.ln_f.gamma", false);
        ln_f_b_ = reg.add(Mat<T>::Zero(1, cfg.embed_dim), "vision.ln_f.beta", false);
    }

    const VisionConfig& config() const { return cfg_; }

    // patches: [B * num_patches, patch_dim], produced by images_to_patches.
    VisionForward<T> forward(Tape<T>& g, const Mat<T>& patches, Index batch) const {
        const Index np = cfg_.num_patches();
        if (patches.rows() != batch * np || patches.cols() != cfg_.patch_dim()) {
            throw ConfigError("vision forward: patch matrix shape mismatch");
        }
        if (!all_finite(patches)) {
            throw InputError("vision forward: NaN/Inf in input image batch");
        }
        auto x = g.linear(g.constant(patches), patch_w_, patch_b_);
        std::vector<Index> cls_tile(static_cast<size_t>(batch), 0);
        auto cls_rows = g.gather_rows(cls_, std::move(cls_tile));       // [B, D]
        auto cat = g.concat_rows(cls_rows, x);                          // [B + B*np, D]
        const Index len = np + 1;
        std::vector<Index> order(static_cast<size_t>(batch * len));
        for (Index b = 0; b < batch; ++b) {
            order[static_cast<size_t>(b * len)] = b;
            for (Index p = 0; p < np; ++p) {
                order[static_cast<size_t>(b * len + 1 + p)] = batch + b * np + p;
            }
        }
        x = g.gather_rows(cat, std::move(order));
        x = g.add_positional(x, pos_, batch);
        static const Mat<T> no_mask;
        for (const auto& blk : blocks_) {
            x = blk.forward(g, x, batch, no_mask, nullptr);
        }
        x = g.layer_norm(x, ln_f_g_, ln_f_b_, T(1e-5));
        std::vector<Index> cls_idx(static_cast<size_t>(batch));
        std::vector<Index> tok_idx(static_cast<size_t>(batch * np));
        for (Index b = 0; b < batch; ++b) {
            cls_idx[static_cast<size_t>(b)] = b * len;
            for (Index p = 0; p < np; ++p) {
                tok_idx[static_cast<size_t>(b * np + p)] = b * len + 1 + p;
            }
        }
        return {g.gather_rows(x, std::move(cls_idx)), g.gather_rows(x, std::move(tok_idx))};
    }

private:
    VisionConfig cfg_;
    NodePtr<T> patch_w_, patch_b_, cls_, pos_;
    std::vector<TransformerBlock<T>> blocks_;
    NodePtr<T> ln_f_g_, ln_f_b_;
};

template <typename T>
struct TextForward {
    NodePtr<T> hidden;  // [B * L, D] final hidden states
    NodePtr<T> cls;     // [B, D]
    Index len{0};
};

template <typename T>
class TextEncoder {
public:
    void init(ParamRegistry<T>& reg, Rng& rng, const TextConfig& cfg) {
        cfg.validate();
        cfg_ = cfg;
        tok_embed_ = reg.add(detail::normal_init<T>(rng, cfg.vocab_size, cfg.embed_dim),
                             "text.tok_embed", true);
        pos_ = reg.add(detail::normal_init<T>(rng, cfg.max_len, cfg.embed_dim), "text.pos", true);
        blocks_.resize(static_cast<size_t>(cfg.depth));
        for (Index i = 0; i < cfg.depth; ++i) {
            blocks_[static_cast<size_t>(i)].init(reg, rng, "text.blocks." + std::to_string(i),
                                                 cfg.embed_dim, cfg.cross_dim, cfg.num_heads,
                                                 true);
        }
        ln_f_g_ = reg.add(Mat<T>::Ones(1, cfg.embed_dim), "text.ln_f.gamma", false);
        ln_f_b_ = reg.add(Mat<T>::Zero(1, cfg.embed_dim), "text.ln_f.beta", false);
    }

    const TextConfig& config() const { return cfg_; }
    NodePtr<T> token_embedding() const { return tok_embed_; }

    // ids/pad_mask: [B][L] with a shared per-batch L <= max_len. pad_mask[i]
    // true marks padding. visual_tokens: [B * N_p, cross_dim] node, required
    // in the cross modes, must be null in unimodal mode.
    // capture, if set, receives depth * batch * heads cross-attention maps.
    TextForward<T> forward(Tape<T>& g, const std::vector<std::vector<int>>& ids,
                           const std::vector<std::vector<bool>>& pad_mask, TextMode mode,
                           NodePtr<T> visual_tokens,
                           std::vector<std::vector<Mat<T>>>* capture = nullptr) const {
        const Index batch = static_cast<Index>(ids.size());
        if (batch == 0) {
            throw InputError("text forward: empty batch");
        }
        const Index len = static_cast<Index>(ids[0].size());
        if (len < 1 || len > cfg_.max_len) {
            throw ConfigError("text forward: sequence length outside [1, max_len]");
        }
        if (mode != TextMode::Unimodal && !visual_tokens) {
            throw UsageError("cross-modal text forward requires visual tokens");
        }
        if (mode == TextMode::Unimodal && visual_tokens) {
            throw UsageError("unimodal text forward must not receive visual tokens");
        }
        std::vector<Index> flat(static_cast<size_t>(batch * len));
        for (Index b = 0; b < batch; ++b) {
            if (static_cast<Index>(ids[static_cast<size_t>(b)].size()) != len ||
                static_cast<Index>(pad_mask[static_cast<size_t>(b)].size()) != len) {
                throw InputError("text forward: ragged batch");
            }
            for (Index i = 0; i < len; ++i) {
                const int id = ids[static_cast<size_t>(b)][static_cast<size_t>(i)];
                if (id < 0 || id >= cfg_.vocab_size) {
                    throw InputError("text forward: token id out of range");
                }
                flat[static_cast<size_t>(b * len + i)] = id;
            }
        }
        auto x = g.gather_rows(tok_embed_, std::move(flat));
        std::vector<Index> pos_idx(static_cast<size_t>(len));
        for (Index i = 0; i < len; ++i) {
            pos_idx[static_cast<size_t>(i)] = i;
        }
        auto pos_slice = g.gather_rows(pos_, std::move(pos_idx));
        x = g.add_positional(x, pos_slice, batch);

        const Mat<T> mask = build_self_mask(pad_mask, len, mode == TextMode::CrossCausal);
        if (capture) {
            capture->assign(static_cast<size_t>(cfg_.depth), {});
        }
        for (size_t d = 0; d < blocks_.size(); ++d) {
            std::vector<Mat<T>>* sink = capture ? &(*capture)[d] : nullptr;
            x = blocks_[d].forward(g, x, batch, mask,
                                   mode == TextMode::Unimodal ? nullptr : visual_tokens, sink);
        }
        x = g.layer_norm(x, ln_f_g_, ln_f_b_, T(1e-5));
        std::vector<Index> cls_idx(static_cast<size_t>(batch));
        for (Index b = 0; b < batch; ++b) {
            cls_idx[static_cast<size_t>(b)] = b * len;
        }
        return {x, g.gather_rows(x, std::move(cls_idx)), len};
    }

    // Additive self-attention mask: key positions that are padding are
    // excluded for every query; the causal variant additionally hides
    // positions after the query. -inf gives exact (not approximate) isolation.
    static Mat<T> build_self_mask(const std::vector<std::vector<bool>>& pad_mask, Index len,
                                  bool causal) {
        const Index batch = static_cast<Index>(pad_mask.size());
        const T neg_inf = -std::numeric_limits<T>::infinity();
        Mat<T> m = Mat<T>::Zero(batch * len, len);
        for (Index b = 0; b < batch; ++b) {
            for (Index i = 0; i < len; ++i) {
                for (Index j = 0; j < len; ++j) {
                    const bool pad = pad_mask[static_cast<size_t>(b)][static_cast<size_t>(j)];
                    if (pad || (causal && j > i)) {
                        m(b * len + i, j) = neg_inf;
                    }
                }
            }
        }
        return m;
    }

private:
    TextConfig cfg_;
    NodePtr<T> tok_embed_, pos_;
    std::vector<TransformerBlock<T>> blocks_;
    NodePtr<T> ln_f_g_, ln_f_b_;
};

// Linear projection into the shared 512-d contrastive space.
inline constexpr Index kProjectionDim = 512;

template <typename T>
struct ProjectionHead {
    NodePtr<T> w;  // [D, 512]
    NodePtr<T> b;  // [1, 512]

    void init(ParamRegistry<T>& reg, Rng& rng, const std::string& prefix, Index in_dim) {
        // Fan-in-scaled init: with the default 0.02 both towers' projected
        // embeddings are dominated by a shared direction, the similarity
        // matrix is near-constant and InfoNCE sits at its uniform saddle.
        w = reg.add(detail::normal_init<T>(rng, in_dim, kProjectionDim,
                                           1.0 / std::sqrt(double(in_dim))),
                    prefix + ".w", true);
        b = reg.add(Mat<T>::Zero(1, kProjectionDim), prefix + ".b", false);
    }

    // L2-normalized projection; throws on degenerate (near-zero) embeddings.
    NodePtr<T> project(Tape<T>& g, NodePtr<T> cls) const {
        if (!all_finite(cls->value)) {
            throw InputError("projection input contains NaN/Inf");
        }
        return g.l2_normalize_rows(g.linear(cls, w, b), T(1e-12));
    }
};

// Splits a [B*C, H, W] image stack into flattened patches, row-major over the
// patch grid and row-major within each patch. The explain module's grid
// reshape is the exact inverse of this ordering.
template <typename T>
Mat<T> images_to_patches(const std::vector<Mat<float>>& images, const VisionConfig& cfg) {
    const Index np = cfg.num_patches();
    const Index grid = cfg.grid();
    const Index ps = cfg.patch_size;
    if (cfg.channels != 1) {
        throw ConfigError("images_to_patches: only single-channel images are supported");
    }
    Mat<T> out(static_cast<Index>(images.size()) * np, cfg.patch_dim());
    for (size_t s = 0; s < images.size(); ++s) {
        const Mat<float>& img = images[s];
        if (img.rows() != cfg.image_size || img.cols() != cfg.image_size) {
            throw ConfigError("images_to_patches: image is " + std::to_string(img.rows()) + "x" +
                              std::to_string(img.cols()) + ", expected " +
                              std::to_string(cfg.image_size) + " square");
        }
        if (!img.allFinite()) {
            throw InputError("images_to_patches: NaN/Inf pixel values");
        }
        for (Index gr = 0; gr < grid; ++gr) {
            for (Index gc = 0; gc < grid; ++gc) {
                const Index prow = static_cast<Index>(s) * np + gr * grid + gc;
                for (Index r = 0; r < ps; ++r) {
                    for (Index c = 0; c < ps; ++c) {
                        out(prow, r * ps + c) = static_cast<T>(img(gr * ps + r, gc * ps + c));
                    }
                }
            }
        }
    }
    return out;
}

// The full dual-encoder model: both encoders, the two projection heads, the
// ITM head, the tied language-model bias and the learnable log-temperature.
template <typename T>
class RefinerModel {
public:
    void init(const VisionConfig& vc, const TextConfig& tc, const ObjectiveConfig& oc,
              uint64_t seed) {
        vc.validate();
        tc.validate();
        oc.validate();
        vision_cfg_ = vc;
        text_cfg_ = tc;
        obj_cfg_ = oc;
        Rng rng(Rng::derive(seed, 0x6d6f64656cull).next_u64());
        vision_.init(registry_, rng, vc);
        text_.init(registry_, rng, tc);
        img_proj_.init(registry_, rng, "proj.image", vc.embed_dim);
        txt_proj_.init(registry_, rng, "proj.text", tc.embed_dim);
        itm_w_ = registry_.add(detail::normal_init<T>(rng, tc.embed_dim, 2), "head.itm.w", true);
        itm_b_ = registry_.add(Mat<T>::Zero(1, 2), "head.itm.b", false);
        lm_bias_ = registry_.add(Mat<T>::Zero(1, tc.vocab_size), "head.lm.bias", false);
        Mat<T> lt(1, 1);
        lt(0, 0) = static_cast<T>(std::log(oc.tau_init));
        log_tau_ = registry_.add(std::move(lt), "objectives.log_tau", false);
    }

    const VisionConfig& vision_config() const { return vision_cfg_; }
    const TextConfig& text_config() const { return text_cfg_; }
    const ObjectiveConfig& objective_config() const { return obj_cfg_; }

    VisionEncoder<T>& vision() { return vision_; }
    const VisionEncoder<T>& vision() const { return vision_; }
    TextEncoder<T>& text() { return text_; }
    const TextEncoder<T>& text() const { return text_; }
    const ProjectionHead<T>& image_projection() const { return img_proj_; }
    const ProjectionHead<T>& text_projection() const { return txt_proj_; }
    NodePtr<T> itm_w() const { return itm_w_; }
    NodePtr<T> itm_b() const { return itm_b_; }
    NodePtr<T> lm_bias() const { return lm_bias_; }
    NodePtr<T> log_tau() const { return log_tau_; }

    T tau() const { return std::exp(log_tau_->value(0, 0)); }

    // Keep the temperature inside its clamp range; call after every step.
    void clamp_tau() {
        const T lo = static_cast<T>(std::log(obj_cfg_.tau_min));
        const T hi = static_cast<T>(std::log(obj_cfg_.tau_max));
        T& v = log_tau_->value(0, 0);
        v = std::min(std::max(v, lo), hi);
    }

    ParamRegistry<T>& params() { return registry_; }
    const ParamRegistry<T>& params() const { return registry_; }

    // Tied LM head: logits = h E^T + bias.
    NodePtr<T> lm_logits(Tape<T>& g, NodePtr<T> hidden) const {
        return g.add_rowvec(g.matmul_nt(hidden, text_.token_embedding()), lm_bias_);
    }

    NodePtr<T> itm_logits(Tape<T>& g, NodePtr<T> cls) const {
        return g.linear(cls, itm_w_, itm_b_);
    }

    // Marks every vision-encoder tensor as frozen (no grads, no updates).
    void set_freeze_vision(bool freeze) {
        for (auto& e : registry_.entries()) {
            if (e.node->name.rfind("vision.", 0) == 0) {
                e.node->requires_grad = !freeze;
            }
        }
    }

private:
    VisionConfig vision_cfg_;
    TextConfig text_cfg_;
    ObjectiveConfig obj_cfg_;
    ParamRegistry<T> registry_;
    VisionEncoder<T> vision_;
    TextEncoder<T> text_;
    ProjectionHead<T> img_proj_;
    ProjectionHead<T> txt_proj_;
    NodePtr<T> itm_w_, itm_b_, lm_bias_, log_tau_;
};

// Value-level convenience wrappers matching the public encode contracts.

template <typename T>
FeatureSet<T> encode_image(const RefinerModel<T>& model, const std::vector<Mat<float>>& images) {
    for (const auto& img : images) {
        for (Index r = 0; r < img.rows(); ++r) {
            for (Index c = 0; c < img.cols(); ++c) {
                if (!(img(r, c) >= 0.0f && img(r, c) <= 1.0f)) {
                    if (!std::isfinite(img(r, c))) {
                        throw InputError("encode_image: NaN/Inf pixel");
                    }
                    throw InputError("encode_image: pixel values must lie in [0,1]");
                }
            }
        }
    }
    Tape<T> g(false);
    const auto patches = images_to_patches<T>(images, model.vision_config());
    auto out = model.vision().forward(g, patches, static_cast<Index>(images.size()));
    FeatureSet<T> fs;
    fs.cls = out.cls->value;
    fs.tokens = out.tokens->value;
    fs.batch = static_cast<Index>(images.size());
    fs.len = model.vision_config().num_patches();
    fs.validate();
    return fs;
}

template <typename T>
FeatureSet<T> encode_text(const RefinerModel<T>& model, const std::vector<std::vector<int>>& ids,
                          const std::vector<std::vector<bool>>& pad_mask, TextMode mode,
                          const Mat<T>* visual_tokens = nullptr, bool capture_attention = false,
                          std::vector<std::vector<Mat<T>>>* attention_out = nullptr) {
    Tape<T> g(false);
    NodePtr<T> vis;
    if (visual_tokens) {
        vis = g.constant(*visual_tokens);
    }
    std::vector<std::vector<Mat<T>>> capture;
    auto out = model.text().forward(g, ids, pad_mask, mode, vis,
                                    capture_attention ? &capture : nullptr);
    if (attention_out) {
        *attention_out = std::move(capture);
    }
    FeatureSet<T> fs;
    fs.cls = out.cls->value;
    fs.tokens = out.hidden->value;
    fs.batch = static_cast<Index>(ids.size());
    fs.len = out.len;
    fs.validate();
    return fs;
}

}  // namespace retfiner
