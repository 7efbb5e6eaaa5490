#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

#include "retfiner/checkpoint.hpp"
#include "retfiner/common.hpp"
#include "retfiner/config.hpp"
#include "retfiner/corpus.hpp"
#include "retfiner/encoders.hpp"
#include "retfiner/objectives.hpp"
#include "retfiner/rng.hpp"

namespace retfiner {

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

// AdamW with decoupled weight decay. Decay applies only to entries registered
// with decay=true (weight matrices/embeddings; never biases or norm scales).
template <typename T>
class AdamW {
public:
    AdamW(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
          double eps = 1e-8)
        : lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {}

    void step(std::vector<ParamEntry<T>>& params) {
        if (m_.empty()) {
            m_.reserve(params.size());
            v_.reserve(params.size());
            for (const auto& e : params) {
                m_.push_back(Mat<T>::Zero(e.node->value.rows(), e.node->value.cols()));
                v_.push_back(Mat<T>::Zero(e.node->value.rows(), e.node->value.cols()));
            }
        }
        if (m_.size() != params.size()) {
            throw IntegrityError("optimizer state does not match parameter list");
        }
        ++t_;
        const T bc1 = static_cast<T>(1.0 - std::pow(b1_, static_cast<double>(t_)));
        const T bc2 = static_cast<T>(1.0 - std::pow(b2_, static_cast<double>(t_)));
        for (size_t i = 0; i < params.size(); ++i) {
            auto& node = *params[i].node;
            // Frozen tensors, and tensors the current loss graph never
            // touched (e.g. an excluded objective's head), stay untouched —
            // applying decay to them would silently train excluded parts.
            if (!node.requires_grad || !node.grad_ready) {
                continue;
            }
            Mat<T>& w = node.value;
            const Mat<T>& g = node.grad;
            Mat<T>& m = m_[i];
            Mat<T>& v = v_[i];
            const T decay = params[i].decay ? static_cast<T>(wd_) : T(0);
            for (Index r = 0; r < w.rows(); ++r) {
                for (Index c = 0; c < w.cols(); ++c) {
                    const T gv = g(r, c);
                    m(r, c) = static_cast<T>(b1_) * m(r, c) + static_cast<T>(1.0 - b1_) * gv;
                    v(r, c) = static_cast<T>(b2_) * v(r, c) + static_cast<T>(1.0 - b2_) * gv * gv;
                    const T mhat = m(r, c) / bc1;
                    const T vhat = v(r, c) / bc2;
                    w(r, c) -= static_cast<T>(lr_) *
                               (mhat / (std::sqrt(vhat) + static_cast<T>(eps_)) + decay * w(r, c));
                }
            }
        }
    }

    int64_t steps_taken() const { return t_; }

private:
    double lr_, wd_, b1_, b2_, eps_;
    int64_t t_{0};
    std::vector<Mat<T>> m_, v_;
};

// ---------------------------------------------------------------------------
// Early stopping
// ---------------------------------------------------------------------------

// Strict-improvement rule: an epoch improves only if its validation loss is
// below best - min_delta; training stops once `patience` consecutive epochs
// fail to improve.
class EarlyStopper {
public:
    explicit EarlyStopper(int patience, double min_delta = 1e-6)
        : patience_(patience), min_delta_(min_delta) {
        if (patience < 1) {
            throw ConfigError("early stopping patience must be >= 1");
        }
    }

    // Feed one epoch's validation loss; returns true if it set a new best.
    bool feed(double val_loss) {
        ++epoch_;
        if (val_loss < best_ - min_delta_) {
            best_ = val_loss;
            best_epoch_ = epoch_;
            since_ = 0;
            return true;
        }
        ++since_;
        return false;
    }

    bool should_stop() const { return since_ >= patience_; }
    int best_epoch() const { return best_epoch_; }
    double best_loss() const { return best_; }
    int epochs_seen() const { return epoch_; }

private:
    int patience_;
    double min_delta_;
    double best_{std::numeric_limits<double>::infinity()};
    int best_epoch_{0};
    int since_{0};
    int epoch_{0};
};

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

// Assembles one batch with dynamic padding: text is trimmed to the longest
// real (non-PAD) length in the batch rather than carried at max_len.
template <typename T>
TrainBatch<T> make_batch(const Corpus& corpus, const std::vector<TokenizedReport>& toks,
                         const std::vector<Index>& indices, const VisionConfig& vc) {
    if (indices.empty()) {
        throw InputError("make_batch: empty index list");
    }
    Index len = 3;  // [CLS] token [SEP] at minimum
    for (const Index i : indices) {
        len = std::max(len, toks[static_cast<size_t>(i)].content_len + 2);
    }
    TrainBatch<T> batch;
    std::vector<Mat<float>> images;
    images.reserve(indices.size());
    for (const Index i : indices) {
        const auto& tok = toks[static_cast<size_t>(i)];
        batch.ids.emplace_back(tok.ids.begin(), tok.ids.begin() + len);
        batch.pad.emplace_back(tok.pad_mask.begin(), tok.pad_mask.begin() + len);
        batch.labels.push_back(corpus[static_cast<size_t>(i)].class_label);
        images.push_back(corpus[static_cast<size_t>(i)].image);
    }
    batch.patches = images_to_patches<T>(images, vc);
    return batch;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

// Mean losses over a split, weighted by batch size. Masking randomness is
// derived from fixed constants (not the training seed), so repeated calls —
// and calls from different epochs — score against identical mask draws.
template <typename T>
LossBundle evaluate_losses(const RefinerModel<T>& model, const Corpus& corpus,
                           const std::vector<TokenizedReport>& toks,
                           const std::vector<Index>& idx, const LossSelection& sel,
                           Index batch_size, bool warn_itm_skip = false) {
    if (idx.empty()) {
        throw ConfigError("evaluate_losses: empty split");
    }
    LossBundle sum;
    double weight = 0;
    size_t batch_no = 0;
    for (size_t start = 0; start < idx.size(); start += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(idx.size(), start + static_cast<size_t>(batch_size));
        const std::vector<Index> part(idx.begin() + static_cast<std::ptrdiff_t>(start),
                                      idx.begin() + static_cast<std::ptrdiff_t>(end));
        const auto batch = make_batch<T>(corpus, toks, part, model.vision_config());
        Tape<T> g(false);
        const uint64_t batch_seed = Rng::derive(0x6576616cull, batch_no++).next_u64();
        const auto nodes = compute_losses(g, model, batch, sel, batch_seed, warn_itm_skip);
        const LossBundle b = to_bundle(nodes);
        const double w = static_cast<double>(part.size());
        sum.itc += b.itc * w;
        sum.itm += b.itm * w;
        sum.mlm += b.mlm * w;
        sum.gm += b.gm * w;
        sum.total += b.total * w;
        weight += w;
    }
    sum.itc /= weight;
    sum.itm /= weight;
    sum.mlm /= weight;
    sum.gm /= weight;
    sum.total /= weight;
    return sum;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct EpochLog {
    int epoch;
    std::string split;  // "train" or "val"
    LossBundle losses;
};

struct TrainResult {
    int epochs_run{0};
    int best_epoch{0};
    double best_val{std::numeric_limits<double>::infinity()};
    bool stopped_early{false};
    std::vector<EpochLog> log;
};

inline void write_log_csv(const std::filesystem::path& path, const std::vector<EpochLog>& log) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) {
        throw InputError("cannot write " + path.string());
    }
    f << "epoch,split,itc,itm,mlm,gm,total\n";
    char line[256];
    for (const auto& row : log) {
        std::snprintf(line, sizeof(line), "%d,%s,%.8g,%.8g,%.8g,%.8g,%.8g\n", row.epoch,
                      row.split.c_str(), row.losses.itc, row.losses.itm, row.losses.mlm,
                      row.losses.gm, row.losses.total);
        f << line;
    }
}

// The refinement loop: per batch, the selected objectives run forward in a
// fixed order (ITC, ITM, MLM, GM), their direct sum is backpropagated once,
// and a single AdamW step is taken. Validation runs after every epoch and
// drives strict-improvement early stopping; the best epoch's weights are
// restored before returning.
template <typename T>
TrainResult refine(RefinerModel<T>& model, const Corpus& corpus,
                   const std::vector<TokenizedReport>& toks,
                   const std::vector<Index>& train_idx, const std::vector<Index>& val_idx,
                   const RefineConfig& cfg, std::ostream* progress = nullptr) {
    cfg.validate();
    if (train_idx.empty()) {
        throw ConfigError("refine: train split is empty");
    }
    if (val_idx.empty()) {
        throw ConfigError("refine: val split is empty");
    }
    model.set_freeze_vision(cfg.freeze_vision);

    AdamW<T> opt(cfg.lr, cfg.weight_decay);
    EarlyStopper stopper(cfg.patience);
    TrainResult result;
    std::vector<Mat<T>> best_weights;
    bool warned_itm = false;

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::vector<Index> order = train_idx;
        Rng shuffle_rng = Rng::derive(cfg.seed, 0x73687566ull + static_cast<uint64_t>(epoch));
        shuffle_rng.shuffle(order);

        LossBundle train_sum;
        double train_weight = 0;
        size_t batch_no = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            const std::vector<Index> part(order.begin() + static_cast<std::ptrdiff_t>(start),
                                          order.begin() + static_cast<std::ptrdiff_t>(end));
            const auto batch = make_batch<T>(corpus, toks, part, model.vision_config());

            Tape<T> g(true);
            const uint64_t batch_seed =
                Rng::derive(cfg.seed, static_cast<uint64_t>(epoch) * 0x10001ull + batch_no)
                    .next_u64();
            ++batch_no;
            const auto nodes =
                compute_losses(g, model, batch, cfg.losses, batch_seed, !warned_itm);
            if (nodes.itm_skipped) {
                warned_itm = true;
            }
            const LossBundle b = to_bundle(nodes);
            if (!std::isfinite(b.total)) {
                char msg[256];
                std::snprintf(msg, sizeof(msg),
                              "training diverged at epoch %d: itc=%g itm=%g mlm=%g gm=%g",
                              epoch, b.itc, b.itm, b.mlm, b.gm);
                throw NumericError(msg);
            }
            model.params().zero_grads();
            g.backward(nodes.total);
            opt.step(model.params().entries());
            model.clamp_tau();

            const double w = static_cast<double>(part.size());
            train_sum.itc += b.itc * w;
            train_sum.itm += b.itm * w;
            train_sum.mlm += b.mlm * w;
            train_sum.gm += b.gm * w;
            train_sum.total += b.total * w;
            train_weight += w;
        }
        train_sum.itc /= train_weight;
        train_sum.itm /= train_weight;
        train_sum.mlm /= train_weight;
        train_sum.gm /= train_weight;
        train_sum.total /= train_weight;
        result.log.push_back({epoch, "train", train_sum});

        const LossBundle val =
            evaluate_losses(model, corpus, toks, val_idx, cfg.losses, cfg.batch_size, false);
        result.log.push_back({epoch, "val", val});
        result.epochs_run = epoch;

        const bool improved = stopper.feed(val.total);
        if (improved) {
            best_weights.clear();
            for (const auto& e : model.params().entries()) {
                best_weights.push_back(e.node->value);
            }
        }
        if (progress) {
            char line[256];
            std::snprintf(line, sizeof(line),
                          "epoch %d  train %.4f  val %.4f%s\n", epoch, train_sum.total,
                          val.total, improved ? "  (best)" : "");
            (*progress) << line << std::flush;
        }
        if (stopper.should_stop()) {
            result.stopped_early = true;
            break;
        }
    }

    result.best_epoch = stopper.best_epoch();
    result.best_val = stopper.best_loss();
    if (!best_weights.empty()) {
        auto& entries = model.params().entries();
        for (size_t i = 0; i < entries.size(); ++i) {
            entries[i].node->value = best_weights[i];
        }
    }
    return result;
}

}  // namespace retfiner
