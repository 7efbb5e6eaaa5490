#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "retfiner/common.hpp"
#include "retfiner/config.hpp"
#include "retfiner/corpus.hpp"
#include "retfiner/encoders.hpp"
#include "retfiner/png_io.hpp"

namespace retfiner {

// Cross-attention probabilities captured at every cross-attention sublayer
// of the text encoder for a single image/report pair.
struct AttentionStack {
    Index depth{0};
    Index heads{0};
    Index len_text{0};
    Index num_patches{0};
    // maps[layer][head] is [len_text, num_patches]; rows are softmax
    // probabilities over image patches.
    std::vector<std::vector<Mat<double>>> maps;
    std::vector<int> token_ids;  // padded to len_text
    std::vector<bool> pad_mask;  // padded to len_text
};

// Runs the bidirectional cross-modal forward for one pair and records the
// softmaxed cross-attention at every layer. The capture is a pure observer:
// encoder outputs are identical with and without it.
template <typename T>
AttentionStack capture_cross_attention(const RefinerModel<T>& model, const Mat<float>& image,
                                       const TokenizedReport& toks,
                                       TextMode mode = TextMode::CrossBidirectional) {
    if (mode == TextMode::Unimodal) {
        throw UsageError(
            "capture_cross_attention: unimodal text forward has no cross-attention");
    }
    const auto vision = encode_image(model, {image});
    Mat<T> visual_tokens = vision.tokens;  // [N_p, D], CLS excluded

    std::vector<std::vector<Mat<T>>> raw;
    (void)encode_text(model, {toks.ids}, {toks.pad_mask}, mode, &visual_tokens, true, &raw);

    AttentionStack stack;
    stack.depth = static_cast<Index>(raw.size());
    stack.len_text = static_cast<Index>(toks.ids.size());
    stack.num_patches = model.vision_config().num_patches();
    stack.token_ids = toks.ids;
    stack.pad_mask = toks.pad_mask;
    stack.maps.resize(raw.size());
    for (size_t d = 0; d < raw.size(); ++d) {
        stack.heads = static_cast<Index>(raw[d].size());
        stack.maps[d].resize(raw[d].size());
        for (size_t h = 0; h < raw[d].size(); ++h) {
            const Mat<T>& m = raw[d][h];
            if (m.rows() != stack.len_text || m.cols() != stack.num_patches) {
                throw IntegrityError("captured attention map has unexpected shape");
            }
            Mat<double> md(m.rows(), m.cols());
            for (Index r = 0; r < m.rows(); ++r) {
                double row_sum = 0;
                for (Index c = 0; c < m.cols(); ++c) {
                    const double v = static_cast<double>(m(r, c));
                    if (!(v >= 0)) {
                        throw NumericError("captured attention entry is negative or NaN");
                    }
                    md(r, c) = v;
                    row_sum += v;
                }
                if (std::abs(row_sum - 1.0) > 1e-5) {
                    throw NumericError("captured attention row does not sum to 1");
                }
            }
            stack.maps[d][h] = std::move(md);
        }
    }
    return stack;
}

struct SaliencyQuery {
    bool all_content{true};
    Index token_index{-1};

    static SaliencyQuery all() { return {}; }
    static SaliencyQuery token(Index index) { return {false, index}; }

    // "all" or a nonnegative integer token position.
    static SaliencyQuery parse(const std::string& text) {
        if (text == "all") {
            return all();
        }
        size_t used = 0;
        long idx = -1;
        try {
            idx = std::stol(text, &used);
        } catch (const std::exception&) {
            throw UsageError("query must be 'all' or a token index, got '" + text + "'");
        }
        if (used != text.size() || idx < 0) {
            throw UsageError("query must be 'all' or a nonnegative token index, got '" + text +
                             "'");
        }
        return token(static_cast<Index>(idx));
    }
};

struct SaliencyMap {
    Mat<double> grid;       // [g, g] in [0,1] (all-zero when degenerate)
    Mat<double> upsampled;  // [image_size, image_size]
};

namespace detail {

inline bool is_query_special(int id) {
    return id == kClsId || id == kSepId || id == kPadId;
}

}  // namespace detail

// Aggregates the stack into a patch-grid saliency map: mean over heads, mean
// over layers, mean over the selected query rows, min-max normalized. A
// degenerate (constant) map normalizes to all zeros. The grid reshape is
// row-major — the exact inverse of the patch flattening used when the image
// was encoded — and the upsample is nearest-neighbor.
inline SaliencyMap rollout(const AttentionStack& stack, const SaliencyQuery& query,
                           Index image_size) {
    if (stack.depth <= 0 || stack.heads <= 0 || stack.len_text <= 0 || stack.num_patches <= 0) {
        throw InputError("rollout: empty attention stack");
    }
    std::vector<Index> rows;
    if (query.all_content) {
        for (Index p = 0; p < stack.len_text; ++p) {
            if (!detail::is_query_special(stack.token_ids[static_cast<size_t>(p)])) {
                rows.push_back(p);
            }
        }
        if (rows.empty()) {
            throw DataError("rollout: report holds no content tokens to query");
        }
    } else {
        if (query.token_index < 0 || query.token_index >= stack.len_text) {
            throw UsageError("rollout: query index " + std::to_string(query.token_index) +
                             " outside [0, " + std::to_string(stack.len_text) + ")");
        }
        const int id = stack.token_ids[static_cast<size_t>(query.token_index)];
        if (detail::is_query_special(id)) {
            throw UsageError("rollout: query token at index " +
                             std::to_string(query.token_index) +
                             " is a special token (PAD/CLS/SEP)");
        }
        rows.push_back(query.token_index);
    }

    std::vector<double> pooled(static_cast<size_t>(stack.num_patches), 0.0);
    for (const auto& layer : stack.maps) {
        for (const auto& head : layer) {
            for (const Index r : rows) {
                for (Index c = 0; c < stack.num_patches; ++c) {
                    pooled[static_cast<size_t>(c)] += head(r, c);
                }
            }
        }
    }
    const double denom = static_cast<double>(stack.depth) * static_cast<double>(stack.heads) *
                         static_cast<double>(rows.size());
    double lo = pooled[0] / denom;
    double hi = lo;
    for (auto& v : pooled) {
        v /= denom;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double range = hi - lo;
    for (auto& v : pooled) {
        v = range > 1e-12 ? (v - lo) / range : 0.0;
    }

    const Index grid_side = static_cast<Index>(std::llround(std::sqrt(
        static_cast<double>(stack.num_patches))));
    if (grid_side * grid_side != stack.num_patches) {
        throw ConfigError("rollout: patch count is not a perfect square");
    }
    if (image_size < grid_side) {
        throw UsageError("rollout: image size smaller than the patch grid");
    }
    SaliencyMap map;
    map.grid = Mat<double>(grid_side, grid_side);
    for (Index r = 0; r < grid_side; ++r) {
        for (Index c = 0; c < grid_side; ++c) {
            map.grid(r, c) = pooled[static_cast<size_t>(r * grid_side + c)];
        }
    }
    map.upsampled = Mat<double>(image_size, image_size);
    for (Index r = 0; r < image_size; ++r) {
        for (Index c = 0; c < image_size; ++c) {
            const Index gr = std::min(grid_side - 1, r * grid_side / image_size);
            const Index gc = std::min(grid_side - 1, c * grid_side / image_size);
            map.upsampled(r, c) = map.grid(gr, gc);
        }
    }
    return map;
}

// Alpha blend of the saliency map (red channel) over the grayscale base.
inline RgbImage make_overlay(const Mat<float>& base, const SaliencyMap& map,
                             double alpha = 0.45) {
    if (base.rows() != map.upsampled.rows() || base.cols() != map.upsampled.cols()) {
        throw InputError("make_overlay: saliency/base size mismatch");
    }
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw UsageError("make_overlay: alpha must lie in [0,1]");
    }
    RgbImage out;
    out.height = base.rows();
    out.width = base.cols();
    out.pixels.resize(static_cast<size_t>(out.height * out.width * 3));
    for (Index r = 0; r < base.rows(); ++r) {
        for (Index c = 0; c < base.cols(); ++c) {
            const double g = static_cast<double>(base(r, c));
            const double s = map.upsampled(r, c);
            const size_t off = static_cast<size_t>((r * out.width + c) * 3);
            out.pixels[off + 0] = static_cast<float>((1.0 - alpha) * g + alpha * s);
            out.pixels[off + 1] = static_cast<float>((1.0 - alpha) * g);
            out.pixels[off + 2] = static_cast<float>((1.0 - alpha) * g);
        }
    }
    return out;
}

// Row-major patch grid, one grid row per CSV line, full float precision.
inline void write_saliency_csv(const std::filesystem::path& path, const Mat<double>& grid) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) {
        throw InputError("cannot write " + path.string());
    }
    char buf[64];
    for (Index r = 0; r < grid.rows(); ++r) {
        for (Index c = 0; c < grid.cols(); ++c) {
            std::snprintf(buf, sizeof(buf), "%.17g", grid(r, c));
            f << buf;
            if (c + 1 < grid.cols()) {
                f << ",";
            }
        }
        f << "\n";
    }
}

}  // namespace retfiner
