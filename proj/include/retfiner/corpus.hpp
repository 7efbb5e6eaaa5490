#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "retfiner/common.hpp"
#include "retfiner/config.hpp"
#include "retfiner/png_io.hpp"
#include "retfiner/rng.hpp"

namespace retfiner {

// ---------------------------------------------------------------------------
// Biomarker catalog
// ---------------------------------------------------------------------------

enum class ShapeKind : uint8_t { DotCluster, FilledEllipse, Wedge, Bar, Cross, Ring };

struct BiomarkerSpec {
    std::string name;
    ShapeKind shape;
    double delta_lo, delta_hi;  // signed intensity change added to the background
    Index size_lo, size_hi;     // principal radius / half-extent in pixels
    Index zone_lo, zone_hi;     // vertical placement zone for the shape center
    std::vector<std::string> phrase_templates;
};

// Core markers determine the class label (class c renders core marker c);
// the shared pool crosses class boundaries and drives the overlap knob.
struct BiomarkerTable {
    std::vector<BiomarkerSpec> core;
    std::vector<BiomarkerSpec> shared;

    const BiomarkerSpec* find(const std::string& name) const {
        for (const auto& s : core) {
            if (s.name == name) {
                return &s;
            }
        }
        for (const auto& s : shared) {
            if (s.name == name) {
                return &s;
            }
        }
        return nullptr;
    }
};

inline const BiomarkerTable& biomarker_table() {
    static const BiomarkerTable table = {
        // Every template reuses the same carrier words across markers, so the
        // marker name is the only token that identifies the finding: masked
        // or generated name tokens cannot be inferred from the surrounding
        // boilerplate and must be read off the image.
        {
            {"drusen", ShapeKind::DotCluster, 0.38, 0.50, 2, 3, 14, 34,
             {"evident drusen", "drusen changes", "marked drusen region"}},
            {"edema", ShapeKind::FilledEllipse, -0.50, -0.38, 5, 7, 22, 42,
             {"evident edema", "edema changes", "marked edema region"}},
            {"detachment", ShapeKind::Wedge, 0.36, 0.48, 8, 11, 34, 50,
             {"evident detachment", "detachment changes", "marked detachment region"}},
            {"atrophy", ShapeKind::Bar, -0.48, -0.36, 4, 5, 28, 48,
             {"evident atrophy", "atrophy changes", "marked atrophy region"}},
            {"hemorrhage", ShapeKind::DotCluster, -0.50, -0.38, 2, 3, 18, 38,
             {"evident hemorrhage", "hemorrhage changes", "marked hemorrhage region"}},
            {"scar", ShapeKind::Cross, 0.38, 0.50, 6, 8, 16, 44,
             {"evident scar", "scar changes", "marked scar region"}},
            {"tumor", ShapeKind::FilledEllipse, 0.34, 0.46, 6, 8, 24, 44,
             {"evident tumor", "tumor changes", "marked tumor region"}},
            {"membrane", ShapeKind::Ring, 0.38, 0.50, 7, 10, 10, 28,
             {"evident membrane", "membrane changes", "marked membrane region"}},
        },
        {
            {"fluid", ShapeKind::FilledEllipse, -0.42, -0.30, 3, 4, 20, 44,
             {"evident fluid", "fluid changes", "marked fluid region"}},
            {"thickening", ShapeKind::Bar, 0.28, 0.38, 3, 4, 12, 40,
             {"evident thickening", "thickening changes", "marked thickening region"}},
            {"debris", ShapeKind::DotCluster, -0.38, -0.28, 2, 3, 26, 50,
             {"evident debris", "debris changes", "marked debris region"}},
            {"opacity", ShapeKind::FilledEllipse, 0.24, 0.34, 5, 7, 8, 30,
             {"evident opacity", "opacity changes", "marked opacity region"}},
        },
    };
    return table;
}

// ---------------------------------------------------------------------------
// Samples
// ---------------------------------------------------------------------------

struct PairedSample {
    Mat<float> image;                     // [H, W] in [0,1]
    std::vector<uint8_t> biomarker_mask;  // H*W, 1 where a lesion was rendered
    std::string report;
    int class_label{0};
    std::vector<std::string> biomarkers;  // names of the rendered markers
};

using Corpus = std::vector<PairedSample>;

namespace detail {

inline void paint(Mat<float>& img, std::vector<uint8_t>& mask, Index r, Index c, double delta) {
    if (r < 0 || c < 0 || r >= img.rows() || c >= img.cols()) {
        return;
    }
    const float before = img(r, c);
    const float after = std::min(1.0f, std::max(0.0f, before + static_cast<float>(delta)));
    img(r, c) = after;
    if (after != before) {
        mask[static_cast<size_t>(r * img.cols() + c)] = 1;
    }
}

inline void draw_filled_ellipse(Mat<float>& img, std::vector<uint8_t>& mask, Index cy, Index cx,
                                Index ry, Index rx, double delta) {
    for (Index r = cy - ry; r <= cy + ry; ++r) {
        for (Index c = cx - rx; c <= cx + rx; ++c) {
            const double dy = static_cast<double>(r - cy) / static_cast<double>(ry);
            const double dx = static_cast<double>(c - cx) / static_cast<double>(rx);
            if (dy * dy + dx * dx <= 1.0) {
                paint(img, mask, r, c, delta);
            }
        }
    }
}

inline void draw_shape(Mat<float>& img, std::vector<uint8_t>& mask, const BiomarkerSpec& spec,
                       Rng& rng) {
    const Index h = img.rows();
    const Index w = img.cols();
    const Index size = static_cast<Index>(
        rng.uniform_int(static_cast<int64_t>(spec.size_lo), static_cast<int64_t>(spec.size_hi)));
    const double delta = spec.delta_lo + rng.uniform() * (spec.delta_hi - spec.delta_lo);
    const Index zone_lo = std::min(spec.zone_lo, h - 2);
    const Index zone_hi = std::max(zone_lo, std::min(spec.zone_hi, h - 2));
    const Index cy = static_cast<Index>(
        rng.uniform_int(static_cast<int64_t>(zone_lo), static_cast<int64_t>(zone_hi)));
    const Index cx = static_cast<Index>(rng.uniform_int(12, static_cast<int64_t>(w - 13)));

    switch (spec.shape) {
        case ShapeKind::DotCluster: {
            const Index dots = static_cast<Index>(rng.uniform_int(4, 6));
            for (Index d = 0; d < dots; ++d) {
                const Index dy = static_cast<Index>(rng.uniform_int(-5, 5));
                const Index dx = static_cast<Index>(rng.uniform_int(-7, 7));
                draw_filled_ellipse(img, mask, cy + dy, cx + dx, size, size, delta);
            }
            break;
        }
        case ShapeKind::FilledEllipse: {
            const Index rx = size + static_cast<Index>(rng.uniform_int(0, 2));
            draw_filled_ellipse(img, mask, cy, cx, size, rx, delta);
            break;
        }
        case ShapeKind::Wedge: {
            // Upward-pointing triangle of height `size`: the tip sits at cy,
            // and each lower row widens by one pixel per side.
            for (Index k = 0; k < size; ++k) {
                for (Index c = cx - k; c <= cx + k; ++c) {
                    paint(img, mask, cy + k, c, delta);
                }
            }
            break;
        }
        case ShapeKind::Bar: {
            const Index half_w = static_cast<Index>(rng.uniform_int(7, 10));
            for (Index r = cy - size / 2; r <= cy + size / 2; ++r) {
                for (Index c = cx - half_w; c <= cx + half_w; ++c) {
                    paint(img, mask, r, c, delta);
                }
            }
            break;
        }
        case ShapeKind::Cross: {
            for (Index d = -size; d <= size; ++d) {
                for (Index t = -1; t <= 0; ++t) {
                    paint(img, mask, cy + d, cx + t, delta);
                    paint(img, mask, cy + t, cx + d, delta);
                }
            }
            break;
        }
        case ShapeKind::Ring: {
            for (Index r = cy - size; r <= cy + size; ++r) {
                for (Index c = cx - size; c <= cx + size; ++c) {
                    const double dist = std::sqrt(static_cast<double>((r - cy) * (r - cy) +
                                                                      (c - cx) * (c - cx)));
                    if (dist <= static_cast<double>(size) &&
                        dist >= static_cast<double>(size) - 1.6) {
                        paint(img, mask, r, c, delta);
                    }
                }
            }
            break;
        }
    }
}

// Horizontal layered background (4-6 bands) plus Gaussian pixel noise.
inline Mat<float> draw_background(Index h, Index w, Rng& rng) {
    const Index bands = static_cast<Index>(rng.uniform_int(4, 6));
    std::vector<Index> cuts;  // band start rows
    cuts.push_back(0);
    for (Index b = 1; b < bands; ++b) {
        // Evenly sized bands with +-4 pixel jitter on every boundary.
        const Index nominal = b * h / bands;
        const Index jitter = static_cast<Index>(rng.uniform_int(-4, 4));
        cuts.push_back(std::min(h - 1, std::max<Index>(1, nominal + jitter)));
    }
    std::sort(cuts.begin(), cuts.end());
    cuts.push_back(h);
    Mat<float> img(h, w);
    for (size_t b = 0; b + 1 < cuts.size(); ++b) {
        const float level = static_cast<float>(0.22 + rng.uniform() * 0.36);
        for (Index r = cuts[b]; r < cuts[b + 1]; ++r) {
            for (Index c = 0; c < w; ++c) {
                img(r, c) = level;
            }
        }
    }
    for (Index r = 0; r < h; ++r) {
        for (Index c = 0; c < w; ++c) {
            const float noisy = img(r, c) + static_cast<float>(rng.normal(0.0, 0.05));
            img(r, c) = std::min(1.0f, std::max(0.0f, noisy));
        }
    }
    return img;
}

inline const std::vector<std::string>& report_openings() {
    static const std::vector<std::string> v = {"scan shows", "image reveals",
                                               "exam demonstrates", "study notes",
                                               "imaging confirms"};
    return v;
}

inline const std::vector<std::string>& report_connectors() {
    static const std::vector<std::string> v = {"with", "and", "alongside", "plus"};
    return v;
}

inline const std::vector<std::string>& report_closings() {
    static const std::vector<std::string> v = {"otherwise unremarkable", "no further findings",
                                               "follow up advised"};
    return v;
}

// Assembles a 5-15 token report mentioning exactly the rendered markers, with
// randomized phrase choice, phrase order and optional closing filler.
inline std::string build_report(const std::vector<const BiomarkerSpec*>& markers, Rng& rng) {
    std::vector<std::string> phrases;
    for (const auto* m : markers) {
        const auto& t = m->phrase_templates;
        phrases.push_back(t[static_cast<size_t>(rng.below(t.size()))]);
    }
    std::vector<size_t> order(phrases.size());
    for (size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    rng.shuffle(order);

    std::string report =
        report_openings()[static_cast<size_t>(rng.below(report_openings().size()))];
    for (size_t i = 0; i < order.size(); ++i) {
        if (i > 0) {
            report += " " +
                      report_connectors()[static_cast<size_t>(
                          rng.below(report_connectors().size()))];
        }
        report += " " + phrases[order[i]];
    }
    if (markers.size() < 2 && rng.uniform() < 0.5) {
        report += " " +
                  report_closings()[static_cast<size_t>(rng.below(report_closings().size()))];
    }
    report += ".";
    return report;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

// Pure function of its arguments: sample i draws from the stream (seed, i),
// so corpora are bit-identical across runs and parallel schedules.
inline Corpus generate_corpus(Index n, Index num_classes, double overlap, uint64_t seed,
                              Index image_size = 64) {
    if (n < 1) {
        throw ConfigError("generate_corpus: n must be >= 1");
    }
    const auto& table = biomarker_table();
    if (num_classes < 2 || static_cast<size_t>(num_classes) > table.core.size()) {
        throw ConfigError("generate_corpus: num_classes must lie in [2, " +
                          std::to_string(table.core.size()) + "]");
    }
    if (!(overlap >= 0.0 && overlap <= 1.0)) {
        throw ConfigError("generate_corpus: overlap must lie in [0, 1]");
    }
    Corpus corpus;
    corpus.reserve(static_cast<size_t>(n));
    for (Index i = 0; i < n; ++i) {
        Rng rng = Rng::derive(seed, static_cast<uint64_t>(i));
        PairedSample s;
        s.class_label = static_cast<int>(rng.below(static_cast<uint64_t>(num_classes)));
        s.image = detail::draw_background(image_size, image_size, rng);
        s.biomarker_mask.assign(static_cast<size_t>(image_size * image_size), 0);

        std::vector<const BiomarkerSpec*> markers;
        markers.push_back(&table.core[static_cast<size_t>(s.class_label)]);
        if (rng.uniform() < overlap) {
            markers.push_back(&table.shared[static_cast<size_t>(rng.below(table.shared.size()))]);
        }
        for (const auto* m : markers) {
            detail::draw_shape(s.image, s.biomarker_mask, *m, rng);
            s.biomarkers.push_back(m->name);
        }
        s.report = detail::build_report(markers, rng);
        corpus.push_back(std::move(s));
    }
    return corpus;
}

// ---------------------------------------------------------------------------
// Tokenizer & vocabulary
// ---------------------------------------------------------------------------

struct Vocabulary {
    std::map<std::string, int> token_to_id;
    std::vector<std::string> id_to_token;

    int size() const { return static_cast<int>(id_to_token.size()); }

    int id_of(const std::string& tok) const {
        auto it = token_to_id.find(tok);
        return it == token_to_id.end() ? kUnkId : it->second;
    }
};

inline const std::vector<std::string>& special_token_strings() {
    static const std::vector<std::string> v = {"[CLS]", "[SEP]", "[PAD]", "[MASK]", "[UNK]"};
    return v;
}

// Lowercased word tokens; every punctuation character is its own token.
inline std::vector<std::string> word_tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (const char ch : text) {
        const unsigned char u = static_cast<unsigned char>(ch);
        if (std::isspace(u)) {
            if (!cur.empty()) {
                out.push_back(cur);
                cur.clear();
            }
        } else if (std::ispunct(u)) {
            if (!cur.empty()) {
                out.push_back(cur);
                cur.clear();
            }
            out.push_back(std::string(1, ch));
        } else {
            cur.push_back(static_cast<char>(std::tolower(u)));
        }
    }
    if (!cur.empty()) {
        out.push_back(cur);
    }
    return out;
}

// The canonical text form the tokenizer round-trips to: lowercased tokens
// joined by single spaces.
inline std::string normalize_text(const std::string& text) {
    const auto toks = word_tokenize(text);
    std::string out;
    for (size_t i = 0; i < toks.size(); ++i) {
        if (i > 0) {
            out += " ";
        }
        out += toks[i];
    }
    return out;
}

inline Vocabulary build_vocab(const Corpus& corpus) {
    Vocabulary v;
    for (size_t i = 0; i < special_token_strings().size(); ++i) {
        v.token_to_id[special_token_strings()[i]] = static_cast<int>(i);
        v.id_to_token.push_back(special_token_strings()[i]);
    }
    std::map<std::string, int> words;  // ordered => deterministic ids
    for (const auto& s : corpus) {
        for (const auto& w : word_tokenize(s.report)) {
            words.emplace(w, 0);
        }
    }
    for (const auto& [w, unused] : words) {
        (void)unused;
        if (v.token_to_id.count(w)) {
            continue;  // a literal "[CLS]" etc. in text maps to its special id
        }
        v.token_to_id[w] = v.size();
        v.id_to_token.push_back(w);
    }
    return v;
}

struct TokenizedReport {
    std::vector<int> ids;        // [max_len], layout [CLS] w... [SEP] [PAD]...
    std::vector<bool> pad_mask;  // true at PAD positions
    Index content_len{0};        // word tokens kept (excludes CLS/SEP/PAD)
};

inline TokenizedReport tokenize(const std::string& report, const Vocabulary& vocab,
                                Index max_len) {
    if (max_len < 3) {
        throw ConfigError("tokenize: max_len must be >= 3");
    }
    const auto words = word_tokenize(report);
    if (words.empty()) {
        throw InputError("tokenize: empty report");
    }
    const size_t keep = std::min(words.size(), static_cast<size_t>(max_len - 2));
    TokenizedReport out;
    out.ids.reserve(static_cast<size_t>(max_len));
    out.ids.push_back(kClsId);
    for (size_t i = 0; i < keep; ++i) {
        out.ids.push_back(vocab.id_of(words[i]));
    }
    out.ids.push_back(kSepId);
    out.content_len = static_cast<Index>(keep);
    while (out.ids.size() < static_cast<size_t>(max_len)) {
        out.ids.push_back(kPadId);
    }
    out.pad_mask.assign(static_cast<size_t>(max_len), false);
    for (size_t i = keep + 2; i < static_cast<size_t>(max_len); ++i) {
        out.pad_mask[i] = true;
    }
    return out;
}

inline std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab) {
    std::string out;
    for (const int id : ids) {
        if (id == kClsId || id == kSepId || id == kPadId) {
            continue;
        }
        if (id < 0 || id >= vocab.size()) {
            throw InputError("detokenize: id out of range");
        }
        if (!out.empty()) {
            out += " ";
        }
        out += vocab.id_to_token[static_cast<size_t>(id)];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

// Stratified, disjoint, exhaustive split: per-class largest-remainder
// allocation over shuffled indices. Returns one index list per fraction.
inline std::vector<std::vector<Index>> split_corpus(const std::vector<int>& labels,
                                                    const std::vector<double>& fractions,
                                                    uint64_t seed) {
    if (fractions.empty()) {
        throw ConfigError("split: need at least one fraction");
    }
    double sum = 0;
    for (const double f : fractions) {
        if (f < 0) {
            throw ConfigError("split: fractions must be nonnegative");
        }
        sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw ConfigError("split: fractions must sum to 1");
    }
    std::map<int, std::vector<Index>> by_class;
    for (size_t i = 0; i < labels.size(); ++i) {
        by_class[labels[i]].push_back(static_cast<Index>(i));
    }
    std::vector<std::vector<Index>> parts(fractions.size());
    for (auto& [label, idx] : by_class) {
        Rng rng = Rng::derive(seed, 0x73706c6974ull + static_cast<uint64_t>(label));
        rng.shuffle(idx);
        const size_t g = idx.size();
        std::vector<size_t> take(fractions.size());
        std::vector<std::pair<double, size_t>> rema;
        size_t assigned = 0;
        for (size_t k = 0; k < fractions.size(); ++k) {
            const double exact = fractions[k] * static_cast<double>(g);
            take[k] = static_cast<size_t>(exact);
            assigned += take[k];
            rema.push_back({exact - static_cast<double>(take[k]), k});
        }
        std::stable_sort(rema.begin(), rema.end(),
                         [](const auto& a, const auto& b) { return a.first > b.first; });
        for (size_t r = 0; assigned < g; ++r, ++assigned) {
            ++take[rema[r % rema.size()].second];
        }
        size_t pos = 0;
        for (size_t k = 0; k < fractions.size(); ++k) {
            for (size_t t = 0; t < take[k]; ++t) {
                parts[k].push_back(idx[pos++]);
            }
        }
    }
    for (auto& p : parts) {
        std::sort(p.begin(), p.end());
    }
    return parts;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir / "images", ec);
    if (ec) {
        throw InputError("cannot create " + (dir / "images").string() + ": " + ec.message());
    }
    std::ofstream jsonl(dir / "corpus.jsonl", std::ios::trunc);
    if (!jsonl) {
        throw InputError("cannot write " + (dir / "corpus.jsonl").string());
    }
    char name[32];
    for (size_t i = 0; i < corpus.size(); ++i) {
        const auto& s = corpus[i];
        std::snprintf(name, sizeof(name), "images/%06zu.png", i);
        GrayImage img;
        img.height = s.image.rows();
        img.width = s.image.cols();
        img.pixels.resize(static_cast<size_t>(img.height * img.width));
        for (Index r = 0; r < img.height; ++r) {
            for (Index c = 0; c < img.width; ++c) {
                img.at(r, c) = s.image(r, c);
            }
        }
        write_png_gray(dir / name, img);
        nlohmann::json rec;
        rec["image"] = name;
        rec["report"] = s.report;
        rec["class_label"] = s.class_label;
        rec["biomarkers"] = s.biomarkers;
        jsonl << rec.dump() << "\n";
    }
}

// Loads a corpus directory written by save_corpus. Masks are not stored on
// disk; regenerate from the original seed when ground truth is needed.
inline Corpus load_corpus(const std::filesystem::path& dir) {
    std::ifstream jsonl(dir / "corpus.jsonl");
    if (!jsonl) {
        throw InputError("corpus not found: " + (dir / "corpus.jsonl").string());
    }
    Corpus corpus;
    std::string line;
    size_t lineno = 0;
    while (std::getline(jsonl, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("corpus.jsonl line " + std::to_string(lineno) + ": " + e.what());
        }
        PairedSample s;
        try {
            s.report = rec.at("report").get<std::string>();
            s.class_label = rec.at("class_label").get<int>();
            if (rec.contains("biomarkers")) {
                s.biomarkers = rec["biomarkers"].get<std::vector<std::string>>();
            }
            const auto img_rel = rec.at("image").get<std::string>();
            const GrayImage img = read_png_gray(dir / img_rel);
            s.image.resize(img.height, img.width);
            for (Index r = 0; r < img.height; ++r) {
                for (Index c = 0; c < img.width; ++c) {
                    s.image(r, c) = img.at(r, c);
                }
            }
        } catch (const nlohmann::json::exception& e) {
            throw DataError("corpus.jsonl line " + std::to_string(lineno) + ": " + e.what());
        }
        corpus.push_back(std::move(s));
    }
    if (corpus.empty()) {
        throw DataError("corpus.jsonl holds no samples");
    }
    return corpus;
}

inline void save_vocab(const Vocabulary& vocab, const std::filesystem::path& path) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [tok, id] : vocab.token_to_id) {
        j[tok] = id;
    }
    std::ofstream f(path, std::ios::trunc);
    if (!f) {
        throw InputError("cannot write " + path.string());
    }
    f << j.dump(2) << "\n";
}

inline Vocabulary load_vocab(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) {
        throw InputError("vocab not found: " + path.string());
    }
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed vocab " + path.string() + ": " + e.what());
    }
    Vocabulary v;
    std::map<int, std::string> by_id;
    for (const auto& [tok, id] : j.items()) {
        by_id[id.get<int>()] = tok;
    }
    int expect = 0;
    for (const auto& [id, tok] : by_id) {
        if (id != expect++) {
            throw DataError("vocab ids must be contiguous from 0: " + path.string());
        }
        v.token_to_id[tok] = id;
        v.id_to_token.push_back(tok);
    }
    if (v.size() < kNumSpecialTokens) {
        throw DataError("vocab lacks the special tokens: " + path.string());
    }
    for (int i = 0; i < kNumSpecialTokens; ++i) {
        if (v.id_to_token[static_cast<size_t>(i)] != special_token_strings()[static_cast<size_t>(i)]) {
            throw DataError("vocab special tokens are not the first five ids");
        }
    }
    return v;
}

// ---------------------------------------------------------------------------
// Labeled image folders (user-supplied probing datasets)
// ---------------------------------------------------------------------------

struct LabeledImageSet {
    std::vector<Mat<float>> images;
    std::vector<int> labels;
    std::vector<std::string> class_names;  // sorted; label = index
};

// Directory layout: one subfolder per class, PNG images inside. Labels follow
// the lexicographic order of the folder names. Non-square images are
// center-cropped to a square before the resize.
inline LabeledImageSet load_labeled_folder(const std::filesystem::path& root, Index image_size) {
    if (!std::filesystem::is_directory(root)) {
        throw InputError("not a directory: " + root.string());
    }
    std::vector<std::filesystem::path> class_dirs;
    for (const auto& e : std::filesystem::directory_iterator(root)) {
        if (e.is_directory()) {
            class_dirs.push_back(e.path());
        }
    }
    std::sort(class_dirs.begin(), class_dirs.end());
    if (class_dirs.empty()) {
        throw DataError("no class subfolders under " + root.string());
    }
    LabeledImageSet out;
    for (size_t k = 0; k < class_dirs.size(); ++k) {
        out.class_names.push_back(class_dirs[k].filename().string());
        std::vector<std::filesystem::path> files;
        for (const auto& e : std::filesystem::directory_iterator(class_dirs[k])) {
            if (e.is_regular_file() && e.path().extension() == ".png") {
                files.push_back(e.path());
            }
        }
        std::sort(files.begin(), files.end());
        if (files.empty()) {
            throw DataError("class folder is empty: " + class_dirs[k].string());
        }
        for (const auto& f : files) {
            out.images.push_back(to_model_raster(read_png_gray(f), image_size));
            out.labels.push_back(static_cast<int>(k));
        }
    }
    return out;
}

}  // namespace retfiner
