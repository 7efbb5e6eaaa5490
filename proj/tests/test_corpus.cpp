// Corpus generator, tokenizer, split, and serialization tests. Phrase checks
// operate at the template-substring level: every rendered marker's report
// mention uses one of its fixed phrase templates, and marker name words only
// occur inside their own marker's templates.

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "retfiner/corpus.hpp"

using namespace retfiner;
using Catch::Approx;

namespace {

namespace fs = std::filesystem;

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("retfiner_corpus_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

// Number of the marker's phrase templates appearing verbatim in the report.
int templates_in_report(const BiomarkerSpec& spec, const std::string& report) {
    int hits = 0;
    for (const auto& t : spec.phrase_templates) {
        if (report.find(t) != std::string::npos) {
            ++hits;
        }
    }
    return hits;
}

bool images_equal(const Mat<float>& a, const Mat<float>& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
}

}  // namespace

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

TEST_CASE("generation is deterministic in the seed") {
    const Corpus a = generate_corpus(20, 3, 0.4, 77, 32);
    const Corpus b = generate_corpus(20, 3, 0.4, 77, 32);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        REQUIRE(images_equal(a[i].image, b[i].image));
        REQUIRE(a[i].report == b[i].report);
        REQUIRE(a[i].class_label == b[i].class_label);
        REQUIRE(a[i].biomarkers == b[i].biomarkers);
        REQUIRE(a[i].biomarker_mask == b[i].biomarker_mask);
    }
    const Corpus c = generate_corpus(20, 3, 0.4, 78, 32);
    bool any_diff = false;
    for (size_t i = 0; i < a.size() && !any_diff; ++i) {
        any_diff = a[i].report != c[i].report || !images_equal(a[i].image, c[i].image);
    }
    REQUIRE(any_diff);
}

TEST_CASE("sample i depends only on (seed, i): prefixes agree across sizes") {
    const Corpus small = generate_corpus(5, 4, 0.3, 901, 32);
    const Corpus large = generate_corpus(12, 4, 0.3, 901, 32);
    for (size_t i = 0; i < small.size(); ++i) {
        REQUIRE(images_equal(small[i].image, large[i].image));
        REQUIRE(small[i].report == large[i].report);
        REQUIRE(small[i].class_label == large[i].class_label);
    }
}

TEST_CASE("samples are well-formed") {
    const Index size = 48;
    const Corpus corpus = generate_corpus(60, 4, 0.5, 5, size);
    for (const auto& s : corpus) {
        REQUIRE(s.image.rows() == size);
        REQUIRE(s.image.cols() == size);
        REQUIRE(s.image.minCoeff() >= 0.0f);
        REQUIRE(s.image.maxCoeff() <= 1.0f);
        REQUIRE(s.biomarker_mask.size() == static_cast<size_t>(size * size));
        size_t lit = 0;
        for (const uint8_t v : s.biomarker_mask) {
            REQUIRE((v == 0 || v == 1));
            lit += v;
        }
        REQUIRE(lit > 0);  // the core marker always renders
        REQUIRE(s.class_label >= 0);
        REQUIRE(s.class_label < 4);
        REQUIRE((s.biomarkers.size() == 1 || s.biomarkers.size() == 2));
        REQUIRE(s.biomarkers[0] == biomarker_table().core[static_cast<size_t>(s.class_label)].name);
        REQUIRE_FALSE(s.report.empty());
        REQUIRE(s.report.back() == '.');
    }
}

TEST_CASE("zero overlap keeps class phrase pools exclusive") {
    const auto& table = biomarker_table();
    const Corpus corpus = generate_corpus(200, 4, 0.0, 31, 32);
    for (const auto& s : corpus) {
        REQUIRE(s.biomarkers.size() == 1);  // never a shared marker
        for (size_t k = 0; k < table.core.size(); ++k) {
            const int hits = templates_in_report(table.core[k], s.report);
            if (k == static_cast<size_t>(s.class_label)) {
                REQUIRE(hits == 1);  // its own marker, phrased once
            } else {
                REQUIRE(hits == 0);  // no other class's phrasing
            }
        }
        for (const auto& shared : table.shared) {
            REQUIRE(templates_in_report(shared, s.report) == 0);
        }
    }
}

TEST_CASE("positive overlap adds shared markers that cross class boundaries") {
    const auto& table = biomarker_table();
    const Corpus corpus = generate_corpus(400, 4, 0.6, 13, 32);
    // Every listed marker is phrased exactly once; unlisted markers never are.
    std::set<std::pair<std::string, int>> shared_by_class;
    size_t with_shared = 0;
    for (const auto& s : corpus) {
        std::set<std::string> listed(s.biomarkers.begin(), s.biomarkers.end());
        for (const auto& name : listed) {
            const BiomarkerSpec* spec = table.find(name);
            REQUIRE(spec != nullptr);
            REQUIRE(templates_in_report(*spec, s.report) == 1);
        }
        for (const auto& core : table.core) {
            if (!listed.count(core.name)) {
                REQUIRE(templates_in_report(core, s.report) == 0);
            }
        }
        if (s.biomarkers.size() == 2) {
            ++with_shared;
            shared_by_class.insert({s.biomarkers[1], s.class_label});
        }
    }
    // Roughly the overlap fraction of samples carry a shared marker, and at
    // least one shared marker name appears under more than one class.
    const double frac = static_cast<double>(with_shared) / static_cast<double>(corpus.size());
    REQUIRE(frac == Approx(0.6).margin(0.08));
    std::set<std::string> names;
    bool crosses = false;
    for (const auto& [name, cls] : shared_by_class) {
        if (!names.insert(name).second) {
            crosses = true;  // same shared marker under two different classes
        }
        (void)cls;
    }
    REQUIRE(crosses);
}

TEST_CASE("class labels stay near balance") {
    const Index n = 2000, classes = 4;
    const Corpus corpus = generate_corpus(n, classes, 0.3, 123, 32);
    std::vector<int> counts(static_cast<size_t>(classes), 0);
    for (const auto& s : corpus) {
        ++counts[static_cast<size_t>(s.class_label)];
    }
    const double expected = static_cast<double>(n) / static_cast<double>(classes);
    for (const int c : counts) {
        REQUIRE(std::abs(c - expected) <= 0.1 * expected);  // within 10%
    }
}

TEST_CASE("generation validates its arguments") {
    REQUIRE_THROWS_AS(generate_corpus(0, 4, 0.3, 1, 32), ConfigError);
    REQUIRE_THROWS_AS(generate_corpus(4, 1, 0.3, 1, 32), ConfigError);
    REQUIRE_THROWS_AS(generate_corpus(4, 9, 0.3, 1, 32), ConfigError);
    REQUIRE_THROWS_AS(generate_corpus(4, 4, -0.1, 1, 32), ConfigError);
    REQUIRE_THROWS_AS(generate_corpus(4, 4, 1.1, 1, 32), ConfigError);
}

// ---------------------------------------------------------------------------
// Tokenizer & vocabulary
// ---------------------------------------------------------------------------

TEST_CASE("word tokenization lowercases and isolates punctuation") {
    const auto toks = word_tokenize("Scan shows confluent drusen, no edema.");
    const std::vector<std::string> expected = {"scan", "shows", "confluent", "drusen",
                                               ",",    "no",    "edema",     "."};
    REQUIRE(toks == expected);
    REQUIRE(word_tokenize("  spaced   out  ") == std::vector<std::string>{"spaced", "out"});
    REQUIRE(word_tokenize("").empty());
}

TEST_CASE("vocabulary is deterministic with specials first") {
    const Corpus corpus = generate_corpus(50, 4, 0.5, 9, 32);
    const Vocabulary v1 = build_vocab(corpus);
    const Vocabulary v2 = build_vocab(corpus);
    REQUIRE(v1.token_to_id == v2.token_to_id);
    REQUIRE(v1.id_to_token == v2.id_to_token);
    REQUIRE(v1.size() > kNumSpecialTokens);
    for (int i = 0; i < kNumSpecialTokens; ++i) {
        REQUIRE(v1.id_to_token[static_cast<size_t>(i)] ==
                special_token_strings()[static_cast<size_t>(i)]);
    }
    // Ids are contiguous and the two directions agree.
    for (int id = 0; id < v1.size(); ++id) {
        REQUIRE(v1.id_of(v1.id_to_token[static_cast<size_t>(id)]) == id);
    }
}

TEST_CASE("tokenizer round-trips every generated report without UNK") {
    const Corpus corpus = generate_corpus(80, 4, 0.5, 21, 32);
    const Vocabulary vocab = build_vocab(corpus);
    for (const auto& s : corpus) {
        const TokenizedReport tok = tokenize(s.report, vocab, 48);
        REQUIRE(tok.ids.size() == 48);
        REQUIRE(tok.pad_mask.size() == 48);
        REQUIRE(tok.ids[0] == kClsId);
        REQUIRE(tok.ids[static_cast<size_t>(tok.content_len) + 1] == kSepId);
        for (const int id : tok.ids) {
            REQUIRE(id != kUnkId);
        }
        // Layout: [CLS] content [SEP] [PAD]...; pad mask marks exactly the pads.
        for (size_t p = 0; p < tok.ids.size(); ++p) {
            const bool is_pad = p > static_cast<size_t>(tok.content_len) + 1;
            REQUIRE(tok.pad_mask[p] == is_pad);
            if (is_pad) {
                REQUIRE(tok.ids[p] == kPadId);
            }
        }
        REQUIRE(detokenize(tok.ids, vocab) == normalize_text(s.report));
    }
}

TEST_CASE("unknown words map to UNK") {
    const Corpus corpus = generate_corpus(10, 2, 0.0, 2, 32);
    const Vocabulary vocab = build_vocab(corpus);
    // Splice a nonsense word into a report whose other words are all in-vocab.
    const TokenizedReport tok = tokenize(corpus[0].report + " zzyzx", vocab, 48);
    REQUIRE(std::count(tok.ids.begin(), tok.ids.end(), kUnkId) == 1);
}

TEST_CASE("tokenizer truncates to max_len") {
    const Corpus corpus = generate_corpus(10, 2, 0.0, 3, 32);
    const Vocabulary vocab = build_vocab(corpus);
    const std::string& report = corpus[0].report;
    const size_t n_words = word_tokenize(report).size();
    REQUIRE(n_words > 3);
    const TokenizedReport tok = tokenize(report, vocab, 5);
    REQUIRE(tok.ids.size() == 5);
    REQUIRE(tok.content_len == 3);
    REQUIRE(tok.ids[0] == kClsId);
    REQUIRE(tok.ids[4] == kSepId);
    REQUIRE_THROWS_AS(tokenize(report, vocab, 2), ConfigError);
    REQUIRE_THROWS_AS(tokenize("", vocab, 8), InputError);
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

TEST_CASE("splits are stratified, disjoint, and exhaustive") {
    const Corpus corpus = generate_corpus(300, 3, 0.3, 41, 32);
    std::vector<int> labels;
    for (const auto& s : corpus) {
        labels.push_back(s.class_label);
    }
    const auto parts = split_corpus(labels, {0.8, 0.2}, 2025);
    REQUIRE(parts.size() == 2);

    std::set<Index> seen;
    for (const auto& p : parts) {
        for (const Index i : p) {
            REQUIRE(seen.insert(i).second);  // disjoint
        }
    }
    REQUIRE(seen.size() == labels.size());  // exhaustive

    // Per-class allocation follows the fractions to within one sample.
    std::map<int, int> class_total, class_train;
    for (size_t i = 0; i < labels.size(); ++i) {
        ++class_total[labels[i]];
    }
    for (const Index i : parts[0]) {
        ++class_train[labels[static_cast<size_t>(i)]];
    }
    for (const auto& [cls, total] : class_total) {
        const double exact = 0.8 * total;
        REQUIRE(std::abs(class_train[cls] - exact) <= 1.0);
    }
}

TEST_CASE("splits are deterministic and seed-sensitive") {
    std::vector<int> labels(120);
    for (size_t i = 0; i < labels.size(); ++i) {
        labels[i] = static_cast<int>(i % 3);
    }
    const auto a = split_corpus(labels, {0.5, 0.5}, 7);
    const auto b = split_corpus(labels, {0.5, 0.5}, 7);
    REQUIRE(a == b);
    const auto c = split_corpus(labels, {0.5, 0.5}, 8);
    REQUIRE(a != c);  // same sizes, different membership
    REQUIRE(a[0].size() == c[0].size());
}

TEST_CASE("split validation") {
    std::vector<int> labels = {0, 1, 0, 1};
    REQUIRE_THROWS_AS(split_corpus(labels, {}, 1), ConfigError);
    REQUIRE_THROWS_AS(split_corpus(labels, {0.5, 0.4}, 1), ConfigError);
    REQUIRE_THROWS_AS(split_corpus(labels, {1.5, -0.5}, 1), ConfigError);
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

TEST_CASE("corpus round-trips through disk within 8-bit quantization") {
    TempDir tmp;
    const Corpus corpus = generate_corpus(6, 3, 0.5, 55, 32);
    save_corpus(corpus, tmp.path);
    REQUIRE(fs::exists(tmp.path / "corpus.jsonl"));
    REQUIRE(fs::exists(tmp.path / "images" / "000000.png"));

    const Corpus loaded = load_corpus(tmp.path);
    REQUIRE(loaded.size() == corpus.size());
    for (size_t i = 0; i < corpus.size(); ++i) {
        REQUIRE(loaded[i].report == corpus[i].report);
        REQUIRE(loaded[i].class_label == corpus[i].class_label);
        REQUIRE(loaded[i].biomarkers == corpus[i].biomarkers);
        REQUIRE(loaded[i].image.rows() == corpus[i].image.rows());
        const float err = (loaded[i].image - corpus[i].image).cwiseAbs().maxCoeff();
        REQUIRE(err <= 0.5f / 255.0f + 1e-6f);
    }
}

TEST_CASE("corpus loader flags missing and malformed inputs") {
    TempDir tmp;
    REQUIRE_THROWS_AS(load_corpus(tmp.path / "nope"), InputError);
    {
        std::ofstream f(tmp.path / "corpus.jsonl");
        f << "not json\n";
    }
    REQUIRE_THROWS_AS(load_corpus(tmp.path), DataError);
    {
        std::ofstream f(tmp.path / "corpus.jsonl", std::ios::trunc);
    }
    REQUIRE_THROWS_AS(load_corpus(tmp.path), DataError);  // empty
}

TEST_CASE("vocabulary round-trips through json") {
    TempDir tmp;
    const Corpus corpus = generate_corpus(20, 3, 0.4, 66, 32);
    const Vocabulary vocab = build_vocab(corpus);
    save_vocab(vocab, tmp.path / "vocab.json");
    const Vocabulary loaded = load_vocab(tmp.path / "vocab.json");
    REQUIRE(loaded.token_to_id == vocab.token_to_id);
    REQUIRE(loaded.id_to_token == vocab.id_to_token);
}

TEST_CASE("vocabulary loader rejects broken files") {
    TempDir tmp;
    REQUIRE_THROWS_AS(load_vocab(tmp.path / "missing.json"), InputError);
    {
        std::ofstream f(tmp.path / "gap.json");
        f << R"({"[CLS]":0,"[SEP]":1,"[PAD]":2,"[MASK]":3,"[UNK]":4,"word":6})" << "\n";
    }
    REQUIRE_THROWS_AS(load_vocab(tmp.path / "gap.json"), DataError);
    {
        std::ofstream f(tmp.path / "nospecials.json");
        f << R"({"alpha":0,"beta":1,"gamma":2,"delta":3,"epsilon":4,"zeta":5})" << "\n";
    }
    REQUIRE_THROWS_AS(load_vocab(tmp.path / "nospecials.json"), DataError);
    {
        std::ofstream f(tmp.path / "bad.json");
        f << "{broken\n";
    }
    REQUIRE_THROWS_AS(load_vocab(tmp.path / "bad.json"), DataError);
}

// ---------------------------------------------------------------------------
// Labeled folders
// ---------------------------------------------------------------------------

TEST_CASE("labeled folders load with lexicographic class order") {
    TempDir tmp;
    const Corpus corpus = generate_corpus(8, 2, 0.0, 88, 32);
    fs::create_directories(tmp.path / "b_second");
    fs::create_directories(tmp.path / "a_first");
    auto dump = [&](const fs::path& p, const Mat<float>& m) {
        GrayImage img;
        img.height = m.rows();
        img.width = m.cols();
        img.pixels.resize(static_cast<size_t>(m.size()));
        for (Index r = 0; r < m.rows(); ++r) {
            for (Index c = 0; c < m.cols(); ++c) {
                img.at(r, c) = m(r, c);
            }
        }
        write_png_gray(p, img);
    };
    dump(tmp.path / "a_first" / "x.png", corpus[0].image);
    dump(tmp.path / "a_first" / "y.png", corpus[1].image);
    dump(tmp.path / "b_second" / "z.png", corpus[2].image);
    {
        std::ofstream f(tmp.path / "a_first" / "notes.txt");
        f << "ignored\n";
    }

    const LabeledImageSet set = load_labeled_folder(tmp.path, 32);
    REQUIRE(set.class_names == std::vector<std::string>{"a_first", "b_second"});
    REQUIRE(set.labels == std::vector<int>{0, 0, 1});
    REQUIRE(set.images.size() == 3);
    const float err = (set.images[0] - corpus[0].image).cwiseAbs().maxCoeff();
    REQUIRE(err <= 0.5f / 255.0f + 1e-6f);
}

TEST_CASE("labeled folder validation") {
    TempDir tmp;
    REQUIRE_THROWS_AS(load_labeled_folder(tmp.path / "absent", 32), InputError);
    REQUIRE_THROWS_AS(load_labeled_folder(tmp.path, 32), DataError);  // no classes
    fs::create_directories(tmp.path / "empty_class");
    REQUIRE_THROWS_AS(load_labeled_folder(tmp.path, 32), DataError);
}
