// retfiner — corpus generation, refinement, probing, ablation, comparison,
// and explainability in one reproducible command-line tool.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.
// Every subcommand writes only under its --out directory and echoes the fully
// resolved configuration (CLI flags > config file > defaults) plus SHA-256
// hashes of its inputs into <out>/resolved_config.json.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "retfiner/checkpoint.hpp"
#include "retfiner/corpus.hpp"
#include "retfiner/encoders.hpp"
#include "retfiner/explain.hpp"
#include "retfiner/objectives.hpp"
#include "retfiner/png_io.hpp"
#include "retfiner/probe.hpp"
#include "retfiner/refine.hpp"
#include "retfiner/report.hpp"
#include "retfiner/sha256.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace retfiner;

namespace {

std::string file_sha256(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw InputError("cannot read " + path.string());
    }
    Sha256 h;
    char buf[1 << 16];
    while (f) {
        f.read(buf, sizeof(buf));
        h.update(buf, static_cast<size_t>(f.gcount()));
    }
    return h.hex_digest();
}

// Content hash over a known input: a file hashes its bytes; a directory
// hashes the (name, file hash) list of its regular files, sorted by path.
std::string input_hash(const fs::path& path) {
    if (fs::is_directory(path)) {
        std::vector<fs::path> files;
        for (const auto& e : fs::recursive_directory_iterator(path)) {
            if (e.is_regular_file()) {
                files.push_back(e.path());
            }
        }
        std::sort(files.begin(), files.end());
        Sha256 h;
        for (const auto& f : files) {
            const std::string rel = fs::relative(f, path).generic_string();
            const std::string digest = file_sha256(f);
            h.update(rel.data(), rel.size());
            h.update(digest.data(), digest.size());
        }
        return h.hex_digest();
    }
    return file_sha256(path);
}

void ensure_out_dir(const fs::path& out) {
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) {
        throw InputError("cannot create output directory " + out.string() + ": " + ec.message());
    }
    // Probe writability early so failures are one clean line, not a partial run.
    const fs::path touch = out / ".write_test";
    {
        std::ofstream f(touch, std::ios::trunc);
        if (!f) {
            throw InputError("output directory not writable: " + out.string());
        }
    }
    fs::remove(touch, ec);
}

void write_resolved_config(const fs::path& out, const std::string& subcommand, json config,
                           json input_hashes) {
    config["subcommand"] = subcommand;
    config["input_hashes"] = std::move(input_hashes);
    std::ofstream f(out / "resolved_config.json", std::ios::trunc);
    if (!f) {
        throw InputError("cannot write " + (out / "resolved_config.json").string());
    }
    f << config.dump(2) << "\n";
}

// A paired-data directory (corpus.jsonl + images/ + vocab.json) as written by
// gen-data.
struct PairedData {
    Corpus corpus;
    Vocabulary vocab;
};

PairedData load_paired_data(const fs::path& dir) {
    PairedData data;
    data.corpus = load_corpus(dir);
    const fs::path vocab_path = dir / "vocab.json";
    if (fs::exists(vocab_path)) {
        data.vocab = load_vocab(vocab_path);
    } else {
        data.vocab = build_vocab(data.corpus);
    }
    return data;
}

json refine_config_json(const RefineConfig& cfg) {
    return json{{"lr", cfg.lr},
                {"batch_size", cfg.batch_size},
                {"weight_decay", cfg.weight_decay},
                {"max_epochs", cfg.max_epochs},
                {"patience", cfg.patience},
                {"seed", cfg.seed},
                {"freeze_vision", cfg.freeze_vision},
                {"val_fraction", cfg.val_fraction},
                {"losses", cfg.losses.to_string()}};
}

json model_config_json(const VisionConfig& vc, const TextConfig& tc) {
    return json{{"image_size", vc.image_size}, {"patch_size", vc.patch_size},
                {"embed_dim", vc.embed_dim},   {"depth", vc.depth},
                {"num_heads", vc.num_heads},   {"max_len", tc.max_len},
                {"vocab_size", tc.vocab_size}};
}

// Shared model-shape flags for subcommands that build a fresh model.
struct ModelFlags {
    Index patch_size = 16;
    Index embed_dim = 128;
    Index depth = 4;
    Index num_heads = 4;
    Index max_len = 48;

    void attach(CLI::App* cmd) {
        cmd->add_option("--patch-size", patch_size, "ViT patch size")->capture_default_str();
        cmd->add_option("--embed-dim", embed_dim, "encoder width")->capture_default_str();
        cmd->add_option("--depth", depth, "encoder depth (both towers)")->capture_default_str();
        cmd->add_option("--heads", num_heads, "attention heads")->capture_default_str();
        cmd->add_option("--max-len", max_len, "max report length in tokens")
            ->capture_default_str();
    }

    VisionConfig vision(Index image_size) const {
        VisionConfig vc;
        vc.image_size = image_size;
        vc.patch_size = patch_size;
        vc.embed_dim = embed_dim;
        vc.depth = depth;
        vc.num_heads = num_heads;
        return vc;
    }

    TextConfig text(Index vocab_size) const {
        TextConfig tc;
        tc.vocab_size = vocab_size;
        tc.max_len = max_len;
        tc.embed_dim = embed_dim;
        tc.depth = depth;
        tc.num_heads = num_heads;
        tc.cross_dim = embed_dim;
        return tc;
    }
};

// Train one model on a paired-data directory; returns the trained model and
// drops checkpoint/ (weights + vocab), log.csv into out_dir.
RefinerModel<float> run_refine(const PairedData& data, const ModelFlags& mf,
                               const RefineConfig& cfg, const fs::path& out_dir,
                               std::ostream* progress) {
    if (data.corpus.empty()) {
        throw DataError("refine: corpus is empty");
    }
    const Index image_size = data.corpus[0].image.rows();
    const VisionConfig vc = mf.vision(image_size);
    const TextConfig tc = mf.text(static_cast<Index>(data.vocab.size()));
    ObjectiveConfig oc;

    std::vector<TokenizedReport> toks;
    toks.reserve(data.corpus.size());
    for (const auto& s : data.corpus) {
        toks.push_back(tokenize(s.report, data.vocab, tc.max_len));
    }
    std::vector<int> labels;
    labels.reserve(data.corpus.size());
    for (const auto& s : data.corpus) {
        labels.push_back(s.class_label);
    }
    const auto parts =
        split_corpus(labels, {1.0 - cfg.val_fraction, cfg.val_fraction}, cfg.seed);

    RefinerModel<float> model;
    model.init(vc, tc, oc, cfg.seed);
    const TrainResult result = refine(model, data.corpus, toks, parts[0], parts[1], cfg,
                                      progress);

    const fs::path ckpt_dir = out_dir / "checkpoint";
    CheckpointExtra extra;
    extra.refine_config = refine_config_json(cfg);
    extra.provenance = json{{"best_epoch", result.best_epoch},
                            {"epochs_run", result.epochs_run},
                            {"best_val", result.best_val},
                            {"stopped_early", result.stopped_early}};
    save_checkpoint(model, ckpt_dir, extra);
    save_vocab(data.vocab, ckpt_dir / "vocab.json");
    write_log_csv(out_dir / "log.csv", result.log);
    return model;
}

// Loads a probing dataset: a gen-data directory (corpus.jsonl) or a labeled
// image folder (one subdirectory per class).
ProbeDataset load_probe_dataset(const fs::path& dir, Index image_size,
                                const std::string& dataset_id) {
    ProbeDataset ds;
    ds.id = dataset_id.empty() ? dir.filename().string() : dataset_id;
    if (ds.id.empty()) {  // trailing slash
        ds.id = dir.parent_path().filename().string();
    }
    if (fs::exists(dir / "corpus.jsonl")) {
        const Corpus corpus = load_corpus(dir);
        for (const auto& s : corpus) {
            if (s.image.rows() != image_size) {
                throw ConfigError("probe: dataset image size " +
                                  std::to_string(s.image.rows()) +
                                  " does not match the model's " + std::to_string(image_size));
            }
            ds.images.push_back(s.image);
            ds.labels.push_back(s.class_label);
        }
    } else {
        LabeledImageSet set = load_labeled_folder(dir, image_size);
        ds.images = std::move(set.images);
        ds.labels = std::move(set.labels);
    }
    return ds;
}

int dispatch(int argc, char** argv) {
    CLI::App app{"retfiner — vision-language refinement of retinal image encoders"};
    app.require_subcommand(1);
    app.set_config("--config", "", "config file (key=value lines; flags take precedence)");
    app.allow_config_extras(CLI::config_extras_mode::error);

    // ---------------- gen-data ----------------
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic paired image-report corpus");
    struct {
        Index n = 1000;
        Index classes = 4;
        double overlap = 0.3;
        uint64_t seed = 0;
        Index image_size = 64;
        std::string out;
    } g;
    gen->add_option("--n", g.n, "number of samples")->capture_default_str();
    gen->add_option("--classes", g.classes, "number of disease classes (2-8)")
        ->capture_default_str();
    gen->add_option("--overlap", g.overlap, "probability of adding a shared biomarker")
        ->capture_default_str();
    gen->add_option("--seed", g.seed, "corpus seed")->capture_default_str();
    gen->add_option("--image-size", g.image_size, "square image side in pixels")
        ->capture_default_str();
    gen->add_option("--out", g.out, "output directory")->required();

    // ---------------- refine ----------------
    auto* ref = app.add_subcommand("refine", "train the dual encoder on a paired corpus");
    struct {
        std::string data;
        std::string out;
        std::string losses = "itc,itm,mlm,gm";
        RefineConfig cfg;
        ModelFlags mf;
    } r;
    ref->add_option("--data", r.data, "paired-data directory from gen-data")->required();
    ref->add_option("--out", r.out, "output directory")->required();
    ref->add_option("--seed", r.cfg.seed, "training seed")->capture_default_str();
    ref->add_option("--epochs", r.cfg.max_epochs, "max epochs")->capture_default_str();
    ref->add_option("--batch-size", r.cfg.batch_size, "batch size")->capture_default_str();
    ref->add_option("--lr", r.cfg.lr, "learning rate")->capture_default_str();
    ref->add_option("--weight-decay", r.cfg.weight_decay, "decoupled weight decay")
        ->capture_default_str();
    ref->add_option("--patience", r.cfg.patience, "early-stopping patience")
        ->capture_default_str();
    ref->add_option("--val-fraction", r.cfg.val_fraction, "validation fraction")
        ->capture_default_str();
    ref->add_option("--losses", r.losses, "comma-joined loss subset (itc,itm,mlm,gm)")
        ->capture_default_str();
    ref->add_flag("--freeze-vision", r.cfg.freeze_vision,
                  "freeze the vision tower (text-side-only refinement)");
    r.mf.attach(ref);

    // ---------------- probe ----------------
    auto* prb = app.add_subcommand("probe", "linear-probe a checkpoint on a labeled dataset");
    struct {
        std::string checkpoint;
        std::string data;
        std::string out;
        std::string pooling = "concat";
        std::string dataset_id;
        int seeds = 5;
        uint64_t master_seed = 0;
        int workers = 1;
        bool random_init = false;
        uint64_t init_seed = 0;
    } p;
    prb->add_option("--checkpoint", p.checkpoint, "checkpoint directory")->required();
    prb->add_option("--data", p.data, "gen-data directory or labeled image folder")->required();
    prb->add_option("--out", p.out, "output directory")->required();
    prb->add_option("--pooling", p.pooling, "cls | patch_mean | all_mean | concat")
        ->capture_default_str();
    prb->add_option("--dataset-id", p.dataset_id, "dataset name recorded in runs.json");
    prb->add_option("--seeds", p.seeds, "number of probe seeds")->capture_default_str();
    prb->add_option("--master-seed", p.master_seed, "master seed for the split streams")
        ->capture_default_str();
    prb->add_option("--workers", p.workers, "parallel probe seeds")->capture_default_str();
    prb->add_flag("--random-init", p.random_init,
                  "ignore checkpoint weights; probe a randomly initialized encoder of the same "
                  "shape (baseline)");
    prb->add_option("--init-seed", p.init_seed, "seed for --random-init weights")
        ->capture_default_str();

    // ---------------- ablate ----------------
    auto* abl = app.add_subcommand(
        "ablate", "refine + probe over loss subsets, emitting one comparison table");
    struct {
        std::string data;
        std::string out;
        std::string subsets = "itc;itc,itm;itc,itm,mlm;itc,itm,mlm,gm";
        std::string pooling = "concat";
        int probe_seeds = 5;
        uint64_t master_seed = 0;
        int workers = 1;
        RefineConfig cfg;
        ModelFlags mf;
    } a;
    abl->add_option("--data", a.data, "paired-data directory from gen-data")->required();
    abl->add_option("--out", a.out, "output directory")->required();
    abl->add_option("--subsets", a.subsets,
                    "semicolon-separated loss subsets, each comma-joined")
        ->capture_default_str();
    abl->add_option("--pooling", a.pooling, "probe pooling strategy")->capture_default_str();
    abl->add_option("--probe-seeds", a.probe_seeds, "probe seeds per subset")
        ->capture_default_str();
    abl->add_option("--master-seed", a.master_seed, "probe master seed")->capture_default_str();
    abl->add_option("--workers", a.workers, "parallel probe seeds")->capture_default_str();
    abl->add_option("--seed", a.cfg.seed, "training seed (shared by every subset)")
        ->capture_default_str();
    abl->add_option("--epochs", a.cfg.max_epochs, "max epochs")->capture_default_str();
    abl->add_option("--batch-size", a.cfg.batch_size, "batch size")->capture_default_str();
    abl->add_option("--lr", a.cfg.lr, "learning rate")->capture_default_str();
    abl->add_option("--weight-decay", a.cfg.weight_decay, "decoupled weight decay")
        ->capture_default_str();
    abl->add_option("--patience", a.cfg.patience, "early-stopping patience")
        ->capture_default_str();
    abl->add_option("--val-fraction", a.cfg.val_fraction, "validation fraction")
        ->capture_default_str();
    a.mf.attach(abl);

    // ---------------- compare ----------------
    auto* cmp = app.add_subcommand("compare", "paired comparison of two runs.json files");
    struct {
        std::string model_runs;
        std::string baseline_runs;
        std::string out;
        std::string test = "wilcoxon";
        std::string model_name = "model";
        std::string baseline_name = "baseline";
    } c;
    cmp->add_option("--model-runs", c.model_runs, "runs.json of the refined model")->required();
    cmp->add_option("--baseline-runs", c.baseline_runs, "runs.json of the baseline")->required();
    cmp->add_option("--out", c.out, "output directory")->required();
    cmp->add_option("--test", c.test, "wilcoxon | ttest")->capture_default_str();
    cmp->add_option("--model-name", c.model_name, "label for the model rows")
        ->capture_default_str();
    cmp->add_option("--baseline-name", c.baseline_name, "label for the baseline rows")
        ->capture_default_str();

    // ---------------- explain ----------------
    auto* exp = app.add_subcommand("explain",
                                   "cross-attention saliency overlay for one image/report pair");
    struct {
        std::string checkpoint;
        std::string image;
        std::string report;
        std::string query = "all";
        std::string out;
        double alpha = 0.45;
    } e;
    exp->add_option("--checkpoint", e.checkpoint, "checkpoint directory")->required();
    exp->add_option("--image", e.image, "input PNG")->required();
    exp->add_option("--report", e.report, "report text to attend with")->required();
    exp->add_option("--query", e.query, "'all' (content tokens) or a token index")
        ->capture_default_str();
    exp->add_option("--out", e.out,
                    "output directory, or an overlay .png path whose directory receives the "
                    "sidecar files")
        ->required();
    exp->add_option("--alpha", e.alpha, "overlay blend weight in [0,1]")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        if (err.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) {
            // --help / --version
            std::cout << app.help() << std::flush;
            return 0;
        }
        std::cerr << "error: usage: " << err.what() << "\n";
        std::cerr << app.help() << std::flush;
        return 2;
    }

    if (gen->parsed()) {
        const fs::path out = g.out;
        ensure_out_dir(out);
        const Corpus corpus = generate_corpus(g.n, g.classes, g.overlap, g.seed, g.image_size);
        save_corpus(corpus, out);
        save_vocab(build_vocab(corpus), out / "vocab.json");
        write_resolved_config(out, "gen-data",
                              json{{"n", g.n},
                                   {"classes", g.classes},
                                   {"overlap", g.overlap},
                                   {"seed", g.seed},
                                   {"image_size", g.image_size},
                                   {"out", g.out}},
                              json::object());
        std::cout << "wrote " << corpus.size() << " samples to " << out.string() << "\n";
        return 0;
    }

    if (ref->parsed()) {
        const fs::path out = r.out;
        ensure_out_dir(out);
        r.cfg.losses = LossSelection::from_names([&] {
            std::vector<std::string> names;
            std::stringstream ss(r.losses);
            std::string item;
            while (std::getline(ss, item, ',')) {
                if (!item.empty()) {
                    names.push_back(item);
                }
            }
            return names;
        }());
        const PairedData data = load_paired_data(r.data);
        const auto model = run_refine(data, r.mf, r.cfg, out, &std::cerr);
        json cfg_json = refine_config_json(r.cfg);
        cfg_json["data"] = r.data;
        cfg_json["out"] = r.out;
        cfg_json["model"] = model_config_json(model.vision_config(), model.text_config());
        write_resolved_config(out, "refine", cfg_json, json{{"data", input_hash(r.data)}});
        std::cout << "checkpoint written to " << (out / "checkpoint").string() << "\n";
        return 0;
    }

    if (prb->parsed()) {
        const fs::path out = p.out;
        ensure_out_dir(out);
        const LoadedManifest lm = read_manifest(p.checkpoint);
        RefinerModel<float> model;
        model.init(lm.vision, lm.text, lm.objectives, p.init_seed);
        if (!p.random_init) {
            load_checkpoint_weights(model, p.checkpoint);
        }
        const ProbeDataset ds =
            load_probe_dataset(p.data, model.vision_config().image_size, p.dataset_id);
        const Pooling pooling = pooling_from_string(p.pooling);
        const auto runs =
            run_protocol(model, ds, pooling, p.seeds, p.master_seed, &std::cerr, p.workers);
        save_runs(runs, out / "runs.json");
        write_resolved_config(out, "probe",
                              json{{"checkpoint", p.checkpoint},
                                   {"data", p.data},
                                   {"pooling", p.pooling},
                                   {"dataset_id", ds.id},
                                   {"seeds", p.seeds},
                                   {"master_seed", p.master_seed},
                                   {"workers", p.workers},
                                   {"random_init", p.random_init},
                                   {"init_seed", p.init_seed},
                                   {"out", p.out}},
                              json{{"checkpoint", input_hash(p.checkpoint)},
                                   {"data", input_hash(p.data)}});
        std::cout << "wrote " << runs.size() << " probe runs to "
                  << (out / "runs.json").string() << "\n";
        return 0;
    }

    if (abl->parsed()) {
        const fs::path out = a.out;
        ensure_out_dir(out);
        std::vector<std::string> subset_names;
        {
            std::stringstream ss(a.subsets);
            std::string item;
            while (std::getline(ss, item, ';')) {
                if (!item.empty()) {
                    subset_names.push_back(item);
                }
            }
        }
        if (subset_names.empty()) {
            throw UsageError("ablate: --subsets is empty");
        }
        const PairedData data = load_paired_data(a.data);
        const Pooling pooling = pooling_from_string(a.pooling);
        std::vector<std::pair<std::string, std::vector<ProbeRun>>> table;
        for (const auto& name : subset_names) {
            std::vector<std::string> parts;
            std::stringstream ss(name);
            std::string item;
            while (std::getline(ss, item, ',')) {
                if (!item.empty()) {
                    parts.push_back(item);
                }
            }
            RefineConfig cfg = a.cfg;
            cfg.losses = LossSelection::from_names(parts);
            std::string dir_name = name;
            std::replace(dir_name.begin(), dir_name.end(), ',', '-');
            const fs::path subset_out = out / dir_name;
            ensure_out_dir(subset_out);
            std::cerr << "== subset " << name << " ==\n";
            const auto model = run_refine(data, a.mf, cfg, subset_out, &std::cerr);

            ProbeDataset ds;
            ds.id = "ablate";
            for (const auto& s : data.corpus) {
                ds.images.push_back(s.image);
                ds.labels.push_back(s.class_label);
            }
            const auto runs = run_protocol(model, ds, pooling, a.probe_seeds, a.master_seed,
                                           &std::cerr, a.workers);
            save_runs(runs, subset_out / "runs.json");
            table.emplace_back(cfg.losses.to_string(), runs);
        }
        {
            std::ofstream f(out / "report.md", std::ios::trunc);
            if (!f) {
                throw InputError("cannot write " + (out / "report.md").string());
            }
            f << render_ablation_markdown(table);
        }
        json cfg_json = refine_config_json(a.cfg);
        cfg_json["data"] = a.data;
        cfg_json["out"] = a.out;
        cfg_json["subsets"] = a.subsets;
        cfg_json["pooling"] = a.pooling;
        cfg_json["probe_seeds"] = a.probe_seeds;
        cfg_json["master_seed"] = a.master_seed;
        write_resolved_config(out, "ablate", cfg_json, json{{"data", input_hash(a.data)}});
        std::cout << "ablation report written to " << (out / "report.md").string() << "\n";
        return 0;
    }

    if (cmp->parsed()) {
        const fs::path out = c.out;
        ensure_out_dir(out);
        const auto model_runs = load_runs(c.model_runs);
        const auto baseline_runs = load_runs(c.baseline_runs);
        const MetricReport report =
            build_report(model_runs, baseline_runs, c.model_name, c.baseline_name, c.test);
        write_report(report, out / "report.md");
        write_resolved_config(out, "compare",
                              json{{"model_runs", c.model_runs},
                                   {"baseline_runs", c.baseline_runs},
                                   {"test", c.test},
                                   {"model_name", c.model_name},
                                   {"baseline_name", c.baseline_name},
                                   {"out", c.out}},
                              json{{"model_runs", input_hash(c.model_runs)},
                                   {"baseline_runs", input_hash(c.baseline_runs)}});
        std::cout << "report written to " << (out / "report.md").string() << "\n";
        return 0;
    }

    if (exp->parsed()) {
        fs::path out_dir = e.out;
        fs::path overlay_path;
        if (out_dir.extension() == ".png") {
            overlay_path = out_dir;
            out_dir = out_dir.parent_path();
            if (out_dir.empty()) {
                out_dir = ".";
            }
        } else {
            overlay_path = out_dir / "overlay.png";
        }
        ensure_out_dir(out_dir);
        const auto model = load_checkpoint<float>(e.checkpoint);
        const Vocabulary vocab = load_vocab(fs::path(e.checkpoint) / "vocab.json");
        const GrayImage raw = read_png_gray(e.image);
        const Mat<float> raster = to_model_raster(raw, model.vision_config().image_size);
        const TokenizedReport toks = tokenize(e.report, vocab, model.text_config().max_len);
        const AttentionStack stack = capture_cross_attention(model, raster, toks);
        const SaliencyMap sal =
            rollout(stack, SaliencyQuery::parse(e.query), model.vision_config().image_size);
        write_png_rgb(overlay_path, make_overlay(raster, sal, e.alpha));
        write_saliency_csv(out_dir / "saliency.csv", sal.grid);
        write_resolved_config(out_dir, "explain",
                              json{{"checkpoint", e.checkpoint},
                                   {"image", e.image},
                                   {"report", e.report},
                                   {"query", e.query},
                                   {"alpha", e.alpha},
                                   {"out", e.out}},
                              json{{"checkpoint", input_hash(e.checkpoint)},
                                   {"image", input_hash(e.image)}});
        std::cout << "overlay written to " << overlay_path.string() << "\n";
        return 0;
    }

    std::cerr << "error: usage: no subcommand given\n" << app.help();
    return 2;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(argc, argv);
    } catch (const UsageError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 2;
    } catch (const ConfigError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 2;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 1;
    }
}
