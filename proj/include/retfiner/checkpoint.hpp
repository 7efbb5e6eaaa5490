#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <json.hpp>

#include "retfiner/common.hpp"
#include "retfiner/config.hpp"
#include "retfiner/encoders.hpp"
#include "retfiner/sha256.hpp"

namespace retfiner {

inline constexpr int kCheckpointFormatVersion = 1;

namespace detail {

// Everything on disk is little-endian float32 regardless of the in-memory
// scalar type; this keeps checkpoints interchangeable between builds.
inline void append_f32_le(std::string& out, float v) {
    static_assert(sizeof(float) == 4);
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    out.push_back(static_cast<char>(bits & 0xff));
    out.push_back(static_cast<char>((bits >> 8) & 0xff));
    out.push_back(static_cast<char>((bits >> 16) & 0xff));
    out.push_back(static_cast<char>((bits >> 24) & 0xff));
}

inline float read_f32_le(const unsigned char* p) {
    uint32_t bits = static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
                    (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace detail

struct CheckpointExtra {
    nlohmann::json refine_config;  // optional: training config snapshot
    nlohmann::json rng_state;      // optional: resumption state
    nlohmann::json provenance;     // optional: input hashes, loss selection, etc.
};

// Writes <dir>/manifest.json and <dir>/weights.bin. Weights are concatenated
// row-major in registry order; the manifest records name/shape/offset for
// each tensor so loads can verify layout before touching any weight.
template <typename T>
void save_checkpoint(const RefinerModel<T>& model, const std::filesystem::path& dir,
                     const CheckpointExtra& extra = {}) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw InputError("cannot create checkpoint directory " + dir.string() + ": " +
                         ec.message());
    }
    std::string blob;
    nlohmann::json tensors = nlohmann::json::array();
    uint64_t offset = 0;
    for (const auto& e : model.params().entries()) {
        const Mat<T>& m = e.node->value;
        nlohmann::json t;
        t["name"] = e.node->name;
        t["shape"] = {m.rows(), m.cols()};
        t["dtype"] = "float32";
        t["offset_bytes"] = offset;
        t["decay"] = e.decay;
        tensors.push_back(t);
        for (Index r = 0; r < m.rows(); ++r) {
            for (Index c = 0; c < m.cols(); ++c) {
                detail::append_f32_le(blob, static_cast<float>(m(r, c)));
            }
        }
        offset = blob.size();
    }
    nlohmann::json manifest;
    manifest["format_version"] = kCheckpointFormatVersion;
    manifest["vision_config"] = model.vision_config();
    manifest["text_config"] = model.text_config();
    manifest["objective_config"] = model.objective_config();
    manifest["tensors"] = tensors;
    manifest["weights_bytes"] = blob.size();
    manifest["weights_sha256"] = Sha256::hash_string(blob);
    if (!extra.refine_config.is_null()) {
        manifest["refine_config"] = extra.refine_config;
    }
    if (!extra.rng_state.is_null()) {
        manifest["rng_state"] = extra.rng_state;
    }
    if (!extra.provenance.is_null()) {
        manifest["provenance"] = extra.provenance;
    }
    {
        std::ofstream f(dir / "weights.bin", std::ios::binary | std::ios::trunc);
        if (!f) {
            throw InputError("cannot write " + (dir / "weights.bin").string());
        }
        f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
        if (!f) {
            throw InputError("short write to " + (dir / "weights.bin").string());
        }
    }
    {
        std::ofstream f(dir / "manifest.json", std::ios::trunc);
        if (!f) {
            throw InputError("cannot write " + (dir / "manifest.json").string());
        }
        f << manifest.dump(2) << "\n";
    }
}

struct LoadedManifest {
    nlohmann::json manifest;
    VisionConfig vision;
    TextConfig text;
    ObjectiveConfig objectives;
};

inline LoadedManifest read_manifest(const std::filesystem::path& dir) {
    const auto path = dir / "manifest.json";
    std::ifstream f(path);
    if (!f) {
        throw InputError("checkpoint manifest not found: " + path.string());
    }
    nlohmann::json manifest;
    try {
        f >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw IntegrityError("malformed checkpoint manifest " + path.string() + ": " + e.what());
    }
    if (!manifest.contains("format_version") ||
        manifest["format_version"].get<int>() != kCheckpointFormatVersion) {
        throw IntegrityError("unsupported checkpoint format_version in " + path.string());
    }
    LoadedManifest lm;
    lm.manifest = manifest;
    try {
        lm.vision = manifest.at("vision_config").get<VisionConfig>();
        lm.text = manifest.at("text_config").get<TextConfig>();
        lm.objectives = manifest.at("objective_config").get<ObjectiveConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw IntegrityError("checkpoint manifest missing config fields: " +
                             std::string(e.what()));
    }
    return lm;
}

// Loads weights into an already-initialized model whose configs must match
// the manifest exactly (every divergent field is reported in the error).
template <typename T>
void load_checkpoint_weights(RefinerModel<T>& model, const std::filesystem::path& dir) {
    const LoadedManifest lm = read_manifest(dir);
    std::vector<std::string> diffs;
    for (const auto& d : config_mismatches(model.vision_config(), lm.vision)) {
        diffs.push_back("vision." + d);
    }
    for (const auto& d : config_mismatches(model.text_config(), lm.text)) {
        diffs.push_back("text." + d);
    }
    for (const auto& d : config_mismatches(model.objective_config(), lm.objectives)) {
        diffs.push_back("objectives." + d);
    }
    if (!diffs.empty()) {
        std::string msg = "checkpoint config mismatch:";
        for (const auto& d : diffs) {
            msg += "\n  " + d;
        }
        throw ConfigError(msg);
    }

    const auto wpath = dir / "weights.bin";
    std::ifstream f(wpath, std::ios::binary);
    if (!f) {
        throw InputError("checkpoint weights not found: " + wpath.string());
    }
    std::string blob((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const uint64_t expect_bytes = lm.manifest.at("weights_bytes").get<uint64_t>();
    if (blob.size() != expect_bytes) {
        throw IntegrityError("weights.bin is " + std::to_string(blob.size()) +
                             " bytes, manifest says " + std::to_string(expect_bytes));
    }
    if (lm.manifest.contains("weights_sha256") &&
        lm.manifest["weights_sha256"].get<std::string>() != Sha256::hash_string(blob)) {
        throw IntegrityError("weights.bin checksum mismatch (corrupt checkpoint)");
    }

    const auto& tensors = lm.manifest.at("tensors");
    auto& entries = model.params().entries();
    if (tensors.size() != entries.size()) {
        throw IntegrityError("checkpoint holds " + std::to_string(tensors.size()) +
                             " tensors, model expects " + std::to_string(entries.size()));
    }
    for (size_t i = 0; i < entries.size(); ++i) {
        const auto& t = tensors[i];
        Mat<T>& m = entries[i].node->value;
        const std::string name = t.at("name").get<std::string>();
        if (name != entries[i].node->name) {
            throw IntegrityError("tensor " + std::to_string(i) + " is '" + name +
                                 "', model expects '" + entries[i].node->name + "'");
        }
        const auto shape = t.at("shape").get<std::vector<Index>>();
        if (shape.size() != 2 || shape[0] != m.rows() || shape[1] != m.cols()) {
            throw IntegrityError("tensor '" + name + "' shape mismatch");
        }
        if (t.at("dtype").get<std::string>() != "float32") {
            throw IntegrityError("tensor '" + name + "' has unsupported dtype");
        }
        const uint64_t off = t.at("offset_bytes").get<uint64_t>();
        const uint64_t need = off + static_cast<uint64_t>(m.size()) * 4;
        if (need > blob.size()) {
            throw IntegrityError("tensor '" + name + "' extends past end of weights.bin");
        }
        const unsigned char* p = reinterpret_cast<const unsigned char*>(blob.data()) + off;
        for (Index r = 0; r < m.rows(); ++r) {
            for (Index c = 0; c < m.cols(); ++c) {
                m(r, c) = static_cast<T>(detail::read_f32_le(p));
                p += 4;
            }
        }
        if (!all_finite(m)) {
            throw IntegrityError("tensor '" + name + "' contains NaN/Inf values");
        }
    }
}

// Builds the model described by the manifest, then loads its weights.
template <typename T>
RefinerModel<T> load_checkpoint(const std::filesystem::path& dir) {
    const LoadedManifest lm = read_manifest(dir);
    RefinerModel<T> model;
    model.init(lm.vision, lm.text, lm.objectives, 0);
    load_checkpoint_weights(model, dir);
    return model;
}

// SHA-256 over manifest.json + weights.bin, for reproducibility checks.
inline std::string checkpoint_hash(const std::filesystem::path& dir) {
    Sha256 h;
    for (const char* name : {"manifest.json", "weights.bin"}) {
        std::ifstream f(dir / name, std::ios::binary);
        if (!f) {
            throw InputError("checkpoint file missing: " + (dir / name).string());
        }
        std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        h.update(data.data(), data.size());
    }
    return h.hex_digest();
}

}  // namespace retfiner
