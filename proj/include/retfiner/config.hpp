#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "retfiner/common.hpp"

namespace retfiner {

using Json = nlohmann::json;

// Special token ids, fixed as the first five vocabulary entries.
inline constexpr int kClsId = 0;
inline constexpr int kSepId = 1;
inline constexpr int kPadId = 2;
inline constexpr int kMaskId = 3;
inline constexpr int kUnkId = 4;
inline constexpr int kNumSpecialTokens = 5;

struct VisionConfig {
    Index image_size = 64;
    Index patch_size = 16;
    Index embed_dim = 128;
    Index depth = 4;
    Index num_heads = 4;
    Index channels = 1;

    Index grid() const { return image_size / patch_size; }
    Index num_patches() const { return grid() * grid(); }
    Index patch_dim() const { return patch_size * patch_size * channels; }

    void validate() const {
        if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0) {
            throw ConfigError("vision: patch_size must divide image_size");
        }
        if (embed_dim <= 0 || num_heads <= 0 || embed_dim % num_heads != 0) {
            throw ConfigError("vision: num_heads must divide embed_dim");
        }
        if (depth <= 0) {
            throw ConfigError("vision: depth must be positive");
        }
        if (channels != 1 && channels != 3) {
            throw ConfigError("vision: channels must be 1 or 3");
        }
    }
};

struct TextConfig {
    Index vocab_size = 0;  // set from the corpus vocabulary
    Index max_len = 48;
    Index embed_dim = 128;
    Index depth = 4;
    Index num_heads = 4;
    Index cross_dim = 128;  // width of the visual tokens entering cross-attention

    void validate() const {
        if (vocab_size <= 5) {
            throw ConfigError("text: vocab_size must exceed the special-token count");
        }
        if (max_len < 3) {
            throw ConfigError("text: max_len must be at least 3 (CLS + token + SEP)");
        }
        if (embed_dim <= 0 || num_heads <= 0 || embed_dim % num_heads != 0) {
            throw ConfigError("text: num_heads must divide embed_dim");
        }
        if (depth <= 0 || cross_dim <= 0) {
            throw ConfigError("text: depth and cross_dim must be positive");
        }
    }
};

// Hyperparameters of the four training objectives.
struct ObjectiveConfig {
    double tau_init = 0.07;      // initial contrastive temperature
    double tau_min = 1e-3;       // clamp range enforced after every step
    double tau_max = 1.0;
    double mlm_rate = 0.15;      // fraction of content tokens masked for MLM
    double gm_rate = 0.6;        // fraction of content tokens targeted for GM

    void validate() const {
        if (!(tau_init >= tau_min && tau_init <= tau_max) || tau_min <= 0) {
            throw ConfigError("objectives: tau_init must lie inside the clamp range");
        }
        if (mlm_rate <= 0 || mlm_rate > 1 || gm_rate <= 0 || gm_rate > 1) {
            throw ConfigError("objectives: masking rates must lie in (0, 1]");
        }
    }
};

enum class LossKind : uint8_t { Itc = 0, Itm = 1, Mlm = 2, Gm = 3 };

struct LossSelection {
    bool itc = true;
    bool itm = true;
    bool mlm = true;
    bool gm = true;

    bool any() const { return itc || itm || mlm || gm; }

    static LossSelection from_names(const std::vector<std::string>& names) {
        LossSelection s{false, false, false, false};
        for (const auto& n : names) {
            if (n == "itc") {
                s.itc = true;
            } else if (n == "itm") {
                s.itm = true;
            } else if (n == "mlm") {
                s.mlm = true;
            } else if (n == "gm") {
                s.gm = true;
            } else {
                throw UsageError("unknown loss name '" + n + "' (expected itc,itm,mlm,gm)");
            }
        }
        if (!s.any()) {
            throw UsageError("loss subset must be nonempty");
        }
        return s;
    }

    std::string to_string() const {
        std::string out;
        auto app = [&out](bool on, const char* n) {
            if (on) {
                out += out.empty() ? "" : ",";
                out += n;
            }
        };
        app(itc, "itc");
        app(itm, "itm");
        app(mlm, "mlm");
        app(gm, "gm");
        return out;
    }
};

struct RefineConfig {
    double lr = 1e-4;
    Index batch_size = 32;       // paper-scale default is 128; desk default 32
    double weight_decay = 0.05;
    Index max_epochs = 30;
    Index patience = 3;
    uint64_t seed = 0;
    bool freeze_vision = false;
    double val_fraction = 0.1;   // train/val split when none is given
    LossSelection losses{};

    void validate() const {
        if (patience < 1) {
            throw ConfigError("refine: patience must be >= 1");
        }
        if (batch_size < 2) {
            throw ConfigError("refine: batch_size must be >= 2 (ITM needs negatives)");
        }
        if (max_epochs < 1 || lr <= 0) {
            throw ConfigError("refine: max_epochs must be >= 1 and lr positive");
        }
        if (val_fraction <= 0 || val_fraction >= 1) {
            throw ConfigError("refine: val_fraction must lie in (0, 1)");
        }
        if (!losses.any()) {
            throw ConfigError("refine: loss subset must be nonempty");
        }
    }
};

inline void to_json(Json& j, const VisionConfig& c) {
    j = Json{{"image_size", c.image_size}, {"patch_size", c.patch_size},
             {"embed_dim", c.embed_dim},   {"depth", c.depth},
             {"num_heads", c.num_heads},   {"channels", c.channels}};
}

inline void from_json(const Json& j, VisionConfig& c) {
    j.at("image_size").get_to(c.image_size);
    j.at("patch_size").get_to(c.patch_size);
    j.at("embed_dim").get_to(c.embed_dim);
    j.at("depth").get_to(c.depth);
    j.at("num_heads").get_to(c.num_heads);
    j.at("channels").get_to(c.channels);
}

inline void to_json(Json& j, const TextConfig& c) {
    j = Json{{"vocab_size", c.vocab_size}, {"max_len", c.max_len},
             {"embed_dim", c.embed_dim},   {"depth", c.depth},
             {"num_heads", c.num_heads},   {"cross_dim", c.cross_dim}};
}

inline void from_json(const Json& j, TextConfig& c) {
    j.at("vocab_size").get_to(c.vocab_size);
    j.at("max_len").get_to(c.max_len);
    j.at("embed_dim").get_to(c.embed_dim);
    j.at("depth").get_to(c.depth);
    j.at("num_heads").get_to(c.num_heads);
    j.at("cross_dim").get_to(c.cross_dim);
}

inline void to_json(Json& j, const ObjectiveConfig& c) {
    j = Json{{"tau_init", c.tau_init}, {"tau_min", c.tau_min}, {"tau_max", c.tau_max},
             {"mlm_rate", c.mlm_rate}, {"gm_rate", c.gm_rate}};
}

inline void from_json(const Json& j, ObjectiveConfig& c) {
    j.at("tau_init").get_to(c.tau_init);
    j.at("tau_min").get_to(c.tau_min);
    j.at("tau_max").get_to(c.tau_max);
    j.at("mlm_rate").get_to(c.mlm_rate);
    j.at("gm_rate").get_to(c.gm_rate);
}

// Reports config mismatches as "field: got X, expected Y" lines.
template <typename C>
std::vector<std::string> config_mismatches(const C& a, const C& b) {
    std::vector<std::string> out;
    const Json ja = a;
    const Json jb = b;
    for (auto it = ja.begin(); it != ja.end(); ++it) {
        if (jb.at(it.key()) != it.value()) {
            out.push_back(it.key() + ": " + it.value().dump() + " vs " + jb.at(it.key()).dump());
        }
    }
    return out;
}

}  // namespace retfiner
