#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "skmae/backbones.hpp"
#include "skmae/data.hpp"
#include "skmae/errors.hpp"
#include "skmae/masking.hpp"
#include "skmae/skeletonmae.hpp"
#include "skmae/strl.hpp"

namespace skmae {

using nlohmann::json;

struct ModelDims {
    std::size_t joints = kCocoJoints;
    std::size_t frames = 64;
    std::size_t embed_dim = 64;
    std::size_t hidden_dim = 64;
    std::size_t encoder_depth = 3;
    std::size_t strl_layers = 3;
    Backbone backbone = Backbone::GIN;
    std::size_t gat_heads = 4;
    std::size_t classes = 0;  // 0: taken from the training data
};

struct DataConfig {
    std::string train;
    std::string test;
    double noise_sigma = 0.01;
    std::optional<SynthSpec> synthetic;  // used when no train path is given
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::string output_dir = "runs";
    ModelDims model;
    MaskSpec mask;
    PretrainConfig pretrain;
    std::size_t checkpoint_every = 0;  // pre-training epochs between checkpoints; 0 = only at the end
    FinetuneConfig finetune;
    DataConfig data;
    std::vector<MaskSpec> compare{MaskSpec{BodyPartsMask{{3, 5}}}, MaskSpec{RandomRatioMask{0.5}}};

    MaeModelConfig mae_config() const {
        return {model.embed_dim, model.hidden_dim, model.encoder_depth, model.backbone, model.gat_heads};
    }

    SslModelConfig ssl_config(std::size_t classes) const {
        SslModelConfig c;
        c.frames = model.frames;
        c.embed_dim = model.embed_dim;
        c.hidden_dim = model.hidden_dim;
        c.encoder_depth = model.encoder_depth;
        c.strl_layers = model.strl_layers;
        c.backbone = model.backbone;
        c.gat_heads = model.gat_heads;
        c.classes = classes;
        return c;
    }

    // Pre-training settings with the shared seed, mask and noise filled in.
    PretrainConfig pretrain_config() const {
        PretrainConfig p = pretrain;
        p.mask = mask;
        p.seed = seed;
        p.noise_sigma = data.noise_sigma;
        return p;
    }

    FinetuneConfig finetune_config() const {
        FinetuneConfig f = finetune;
        f.seed = seed;
        f.noise_sigma = data.noise_sigma;
        return f;
    }

    void validate() const {
        if (model.joints != kCocoJoints) {
            throw ConfigError("model.joints must be " + std::to_string(kCocoJoints) + " for the COCO-17 layout");
        }
        if (model.frames == 0 || model.frames % 4 != 0) throw ConfigError("model.frames must be a positive multiple of 4");
        if (model.embed_dim == 0 || model.hidden_dim == 0) throw ConfigError("model widths must be positive");
        if (model.encoder_depth < 1) throw ConfigError("model.encoder_depth must be at least 1");
        if (model.strl_layers < 1) throw ConfigError("model.strl_layers must be at least 1");
        if (model.backbone == Backbone::GAT) {
            if (model.gat_heads == 0 || model.hidden_dim % model.gat_heads != 0 || model.embed_dim % model.gat_heads != 0) {
                throw ConfigError("model.gat_heads must divide embed_dim and hidden_dim");
            }
        }
        const auto layout = build_coco17_layout();
        validate_mask_spec(mask, layout);
        for (const auto& m : compare) validate_mask_spec(m, layout);
        pretrain_config().validate();
        finetune_config().validate();
        if (data.train.empty() && !data.synthetic) throw ConfigError("data.train or data.synthetic is required");
    }
};

namespace detail {

inline void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!ok.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in " + where);
    }
}

template <typename V>
void read(const json& j, const char* key, V& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<V>();
    } catch (const json::exception&) {
        throw ConfigError(where + "." + key + " has the wrong type");
    }
}

// Non-negative integer fields; a negative JSON number would otherwise wrap.
inline void read_count(const json& j, const char* key, std::size_t& out, const std::string& where) {
    if (!j.contains(key)) return;
    const json& v = j.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
        throw ConfigError(where + "." + key + " must be a non-negative integer");
    }
    out = v.get<std::size_t>();
}

}  // namespace detail

inline json mask_to_json(const MaskSpec& spec) {
    return std::visit(
        [](const auto& s) -> json {
            using S = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<S, BodyPartsMask>) {
                return {{"strategy", "body_parts"}, {"regions", std::vector<std::size_t>(s.regions.begin(), s.regions.end())}};
            } else if constexpr (std::is_same_v<S, SampleRegionsMask>) {
                return {{"strategy", "sample_regions"}, {"count", s.count}};
            } else {
                return {{"strategy", "random"}, {"ratio", s.ratio}};
            }
        },
        spec.strategy);
}

inline MaskSpec mask_from_json(const json& j, const std::string& where = "mask") {
    if (!j.is_object() || !j.contains("strategy") || !j["strategy"].is_string()) {
        throw ConfigError(where + " needs a string 'strategy'");
    }
    const std::string kind = j["strategy"].get<std::string>();
    if (kind == "body_parts") {
        detail::check_keys(j, where, {"strategy", "regions"});
        std::vector<std::size_t> regions;
        if (!j.contains("regions")) throw ConfigError(where + ".regions is required for body_parts");
        detail::read(j, "regions", regions, where);
        return MaskSpec{BodyPartsMask{{regions.begin(), regions.end()}}};
    }
    if (kind == "sample_regions") {
        detail::check_keys(j, where, {"strategy", "count"});
        SampleRegionsMask m;
        detail::read_count(j, "count", m.count, where);
        return MaskSpec{m};
    }
    if (kind == "random") {
        detail::check_keys(j, where, {"strategy", "ratio"});
        RandomRatioMask m;
        detail::read(j, "ratio", m.ratio, where);
        return MaskSpec{m};
    }
    throw ConfigError(where + ".strategy '" + kind + "' is not one of body_parts, sample_regions, random");
}

// Command-line form: "body_parts:3,5", "random:0.5", "sample_regions:1".
inline MaskSpec parse_mask_arg(const std::string& text) {
    const auto colon = text.find(':');
    const std::string kind = text.substr(0, colon);
    const std::string arg = colon == std::string::npos ? "" : text.substr(colon + 1);
    try {
        if (kind == "body_parts") {
            BodyPartsMask m;
            std::size_t pos = 0;
            while (pos < arg.size()) {
                const auto comma = arg.find(',', pos);
                const std::string item = arg.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
                std::size_t used = 0;
                const unsigned long v = std::stoul(item, &used);
                if (used != item.size()) throw std::invalid_argument(item);
                m.regions.insert(v);
                if (comma == std::string::npos) break;
                pos = comma + 1;
            }
            return MaskSpec{m};
        }
        if (kind == "random") {
            std::size_t used = 0;
            const double r = std::stod(arg, &used);
            if (used != arg.size()) throw std::invalid_argument(arg);
            return MaskSpec{RandomRatioMask{r}};
        }
        if (kind == "sample_regions") {
            if (arg.empty()) return MaskSpec{SampleRegionsMask{}};
            std::size_t used = 0;
            const unsigned long c = std::stoul(arg, &used);
            if (used != arg.size()) throw std::invalid_argument(arg);
            return MaskSpec{SampleRegionsMask{c}};
        }
    } catch (const std::logic_error&) {
        throw ConfigError("cannot parse mask argument '" + text + "'");
    }
    throw ConfigError("mask argument '" + text + "' must start with body_parts:, random: or sample_regions:");
}

inline json synth_to_json(const SynthSpec& s) {
    return {{"class_count", s.class_count}, {"sequences_per_class", s.sequences_per_class}, {"frames", s.frames},
            {"noise_sigma", s.noise_sigma},  {"active_regions", s.active_regions},         {"seed", s.seed}};
}

inline SynthSpec synth_from_json(const json& j) {
    const std::string w = "data.synthetic";
    detail::check_keys(j, w, {"class_count", "sequences_per_class", "frames", "noise_sigma", "active_regions", "seed"});
    SynthSpec s;
    detail::read_count(j, "class_count", s.class_count, w);
    detail::read_count(j, "sequences_per_class", s.sequences_per_class, w);
    detail::read_count(j, "frames", s.frames, w);
    detail::read(j, "noise_sigma", s.noise_sigma, w);
    detail::read(j, "active_regions", s.active_regions, w);
    detail::read(j, "seed", s.seed, w);
    return s;
}

inline json config_to_json(const RunConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["output_dir"] = c.output_dir;
    j["model"] = {{"joints", c.model.joints},
                  {"frames", c.model.frames},
                  {"embed_dim", c.model.embed_dim},
                  {"hidden_dim", c.model.hidden_dim},
                  {"encoder_depth", c.model.encoder_depth},
                  {"strl_layers", c.model.strl_layers},
                  {"backbone", to_string(c.model.backbone)},
                  {"gat_heads", c.model.gat_heads},
                  {"classes", c.model.classes}};
    j["mask"] = mask_to_json(c.mask);
    j["pretrain"] = {{"lr", c.pretrain.lr},
                     {"epochs", c.pretrain.epochs},
                     {"batch_size", c.pretrain.batch_size},
                     {"beta", c.pretrain.beta},
                     {"adam_beta1", c.pretrain.adam_beta1},
                     {"adam_beta2", c.pretrain.adam_beta2},
                     {"adam_eps", c.pretrain.adam_eps},
                     {"checkpoint_every", c.checkpoint_every}};
    j["finetune"] = {{"lr", c.finetune.lr},
                     {"momentum", c.finetune.momentum},
                     {"epochs", c.finetune.epochs},
                     {"warmup_epochs", c.finetune.warmup_epochs},
                     {"decay_epochs", c.finetune.decay_epochs},
                     {"decay_factor", c.finetune.decay_factor},
                     {"label_smoothing", c.finetune.label_smoothing},
                     {"batch_size", c.finetune.batch_size},
                     {"grad_clip", c.finetune.grad_clip}};
    j["data"] = {{"train", c.data.train}, {"test", c.data.test}, {"noise_sigma", c.data.noise_sigma}};
    if (c.data.synthetic) j["data"]["synthetic"] = synth_to_json(*c.data.synthetic);
    j["compare"] = {{"strategies", json::array()}};
    for (const auto& m : c.compare) j["compare"]["strategies"].push_back(mask_to_json(m));
    return j;
}

// Missing keys keep their defaults; unknown keys anywhere are rejected.
inline RunConfig config_from_json(const json& j) {
    detail::check_keys(j, "config", {"seed", "output_dir", "model", "mask", "pretrain", "finetune", "data", "compare"});
    RunConfig c;
    detail::read(j, "seed", c.seed, "config");
    detail::read(j, "output_dir", c.output_dir, "config");
    if (j.contains("model")) {
        const json& m = j["model"];
        detail::check_keys(m, "model", {"joints", "frames", "embed_dim", "hidden_dim", "encoder_depth", "strl_layers",
                                        "backbone", "gat_heads", "classes"});
        detail::read_count(m, "joints", c.model.joints, "model");
        detail::read_count(m, "frames", c.model.frames, "model");
        detail::read_count(m, "embed_dim", c.model.embed_dim, "model");
        detail::read_count(m, "hidden_dim", c.model.hidden_dim, "model");
        detail::read_count(m, "encoder_depth", c.model.encoder_depth, "model");
        detail::read_count(m, "strl_layers", c.model.strl_layers, "model");
        if (m.contains("backbone")) {
            std::string name;
            detail::read(m, "backbone", name, "model");
            c.model.backbone = parse_backbone(name);
        }
        detail::read_count(m, "gat_heads", c.model.gat_heads, "model");
        detail::read_count(m, "classes", c.model.classes, "model");
    }
    if (j.contains("mask")) c.mask = mask_from_json(j["mask"]);
    if (j.contains("pretrain")) {
        const json& p = j["pretrain"];
        const std::string w = "pretrain";
        detail::check_keys(p, w, {"lr", "epochs", "batch_size", "beta", "adam_beta1", "adam_beta2", "adam_eps",
                                   "checkpoint_every"});
        detail::read(p, "lr", c.pretrain.lr, w);
        detail::read_count(p, "epochs", c.pretrain.epochs, w);
        detail::read_count(p, "batch_size", c.pretrain.batch_size, w);
        detail::read(p, "beta", c.pretrain.beta, w);
        detail::read(p, "adam_beta1", c.pretrain.adam_beta1, w);
        detail::read(p, "adam_beta2", c.pretrain.adam_beta2, w);
        detail::read(p, "adam_eps", c.pretrain.adam_eps, w);
        detail::read_count(p, "checkpoint_every", c.checkpoint_every, w);
    }
    if (j.contains("finetune")) {
        const json& f = j["finetune"];
        const std::string w = "finetune";
        detail::check_keys(f, w, {"lr", "momentum", "epochs", "warmup_epochs", "decay_epochs", "decay_factor",
                                   "label_smoothing", "batch_size", "grad_clip"});
        detail::read(f, "lr", c.finetune.lr, w);
        detail::read(f, "momentum", c.finetune.momentum, w);
        detail::read_count(f, "epochs", c.finetune.epochs, w);
        detail::read_count(f, "warmup_epochs", c.finetune.warmup_epochs, w);
        detail::read(f, "decay_epochs", c.finetune.decay_epochs, w);
        detail::read(f, "decay_factor", c.finetune.decay_factor, w);
        detail::read(f, "label_smoothing", c.finetune.label_smoothing, w);
        detail::read_count(f, "batch_size", c.finetune.batch_size, w);
        detail::read(f, "grad_clip", c.finetune.grad_clip, w);
    }
    if (j.contains("data")) {
        const json& d = j["data"];
        detail::check_keys(d, "data", {"train", "test", "noise_sigma", "synthetic"});
        detail::read(d, "train", c.data.train, "data");
        detail::read(d, "test", c.data.test, "data");
        detail::read(d, "noise_sigma", c.data.noise_sigma, "data");
        if (d.contains("synthetic") && !d["synthetic"].is_null()) c.data.synthetic = synth_from_json(d["synthetic"]);
    }
    if (j.contains("compare")) {
        detail::check_keys(j["compare"], "compare", {"strategies"});
        if (j["compare"].contains("strategies")) {
            const json& s = j["compare"]["strategies"];
            if (!s.is_array()) throw ConfigError("compare.strategies must be an array");
            c.compare.clear();
            for (std::size_t i = 0; i < s.size(); ++i) {
                c.compare.push_back(mask_from_json(s[i], "compare.strategies[" + std::to_string(i) + "]"));
            }
        }
    }
    return c;
}

// Reads and validates a config file. Relative dataset paths resolve against
// the config file's directory.
inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(path.string() + ": cannot open config file");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": invalid JSON: " + e.what());
    }
    RunConfig c;
    try {
        c = config_from_json(j);
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    const auto base = path.parent_path();
    auto resolve = [&](std::string& p) {
        if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base / p).lexically_normal().string();
    };
    resolve(c.data.train);
    resolve(c.data.test);
    c.validate();
    return c;
}

}  // namespace skmae
