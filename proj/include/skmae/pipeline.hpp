#pragma once

// End-to-end runs shared by the command-line tool and the experiment suite:
// data preparation, pre-training, fine-tuning, evaluation, and the export
// commands, all in 32-bit precision.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "skmae/checkpoint.hpp"
#include "skmae/config.hpp"
#include "skmae/data.hpp"
#include "skmae/masking.hpp"
#include "skmae/skeletonmae.hpp"
#include "skmae/strl.hpp"

namespace skmae {

// Stream tags for Rng::derive(seed, 0, tag) model initialisation.
inline constexpr std::uint64_t kMaeInitStream = 3;
inline constexpr std::uint64_t kSslInitStream = 4;
inline constexpr std::uint64_t kReconstructStream = 5;

struct PreparedData {
    std::vector<SkeletonSequence> train;
    std::vector<SkeletonSequence> test;
    std::size_t classes = 0;
};

inline std::vector<SkeletonSequence> prepare_all(const std::vector<SkeletonSequence>& seqs, const SkeletonLayout& layout,
                                                 std::size_t frames) {
    std::vector<SkeletonSequence> out;
    out.reserve(seqs.size());
    for (const auto& s : seqs) {
        SkeletonSequence p = prepare_sequence(s, layout, frames);
        pad_persons(p);
        out.push_back(std::move(p));
    }
    return out;
}

// Loads a JSONL file and resamples/normalizes every sequence to `frames`.
inline std::vector<SkeletonSequence> load_prepared(const std::filesystem::path& path, const SkeletonLayout& layout,
                                                   std::size_t frames) {
    return prepare_all(load_jsonl(path, layout).sequences(), layout, frames);
}

inline PreparedData load_data(const RunConfig& cfg, const SkeletonLayout& layout) {
    PreparedData d;
    std::size_t inferred = 0;
    auto track = [&](const std::vector<SkeletonSequence>& v) {
        for (const auto& s : v) inferred = std::max(inferred, static_cast<std::size_t>(s.label) + 1);
    };
    if (!cfg.data.train.empty()) {
        d.train = load_prepared(cfg.data.train, layout, cfg.model.frames);
        if (!cfg.data.test.empty()) d.test = load_prepared(cfg.data.test, layout, cfg.model.frames);
    } else {
        const SyntheticSplit split = generate_synthetic(*cfg.data.synthetic);
        d.train = prepare_all(split.train, layout, cfg.model.frames);
        d.test = prepare_all(split.test, layout, cfg.model.frames);
    }
    track(d.train);
    track(d.test);
    d.classes = cfg.model.classes ? cfg.model.classes : inferred;
    if (inferred > d.classes) {
        throw DataError("label " + std::to_string(inferred - 1) + " outside [0, " + std::to_string(d.classes) + ")");
    }
    return d;
}

inline void ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError(dir.string(), "cannot create directory: " + ec.message());
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(path.string(), "cannot open for writing");
    out << text;
    if (!out) throw IoError(path.string(), "write failed");
}

// ---------------------------------------------------------------------------
// Pre-training

inline Checkpoint mae_checkpoint(const RunConfig& cfg, const MaeModel<float>& model, MaeTrainer<float>& trainer,
                                 const std::vector<double>& losses) {
    Checkpoint ck;
    ck.kind = "mae";
    ck.config = config_to_json(cfg);
    ck.state = {{"epochs_done", trainer.epochs_done()}, {"steps", trainer.steps()}, {"epoch_losses", losses}};
    const auto params = model.parameters();
    ck.add_all(params);
    auto& m = trainer.optimizer().first_moments();
    auto& v = trainer.optimizer().second_moments();
    for (std::size_t k = 0; k < params.size(); ++k) {
        const Shape& shape = params[k].second.shape();
        ck.tensors.push_back({"optim.m." + params[k].first, shape, {m[k].begin(), m[k].end()}});
        ck.tensors.push_back({"optim.v." + params[k].first, shape, {v[k].begin(), v[k].end()}});
    }
    return ck;
}

inline void require_kind(const Checkpoint& ck, const std::string& kind, const std::string& origin) {
    if (ck.kind != kind) {
        throw ConfigError(origin + ": expected a '" + kind + "' checkpoint, found '" + ck.kind + "'");
    }
}

inline RunConfig checkpoint_config(const Checkpoint& ck) {
    try {
        return config_from_json(ck.config);
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("checkpoint config snapshot: ") + e.what());
    }
}

// Model with the architecture recorded in the checkpoint and its stored weights.
inline std::unique_ptr<MaeModel<float>> mae_from_checkpoint(const Checkpoint& ck, const SkeletonLayout& layout) {
    require_kind(ck, "mae", "model");
    const RunConfig cfg = checkpoint_config(ck);
    Rng rng = Rng::derive(cfg.seed, 0, kMaeInitStream);
    auto model = std::make_unique<MaeModel<float>>(cfg.mae_config(), layout, rng);
    auto params = model->parameters();
    ck.restore(params);
    return model;
}

// Restores weights, Adam moments, counters and the loss history.
inline std::vector<double> resume_from(const Checkpoint& ck, MaeModel<float>& model, MaeTrainer<float>& trainer) {
    require_kind(ck, "mae", "resume");
    auto params = model.parameters();
    ck.restore(params);
    auto& m = trainer.optimizer().first_moments();
    auto& v = trainer.optimizer().second_moments();
    for (std::size_t k = 0; k < params.size(); ++k) {
        const auto mk = ck.values_of("optim.m." + params[k].first);
        const auto vk = ck.values_of("optim.v." + params[k].first);
        if (mk.size() != m[k].size() || vk.size() != v[k].size()) {
            throw CheckpointMismatch("optim." + params[k].first, "optimizer state size mismatch");
        }
        std::copy(mk.begin(), mk.end(), m[k].begin());
        std::copy(vk.begin(), vk.end(), v[k].begin());
    }
    try {
        trainer.set_epochs_done(ck.state.at("epochs_done").get<std::size_t>());
        trainer.set_steps(ck.state.at("steps").get<long>());
        return ck.state.at("epoch_losses").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint state is malformed: ") + e.what());
    }
}

struct PretrainOutcome {
    std::unique_ptr<MaeModel<float>> model;
    std::vector<double> epoch_losses;  // full history, including epochs restored from a checkpoint
    PretrainReport report;             // this run only
    std::optional<Checkpoint> checkpoint;
};

struct PretrainOptions {
    std::optional<std::filesystem::path> out_dir;  // writes checkpoint.skmae and pretrain_report.json
    std::optional<std::filesystem::path> resume;
    std::ostream* log = nullptr;
};

inline nlohmann::json pretrain_report_json(const RunConfig& cfg, const PretrainOutcome& o, const std::string& checkpoint) {
    return {{"epochs", o.epoch_losses.size()},
            {"epoch_losses", o.epoch_losses},
            {"batch_size", o.report.batch_size},
            {"samples", o.report.samples},
            {"mask", describe(cfg.mask)},
            {"checkpoint", checkpoint}};
}

inline PretrainOutcome run_pretrain(const RunConfig& cfg, const std::vector<SkeletonSequence>& train,
                                    const SkeletonLayout& layout, const PretrainOptions& opt = {}) {
    PretrainOutcome out;
    Rng rng = Rng::derive(cfg.seed, 0, kMaeInitStream);
    out.model = std::make_unique<MaeModel<float>>(cfg.mae_config(), layout, rng);
    MaeTrainer<float> trainer(*out.model, cfg.pretrain_config());
    if (opt.resume) {
        out.epoch_losses = resume_from(load_checkpoint(*opt.resume), *out.model, trainer);
        if (out.epoch_losses.size() != trainer.epochs_done()) throw DataError("checkpoint loss history is inconsistent");
    }
    std::filesystem::path ck_path;
    if (opt.out_dir) {
        ensure_dir(*opt.out_dir);
        ck_path = *opt.out_dir / "checkpoint.skmae";
    }
    const Dataset ds({}, train);
    out.report = pretrain(trainer, ds, layout, [&](std::size_t epoch, double loss) {
        out.epoch_losses.push_back(loss);
        if (opt.log) *opt.log << "pretrain epoch " << epoch << " loss " << loss << "\n";
        if (opt.out_dir && cfg.checkpoint_every && (epoch + 1) % cfg.checkpoint_every == 0) {
            save_checkpoint(mae_checkpoint(cfg, *out.model, trainer, out.epoch_losses), ck_path);
        }
    });
    out.checkpoint = mae_checkpoint(cfg, *out.model, trainer, out.epoch_losses);
    if (opt.out_dir) {
        save_checkpoint(*out.checkpoint, ck_path);
        write_text(*opt.out_dir / "pretrain_report.json", pretrain_report_json(cfg, out, ck_path.string()).dump(2) + "\n");
    }
    if (opt.log) *opt.log << "pretrain wall time " << std::fixed << std::setprecision(2) << out.report.wall_seconds << " s\n";
    return out;
}

// ---------------------------------------------------------------------------
// Fine-tuning and evaluation

inline NamedParams<float> params_from_checkpoint(const Checkpoint& ck) {
    NamedParams<float> out;
    for (const auto& t : ck.tensors) out.emplace_back(t.name, Tensor<float>::from_data(t.shape, t.values));
    return out;
}

inline Checkpoint ssl_checkpoint(const RunConfig& cfg, const SslModel<float>& model) {
    Checkpoint ck;
    ck.kind = "ssl";
    RunConfig snapshot = cfg;
    snapshot.model.classes = model.config.classes;
    ck.config = config_to_json(snapshot);
    ck.add_all(model.parameters());
    return ck;
}

inline std::unique_ptr<SslModel<float>> ssl_from_checkpoint(const Checkpoint& ck, const SkeletonLayout& layout) {
    require_kind(ck, "ssl", "model");
    const RunConfig cfg = checkpoint_config(ck);
    Rng rng = Rng::derive(cfg.seed, 0, kSslInitStream);
    auto model = std::make_unique<SslModel<float>>(cfg.ssl_config(cfg.model.classes), layout, rng);
    auto params = model->parameters();
    ck.restore(params);
    return model;
}

inline nlohmann::json eval_json(const EvalResult& r) {
    return {{"top1", r.top1}, {"mean_top1", r.mean_top1}, {"confusion", r.confusion}};
}

struct FinetuneOutcome {
    std::unique_ptr<SslModel<float>> model;
    FinetuneReport report;
    EvalResult train_eval;
    std::optional<EvalResult> test_eval;
};

struct FinetuneOptions {
    const NamedParams<float>* pretrained = nullptr;  // MAE parameters to load into every SM encoder
    std::string pretrained_label = "none";
    std::optional<std::filesystem::path> out_dir;  // writes model.skmae and finetune_report.json
    std::ostream* log = nullptr;
};

inline nlohmann::json finetune_report_json(const FinetuneOutcome& o, const std::string& pretrained) {
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : o.report.epochs) {
        epochs.push_back({{"epoch", e.epoch}, {"lr", e.lr}, {"loss", e.loss}, {"train_top1", e.train_accuracy}});
    }
    nlohmann::json j{{"pretrained", pretrained},
                     {"classes", o.model->config.classes},
                     {"epochs", epochs},
                     {"train", eval_json(o.train_eval)}};
    j["test"] = o.test_eval ? eval_json(*o.test_eval) : nlohmann::json(nullptr);
    return j;
}

inline FinetuneOutcome run_finetune(const RunConfig& cfg, const PreparedData& data, const SkeletonLayout& layout,
                                    const FinetuneOptions& opt = {}) {
    FinetuneOutcome out;
    Rng rng = Rng::derive(cfg.seed, 0, kSslInitStream);
    out.model = std::make_unique<SslModel<float>>(cfg.ssl_config(data.classes), layout, rng);
    if (opt.pretrained) out.model->load_pretrained(*opt.pretrained);
    out.report = finetune(*out.model, data.train, cfg.finetune_config(), [&](const FinetuneEpoch& e) {
        if (opt.log) {
            *opt.log << "finetune epoch " << e.epoch << " lr " << e.lr << " loss " << e.loss << " train_top1 "
                     << e.train_accuracy << "\n";
        }
    });
    out.train_eval = evaluate(*out.model, data.train);
    if (!data.test.empty()) out.test_eval = evaluate(*out.model, data.test);
    if (opt.out_dir) {
        ensure_dir(*opt.out_dir);
        save_checkpoint(ssl_checkpoint(cfg, *out.model), *opt.out_dir / "model.skmae");
        write_text(*opt.out_dir / "finetune_report.json", finetune_report_json(out, opt.pretrained_label).dump(2) + "\n");
    }
    if (opt.log) *opt.log << "finetune wall time " << std::fixed << std::setprecision(2) << out.report.wall_seconds << " s\n";
    return out;
}

// ---------------------------------------------------------------------------
// Reconstruction export

// Least-squares inverse of the joint embedding e = s·W + b (W is [2, D]):
// s = (e - b)·Wᵀ(W·Wᵀ)⁻¹.
class EmbeddingInverse {
   public:
    explicit EmbeddingInverse(const Linear<float>& embed) : d_(embed.out_dim()) {
        if (embed.in_dim() != 2) throw ShapeError("embedding must map 2 coordinates");
        const auto w = embed.weight.data();
        w_.assign(w.begin(), w.end());
        bias_.assign(d_, 0.0);
        if (embed.bias.defined()) {
            for (std::size_t k = 0; k < d_; ++k) bias_[k] = embed.bias.data()[k];
        }
        double g00 = 0, g01 = 0, g11 = 0;
        for (std::size_t k = 0; k < d_; ++k) {
            g00 += static_cast<double>(w_[k]) * w_[k];
            g01 += static_cast<double>(w_[k]) * w_[d_ + k];
            g11 += static_cast<double>(w_[d_ + k]) * w_[d_ + k];
        }
        const double det = g00 * g11 - g01 * g01;
        const double scale = std::max(g00, g11);
        if (!(scale > 0.0) || det <= 1e-10 * scale * scale) {
            throw NumericError("joint embedding has rank < 2; coordinates cannot be recovered");
        }
        inv_ = {g11 / det, -g01 / det, -g01 / det, g00 / det};
    }

    std::array<double, 2> operator()(const float* e) const {
        double p0 = 0, p1 = 0;  // (e - b)·Wᵀ
        for (std::size_t k = 0; k < d_; ++k) {
            const double r = static_cast<double>(e[k]) - bias_[k];
            p0 += r * w_[k];
            p1 += r * w_[d_ + k];
        }
        return {p0 * inv_[0] + p1 * inv_[2], p0 * inv_[1] + p1 * inv_[3]};
    }

   private:
    std::size_t d_;
    std::vector<float> w_;
    std::vector<double> bias_;
    std::array<double, 4> inv_{};
};

inline double row_cosine(const float* a, const float* b, std::size_t d) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t k = 0; k < d; ++k) {
        dot += static_cast<double>(a[k]) * b[k];
        na += static_cast<double>(a[k]) * a[k];
        nb += static_cast<double>(b[k]) * b[k];
    }
    const double c = dot / ((std::sqrt(na) + kNormGuard) * (std::sqrt(nb) + kNormGuard));
    return std::clamp(c, -1.0, 1.0);
}

struct ReconstructOptions {
    MaskSpec mask;
    std::uint64_t seed = 0;
    std::size_t limit = 0;  // sequences to export; 0 = all
};

// One JSON object per sequence: per frame the input joints, the masked joint
// indices, the reconstruction mapped back to coordinates, and the cosine
// similarity of each masked joint's reconstruction to its embedded input.
inline std::vector<nlohmann::json> reconstruct_sequences(const MaeModel<float>& model,
                                                         const std::vector<SkeletonSequence>& seqs,
                                                         const SkeletonLayout& layout, const ReconstructOptions& opt) {
    validate_mask_spec(opt.mask, layout);
    NoGradGuard no_grad;
    const EmbeddingInverse inverse(model.embed);
    const std::size_t n = layout.joint_count, d = model.config.embed_dim;
    std::vector<nlohmann::json> out;
    const std::size_t count = opt.limit ? std::min(opt.limit, seqs.size()) : seqs.size();
    for (std::size_t s = 0; s < count; ++s) {
        const auto& seq = seqs[s];
        Rng rng = Rng::derive(opt.seed, s, kReconstructStream);
        std::vector<FrameSample> samples;
        std::vector<JointSet> masks;
        for (std::size_t t = 0; t < seq.frames; ++t) {
            samples.push_back({s, 0, t});
            masks.push_back(resolve_mask(opt.mask, layout, rng));
        }
        const Tensor<float> coords = frame_batch<float>(seqs, samples);
        const Tensor<float> features = model.embed(coords);
        const Tensor<float> recon = model.reconstruct(apply_masks(features, masks, model.mask_token));
        const auto fx = features.data();
        const auto fy = recon.data();
        nlohmann::json frames = nlohmann::json::array();
        for (std::size_t t = 0; t < seq.frames; ++t) {
            nlohmann::json input = nlohmann::json::array(), rec = nlohmann::json::array();
            for (std::size_t j = 0; j < n; ++j) {
                input.push_back({seq.at(0, t, j, 0), seq.at(0, t, j, 1)});
                const auto xy = inverse(fy.data() + (t * n + j) * d);
                rec.push_back({xy[0], xy[1]});
            }
            nlohmann::json cosine = nlohmann::json::object();
            for (auto j : masks[t]) {
                const std::size_t row = (t * n + j) * d;
                cosine[std::to_string(j)] = row_cosine(fx.data() + row, fy.data() + row, d);
            }
            frames.push_back({{"frame", t},
                              {"input", input},
                              {"masked", std::vector<std::size_t>(masks[t].begin(), masks[t].end())},
                              {"reconstruction", rec},
                              {"cosine", cosine}});
        }
        out.push_back({{"sequence", s}, {"label", seq.label}, {"mask", describe(opt.mask)}, {"frames", frames}});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Embedding export

// Mean over frames and joints of the unmasked encoder output for person 0: a
// D_h-vector per sequence.
inline std::vector<float> pooled_encoding(const MaeModel<float>& model, const SkeletonSequence& seq,
                                          const SkeletonLayout& layout) {
    NoGradGuard no_grad;
    const Tensor<float> s = embed_sequence(model, seq, layout, 0);  // [N, T, D]
    std::vector<Tensor<float>> per_frame;
    for (std::size_t t = 0; t < seq.frames; ++t) {
        per_frame.push_back(reshape(index_select(s, 1, {t}), {1, seq.joints, model.config.embed_dim}));
    }
    const Tensor<float> h = model.encoder.forward(concat(per_frame, 0), model.graph);  // [T, N, D_h]
    const Tensor<float> pooled = mean(reshape(h, {seq.frames * seq.joints, model.encoder.out_dim()}), 0);
    return {pooled.data().begin(), pooled.data().end()};
}

// ---------------------------------------------------------------------------
// Masking-strategy comparison

struct CompareRow {
    std::string strategy;
    std::uint64_t seed = 0;
    std::optional<std::size_t> masked_joints;  // fixed cardinality, absent for sampled regions
    double top1 = 0.0;
};

inline std::optional<std::size_t> fixed_mask_size(const MaskSpec& spec, const SkeletonLayout& layout) {
    if (const auto* b = std::get_if<BodyPartsMask>(&spec.strategy)) {
        std::size_t n = 0;
        for (auto r : b->regions) n += layout.regions[r].size();
        return n;
    }
    if (const auto* r = std::get_if<RandomRatioMask>(&spec.strategy)) return masked_joint_count(r->ratio, layout.joint_count);
    return std::nullopt;
}

// Pre-train, fine-tune from the pre-trained encoder, and score on the test split.
inline double pretrain_finetune_score(const RunConfig& cfg, const PreparedData& data, const SkeletonLayout& layout,
                                      std::ostream* log = nullptr) {
    if (data.test.empty()) throw DataError("masking comparison needs a test split");
    PretrainOptions popt;
    popt.log = log;
    const PretrainOutcome pre = run_pretrain(cfg, data.train, layout, popt);
    const NamedParams<float> params = pre.model->parameters();
    FinetuneOptions fopt;
    fopt.pretrained = &params;
    fopt.log = log;
    return run_finetune(cfg, data, layout, fopt).test_eval->top1;
}

inline std::vector<CompareRow> compare_masking(const RunConfig& cfg, std::size_t seeds, const SkeletonLayout& layout,
                                               std::ostream* log = nullptr) {
    if (seeds == 0) throw ConfigError("--seeds must be positive");
    std::vector<CompareRow> rows;
    for (const auto& strategy : cfg.compare) {
        for (std::size_t k = 0; k < seeds; ++k) {
            RunConfig run = cfg;
            run.seed = cfg.seed + k;
            run.mask = strategy;
            if (run.data.synthetic) run.data.synthetic->seed = cfg.data.synthetic->seed;
            const PreparedData data = load_data(run, layout);
            CompareRow row{describe(strategy), run.seed, fixed_mask_size(strategy, layout), 0.0};
            row.top1 = pretrain_finetune_score(run, data, layout, nullptr);
            if (log) *log << row.strategy << " seed " << row.seed << " top1 " << row.top1 << "\n";
            rows.push_back(row);
        }
    }
    return rows;
}

inline std::string compare_csv(const std::vector<CompareRow>& rows) {
    std::ostringstream out;
    out << "strategy,seed,masked_joints,top1\n";
    for (const auto& r : rows) {
        out << r.strategy << ',' << r.seed << ',';
        if (r.masked_joints) out << *r.masked_joints;
        out << ',' << std::setprecision(6) << std::fixed << r.top1 << std::defaultfloat << '\n';
    }
    return out.str();
}

inline nlohmann::json compare_summary(const std::vector<CompareRow>& rows) {
    nlohmann::json out = nlohmann::json::array();
    std::vector<std::string> order;
    for (const auto& r : rows) {
        if (std::find(order.begin(), order.end(), r.strategy) == order.end()) order.push_back(r.strategy);
    }
    for (const auto& name : order) {
        double sum = 0.0;
        std::size_t n = 0;
        nlohmann::json masked = nullptr;
        for (const auto& r : rows) {
            if (r.strategy != name) continue;
            sum += r.top1;
            ++n;
            if (r.masked_joints) masked = *r.masked_joints;
        }
        out.push_back({{"strategy", name}, {"runs", n}, {"masked_joints", masked}, {"mean_top1", sum / static_cast<double>(n)}});
    }
    return {{"strategies", out}};
}

}  // namespace skmae
