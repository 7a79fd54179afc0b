#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "skmae/backbones.hpp"
#include "skmae/data.hpp"
#include "skmae/masking.hpp"
#include "skmae/ops.hpp"
#include "skmae/optim.hpp"
#include "skmae/rng.hpp"
#include "skmae/skeleton.hpp"

namespace skmae {

struct MaeModelConfig {
    std::size_t embed_dim = 64;   // D
    std::size_t hidden_dim = 64;  // D_h
    std::size_t encoder_depth = 3;
    Backbone backbone = Backbone::GIN;
    std::size_t gat_heads = 4;
};

struct PretrainConfig {
    double lr = 1.5e-4;
    std::size_t epochs = 50;
    std::size_t batch_size = 1024;
    double beta = 2.0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double noise_sigma = 0.01;
    MaskSpec mask;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(lr >= 0.0)) throw ConfigError("pretrain lr must be non-negative");
        if (!(beta >= 1.0)) throw ConfigError("RCE beta must be >= 1");
        if (batch_size == 0) throw ConfigError("pretrain batch_size must be positive");
        if (noise_sigma < 0.0) throw ConfigError("noise_sigma must be non-negative");
    }
};

// Small random values: a zero token with zero biases reconstructs an exactly
// zero row whenever a joint's whole two-hop neighbourhood is masked.
template <typename T>
Tensor<T> init_mask_token(std::size_t d, Rng& rng) {
    std::vector<T> v(d);
    for (auto& x : v) x = static_cast<T>(0.02 * rng.normal());
    return Tensor<T>::from_data({d}, std::move(v), true);
}

// Asymmetric graph autoencoder: shared 2->D joint embedding, L_D-layer
// encoder, single-layer decoder, learnable mask token.
template <typename T>
struct MaeModel {
    MaeModelConfig config;
    GraphContext<T> graph;
    Linear<T> embed;
    EncoderStack<T> encoder;
    GraphLayer<T> decoder;
    Tensor<T> mask_token;

    MaeModel(const MaeModelConfig& cfg, const SkeletonLayout& layout, Rng& rng)
        : config(cfg),
          graph(GraphContext<T>::from_layout(layout)),
          embed(2, cfg.embed_dim, rng),
          encoder(cfg.backbone, cfg.encoder_depth, cfg.embed_dim, cfg.hidden_dim, cfg.gat_heads, Activation::PReLU, rng),
          decoder(make_graph_layer<T>({cfg.backbone, cfg.hidden_dim, cfg.embed_dim, Activation::None, cfg.gat_heads}, rng)),
          mask_token(init_mask_token<T>(cfg.embed_dim, rng)) {}

    NamedParams<T> parameters() const {
        NamedParams<T> out;
        embed.collect(out, "embed.");
        encoder.collect(out, "encoder.");
        layer_collect(decoder, out, "decoder.");
        out.emplace_back("mask_token", mask_token);
        return out;
    }

    // Decoder output Y for masked input X̄ [..., N, D].
    Tensor<T> reconstruct(const Tensor<T>& masked) const {
        return layer_forward(decoder, encoder.forward(masked, graph), graph);
    }
};

// [frame-major coordinates] -> tensor [B, N, 2] for a list of (sequence, person, frame).
struct FrameSample {
    std::size_t sequence = 0;
    std::size_t person = 0;
    std::size_t frame = 0;
};

template <typename T>
Tensor<T> frame_batch(const std::vector<SkeletonSequence>& seqs, const std::vector<FrameSample>& samples,
                      double noise_sigma = 0.0, Rng* rng = nullptr) {
    if (samples.empty()) throw ShapeError("empty frame batch");
    const std::size_t n = seqs[samples[0].sequence].joints;
    std::vector<T> out;
    out.reserve(samples.size() * n * 2);
    for (const auto& s : samples) {
        const auto& seq = seqs[s.sequence];
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t c = 0; c < 2; ++c) {
                double v = seq.at(s.person, s.frame, j, c);
                if (noise_sigma > 0.0 && rng) v += noise_sigma * rng->normal();
                out.push_back(static_cast<T>(v));
            }
        }
    }
    return Tensor<T>::from_data({samples.size(), n, 2}, std::move(out));
}

// Joint features S [N, T, D] of person `person` under the model's embedding.
template <typename T>
Tensor<T> embed_sequence(const MaeModel<T>& model, const SkeletonSequence& seq, const SkeletonLayout& layout,
                         std::size_t person = 0) {
    validate_sequence(seq, layout);
    if (person >= seq.persons.size()) throw ValidationError("person index out of range");
    std::vector<T> coords;
    coords.reserve(seq.joints * seq.frames * 2);
    for (std::size_t j = 0; j < seq.joints; ++j) {
        for (std::size_t t = 0; t < seq.frames; ++t) {
            coords.push_back(static_cast<T>(seq.at(person, t, j, 0)));
            coords.push_back(static_cast<T>(seq.at(person, t, j, 1)));
        }
    }
    return model.embed(Tensor<T>::from_data({seq.joints, seq.frames, 2}, std::move(coords)));
}

inline constexpr double kNormGuard = 1e-12;

// Re-weighted cosine error over per-sample masks for x, y of shape [B, N, D]:
//   (1/B) Σ_b Σ_{i ∈ mask_b} ((1 - cos(x_bi, y_bi)) / |mask_b|)^beta.
// Targets x are treated as constants.
template <typename T>
Tensor<T> rce_loss(const Tensor<T>& x, const Tensor<T>& y, const std::vector<JointSet>& masks, double beta) {
    if (!(beta >= 1.0)) throw ConfigError("RCE beta must be >= 1, got " + std::to_string(beta));
    if (x.shape() != y.shape() || x.rank() != 3) {
        throw ShapeError("rce_loss expects matching [B, N, D] tensors, got " + shape_str(x.shape()) + " and " +
                         shape_str(y.shape()));
    }
    const std::size_t b = x.shape()[0], n = x.shape()[1], d = x.shape()[2];
    if (masks.size() != b) throw ShapeError("rce_loss needs one mask per sample");
    std::vector<std::size_t> rows;
    std::vector<T> weight;
    for (std::size_t s = 0; s < b; ++s) {
        if (masks[s].empty()) throw MaskError("rce_loss: empty mask for sample " + std::to_string(s));
        for (auto j : masks[s]) {
            if (j >= n) throw ShapeError("mask joint " + std::to_string(j) + " out of range");
            rows.push_back(s * n + j);
            weight.push_back(T(1) / static_cast<T>(masks[s].size()));
        }
    }
    const auto xv = x.data();
    const auto yv = y.data();
    for (auto r : rows) {
        bool x_zero = true, y_zero = true;
        for (std::size_t c = 0; c < d; ++c) {
            x_zero = x_zero && xv[r * d + c] == T(0);
            y_zero = y_zero && yv[r * d + c] == T(0);
        }
        if (x_zero || y_zero) {
            throw NumericError("rce_loss: zero-norm " + std::string(x_zero ? "target" : "reconstruction") +
                               " row (sample " + std::to_string(r / n) + ", joint " + std::to_string(r % n) +
                               "), cosine undefined");
        }
    }
    const std::size_t r = rows.size();
    Tensor<T> xm = index_select(reshape(x.detach(), {b * n, d}), 0, rows);
    Tensor<T> ym = index_select(reshape(y, {b * n, d}), 0, rows);
    Tensor<T> dot = sum(mul(xm, ym), -1);
    Tensor<T> denom = mul(add_scalar(l2norm(xm), static_cast<T>(kNormGuard)), add_scalar(l2norm(ym), static_cast<T>(kNormGuard)));
    Tensor<T> gap = relu(add_scalar(neg(div(dot, denom)), T(1)));
    Tensor<T> scaled = mul(gap, Tensor<T>::from_data({r}, std::move(weight)));
    Tensor<T> total = sum(pow_scalar(scaled, static_cast<T>(beta)));
    return b == 1 ? total : mul_scalar(total, T(1) / static_cast<T>(b));
}

// Single-graph form: x, y [N, D].
template <typename T>
Tensor<T> rce_loss(const Tensor<T>& x, const Tensor<T>& y, const JointSet& mask, double beta) {
    if (x.rank() != 2) throw ShapeError("rce_loss expects [N, D], got " + shape_str(x.shape()));
    const Shape s{1, x.shape()[0], x.shape()[1]};
    return rce_loss(reshape(x, s), reshape(y, s), std::vector<JointSet>{mask}, beta);
}

// Forward pass of one pre-training batch: embed, mask, encode, decode, RCE.
template <typename T>
Tensor<T> pretrain_loss(const MaeModel<T>& model, const Tensor<T>& coords, const std::vector<JointSet>& masks,
                        double beta) {
    Tensor<T> features = model.embed(coords);
    Tensor<T> masked = apply_masks(features, masks, model.mask_token);
    return rce_loss(features.detach(), model.reconstruct(masked), masks, beta);
}

struct PretrainReport {
    std::vector<double> epoch_losses;
    double wall_seconds = 0.0;
    std::size_t batch_size = 0;
    std::size_t samples = 0;
};

// Optimizer state plus epoch counter; owns nothing of the model but its parameter handles.
template <typename T>
class MaeTrainer {
   public:
    MaeTrainer(MaeModel<T>& model, const PretrainConfig& cfg)
        : model_(model), cfg_(cfg), opt_(model.parameters(), {cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps}) {
        cfg_.validate();
    }

    // One Adam update; returns the pre-update loss.
    double step(const Tensor<T>& coords, const std::vector<JointSet>& masks) {
        Tensor<T> loss;
        try {
            loss = pretrain_loss(model_, coords, masks, cfg_.beta);
        } catch (const NumericError& e) {
            throw NumericError("pre-training step " + std::to_string(steps_) + ": " + e.what());
        }
        const double value = static_cast<double>(loss.item());
        if (!std::isfinite(value)) {
            throw NumericError("pre-training step " + std::to_string(steps_) + ": non-finite loss");
        }
        opt_.zero_grad();
        loss.backward();
        opt_.step();
        ++steps_;
        return value;
    }

    // Every (sequence, real person, frame) of the dataset.
    static std::vector<FrameSample> frame_samples(const std::vector<SkeletonSequence>& seqs) {
        std::vector<FrameSample> out;
        for (std::size_t s = 0; s < seqs.size(); ++s) {
            for (std::size_t p = 0; p < seqs[s].real_persons; ++p) {
                for (std::size_t t = 0; t < seqs[s].frames; ++t) out.push_back({s, p, t});
            }
        }
        return out;
    }

    // The configured batch size, or 256 when it exceeds the sample count.
    std::size_t effective_batch(std::size_t samples) const {
        return cfg_.batch_size > samples ? std::min<std::size_t>(256, samples) : cfg_.batch_size;
    }

    // Runs epoch `epochs_done()` and returns its mean batch loss.
    double run_epoch(const std::vector<SkeletonSequence>& seqs, const SkeletonLayout& layout) {
        auto samples = frame_samples(seqs);
        if (samples.empty()) throw DataError("pre-training dataset is empty");
        Rng rng = Rng::derive(cfg_.seed, epochs_done_, 1);
        rng.shuffle(samples);
        const std::size_t bs = effective_batch(samples.size());
        double total = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < samples.size(); start += bs) {
            const std::vector<FrameSample> batch(samples.begin() + static_cast<std::ptrdiff_t>(start),
                                                 samples.begin() + static_cast<std::ptrdiff_t>(std::min(start + bs, samples.size())));
            std::vector<JointSet> masks;
            for (std::size_t i = 0; i < batch.size(); ++i) masks.push_back(resolve_mask(cfg_.mask, layout, rng));
            Tensor<T> coords = frame_batch<T>(seqs, batch, cfg_.noise_sigma, &rng);
            total += step(coords, masks);
            ++batches;
        }
        ++epochs_done_;
        return total / static_cast<double>(batches);
    }

    std::size_t epochs_done() const { return epochs_done_; }
    void set_epochs_done(std::size_t e) { epochs_done_ = e; }
    long steps() const { return steps_; }
    void set_steps(long s) {
        steps_ = s;
        opt_.set_step_count(s);
    }
    Adam<T>& optimizer() { return opt_; }
    const PretrainConfig& config() const { return cfg_; }

   private:
    MaeModel<T>& model_;
    PretrainConfig cfg_;
    Adam<T> opt_;
    std::size_t epochs_done_ = 0;
    long steps_ = 0;
};

// Runs the remaining epochs of the trainer's schedule. on_epoch(epoch, loss)
// is called after every epoch (checkpointing hook).
template <typename T>
PretrainReport pretrain(MaeTrainer<T>& trainer, const Dataset& dataset, const SkeletonLayout& layout,
                        const std::function<void(std::size_t, double)>& on_epoch = {}) {
    if (dataset.empty()) throw DataError("pre-training dataset is empty");
    const auto t0 = std::chrono::steady_clock::now();
    PretrainReport report;
    report.samples = MaeTrainer<T>::frame_samples(dataset.sequences()).size();
    report.batch_size = trainer.effective_batch(report.samples);
    while (trainer.epochs_done() < trainer.config().epochs) {
        const std::size_t epoch = trainer.epochs_done();
        const double loss = trainer.run_epoch(dataset.sequences(), layout);
        report.epoch_losses.push_back(loss);
        if (on_epoch) on_epoch(epoch, loss);
    }
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

}  // namespace skmae
