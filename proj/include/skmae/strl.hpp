#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "skmae/backbones.hpp"
#include "skmae/data.hpp"
#include "skmae/ops.hpp"
#include "skmae/optim.hpp"
#include "skmae/rng.hpp"
#include "skmae/skeleton.hpp"
#include "skmae/skeletonmae.hpp"

namespace skmae {

inline constexpr std::size_t kPersons = 2;
// Temporal pooling windows are T / s for s in this list.
inline constexpr std::array<std::size_t, 3> kPoolScales{1, 2, 4};

struct SslModelConfig {
    std::size_t frames = 64;      // T
    std::size_t embed_dim = 64;   // D
    std::size_t hidden_dim = 64;  // D_h
    std::size_t encoder_depth = 3;
    std::size_t strl_layers = 3;  // M
    Backbone backbone = Backbone::GIN;
    std::size_t gat_heads = 4;
    std::size_t classes = 4;

    void validate() const {
        if (strl_layers < 1) throw ConfigError("strl_layers must be at least 1");
        if (frames % 4 != 0) throw ConfigError("frames must be divisible by 4 for multi-scale temporal pooling");
        if (classes < 1) throw ConfigError("class count must be positive");
        if (embed_dim == 0 || hidden_dim == 0) throw ConfigError("model widths must be positive");
    }

    MaeModelConfig encoder_config() const { return {embed_dim, hidden_dim, encoder_depth, backbone, gat_heads}; }
};

struct FinetuneConfig {
    double lr = 0.1;
    double momentum = 0.9;
    std::size_t epochs = 110;
    std::size_t warmup_epochs = 5;
    std::vector<std::size_t> decay_epochs{90, 100};
    double decay_factor = 0.1;
    double label_smoothing = 0.1;
    std::size_t batch_size = 128;
    double noise_sigma = 0.01;
    double grad_clip = 0.0;  // max global gradient norm; 0 disables
    std::uint64_t seed = 0;

    void validate() const {
        if (!(lr >= 0.0)) throw ConfigError("finetune lr must be non-negative");
        if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be non-negative");
        if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw ConfigError("label_smoothing must lie in [0, 1)");
        if (batch_size == 0) throw ConfigError("finetune batch_size must be positive");
        for (auto d : decay_epochs) {
            if (d >= epochs) throw ConfigError("decay epoch " + std::to_string(d) + " not below total epochs");
        }
    }
};

// Learning rate of 0-based epoch: linear warmup from 0.01·lr, then flat, times
// decay_factor entering each decay epoch.
inline double finetune_lr(const FinetuneConfig& cfg, std::size_t epoch) {
    double lr = cfg.lr;
    if (epoch < cfg.warmup_epochs) {
        lr = cfg.lr * (0.01 + 0.99 * static_cast<double>(epoch) / static_cast<double>(cfg.warmup_epochs));
    }
    for (auto d : cfg.decay_epochs) {
        if (epoch >= d) lr *= cfg.decay_factor;
    }
    return lr;
}

// Spatial modeling block: h + Repeat(residual_proj(SumPool(G_E(h))); N).
template <typename T>
struct SmBlock {
    EncoderStack<T> encoder;
    Linear<T> residual_proj;  // D_h -> D

    SmBlock(const SslModelConfig& cfg, Rng& rng)
        : encoder(cfg.backbone, cfg.encoder_depth, cfg.embed_dim, cfg.hidden_dim, cfg.gat_heads, Activation::PReLU, rng),
          residual_proj(cfg.hidden_dim, cfg.embed_dim, rng) {}
    SmBlock() = default;

    SmBlock(EncoderStack<T> enc, Linear<T> proj) : encoder(std::move(enc)), residual_proj(std::move(proj)) {}

    void collect(NamedParams<T>& out, const std::string& prefix) const {
        encoder.collect(out, prefix + "encoder.");
        residual_proj.collect(out, prefix + "residual_proj.");
    }
};

// h [..., N, D] -> [..., N, D]
template <typename T>
Tensor<T> sm_forward(const SmBlock<T>& block, const Tensor<T>& h, const GraphContext<T>& graph) {
    if (h.rank() < 2 || h.size(-2) != graph.joints) {
        throw ShapeError("sm_forward expects [..., " + std::to_string(graph.joints) + ", D], got " + shape_str(h.shape()));
    }
    Tensor<T> pooled = sum(block.encoder.forward(h, graph), -2, true);  // [..., 1, D_h]
    return add(h, block.residual_proj(pooled));                         // broadcast over joints
}

template <typename T>
struct StrlLayer {
    std::vector<SmBlock<T>> persons;  // one block per person slot
    Linear<T> weight;                 // W^(l), no bias
};

template <typename T>
struct SslModel {
    SslModelConfig config;
    GraphContext<T> graph;
    Linear<T> embed;
    Tensor<T> position;  // [T, D]
    std::vector<StrlLayer<T>> layers;
    Linear<T> pool_proj;  // 7D -> D
    Linear<T> head;       // D -> C

    SslModel(const SslModelConfig& cfg, const SkeletonLayout& layout, Rng& rng)
        : config(cfg), graph(GraphContext<T>::from_layout(layout)) {
        cfg.validate();
        embed = Linear<T>(2, cfg.embed_dim, rng);
        position = Tensor<T>::zeros({cfg.frames, cfg.embed_dim}, true);
        for (std::size_t l = 0; l < cfg.strl_layers; ++l) {
            StrlLayer<T> layer;
            for (std::size_t p = 0; p < kPersons; ++p) layer.persons.emplace_back(cfg, rng);
            layer.weight = Linear<T>(cfg.embed_dim, cfg.embed_dim, rng, false);
            layers.push_back(std::move(layer));
        }
        std::size_t windows = 0;
        for (auto s : kPoolScales) windows += s;
        pool_proj = Linear<T>(windows * cfg.embed_dim, cfg.embed_dim, rng);
        head = Linear<T>(cfg.embed_dim, cfg.classes, rng);
        // Maps fed by a sum over joints start 1/N smaller so the initial
        // scale matches a mean over joints.
        const T shrink = T(1) / static_cast<T>(graph.joints);
        for (auto& layer : layers) {
            for (auto& block : layer.persons) scale_weight(block.residual_proj, shrink);
        }
        scale_weight(head, shrink);
    }

    static void scale_weight(Linear<T>& map, T factor) {
        for (auto& v : map.weight.mutable_data()) v *= factor;
    }

    NamedParams<T> parameters() const {
        NamedParams<T> out;
        embed.collect(out, "embed.");
        out.emplace_back("position", position);
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const std::string p = "layers." + std::to_string(l) + ".";
            for (std::size_t k = 0; k < layers[l].persons.size(); ++k) {
                layers[l].persons[k].collect(out, p + "sm" + std::to_string(k) + ".");
            }
            layers[l].weight.collect(out, p + "weight.");
        }
        pool_proj.collect(out, "pool_proj.");
        head.collect(out, "head.");
        return out;
    }

    // Loads the embedding and encoder of a pre-trained autoencoder into the
    // embedding and every SM block.
    void load_pretrained(const NamedParams<T>& mae_params) {
        NamedParams<T> dst;
        embed.collect(dst, "embed.");
        copy_params(mae_params, dst, "embed.", "embed.");
        for (auto& layer : layers) {
            for (auto& block : layer.persons) {
                NamedParams<T> enc;
                block.encoder.collect(enc, "encoder.");
                copy_params(mae_params, enc, "encoder.", "encoder.");
            }
        }
    }
};

// coords [B, 2, T, N, 2] for a list of sequences (already prepared to T frames).
template <typename T>
Tensor<T> sequence_batch(const std::vector<const SkeletonSequence*>& seqs, std::size_t frames, double noise_sigma = 0.0,
                         Rng* rng = nullptr) {
    if (seqs.empty()) throw ShapeError("empty sequence batch");
    const std::size_t n = seqs[0]->joints;
    std::vector<T> out;
    out.reserve(seqs.size() * kPersons * frames * n * 2);
    for (const auto* seq : seqs) {
        if (seq->frames != frames) {
            throw ShapeError("sequence has " + std::to_string(seq->frames) + " frames, model expects " +
                             std::to_string(frames));
        }
        for (std::size_t p = 0; p < kPersons; ++p) {
            const bool real = p < seq->real_persons;
            for (std::size_t i = 0; i < frames * n * 2; ++i) {
                double v = p < seq->persons.size() ? seq->persons[p][i] : 0.0;
                if (real && noise_sigma > 0.0 && rng) v += noise_sigma * rng->normal();
                out.push_back(static_cast<T>(v));
            }
        }
    }
    return Tensor<T>::from_data({seqs.size(), kPersons, frames, n, 2}, std::move(out));
}

// Average pooling over windows T, T/2, T/4 (stride = window), concatenated on
// the feature axis: [B, T, N, D] -> [B, N, 7D].
template <typename T>
Tensor<T> multiscale_temporal_pool(const Tensor<T>& h) {
    const std::size_t b = h.shape()[0], t = h.shape()[1], n = h.shape()[2], d = h.shape()[3];
    std::vector<Tensor<T>> slices;
    for (auto s : kPoolScales) {
        Tensor<T> pooled = mean(reshape(h, {b, s, t / s, n, d}), 2);  // [B, s, N, D]
        for (std::size_t w = 0; w < s; ++w) slices.push_back(reshape(index_select(pooled, 1, {w}), {b, n, d}));
    }
    return concat(slices, -1);
}

// Class logits [B, C] for coords [B, 2, T, N, 2].
template <typename T>
Tensor<T> strl_forward(const SslModel<T>& model, const Tensor<T>& coords) {
    const auto& cfg = model.config;
    const std::size_t n = model.graph.joints;
    if (coords.rank() != 5 || coords.shape()[1] != kPersons || coords.shape()[2] != cfg.frames ||
        coords.shape()[3] != n || coords.shape()[4] != 2) {
        throw ShapeError("strl_forward expects [B, 2, " + std::to_string(cfg.frames) + ", " + std::to_string(n) +
                         ", 2], got " + shape_str(coords.shape()));
    }
    const std::size_t b = coords.shape()[0];
    const std::size_t d = cfg.embed_dim;
    Tensor<T> x = add(model.embed(coords), reshape(model.position, {cfg.frames, 1, d}));
    std::vector<Tensor<T>> per_person;
    for (std::size_t p = 0; p < kPersons; ++p) {
        per_person.push_back(reshape(index_select(x, 1, {p}), {b * cfg.frames, n, d}));
    }
    for (const auto& layer : model.layers) {
        Tensor<T> merged = sm_forward(layer.persons[0], per_person[0], model.graph);
        for (std::size_t p = 1; p < kPersons; ++p) merged = add(merged, sm_forward(layer.persons[p], per_person[p], model.graph));
        Tensor<T> next = relu(layer.weight(merged));
        for (auto& h : per_person) h = next;
    }
    Tensor<T> pooled = multiscale_temporal_pool(reshape(per_person[0], {b, cfg.frames, n, d}));
    Tensor<T> joint_sum = sum(model.pool_proj(pooled), 1);  // [B, D]
    return model.head(joint_sum);
}

// Mean cross-entropy with label smoothing eps: targets (1-eps)·onehot + eps/C.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels, double smoothing) {
    if (logits.rank() != 2 || logits.shape()[0] != labels.size()) {
        throw ShapeError("cross_entropy expects [B, C] logits with B labels, got " + shape_str(logits.shape()));
    }
    const std::size_t b = logits.shape()[0], c = logits.shape()[1];
    std::vector<T> target(b * c, static_cast<T>(smoothing / static_cast<double>(c)));
    for (std::size_t i = 0; i < b; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
            throw DataError("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(c) + ")");
        }
        target[i * c + static_cast<std::size_t>(labels[i])] += static_cast<T>(1.0 - smoothing);
    }
    Tensor<T> weighted = mul(log_softmax(logits), Tensor<T>::from_data({b, c}, std::move(target)));
    return mul_scalar(sum(weighted), T(-1) / static_cast<T>(b));
}

// Index of the largest logit per row; ties go to the lowest index.
template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits) {
    const std::size_t b = logits.shape()[0], c = logits.shape()[1];
    std::vector<int> out(b);
    const auto v = logits.data();
    for (std::size_t i = 0; i < b; ++i) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < c; ++k) {
            if (v[i * c + k] > v[i * c + best]) best = k;
        }
        out[i] = static_cast<int>(best);
    }
    return out;
}

struct EvalResult {
    double top1 = 0.0;
    double mean_top1 = 0.0;
    std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

inline EvalResult score_predictions(const std::vector<int>& labels, const std::vector<int>& predictions,
                                    std::size_t classes) {
    if (labels.empty()) throw DataError("cannot evaluate an empty dataset");
    EvalResult r;
    r.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
            throw DataError("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(classes) + ")");
        }
        ++r.confusion[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(predictions[i])];
        correct += labels[i] == predictions[i];
    }
    r.top1 = static_cast<double>(correct) / static_cast<double>(labels.size());
    double recall_sum = 0.0;
    std::size_t present = 0;
    for (std::size_t k = 0; k < classes; ++k) {
        const std::size_t support = std::accumulate(r.confusion[k].begin(), r.confusion[k].end(), std::size_t{0});
        if (support == 0) continue;
        recall_sum += static_cast<double>(r.confusion[k][k]) / static_cast<double>(support);
        ++present;
    }
    r.mean_top1 = recall_sum / static_cast<double>(present);
    return r;
}

template <typename T>
std::vector<int> predict(const SslModel<T>& model, const std::vector<SkeletonSequence>& seqs, std::size_t batch = 64) {
    NoGradGuard no_grad;
    std::vector<int> out;
    for (std::size_t start = 0; start < seqs.size(); start += batch) {
        std::vector<const SkeletonSequence*> chunk;
        for (std::size_t i = start; i < std::min(start + batch, seqs.size()); ++i) chunk.push_back(&seqs[i]);
        auto pred = argmax_rows(strl_forward(model, sequence_batch<T>(chunk, model.config.frames)));
        out.insert(out.end(), pred.begin(), pred.end());
    }
    return out;
}

// Top-1, mean per-class top-1 and confusion matrix on prepared sequences.
template <typename T>
EvalResult evaluate(const SslModel<T>& model, const std::vector<SkeletonSequence>& seqs) {
    if (seqs.empty()) throw DataError("cannot evaluate an empty dataset");
    std::vector<int> labels;
    for (const auto& s : seqs) labels.push_back(s.label);
    return score_predictions(labels, predict(model, seqs), model.config.classes);
}

struct FinetuneEpoch {
    std::size_t epoch = 0;
    double lr = 0.0;
    double loss = 0.0;
    double train_accuracy = 0.0;
};

struct FinetuneReport {
    std::vector<FinetuneEpoch> epochs;
    double wall_seconds = 0.0;
};

// SGD-momentum fine-tuning with the warmup/step schedule and label smoothing.
template <typename T>
FinetuneReport finetune(SslModel<T>& model, const std::vector<SkeletonSequence>& train, const FinetuneConfig& cfg,
                        const std::function<void(const FinetuneEpoch&)>& on_epoch = {}) {
    cfg.validate();
    if (train.empty()) throw DataError("fine-tuning dataset is empty");
    for (const auto& s : train) {
        if (s.label < 0 || static_cast<std::size_t>(s.label) >= model.config.classes) {
            throw DataError("label " + std::to_string(s.label) + " outside [0, " + std::to_string(model.config.classes) + ")");
        }
    }
    const auto t0 = std::chrono::steady_clock::now();
    SgdMomentum<T> opt(model.parameters(), cfg.momentum);
    FinetuneReport report;
    std::vector<std::size_t> order(train.size());
    long step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = finetune_lr(cfg, epoch);
        Rng rng = Rng::derive(cfg.seed, epoch, 2);
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t correct = 0, batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            std::vector<const SkeletonSequence*> chunk;
            std::vector<int> labels;
            for (std::size_t i = start; i < std::min(start + cfg.batch_size, order.size()); ++i) {
                chunk.push_back(&train[order[i]]);
                labels.push_back(train[order[i]].label);
            }
            Tensor<T> logits;
            Tensor<T> loss;
            try {
                logits = strl_forward(model, sequence_batch<T>(chunk, model.config.frames, cfg.noise_sigma, &rng));
                loss = cross_entropy(logits, labels, cfg.label_smoothing);
            } catch (const NumericError& e) {
                throw NumericError("fine-tuning step " + std::to_string(step) + ": " + e.what());
            }
            opt.zero_grad();
            loss.backward();
            opt.step(lr, cfg.grad_clip);
            ++step;
            loss_sum += static_cast<double>(loss.item());
            const auto pred = argmax_rows(logits);
            for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
            ++batches;
        }
        FinetuneEpoch e{epoch, lr, loss_sum / static_cast<double>(batches),
                        static_cast<double>(correct) / static_cast<double>(train.size())};
        report.epochs.push_back(e);
        if (on_epoch) on_epoch(e);
    }
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

}  // namespace skmae
