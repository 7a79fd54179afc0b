#pragma once

#include <cmath>
#include <string>
#include <variant>
#include <vector>

#include "skmae/errors.hpp"
#include "skmae/ops.hpp"
#include "skmae/optim.hpp"
#include "skmae/rng.hpp"
#include "skmae/skeleton.hpp"

namespace skmae {

enum class Backbone { GIN, GCN, GAT };
enum class Activation { PReLU, ReLU, None };

inline std::string to_string(Backbone b) {
    switch (b) {
        case Backbone::GIN: return "gin";
        case Backbone::GCN: return "gcn";
        case Backbone::GAT: return "gat";
    }
    return "?";
}

inline Backbone parse_backbone(const std::string& s) {
    if (s == "gin") return Backbone::GIN;
    if (s == "gcn") return Backbone::GCN;
    if (s == "gat") return Backbone::GAT;
    throw ConfigError("unknown backbone '" + s + "' (expected gin, gcn or gat)");
}

struct GraphLayerConfig {
    Backbone kind = Backbone::GIN;
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    Activation activation = Activation::PReLU;
    std::size_t gat_heads = 1;

    void validate() const {
        if (in_dim == 0 || out_dim == 0) throw ConfigError("graph layer dims must be positive");
        if (kind == Backbone::GAT && (gat_heads == 0 || out_dim % gat_heads != 0)) {
            throw ConfigError("gat_heads " + std::to_string(gat_heads) + " must divide out_dim " +
                              std::to_string(out_dim));
        }
    }
};

inline constexpr double kPReluInit = 0.25;

// Uniform in ±sqrt(6 / (fan_in + fan_out)).
template <typename T>
Tensor<T> xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<T> w(fan_in * fan_out);
    for (auto& v : w) v = static_cast<T>(rng.uniform(-bound, bound));
    return Tensor<T>::from_data({fan_in, fan_out}, std::move(w), true);
}

// y = x W (+ b) over the last axis; W is [in, out].
template <typename T>
struct Linear {
    Tensor<T> weight;
    Tensor<T> bias;  // undefined when the map has no bias

    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true) : weight(xavier_uniform<T>(in, out, rng)) {
        if (with_bias) bias = Tensor<T>::zeros({out}, true);
    }

    std::size_t in_dim() const { return weight.shape()[0]; }
    std::size_t out_dim() const { return weight.shape()[1]; }

    Tensor<T> operator()(const Tensor<T>& x) const {
        if (x.shape().back() != in_dim()) {
            throw ShapeError("linear map expects last axis " + std::to_string(in_dim()) + ", got shape " +
                             shape_str(x.shape()));
        }
        Tensor<T> y;
        if (x.rank() == 1) {
            y = reshape(matmul(reshape(x, {1, in_dim()}), weight), {out_dim()});
        } else {
            y = matmul(x, weight);
        }
        return bias.defined() ? add(y, bias) : y;
    }

    void collect(NamedParams<T>& out, const std::string& prefix) const {
        out.emplace_back(prefix + "weight", weight);
        if (bias.defined()) out.emplace_back(prefix + "bias", bias);
    }
};

template <typename T>
Tensor<T> activate(const Tensor<T>& x, Activation act, const Tensor<T>& slope) {
    switch (act) {
        case Activation::PReLU: return prelu(x, slope);
        case Activation::ReLU: return relu(x);
        case Activation::None: return x;
    }
    return x;
}

// h'_v = MLP((1 + eps) h_v + sum_{u in N(v)} h_u) with MLP = lin2 ∘ PReLU ∘ lin1,
// aggregated over the raw adjacency.
template <typename T>
struct GinLayer {
    GraphLayerConfig config;
    Tensor<T> epsilon;
    Linear<T> lin1, lin2;
    Tensor<T> mlp_slope;
    Tensor<T> out_slope;  // used when activation is PReLU

    GinLayer(const GraphLayerConfig& cfg, Rng& rng)
        : config(cfg),
          epsilon(Tensor<T>::zeros({1}, true)),
          lin1(cfg.in_dim, cfg.out_dim, rng),
          lin2(cfg.out_dim, cfg.out_dim, rng),
          mlp_slope(Tensor<T>::full({1}, static_cast<T>(kPReluInit), true)),
          out_slope(Tensor<T>::full({1}, static_cast<T>(kPReluInit), true)) {}

    Tensor<T> aggregate(const Tensor<T>& h, const Tensor<T>& adjacency) const {
        return add(mul(h, add_scalar(epsilon, T(1))), matmul(adjacency, h));
    }

    Tensor<T> forward(const Tensor<T>& h, const GraphContext<T>& g) const { return forward_with(h, g.raw); }

    Tensor<T> forward_with(const Tensor<T>& h, const Tensor<T>& adjacency) const {
        Tensor<T> z = lin2(prelu(lin1(aggregate(h, adjacency)), mlp_slope));
        return activate(z, config.activation, out_slope);
    }

    void collect(NamedParams<T>& out, const std::string& prefix) const {
        out.emplace_back(prefix + "epsilon", epsilon);
        lin1.collect(out, prefix + "lin1.");
        out.emplace_back(prefix + "mlp_slope", mlp_slope);
        lin2.collect(out, prefix + "lin2.");
        if (config.activation == Activation::PReLU) out.emplace_back(prefix + "out_slope", out_slope);
    }
};

// h' = act(Ã h W + b) over the normalized adjacency.
template <typename T>
struct GcnLayer {
    GraphLayerConfig config;
    Linear<T> lin;
    Tensor<T> out_slope;

    GcnLayer(const GraphLayerConfig& cfg, Rng& rng)
        : config(cfg),
          lin(cfg.in_dim, cfg.out_dim, rng),
          out_slope(Tensor<T>::full({1}, static_cast<T>(kPReluInit), true)) {}

    Tensor<T> forward(const Tensor<T>& h, const GraphContext<T>& g) const { return forward_with(h, g.normalized); }

    Tensor<T> forward_with(const Tensor<T>& h, const Tensor<T>& normalized) const {
        Tensor<T> z = add(matmul(normalized, matmul(h, lin.weight)), lin.bias);
        return activate(z, config.activation, out_slope);
    }

    void collect(NamedParams<T>& out, const std::string& prefix) const {
        lin.collect(out, prefix + "lin.");
        if (config.activation == Activation::PReLU) out.emplace_back(prefix + "out_slope", out_slope);
    }
};

// Multi-head additive attention over the 1-hop neighborhood including self;
// heads are concatenated.
template <typename T>
struct GatLayer {
    static constexpr double kNegativeSlope = 0.2;

    struct Head {
        Tensor<T> weight;    // [in, d]
        Tensor<T> att_src;   // [d, 1]
        Tensor<T> att_dst;   // [d, 1]
    };

    GraphLayerConfig config;
    std::vector<Head> heads;
    Tensor<T> bias;
    Tensor<T> out_slope;

    GatLayer(const GraphLayerConfig& cfg, Rng& rng)
        : config(cfg),
          bias(Tensor<T>::zeros({cfg.out_dim}, true)),
          out_slope(Tensor<T>::full({1}, static_cast<T>(kPReluInit), true)) {
        cfg.validate();
        const std::size_t d = cfg.out_dim / cfg.gat_heads;
        for (std::size_t k = 0; k < cfg.gat_heads; ++k) {
            Head head;
            head.weight = xavier_uniform<T>(cfg.in_dim, d, rng);
            head.att_src = xavier_uniform<T>(d, 1, rng);
            head.att_dst = xavier_uniform<T>(d, 1, rng);
            heads.push_back(std::move(head));
        }
    }

    Tensor<T> forward(const Tensor<T>& h, const GraphContext<T>& g) const { return forward_with(h, g.neighborhood); }

    Tensor<T> forward_with(const Tensor<T>& h, std::shared_ptr<const std::vector<std::uint8_t>> neighborhood) const {
        if (h.rank() < 2 || h.shape().back() != config.in_dim) {
            throw ShapeError("gat layer expects [..., N, " + std::to_string(config.in_dim) + "], got " +
                             shape_str(h.shape()));
        }
        const std::size_t n = h.size(-2);
        std::vector<Tensor<T>> outs;
        for (const auto& head : heads) {
            Tensor<T> z = matmul(h, head.weight);
            Tensor<T> src = matmul(z, head.att_src);  // [..., N, 1]
            Shape row_shape = src.shape();
            row_shape[row_shape.size() - 2] = 1;
            row_shape.back() = n;
            Tensor<T> dst = reshape(matmul(z, head.att_dst), row_shape);  // [..., 1, N]
            Tensor<T> logits = leaky_relu(add(src, dst), static_cast<T>(kNegativeSlope));
            Tensor<T> alpha = masked_softmax(logits, neighborhood);
            outs.push_back(matmul(alpha, z));
        }
        Tensor<T> joined = outs.size() == 1 ? outs[0] : concat(outs, -1);
        return activate(add(joined, bias), config.activation, out_slope);
    }

    void collect(NamedParams<T>& out, const std::string& prefix) const {
        for (std::size_t k = 0; k < heads.size(); ++k) {
            const std::string p = prefix + "head" + std::to_string(k) + ".";
            out.emplace_back(p + "weight", heads[k].weight);
            out.emplace_back(p + "att_src", heads[k].att_src);
            out.emplace_back(p + "att_dst", heads[k].att_dst);
        }
        out.emplace_back(prefix + "bias", bias);
        if (config.activation == Activation::PReLU) out.emplace_back(prefix + "out_slope", out_slope);
    }
};

template <typename T>
using GraphLayer = std::variant<GinLayer<T>, GcnLayer<T>, GatLayer<T>>;

template <typename T>
GraphLayer<T> make_graph_layer(const GraphLayerConfig& cfg, Rng& rng) {
    cfg.validate();
    switch (cfg.kind) {
        case Backbone::GIN: return GinLayer<T>(cfg, rng);
        case Backbone::GCN: return GcnLayer<T>(cfg, rng);
        case Backbone::GAT: return GatLayer<T>(cfg, rng);
    }
    throw ConfigError("unknown backbone");
}

template <typename T>
Tensor<T> layer_forward(const GraphLayer<T>& layer, const Tensor<T>& h, const GraphContext<T>& g) {
    return std::visit([&](const auto& l) { return l.forward(h, g); }, layer);
}

template <typename T>
void layer_collect(const GraphLayer<T>& layer, NamedParams<T>& out, const std::string& prefix) {
    std::visit([&](const auto& l) { l.collect(out, prefix); }, layer);
}

// Standalone forwards taking an explicit adjacency; each checks that the
// adjacency form matches its backbone.
template <typename T>
Tensor<T> gin_forward(const GinLayer<T>& layer, const Tensor<T>& h, const Adjacency& a) {
    if (a.normalized) throw ConfigError("gin_forward expects the raw binary adjacency");
    return layer.forward_with(h, Tensor<T>::from_data({a.n, a.n}, std::vector<T>(a.matrix.begin(), a.matrix.end())));
}

template <typename T>
Tensor<T> gcn_forward(const GcnLayer<T>& layer, const Tensor<T>& h, const Adjacency& a) {
    if (!a.normalized) throw ConfigError("gcn_forward expects a normalized adjacency");
    return layer.forward_with(h, Tensor<T>::from_data({a.n, a.n}, std::vector<T>(a.matrix.begin(), a.matrix.end())));
}

template <typename T>
Tensor<T> gat_forward(const GatLayer<T>& layer, const Tensor<T>& h, const Adjacency& a) {
    if (a.normalized) throw ConfigError("gat_forward expects the raw binary adjacency");
    return layer.forward(h, GraphContext<T>::from_adjacency(a));
}

// L_D graph layers applied in sequence.
template <typename T>
struct EncoderStack {
    std::vector<GraphLayer<T>> layers;

    EncoderStack() = default;

    // in_dim -> hidden -> ... -> hidden, every layer with `activation`.
    EncoderStack(Backbone kind, std::size_t depth, std::size_t in_dim, std::size_t hidden, std::size_t gat_heads,
                 Activation activation, Rng& rng) {
        if (depth < 1) throw ConfigError("encoder depth must be at least 1");
        for (std::size_t l = 0; l < depth; ++l) {
            GraphLayerConfig cfg{kind, l == 0 ? in_dim : hidden, hidden, activation, gat_heads};
            layers.push_back(make_graph_layer<T>(cfg, rng));
        }
    }

    explicit EncoderStack(std::vector<GraphLayer<T>> ls) : layers(std::move(ls)) {
        if (layers.empty()) throw ConfigError("encoder depth must be at least 1");
        for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
            if (config(l).out_dim != config(l + 1).in_dim) {
                throw ConfigError("encoder layer " + std::to_string(l) + " output width does not match layer " +
                                  std::to_string(l + 1) + " input width");
            }
        }
    }

    std::size_t depth() const { return layers.size(); }

    const GraphLayerConfig& config(std::size_t l) const {
        return std::visit([](const auto& x) -> const GraphLayerConfig& { return x.config; }, layers[l]);
    }

    std::size_t in_dim() const { return config(0).in_dim; }
    std::size_t out_dim() const { return config(layers.size() - 1).out_dim; }

    Tensor<T> forward(const Tensor<T>& x, const GraphContext<T>& g) const {
        Tensor<T> h = x;
        for (const auto& layer : layers) h = layer_forward(layer, h, g);
        return h;
    }

    void collect(NamedParams<T>& out, const std::string& prefix) const {
        for (std::size_t l = 0; l < layers.size(); ++l) layer_collect(layers[l], out, prefix + std::to_string(l) + ".");
    }
};

// Copies values from `src` into same-named tensors of `dst`. Missing names or
// shape differences raise CheckpointMismatch naming the tensor.
template <typename T>
void copy_params(const NamedParams<T>& src, NamedParams<T>& dst, const std::string& src_prefix = "",
                 const std::string& dst_prefix = "") {
    for (auto& [name, tensor] : dst) {
        if (name.rfind(dst_prefix, 0) != 0) continue;
        const std::string key = src_prefix + name.substr(dst_prefix.size());
        auto it = std::find_if(src.begin(), src.end(), [&](const auto& p) { return p.first == key; });
        if (it == src.end()) throw CheckpointMismatch(key, "missing");
        if (it->second.shape() != tensor.shape()) {
            throw CheckpointMismatch(key, "shape " + shape_str(it->second.shape()) + " does not match expected " +
                                              shape_str(tensor.shape()));
        }
        std::copy(it->second.data().begin(), it->second.data().end(), tensor.mutable_data().begin());
    }
}

}  // namespace skmae
