#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "skmae/errors.hpp"
#include "skmae/ops.hpp"
#include "skmae/rng.hpp"
#include "skmae/skeleton.hpp"

namespace skmae {

// Mask a fixed union of body regions.
struct BodyPartsMask {
    std::set<std::size_t> regions;
    bool operator==(const BodyPartsMask&) const = default;
};

// Mask `count` distinct regions drawn uniformly per sample.
struct SampleRegionsMask {
    std::size_t count = 1;
    bool operator==(const SampleRegionsMask&) const = default;
};

// Mask round(ratio * N) joints drawn uniformly per sample.
struct RandomRatioMask {
    double ratio = 0.5;
    bool operator==(const RandomRatioMask&) const = default;
};

using MaskStrategy = std::variant<BodyPartsMask, SampleRegionsMask, RandomRatioMask>;

struct MaskSpec {
    MaskStrategy strategy = SampleRegionsMask{1};
    bool operator==(const MaskSpec&) const = default;
};

// Number of joints masked by RandomRatioMask: round half up, clamped to [1, N-1].
inline std::size_t masked_joint_count(double ratio, std::size_t joints) {
    const double raw = std::floor(ratio * static_cast<double>(joints) + 0.5);
    const double clamped = std::clamp(raw, 1.0, static_cast<double>(joints - 1));
    return static_cast<std::size_t>(clamped);
}

inline void validate_mask_spec(const MaskSpec& spec, const SkeletonLayout& layout) {
    const std::size_t regions = layout.regions.size();
    std::visit(
        [&](const auto& s) {
            using S = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<S, BodyPartsMask>) {
                if (s.regions.empty()) throw MaskError("body_parts mask needs at least one region");
                if (s.regions.size() >= regions) throw MaskError("body_parts mask may not cover every region");
                for (auto r : s.regions) {
                    if (r >= regions) throw MaskError("region id " + std::to_string(r) + " out of range");
                }
            } else if constexpr (std::is_same_v<S, SampleRegionsMask>) {
                if (s.count < 1 || s.count >= regions) {
                    throw MaskError("sample_regions count must be in [1, " + std::to_string(regions - 1) + "]");
                }
            } else {
                if (!(s.ratio > 0.0 && s.ratio < 1.0)) throw MaskError("random mask ratio must lie in (0, 1)");
            }
        },
        spec.strategy);
}

inline std::string describe(const MaskSpec& spec) {
    return std::visit(
        [](const auto& s) -> std::string {
            using S = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<S, BodyPartsMask>) {
                std::string out = "body_parts(";
                bool first = true;
                for (auto r : s.regions) {
                    out += (first ? "" : "+") + std::to_string(r);
                    first = false;
                }
                return out + ")";
            } else if constexpr (std::is_same_v<S, SampleRegionsMask>) {
                return "sample_regions(" + std::to_string(s.count) + ")";
            } else {
                return "random(" + std::to_string(static_cast<int>(std::lround(s.ratio * 100))) + "%)";
            }
        },
        spec.strategy);
}

// Joint indices to mask for one sample. Body-part masks ignore rng.
inline JointSet resolve_mask(const MaskSpec& spec, const SkeletonLayout& layout, Rng& rng) {
    validate_mask_spec(spec, layout);
    JointSet out;
    std::visit(
        [&](const auto& s) {
            using S = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<S, BodyPartsMask>) {
                for (auto r : s.regions) out.insert(layout.regions[r].begin(), layout.regions[r].end());
            } else if constexpr (std::is_same_v<S, SampleRegionsMask>) {
                std::vector<std::size_t> ids(layout.regions.size());
                std::iota(ids.begin(), ids.end(), std::size_t{0});
                for (std::size_t i = 0; i < s.count; ++i) {
                    const std::size_t j = i + static_cast<std::size_t>(rng.below(ids.size() - i));
                    std::swap(ids[i], ids[j]);
                    out.insert(layout.regions[ids[i]].begin(), layout.regions[ids[i]].end());
                }
            } else {
                const std::size_t k = masked_joint_count(s.ratio, layout.joint_count);
                std::vector<std::size_t> ids(layout.joint_count);
                std::iota(ids.begin(), ids.end(), std::size_t{0});
                for (std::size_t i = 0; i < k; ++i) {
                    const std::size_t j = i + static_cast<std::size_t>(rng.below(ids.size() - i));
                    std::swap(ids[i], ids[j]);
                    out.insert(ids[i]);
                }
            }
        },
        spec.strategy);
    return out;
}

// Replaces the masked rows of x [..., N, D] by the mask token [D]. Other rows
// are copied unchanged; gradients reach the token through every masked row.
template <typename T>
Tensor<T> apply_mask(const Tensor<T>& x, const JointSet& mask, const Tensor<T>& token) {
    if (mask.empty()) throw MaskError("apply_mask: empty mask");
    const std::size_t d = x.shape().back();
    if (token.numel() != d) {
        throw ShapeError("mask token length " + std::to_string(token.numel()) + " does not match width " +
                         std::to_string(d));
    }
    const std::size_t n = x.size(-2);
    if (*mask.rbegin() >= n) throw ShapeError("mask joint " + std::to_string(*mask.rbegin()) + " out of range");
    Shape src_shape = x.shape();
    src_shape[src_shape.size() - 2] = mask.size();
    Tensor<T> src = broadcast_to(reshape(token, {1, d}), src_shape);
    return index_put(x, -2, std::vector<std::size_t>(mask.begin(), mask.end()), src);
}

// Batched form: x is [B, N, D] and masks[b] applies to sample b.
template <typename T>
Tensor<T> apply_masks(const Tensor<T>& x, const std::vector<JointSet>& masks, const Tensor<T>& token) {
    if (x.rank() != 3 || masks.size() != x.shape()[0]) {
        throw ShapeError("apply_masks expects [B, N, D] with one mask per sample, got " + shape_str(x.shape()));
    }
    const std::size_t b = x.shape()[0], n = x.shape()[1], d = x.shape()[2];
    if (token.numel() != d) throw ShapeError("mask token length does not match feature width");
    std::vector<std::size_t> rows;
    for (std::size_t s = 0; s < b; ++s) {
        if (masks[s].empty()) throw MaskError("apply_masks: empty mask for sample " + std::to_string(s));
        for (auto j : masks[s]) {
            if (j >= n) throw ShapeError("mask joint " + std::to_string(j) + " out of range");
            rows.push_back(s * n + j);
        }
    }
    Tensor<T> flat = reshape(x, {b * n, d});
    Tensor<T> src = broadcast_to(reshape(token, {1, d}), {rows.size(), d});
    return reshape(index_put(flat, 0, std::move(rows), src), {b, n, d});
}

}  // namespace skmae
