#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "skmae/errors.hpp"
#include "skmae/tensor.hpp"

namespace skmae {

inline constexpr std::size_t kCocoJoints = 17;
inline constexpr std::size_t kRegionCount = 6;

using JointSet = std::set<std::size_t>;

struct SkeletonLayout {
    std::size_t joint_count = 0;
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    std::vector<JointSet> regions;
    std::vector<std::string> region_names;

    // Region id containing joint j.
    std::size_t region_of(std::size_t joint) const {
        for (std::size_t r = 0; r < regions.size(); ++r) {
            if (regions[r].count(joint)) return r;
        }
        throw ConfigError("joint " + std::to_string(joint) + " belongs to no region");
    }
};

// COCO-17 joint order:
//  0 nose, 1 l-eye, 2 r-eye, 3 l-ear, 4 r-ear, 5 l-shoulder, 6 r-shoulder,
//  7 l-elbow, 8 r-elbow, 9 l-wrist, 10 r-wrist, 11 l-hip, 12 r-hip,
//  13 l-knee, 14 r-knee, 15 l-ankle, 16 r-ankle
inline SkeletonLayout build_coco17_layout() {
    SkeletonLayout layout;
    layout.joint_count = kCocoJoints;
    layout.edges = {{0, 1},  {0, 2},   {1, 3},   {2, 4},   {0, 5},   {0, 6},
                    {5, 7},  {7, 9},   {6, 8},   {8, 10},  {5, 11},  {6, 12},
                    {11, 12}, {11, 13}, {13, 15}, {12, 14}, {14, 16}, {5, 6}};
    layout.regions = {{0, 1, 2, 3, 4}, {5, 6, 11, 12}, {7, 9}, {8, 10}, {13, 15}, {14, 16}};
    layout.region_names = {"head", "torso", "left_arm", "right_arm", "left_leg", "right_leg"};
    return layout;
}

// Checks that regions partition {0..N-1} and edges are valid and loop-free.
inline void validate_layout(const SkeletonLayout& layout) {
    std::vector<int> owner(layout.joint_count, -1);
    for (std::size_t r = 0; r < layout.regions.size(); ++r) {
        for (std::size_t j : layout.regions[r]) {
            if (j >= layout.joint_count) throw ConfigError("region joint index out of range");
            if (owner[j] != -1) throw ConfigError("regions overlap at joint " + std::to_string(j));
            owner[j] = static_cast<int>(r);
        }
    }
    for (std::size_t j = 0; j < owner.size(); ++j) {
        if (owner[j] == -1 && !layout.regions.empty()) {
            throw ConfigError("joint " + std::to_string(j) + " not covered by any region");
        }
    }
    for (auto [a, b] : layout.edges) {
        if (a >= layout.joint_count || b >= layout.joint_count) throw ConfigError("edge index out of range");
        if (a == b) throw ConfigError("self-loop in edge list at joint " + std::to_string(a));
    }
}

// N×N adjacency, either raw binary A or normalized D^-1/2 (A+I) D^-1/2.
struct Adjacency {
    std::size_t n = 0;
    std::vector<double> matrix;
    bool normalized = false;

    double at(std::size_t i, std::size_t j) const { return matrix[i * n + j]; }
};

inline Adjacency raw_adjacency(const SkeletonLayout& layout) {
    Adjacency a;
    a.n = layout.joint_count;
    a.matrix.assign(a.n * a.n, 0.0);
    for (auto [i, j] : layout.edges) {
        a.matrix[i * a.n + j] = 1.0;
        a.matrix[j * a.n + i] = 1.0;
    }
    return a;
}

inline Adjacency normalize_adjacency(const Adjacency& a) {
    if (a.normalized) throw ConfigError("normalize_adjacency: input is already normalized");
    const std::size_t n = a.n;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (a.at(i, j) != a.at(j, i)) {
                throw ConfigError("normalize_adjacency: asymmetric input at (" + std::to_string(i) + ", " +
                                  std::to_string(j) + ")");
            }
        }
    }
    std::vector<double> deg(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        deg[i] = 1.0;
        for (std::size_t j = 0; j < n; ++j) deg[i] += a.at(i, j);
    }
    Adjacency out;
    out.n = n;
    out.normalized = true;
    out.matrix.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double aij = a.at(i, j) + (i == j ? 1.0 : 0.0);
            out.matrix[i * n + j] = aij / std::sqrt(deg[i] * deg[j]);
        }
    }
    return out;
}

// Graph constants consumed by the layers: raw A, normalized Ã, and the
// self-inclusive neighborhood mask used by attention.
template <typename T>
struct GraphContext {
    std::size_t joints = 0;
    Tensor<T> raw;
    Tensor<T> normalized;
    std::shared_ptr<const std::vector<std::uint8_t>> neighborhood;

    static GraphContext from_adjacency(const Adjacency& raw_adj) {
        GraphContext g;
        g.joints = raw_adj.n;
        const Adjacency norm = normalize_adjacency(raw_adj);
        g.raw = Tensor<T>::from_data({g.joints, g.joints}, std::vector<T>(raw_adj.matrix.begin(), raw_adj.matrix.end()));
        g.normalized = Tensor<T>::from_data({g.joints, g.joints}, std::vector<T>(norm.matrix.begin(), norm.matrix.end()));
        auto mask = std::make_shared<std::vector<std::uint8_t>>(g.joints * g.joints, 0);
        for (std::size_t i = 0; i < g.joints; ++i) {
            for (std::size_t j = 0; j < g.joints; ++j) {
                (*mask)[i * g.joints + j] = (i == j || raw_adj.at(i, j) != 0.0) ? 1 : 0;
            }
        }
        g.neighborhood = std::move(mask);
        return g;
    }

    static GraphContext from_layout(const SkeletonLayout& layout) { return from_adjacency(raw_adjacency(layout)); }
};

// Per-person coordinates stored flat as [frame][joint][xy].
struct SkeletonSequence {
    std::size_t frames = 0;
    std::size_t joints = kCocoJoints;
    std::vector<std::vector<double>> persons;
    // Persons actually present; the rest are zero padding.
    std::size_t real_persons = 0;
    std::optional<std::vector<double>> confidence;  // [frame][joint], ignored by the models
    int label = 0;

    double& at(std::size_t person, std::size_t frame, std::size_t joint, std::size_t axis) {
        return persons[person][(frame * joints + joint) * 2 + axis];
    }
    double at(std::size_t person, std::size_t frame, std::size_t joint, std::size_t axis) const {
        return persons[person][(frame * joints + joint) * 2 + axis];
    }
};

inline void validate_sequence(const SkeletonSequence& seq, const SkeletonLayout& layout) {
    if (seq.joints != layout.joint_count) {
        throw ValidationError("joint count mismatch: sequence has " + std::to_string(seq.joints) +
                              " joints, layout expects N = " + std::to_string(layout.joint_count));
    }
    if (seq.persons.empty() || seq.persons.size() > 2) {
        throw ValidationError("person count " + std::to_string(seq.persons.size()) + " outside {1, 2}");
    }
    if (seq.real_persons < 1 || seq.real_persons > seq.persons.size()) {
        throw ValidationError("real person count " + std::to_string(seq.real_persons) + " outside {1, 2}");
    }
    if (seq.frames == 0) throw ValidationError("sequence has no frames");
    for (const auto& p : seq.persons) {
        if (p.size() != seq.frames * seq.joints * 2) {
            throw ValidationError("person array length does not match " + std::to_string(seq.frames) + " frames x " +
                                  std::to_string(seq.joints) + " joints");
        }
        for (std::size_t t = 0; t < seq.frames; ++t) {
            for (std::size_t j = 0; j < seq.joints; ++j) {
                if (!std::isfinite(p[(t * seq.joints + j) * 2]) || !std::isfinite(p[(t * seq.joints + j) * 2 + 1])) {
                    throw ValidationError("non-finite coordinate", t, j);
                }
            }
        }
    }
    if (seq.confidence) {
        if (seq.confidence->size() != seq.frames * seq.joints) {
            throw ValidationError("confidence array length does not match frames x joints");
        }
        for (std::size_t i = 0; i < seq.confidence->size(); ++i) {
            const double c = (*seq.confidence)[i];
            if (!(c >= 0.0 && c <= 1.0)) {
                throw ValidationError("confidence outside [0, 1]", i / seq.joints, i % seq.joints);
            }
        }
    }
}

}  // namespace skmae
