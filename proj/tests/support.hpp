#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <string>
#include <vector>

#include "skmae/skmae.hpp"

namespace testing_support {

using skmae::Rng;
using skmae::Shape;
using skmae::Tensor;

template <typename T = double>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool requires_grad = false) {
    std::vector<T> v(skmae::numel_of(shape));
    for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
    return Tensor<T>::from_data(std::move(shape), std::move(v), requires_grad);
}

template <typename T>
std::vector<T> to_vec(const Tensor<T>& t) {
    return std::vector<T>(t.data().begin(), t.data().end());
}

template <typename T>
std::vector<T> grad_vec(const Tensor<T>& t) {
    return std::vector<T>(t.grad().begin(), t.grad().end());
}

// Overwrites every parameter with uniform values, e.g. to move biases off zero.
template <typename T>
void randomize(skmae::NamedParams<T>& params, Rng& rng, double lo = -0.5, double hi = 0.5) {
    for (auto& [name, p] : params) {
        for (auto& v : p.mutable_data()) v = static_cast<T>(rng.uniform(lo, hi));
    }
}

inline std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    rng.shuffle(p);
    return p;
}

// Relabels joints: new joint i is old joint perm[i].
inline skmae::SkeletonLayout permute_layout(const skmae::SkeletonLayout& layout, const std::vector<std::size_t>& perm) {
    std::vector<std::size_t> inverse(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) inverse[perm[i]] = i;
    skmae::SkeletonLayout out = layout;
    for (auto& [a, b] : out.edges) a = inverse[a], b = inverse[b];
    for (auto& r : out.regions) {
        skmae::JointSet moved;
        for (auto j : r) moved.insert(inverse[j]);
        r = moved;
    }
    return out;
}

// Rows of an [N, D] matrix reordered so that row i is old row perm[i].
inline std::vector<double> permute_rows(const std::vector<double>& m, std::size_t d, const std::vector<std::size_t>& perm) {
    std::vector<double> out(m.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        std::copy_n(m.begin() + static_cast<std::ptrdiff_t>(perm[i] * d), d, out.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    return out;
}

inline skmae::Adjacency edgeless(std::size_t n) {
    skmae::Adjacency a;
    a.n = n;
    a.matrix.assign(n * n, 0.0);
    return a;
}

inline skmae::Adjacency single_edge() {
    skmae::Adjacency a = edgeless(2);
    a.matrix = {0, 1, 1, 0};
    return a;
}

// Straight-line still pose with a little variation so normalization is defined.
inline skmae::SkeletonSequence simple_sequence(std::size_t frames, int label = 0, std::size_t persons = 1,
                                               double offset = 0.0) {
    skmae::SkeletonSequence s;
    s.frames = frames;
    s.joints = skmae::kCocoJoints;
    s.label = label;
    s.real_persons = persons;
    const auto& pose = skmae::rest_pose();
    for (std::size_t p = 0; p < persons; ++p) {
        std::vector<double> flat(frames * s.joints * 2);
        for (std::size_t t = 0; t < frames; ++t) {
            for (std::size_t j = 0; j < s.joints; ++j) {
                flat[(t * s.joints + j) * 2] = pose[j][0] + offset + 3.0 * static_cast<double>(p) + 0.5 * static_cast<double>(t);
                flat[(t * s.joints + j) * 2 + 1] = pose[j][1] + 0.25 * static_cast<double>(t * (j % 3));
            }
        }
        s.persons.push_back(std::move(flat));
    }
    return s;
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Fresh per-test scratch directory under the build tree.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("skmae_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace testing_support
