#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <set>

#include "oracles.hpp"
#include "support.hpp"

using namespace skmae;

TEST(Layout, RegionSizesFollowFigureCaption) {
    const auto layout = build_coco17_layout();
    ASSERT_EQ(layout.regions.size(), 6u);
    const std::vector<std::size_t> expected{5, 4, 2, 2, 2, 2};
    for (std::size_t r = 0; r < 6; ++r) EXPECT_EQ(layout.regions[r].size(), expected[r]) << "region " << r;
}

TEST(Layout, RegionsPartitionAllJoints) {
    const auto layout = build_coco17_layout();
    EXPECT_EQ(layout.joint_count, 17u);
    std::set<std::size_t> seen;
    std::size_t total = 0;
    for (const auto& r : layout.regions) {
        total += r.size();
        seen.insert(r.begin(), r.end());
    }
    EXPECT_EQ(total, 17u);  // disjoint
    EXPECT_EQ(seen.size(), 17u);
    EXPECT_EQ(*seen.rbegin(), 16u);
    EXPECT_NO_THROW(validate_layout(layout));
}

TEST(Layout, FixedRegionContents) {
    const auto layout = build_coco17_layout();
    EXPECT_EQ(layout.regions[3], (JointSet{8, 10}));
    EXPECT_EQ(layout.regions[0], (JointSet{0, 1, 2, 3, 4}));
    EXPECT_EQ(layout.regions[1], (JointSet{5, 6, 11, 12}));
    EXPECT_EQ(layout.region_names[2], "left_arm");
}

TEST(Layout, EdgesValidAndLoopFree) {
    const auto layout = build_coco17_layout();
    EXPECT_EQ(layout.edges.size(), 18u);
    std::set<std::pair<std::size_t, std::size_t>> uniq;
    for (auto [a, b] : layout.edges) {
        EXPECT_LT(a, 17u);
        EXPECT_LT(b, 17u);
        EXPECT_NE(a, b);
        uniq.insert({std::min(a, b), std::max(a, b)});
    }
    EXPECT_EQ(uniq.size(), layout.edges.size());
}

TEST(Layout, EdgesJoinIdenticalOrAdjacentRegions) {
    // head-torso, torso-arms, torso-legs; everything else must stay within a region.
    const std::set<std::pair<std::size_t, std::size_t>> adjacent{{0, 1}, {1, 2}, {1, 3}, {1, 4}, {1, 5}};
    const auto layout = build_coco17_layout();
    for (auto [a, b] : layout.edges) {
        const auto ra = layout.region_of(a), rb = layout.region_of(b);
        if (ra == rb) continue;
        EXPECT_TRUE(adjacent.count({std::min(ra, rb), std::max(ra, rb)})) << "edge " << a << "-" << b;
    }
}

TEST(Layout, ValidateRejectsBrokenLayouts) {
    auto layout = build_coco17_layout();
    layout.edges.push_back({3, 3});
    EXPECT_THROW(validate_layout(layout), ConfigError);
    layout = build_coco17_layout();
    layout.regions[0].insert(5);
    EXPECT_THROW(validate_layout(layout), ConfigError);
    layout = build_coco17_layout();
    layout.regions[2].erase(7);
    EXPECT_THROW(validate_layout(layout), ConfigError);
}

TEST(Adjacency, RawIsSymmetricBinary) {
    const Adjacency a = raw_adjacency(build_coco17_layout());
    EXPECT_FALSE(a.normalized);
    for (std::size_t i = 0; i < 17; ++i) {
        EXPECT_EQ(a.at(i, i), 0.0);
        for (std::size_t j = 0; j < 17; ++j) {
            EXPECT_EQ(a.at(i, j), a.at(j, i));
            EXPECT_TRUE(a.at(i, j) == 0.0 || a.at(i, j) == 1.0);
        }
    }
}

TEST(Adjacency, SingleEdgeNormalizesToHalves) {
    const Adjacency n = normalize_adjacency(testing_support::single_edge());
    EXPECT_TRUE(n.normalized);
    for (double v : n.matrix) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(Adjacency, SingleNodeNormalizesToOne) {
    const Adjacency n = normalize_adjacency(testing_support::edgeless(1));
    ASSERT_EQ(n.matrix.size(), 1u);
    EXPECT_DOUBLE_EQ(n.matrix[0], 1.0);
}

TEST(Adjacency, CocoNormalizedSpectrumBoundedByOne) {
    const Adjacency n = normalize_adjacency(raw_adjacency(build_coco17_layout()));
    double max_row = 0.0;
    for (std::size_t i = 0; i < 17; ++i) {
        EXPECT_GT(n.at(i, i), 0.0);
        double row = 0.0;
        for (std::size_t j = 0; j < 17; ++j) {
            EXPECT_LT(std::abs(n.at(i, j) - n.at(j, i)), 1e-12);
            row += n.at(i, j);
        }
        max_row = std::max(max_row, row);
    }
    EXPECT_LE(max_row, 17.0);
    const double lambda = oracle::max_eigenvalue(n);
    EXPECT_LE(lambda, 1.0 + 1e-9);
    // D^-1/2 (A+I) D^-1/2 is similar to a stochastic matrix: its top eigenvalue is exactly 1.
    EXPECT_NEAR(lambda, 1.0, 1e-9);
}

TEST(Adjacency, NormalizationIsReproducible) {
    const Adjacency raw = raw_adjacency(build_coco17_layout());
    const Adjacency a = normalize_adjacency(raw), b = normalize_adjacency(raw);
    EXPECT_EQ(a.matrix, b.matrix);
}

TEST(Adjacency, RejectsAsymmetricOrNormalizedInput) {
    Adjacency a = testing_support::edgeless(2);
    a.matrix = {0, 1, 0, 0};
    EXPECT_THROW(normalize_adjacency(a), ConfigError);
    const Adjacency n = normalize_adjacency(testing_support::single_edge());
    EXPECT_THROW(normalize_adjacency(n), ConfigError);
}

TEST(Adjacency, GraphContextHoldsAllForms) {
    const auto g = GraphContext<double>::from_layout(build_coco17_layout());
    EXPECT_EQ(g.joints, 17u);
    EXPECT_EQ(g.raw.shape(), (Shape{17, 17}));
    EXPECT_EQ(g.normalized.shape(), (Shape{17, 17}));
    // neighbourhood includes self and the 1-hop neighbours only
    EXPECT_EQ((*g.neighborhood)[0 * 17 + 0], 1);
    EXPECT_EQ((*g.neighborhood)[0 * 17 + 1], 1);
    EXPECT_EQ((*g.neighborhood)[0 * 17 + 9], 0);
}

TEST(Sequence, ValidOnePersonSequencePasses) {
    const auto seq = testing_support::simple_sequence(64);
    EXPECT_NO_THROW(validate_sequence(seq, build_coco17_layout()));
}

TEST(Sequence, WrongJointCountNamesN) {
    auto seq = testing_support::simple_sequence(4);
    seq.joints = 16;
    seq.persons[0].resize(4 * 16 * 2);
    try {
        validate_sequence(seq, build_coco17_layout());
        FAIL() << "expected ValidationError";
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("N = 17"), std::string::npos) << e.what();
    }
}

TEST(Sequence, NanReportsFrameAndJoint) {
    auto seq = testing_support::simple_sequence(8);
    seq.at(0, 3, 9, 1) = std::numeric_limits<double>::quiet_NaN();
    try {
        validate_sequence(seq, build_coco17_layout());
        FAIL() << "expected ValidationError";
    } catch (const ValidationError& e) {
        EXPECT_EQ(e.frame(), 3u);
        EXPECT_EQ(e.joint(), 9u);
        EXPECT_NE(std::string(e.what()).find("frame 3, joint 9"), std::string::npos) << e.what();
    }
}

TEST(Sequence, PersonCountOutsideOneOrTwo) {
    const auto layout = build_coco17_layout();
    auto seq = testing_support::simple_sequence(4, 0, 2);
    EXPECT_NO_THROW(validate_sequence(seq, layout));
    seq.persons.push_back(seq.persons[0]);
    EXPECT_THROW(validate_sequence(seq, layout), ValidationError);
    seq.persons.clear();
    EXPECT_THROW(validate_sequence(seq, layout), ValidationError);
}

TEST(Sequence, ConfidenceOutsideUnitIntervalRejected) {
    auto seq = testing_support::simple_sequence(2);
    seq.confidence = std::vector<double>(2 * 17, 0.5);
    EXPECT_NO_THROW(validate_sequence(seq, build_coco17_layout()));
    (*seq.confidence)[20] = 1.5;
    EXPECT_THROW(validate_sequence(seq, build_coco17_layout()), ValidationError);
}
