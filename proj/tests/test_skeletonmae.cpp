#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "support.hpp"

using namespace skmae;
using testing_support::random_tensor;
using testing_support::to_vec;
using TD = Tensor<double>;

namespace {

MaeModelConfig small_config(std::size_t d = 16) { return {d, d, 3, Backbone::GIN, 4}; }

TD rows(std::size_t n, std::size_t d, Rng& rng) { return random_tensor({n, d}, rng, -1, 1); }

SkeletonSequence prepared(std::size_t frames) {
    return prepare_sequence(testing_support::simple_sequence(frames), build_coco17_layout(), frames);
}

}  // namespace

TEST(Model, StructureAndParameterNames) {
    Rng rng(0);
    MaeModel<float> m(small_config(), build_coco17_layout(), rng);
    EXPECT_EQ(m.encoder.depth(), 3u);
    EXPECT_EQ(m.mask_token.numel(), 16u);
    EXPECT_TRUE(std::holds_alternative<GinLayer<float>>(m.decoder));
    const auto params = m.parameters();
    EXPECT_EQ(params.front().first, "embed.weight");
    EXPECT_EQ(params.back().first, "mask_token");
    bool has_decoder = false;
    for (const auto& [name, p] : params) has_decoder = has_decoder || name.rfind("decoder.", 0) == 0;
    EXPECT_TRUE(has_decoder);
}

TEST(Model, FullyMaskedFrameReconstructsNonZeroRowsAtInit) {
    for (auto backbone : {Backbone::GIN, Backbone::GCN, Backbone::GAT}) {
        Rng rng(40);
        MaeModel<double> m({8, 8, 1, backbone, 2}, build_coco17_layout(), rng);
        JointSet all;
        for (std::size_t j = 0; j < 17; ++j) all.insert(j);
        const TD coords = random_tensor({1, 17, 2}, rng);
        const TD y = m.reconstruct(apply_masks(m.embed(coords), {all}, m.mask_token));
        for (std::size_t j = 0; j < 17; ++j) {
            double norm = 0;
            for (std::size_t c = 0; c < 8; ++c) norm += std::abs(y.data()[j * 8 + c]);
            EXPECT_GT(norm, 0.0) << j;
        }
        EXPECT_TRUE(std::isfinite(pretrain_loss(m, coords, {all}, 2.0).item()));
    }
}

TEST(Embed, ZeroMapGivesZeros) {
    Rng rng(1);
    MaeModel<float> m(small_config(64), build_coco17_layout(), rng);
    for (auto& v : m.embed.weight.mutable_data()) v = 0.0f;
    const auto s = embed_sequence(m, prepared(64), build_coco17_layout());
    EXPECT_EQ(s.shape(), (Shape{17, 64, 64}));
    for (float v : s.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Embed, ProjectionReproducesCoordinates) {
    Rng rng(2);
    MaeModel<double> m(small_config(), build_coco17_layout(), rng);
    auto w = m.embed.weight.mutable_data();
    std::fill(w.begin(), w.end(), 0.0);
    w[0] = 1.0;       // x -> channel 0
    w[16 + 1] = 1.0;  // y -> channel 1
    const auto seq = prepared(8);
    const auto s = embed_sequence(m, seq, build_coco17_layout());
    for (std::size_t j = 0; j < 17; ++j) {
        for (std::size_t t = 0; t < 8; ++t) {
            EXPECT_EQ(s.data()[(j * 8 + t) * 16 + 0], seq.at(0, t, j, 0));
            EXPECT_EQ(s.data()[(j * 8 + t) * 16 + 1], seq.at(0, t, j, 1));
        }
    }
}

TEST(Embed, RandomMapMatchesElementLoop) {
    Rng rng(3);
    MaeModel<double> m(small_config(), build_coco17_layout(), rng);
    for (auto& v : m.embed.bias.mutable_data()) v = rng.uniform(-1, 1);
    const auto seq = prepared(8);
    const auto s = embed_sequence(m, seq, build_coco17_layout());
    const auto w = m.embed.weight.data();
    const auto b = m.embed.bias.data();
    for (std::size_t j = 0; j < 17; ++j) {
        for (std::size_t t = 0; t < 8; ++t) {
            for (std::size_t c = 0; c < 16; ++c) {
                const double e = w[c] * seq.at(0, t, j, 0) + w[16 + c] * seq.at(0, t, j, 1) + b[c];
                EXPECT_NEAR(s.data()[(j * 8 + t) * 16 + c], e, 1e-7);
            }
        }
    }
}

TEST(Embed, RejectsInvalidSequence) {
    Rng rng(4);
    MaeModel<float> m(small_config(), build_coco17_layout(), rng);
    auto seq = prepared(8);
    seq.at(0, 2, 5, 0) = std::nan("");
    EXPECT_THROW(embed_sequence(m, seq, build_coco17_layout()), ValidationError);
}

TEST(Rce, IdenticalReconstructionIsZero) {
    Rng rng(5);
    TD x = rows(17, 8, rng);
    EXPECT_NEAR(rce_loss(x, x, JointSet{1, 2, 3}, 2.0).item(), 0.0, 1e-6);
}

TEST(Rce, OppositeReconstructionTwoJoints) {
    Rng rng(6);
    TD x = rows(17, 8, rng);
    EXPECT_NEAR(rce_loss(x, neg(x), JointSet{4, 9}, 2.0).item(), 2.0, 1e-6);
}

TEST(Rce, OrthogonalFourJoints) {
    std::vector<double> xv(17 * 2, 0.0), yv(17 * 2, 0.0);
    for (std::size_t j = 0; j < 17; ++j) xv[j * 2] = 1.0 + j, yv[j * 2 + 1] = 2.0 - 0.1 * j;
    TD x = TD::from_data({17, 2}, xv), y = TD::from_data({17, 2}, yv);
    EXPECT_NEAR(rce_loss(x, y, JointSet{0, 5, 6, 12}, 2.0).item(), 0.25, 1e-6);
}

TEST(Rce, Errors) {
    Rng rng(7);
    TD x = rows(17, 4, rng);
    TD y = rows(17, 4, rng);
    EXPECT_THROW(rce_loss(x, y, JointSet{1}, 0.5), ConfigError);
    EXPECT_THROW(rce_loss(x, y, JointSet{}, 2.0), MaskError);
    TD zero_row = index_put(y, 0, {3}, TD::zeros({1, 4}));
    EXPECT_THROW(rce_loss(x, zero_row, JointSet{3}, 2.0), NumericError);
    EXPECT_NO_THROW(rce_loss(x, zero_row, JointSet{4}, 2.0));  // zero row outside the mask is fine
    EXPECT_THROW(rce_loss(index_put(x, 0, {3}, TD::zeros({1, 4})), y, JointSet{3}, 2.0), NumericError);
}

TEST(Rce, BoundsAndZeroIffPositiveMultiple) {
    Rng rng(8);
    const auto layout = build_coco17_layout();
    for (int trial = 0; trial < 50; ++trial) {
        const double beta = rng.uniform(1.0, 4.0);
        const JointSet m = resolve_mask({RandomRatioMask{rng.uniform(0.05, 0.95)}}, layout, rng);
        TD x = rows(17, 6, rng), y = rows(17, 6, rng);
        const double l = rce_loss(x, y, m, beta).item();
        EXPECT_GE(l, 0.0);
        EXPECT_LE(l, std::pow(2.0, beta) / std::pow(static_cast<double>(m.size()), beta - 1.0) + 1e-9);
        TD scaled = mul(x, random_tensor({17, 1}, rng, 0.1, 10.0));
        EXPECT_NEAR(rce_loss(x, scaled, m, beta).item(), 0.0, 1e-9);
    }
    // Upper bound is attained by y = -x.
    TD x = rows(17, 6, rng);
    EXPECT_NEAR(rce_loss(x, neg(x), JointSet{1, 2, 3}, 3.0).item(), 8.0 / 9.0, 1e-9);
}

TEST(Rce, PerRowPositiveScaleInvariance) {
    Rng rng(9);
    for (int trial = 0; trial < 30; ++trial) {
        TD x = rows(17, 6, rng), y = rows(17, 6, rng);
        TD c = random_tensor({17, 1}, rng, 1e-3, 1e3);
        const JointSet m{0, 3, 7, 11, 16};
        EXPECT_LT(std::abs(rce_loss(x, mul(y, c), m, 2.0).item() - rce_loss(x, y, m, 2.0).item()), 1e-6);
    }
}

TEST(Rce, UnmaskedRowsDoNotMatter) {
    Rng rng(10);
    const JointSet m{2, 8, 9};
    for (int trial = 0; trial < 30; ++trial) {
        TD x = rows(17, 6, rng), y = rows(17, 6, rng);
        std::vector<std::size_t> others;
        for (std::size_t j = 0; j < 17; ++j) {
            if (!m.count(j)) others.push_back(j);
        }
        TD perturbed = index_put(y, 0, others, random_tensor({others.size(), 6}, rng, -50, 50));
        EXPECT_EQ(rce_loss(x, perturbed, m, 2.0).item(), rce_loss(x, y, m, 2.0).item());
    }
}

TEST(Rce, GradientMatchesFiniteDifferencesAndStopsAtTargets) {
    Rng rng(11);
    const auto layout = build_coco17_layout();
    for (int trial = 0; trial < 10; ++trial) {
        TD x = rows(17, 5, rng);
        JointSet m;
        Rng pick(static_cast<std::uint64_t>(trial));
        while (m.size() < 4) m.insert(static_cast<std::size_t>(pick.below(17)));
        TD y = rows(17, 5, rng);
        const double err = finite_difference_check<double>([&](const TD& v) { return rce_loss(x, v, m, 2.0); }, y, 1e-6);
        EXPECT_LT(err, 1e-4);
    }
    TD x = rows(17, 5, rng);
    x.set_requires_grad(true);
    TD y = rows(17, 5, rng);
    y.set_requires_grad(true);
    rce_loss(x, y, JointSet{1, 2}, 2.0).backward();
    EXPECT_FALSE(x.has_grad());
    EXPECT_TRUE(y.has_grad());
}

TEST(Rce, BatchedFormAveragesSamples) {
    Rng rng(12);
    TD x = random_tensor({2, 17, 4}, rng), y = random_tensor({2, 17, 4}, rng);
    const std::vector<JointSet> masks{{1, 2}, {5, 6, 7}};
    const double l = rce_loss(x, y, masks, 2.0).item();
    double expect = 0.0;
    for (std::size_t b = 0; b < 2; ++b) {
        expect += rce_loss(reshape(index_select(x, 0, {b}), {17, 4}), reshape(index_select(y, 0, {b}), {17, 4}), masks[b], 2.0)
                      .item();
    }
    EXPECT_NEAR(l, expect / 2.0, 1e-12);
}

TEST(PretrainLoss, GradientReachesMaskTokenAndEmbedding) {
    Rng rng(13);
    MaeModel<double> m(small_config(8), build_coco17_layout(), rng);
    auto params = m.parameters();
    testing_support::randomize(params, rng);
    TD coords = random_tensor({3, 17, 2}, rng);
    const std::vector<JointSet> masks{{8, 10}, {0, 1, 2, 3, 4}, {13, 15}};
    pretrain_loss(m, coords, masks, 2.0).backward();
    for (const auto& [name, p] : params) {
        ASSERT_TRUE(p.has_grad()) << name;
        double mag = 0.0;
        for (double g : p.grad()) mag += std::abs(g);
        EXPECT_GT(mag, 0.0) << name;
    }
}

TEST(PretrainLoss, GradientCheckOverAllParameters) {
    Rng rng(14);
    MaeModel<double> m({6, 6, 2, Backbone::GIN, 2}, build_coco17_layout(), rng);
    auto params = m.parameters();
    testing_support::randomize(params, rng);
    TD coords = random_tensor({2, 17, 2}, rng);
    const std::vector<JointSet> masks{{8, 10, 14, 16}, {1, 3}};
    // The target is a stop-gradient copy, so differences must hold it fixed.
    const TD target = m.embed(coords).detach();
    auto fixed_target = [&] {
        return rce_loss(target, m.reconstruct(apply_masks(m.embed(coords), masks, m.mask_token)), masks, 2.0);
    };
    for (auto& [name, p] : params) {
        EXPECT_LT(finite_difference_check<double>(fixed_target, p, 1e-6), 1e-4) << name;
    }
    // pretrain_loss must produce the same gradients.
    std::vector<std::vector<double>> expected;
    for (auto& [name, p] : params) p.zero_grad();
    fixed_target().backward();
    auto grads = [](const TD& p) {
        return p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end()) : std::vector<double>(p.data().size(), 0.0);
    };
    for (auto& [name, p] : params) expected.push_back(grads(p));
    for (auto& [name, p] : params) p.zero_grad();
    pretrain_loss(m, coords, masks, 2.0).backward();
    std::size_t k = 0;
    for (auto& [name, p] : params) {
        const auto g = grads(p);
        for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], expected[k][i], 1e-12) << name;
        ++k;
    }
}

TEST(PretrainStep, ZeroLearningRateFreezesParameters) {
    Rng rng(15);
    MaeModel<float> m(small_config(), build_coco17_layout(), rng);
    PretrainConfig cfg;
    cfg.lr = 0.0;
    MaeTrainer<float> trainer(m, cfg);
    std::vector<std::vector<float>> before;
    for (const auto& [n, p] : m.parameters()) before.push_back(to_vec(p));
    trainer.step(random_tensor<float>({4, 17, 2}, rng), {{1}, {2, 3}, {8, 10}, {16}});
    std::size_t k = 0;
    for (const auto& [n, p] : m.parameters()) EXPECT_EQ(to_vec(p), before[k++]) << n;
}

TEST(PretrainStep, RepeatedFrameConverges) {
    const auto layout = build_coco17_layout();
    const auto seq = prepared(8);
    Rng rng(16);
    MaeModel<float> m(small_config(), layout, rng);
    PretrainConfig cfg;  // default lr, beta and Adam moments
    MaeTrainer<float> trainer(m, cfg);
    const std::vector<FrameSample> batch(32, FrameSample{0, 0, 3});
    const Tensor<float> coords = frame_batch<float>({seq}, batch);
    Rng mask_rng(0);
    std::vector<double> trajectory;
    for (int step = 0; step < 200; ++step) {
        std::vector<JointSet> masks;
        for (std::size_t i = 0; i < batch.size(); ++i) masks.push_back(resolve_mask(cfg.mask, layout, mask_rng));
        trajectory.push_back(trainer.step(coords, masks));
    }
    RecordProperty("initial_loss", std::to_string(trajectory.front()));
    RecordProperty("final_loss", std::to_string(trajectory.back()));
    EXPECT_LT(trajectory.back(), 0.5 * trajectory.front());
}

TEST(PretrainStep, SeedsGiveIdenticalTrajectories) {
    const auto layout = build_coco17_layout();
    std::vector<SkeletonSequence> seqs{prepared(8)};
    auto run = [&] {
        Rng rng(17);
        MaeModel<float> m(small_config(), layout, rng);
        PretrainConfig cfg;
        cfg.batch_size = 4;
        cfg.epochs = 10;
        cfg.seed = 3;
        MaeTrainer<float> trainer(m, cfg);
        std::vector<double> losses;
        while (trainer.epochs_done() < 10) losses.push_back(trainer.run_epoch(seqs, layout));
        return losses;
    };
    const auto a = run();
    EXPECT_EQ(a, run());
    EXPECT_EQ(a.size(), 10u);
}

TEST(PretrainStep, NonFiniteLossAbortsWithStepIndex) {
    Rng rng(18);
    MaeModel<float> m(small_config(), build_coco17_layout(), rng);
    for (auto& v : m.embed.weight.mutable_data()) v = 3e37f;
    MaeTrainer<float> trainer(m, PretrainConfig{});
    try {
        trainer.step(random_tensor<float>({2, 17, 2}, rng, 1, 2), {{1}, {2}});
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("pre-training step 0"), std::string::npos) << e.what();
    }
}

TEST(PretrainConfig, Validation) {
    PretrainConfig c;
    c.beta = 0.9;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.lr = -1;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    EXPECT_EQ(c.lr, 1.5e-4);
    EXPECT_EQ(c.epochs, 50u);
    EXPECT_EQ(c.batch_size, 1024u);
    EXPECT_EQ(c.beta, 2.0);
    EXPECT_EQ(c.adam_beta1, 0.9);
    EXPECT_EQ(c.adam_beta2, 0.999);
    EXPECT_EQ(c.adam_eps, 1e-8);
}

TEST(Trainer, FramesAreSamplesAndBatchFallsBack) {
    auto two = testing_support::simple_sequence(8, 0, 2);
    auto one = testing_support::simple_sequence(8, 1, 1);
    pad_persons(one);
    const auto samples = MaeTrainer<float>::frame_samples({two, one});
    EXPECT_EQ(samples.size(), 8u * 3u);  // padding person contributes nothing
    Rng rng(19);
    MaeModel<float> m(small_config(), build_coco17_layout(), rng);
    MaeTrainer<float> trainer(m, PretrainConfig{});
    EXPECT_EQ(trainer.effective_batch(300), 256u);
    EXPECT_EQ(trainer.effective_batch(100), 100u);
    EXPECT_EQ(trainer.effective_batch(5000), 1024u);
}

TEST(Pretrain, ZeroEpochsKeepsInitialization) {
    RunConfig cfg;
    cfg.model.frames = 8;
    cfg.model.embed_dim = cfg.model.hidden_dim = 8;
    cfg.pretrain.epochs = 0;
    const auto layout = build_coco17_layout();
    const auto out = run_pretrain(cfg, {prepared(8)}, layout);
    EXPECT_TRUE(out.epoch_losses.empty());
    Rng rng = Rng::derive(cfg.seed, 0, kMaeInitStream);
    MaeModel<float> fresh(cfg.mae_config(), layout, rng);
    for (const auto& [name, p] : fresh.parameters()) EXPECT_EQ(out.checkpoint->values_of(name), to_vec(p)) << name;
}

TEST(Pretrain, SyntheticLossTrendsDown) {
    const auto layout = build_coco17_layout();
    SynthSpec spec;
    spec.sequences_per_class = 10;
    const auto train = prepare_all(generate_synthetic(spec).train, layout, 16);
    Rng rng(20);
    MaeModel<float> m(small_config(), layout, rng);
    PretrainConfig cfg;
    cfg.batch_size = 32;
    MaeTrainer<float> trainer(m, cfg);
    const auto report = pretrain(trainer, Dataset({}, train), layout);
    ASSERT_EQ(report.epoch_losses.size(), 50u);
    double first = 0, last = 0;
    for (int i = 0; i < 5; ++i) first += report.epoch_losses[i], last += report.epoch_losses[45 + i];
    EXPECT_LT(last, first);
    EXPECT_EQ(report.batch_size, 32u);
    EXPECT_EQ(report.samples, train.size() * 16);
}

TEST(Pretrain, ResumeReproducesTrajectoryBitwise) {
    const auto layout = build_coco17_layout();
    const auto dir = testing_support::scratch_dir("resume");
    RunConfig cfg;
    cfg.model.frames = 8;
    cfg.model.embed_dim = cfg.model.hidden_dim = 8;
    cfg.pretrain.batch_size = 4;
    cfg.pretrain.epochs = 4;
    const std::vector<SkeletonSequence> train{prepared(8), prepared(8)};
    PretrainOptions full_opt;
    full_opt.out_dir = dir / "full";
    const auto full = run_pretrain(cfg, train, layout, full_opt);

    RunConfig half = cfg;
    half.pretrain.epochs = 2;
    PretrainOptions half_opt;
    half_opt.out_dir = dir / "half";
    run_pretrain(half, train, layout, half_opt);
    PretrainOptions resume_opt;
    resume_opt.out_dir = dir / "resumed";
    resume_opt.resume = dir / "half" / "checkpoint.skmae";
    const auto resumed = run_pretrain(cfg, train, layout, resume_opt);

    EXPECT_EQ(resumed.epoch_losses, full.epoch_losses);
    EXPECT_EQ(resumed.report.epoch_losses.size(), 2u);
    EXPECT_EQ(testing_support::read_file(dir / "resumed" / "checkpoint.skmae"),
              testing_support::read_file(dir / "full" / "checkpoint.skmae"));
}
