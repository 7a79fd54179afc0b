#pragma once

// Command-line front end. cli_main() is the whole program; it is a header
// function so tests can drive commands in-process and check exit codes.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "skmae/pipeline.hpp"

namespace skmae {

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitData = 3, kExitNumeric = 4 };

// Runs body and maps the error hierarchy onto the exit-code contract.
template <typename F>
int run_guarded(F&& body, std::ostream& err) {
    try {
        body();
        return kExitOk;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
}

struct PretrainArgs {
    std::string config;
    std::string out;
    std::string resume;
    std::optional<std::uint64_t> seed;
};

struct FinetuneArgs {
    std::string config;
    std::string pretrained;
    std::string out;
    std::optional<std::uint64_t> seed;
};

struct EvalArgs {
    std::string model;
    std::string data;
};

struct ReconstructArgs {
    std::string model;
    std::string data;
    std::string mask = "sample_regions:1";
    std::string out;
    std::uint64_t seed = 0;
    std::size_t limit = 0;
};

struct CompareArgs {
    std::string config;
    std::size_t seeds = 5;
    std::string out;
};

struct EmbedArgs {
    std::string model;
    std::string data;
    std::string out;
};

struct SynthArgs {
    std::string out;
    SynthSpec spec;
};

inline RunConfig config_for_run(const std::string& path, const std::optional<std::uint64_t>& seed) {
    RunConfig cfg = load_run_config(path);
    if (seed) cfg.seed = *seed;
    return cfg;
}

inline std::filesystem::path out_dir_for(const RunConfig& cfg, const std::string& out) {
    return out.empty() ? std::filesystem::path(cfg.output_dir) : std::filesystem::path(out);
}

inline void cmd_pretrain(const PretrainArgs& a, std::ostream& log) {
    const RunConfig cfg = config_for_run(a.config, a.seed);
    const auto layout = build_coco17_layout();
    const PreparedData data = load_data(cfg, layout);
    PretrainOptions opt;
    opt.out_dir = out_dir_for(cfg, a.out);
    if (!a.resume.empty()) opt.resume = a.resume;
    opt.log = &log;
    run_pretrain(cfg, data.train, layout, opt);
    log << "wrote " << (*opt.out_dir / "checkpoint.skmae").string() << "\n";
}

inline void cmd_finetune(const FinetuneArgs& a, std::ostream& log) {
    const RunConfig cfg = config_for_run(a.config, a.seed);
    const auto layout = build_coco17_layout();
    const PreparedData data = load_data(cfg, layout);
    FinetuneOptions opt;
    opt.out_dir = out_dir_for(cfg, a.out);
    opt.log = &log;
    NamedParams<float> pretrained;
    if (!a.pretrained.empty()) {
        const Checkpoint ck = load_checkpoint(a.pretrained);
        require_kind(ck, "mae", a.pretrained);
        pretrained = params_from_checkpoint(ck);
        opt.pretrained = &pretrained;
        opt.pretrained_label = a.pretrained;
    }
    const auto result = run_finetune(cfg, data, layout, opt);
    if (result.test_eval) log << "test top1 " << result.test_eval->top1 << " mean_top1 " << result.test_eval->mean_top1 << "\n";
    log << "wrote " << (*opt.out_dir / "model.skmae").string() << "\n";
}

inline void cmd_eval(const EvalArgs& a, std::ostream& out) {
    const auto layout = build_coco17_layout();
    const auto model = ssl_from_checkpoint(load_checkpoint(a.model), layout);
    const auto seqs = load_prepared(a.data, layout, model->config.frames);
    out << eval_json(evaluate(*model, seqs)).dump() << "\n";
}

inline void cmd_reconstruct(const ReconstructArgs& a, std::ostream& log) {
    const auto layout = build_coco17_layout();
    const Checkpoint ck = load_checkpoint(a.model);
    const auto model = mae_from_checkpoint(ck, layout);
    const RunConfig cfg = checkpoint_config(ck);
    const auto seqs = load_prepared(a.data, layout, cfg.model.frames);
    ReconstructOptions opt{parse_mask_arg(a.mask), a.seed, a.limit};
    const auto records = reconstruct_sequences(*model, seqs, layout, opt);
    const std::filesystem::path dir(a.out);
    ensure_dir(dir);
    std::string text;
    for (const auto& r : records) text += r.dump() + "\n";
    write_text(dir / "reconstruction.jsonl", text);
    log << "wrote " << records.size() << " sequences to " << (dir / "reconstruction.jsonl").string() << "\n";
}

inline void cmd_compare_masking(const CompareArgs& a, std::ostream& log) {
    const RunConfig cfg = load_run_config(a.config);
    const auto layout = build_coco17_layout();
    const auto rows = compare_masking(cfg, a.seeds, layout, &log);
    const std::filesystem::path dir = out_dir_for(cfg, a.out);
    ensure_dir(dir);
    write_text(dir / "compare_masking.csv", compare_csv(rows));
    const auto summary = compare_summary(rows);
    write_text(dir / "compare_masking_summary.json", summary.dump(2) + "\n");
    for (const auto& s : summary["strategies"]) {
        log << s["strategy"].get<std::string>() << " mean top1 " << s["mean_top1"].get<double>() << "\n";
    }
}

inline void cmd_embed(const EmbedArgs& a, std::ostream& log) {
    const auto layout = build_coco17_layout();
    const Checkpoint ck = load_checkpoint(a.model);
    const auto model = mae_from_checkpoint(ck, layout);
    const RunConfig cfg = checkpoint_config(ck);
    const auto seqs = load_prepared(a.data, layout, cfg.model.frames);
    std::string text;
    for (const auto& s : seqs) {
        text += nlohmann::json{{"label", s.label}, {"vector", pooled_encoding(*model, s, layout)}}.dump() + "\n";
    }
    const std::filesystem::path path(a.out);
    if (path.has_parent_path()) ensure_dir(path.parent_path());
    write_text(path, text);
    log << "wrote " << seqs.size() << " embeddings to " << path.string() << "\n";
}

inline void cmd_synth(const SynthArgs& a, std::ostream& log) {
    write_synthetic(a.spec, a.out);
    log << "wrote " << (std::filesystem::path(a.out) / "train.jsonl").string() << " and test.jsonl\n";
}

inline int cli_main(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Skeleton masked-autoencoder pre-training and sequence classification"};
    app.require_subcommand(1);

    PretrainArgs pa;
    auto* pre = app.add_subcommand("pretrain", "pre-train the graph autoencoder");
    pre->add_option("--config", pa.config, "run config (JSON)")->required();
    pre->add_option("--out", pa.out, "output directory (default: config output_dir)");
    pre->add_option("--resume", pa.resume, "continue from a pre-training checkpoint");
    pre->add_option("--seed", pa.seed, "override the config seed");

    FinetuneArgs fa;
    auto* fin = app.add_subcommand("finetune", "fine-tune the sequence classifier");
    fin->add_option("--config", fa.config, "run config (JSON)")->required();
    fin->add_option("--pretrained", fa.pretrained, "pre-training checkpoint to load into the encoders");
    fin->add_option("--out", fa.out, "output directory (default: config output_dir)");
    fin->add_option("--seed", fa.seed, "override the config seed");

    EvalArgs ea;
    auto* ev = app.add_subcommand("eval", "evaluate a fine-tuned model; prints JSON");
    ev->add_option("--model", ea.model, "fine-tuned checkpoint")->required();
    ev->add_option("--data", ea.data, "dataset (JSONL)")->required();

    ReconstructArgs ra;
    auto* rec = app.add_subcommand("reconstruct", "export masked reconstructions");
    rec->add_option("--model", ra.model, "pre-training checkpoint")->required();
    rec->add_option("--data", ra.data, "dataset (JSONL)")->required();
    rec->add_option("--mask", ra.mask, "body_parts:3,5 | random:0.5 | sample_regions:1");
    rec->add_option("--out", ra.out, "output directory")->required();
    rec->add_option("--seed", ra.seed, "seed for sampled masks");
    rec->add_option("--limit", ra.limit, "number of sequences (0 = all)");

    CompareArgs ca;
    auto* cmp = app.add_subcommand("compare-masking", "pre-train + fine-tune per masking strategy and seed");
    cmp->add_option("--config", ca.config, "run config (JSON)")->required();
    cmp->add_option("--seeds", ca.seeds, "seeds per strategy");
    cmp->add_option("--out", ca.out, "output directory (default: config output_dir)");

    EmbedArgs ma;
    auto* emb = app.add_subcommand("embed", "export pooled encoder features");
    emb->add_option("--model", ma.model, "pre-training checkpoint")->required();
    emb->add_option("--data", ma.data, "dataset (JSONL)")->required();
    emb->add_option("--out", ma.out, "output file (JSONL)")->required();

    SynthArgs sa;
    auto* syn = app.add_subcommand("synth", "write the synthetic limb-oscillation dataset");
    syn->add_option("--out", sa.out, "output directory")->required();
    syn->add_option("--classes", sa.spec.class_count, "class count (at most 6)");
    syn->add_option("--per-class", sa.spec.sequences_per_class, "sequences per class");
    syn->add_option("--frames", sa.spec.frames, "frames per sequence");
    syn->add_option("--noise", sa.spec.noise_sigma, "pixel noise sigma");
    syn->add_option("--seed", sa.spec.seed, "generator seed");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << e.what() << "\n";
        return e.get_exit_code() == 0 ? kExitOk : kExitConfig;
    }

    if (pre->parsed()) return run_guarded([&] { cmd_pretrain(pa, out); }, err);
    if (fin->parsed()) return run_guarded([&] { cmd_finetune(fa, out); }, err);
    if (ev->parsed()) return run_guarded([&] { cmd_eval(ea, out); }, err);
    if (rec->parsed()) return run_guarded([&] { cmd_reconstruct(ra, out); }, err);
    if (cmp->parsed()) return run_guarded([&] { cmd_compare_masking(ca, out); }, err);
    if (emb->parsed()) return run_guarded([&] { cmd_embed(ma, out); }, err);
    if (syn->parsed()) return run_guarded([&] { cmd_synth(sa, out); }, err);
    return kExitFailure;
}

}  // namespace skmae
