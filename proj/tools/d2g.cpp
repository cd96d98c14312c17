// d2g: one-step diffusion distillation toolkit (noise-to-latent translation
// with an ensembled latent perceptual loss and a diffusion discriminator).
//
// Exit codes: 0 success, 1 runtime failure, 2 config error, 3 missing
// upstream artifact.

#include <CLI11.hpp>

#include "d2g/cli/runner.hpp"

namespace {

using namespace d2g;

ExperimentConfig load_config(const std::string& config_path,
                             const std::vector<std::string>& overrides, bool deterministic) {
    ExperimentConfig cfg = config_path.empty() ? validate_config(json::object())
                                               : parse_config(config_path);
    if (!overrides.empty()) cfg = apply_overrides(cfg, overrides);
    if (deterministic) {
        json doc = cfg.doc;
        doc["deterministic"] = true;
        cfg = validate_config(doc);
    }
    return cfg;
}

std::vector<int> read_cond_file(const std::string& path) {
    std::vector<int> conds;
    if (path.empty()) return conds;
    std::ifstream f(path);
    if (!f) throw DependencyError("missing condition list file", path);
    int v;
    while (f >> v) conds.push_back(v);
    if (conds.empty()) throw std::invalid_argument("condition list file is empty");
    return conds;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"d2g: one-step diffusion distillation toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    std::vector<std::string> overrides;
    bool deterministic = false;
    app.add_option("--config", config_path, "experiment config (JSON)");
    app.add_option("--set", overrides, "dotted key=value overrides")->take_all();
    app.add_option("--out", out_dir, "artifact root (default: $D2G_CACHE or ./d2g-artifacts)");
    app.add_flag("--deterministic", deterministic, "force reproducible kernels");

    auto* cmd_codec = app.add_subcommand("train-codec", "train the latent codec");
    auto* cmd_teacher = app.add_subcommand("train-teacher", "train the toy diffusion teacher");

    auto* cmd_pairs = app.add_subcommand("gen-pairs", "generate noise/ODE-solution pairs");
    std::string pairs_teacher, pairs_out, cond_file;
    GenPairsArgs pargs;
    int64_t pairs_count = -1, pairs_steps = -1;
    double pairs_cfg_w = -1;
    int64_t pairs_seed = -1;
    int pairs_workers = -1;
    cmd_pairs->add_option("--teacher", pairs_teacher, "teacher checkpoint path");
    cmd_pairs->add_option("--count", pairs_count, "number of records");
    cmd_pairs->add_option("--steps", pairs_steps, "solver steps");
    cmd_pairs->add_option("--cfg", pairs_cfg_w, "guidance scale");
    cmd_pairs->add_option("--seed", pairs_seed, "base seed");
    cmd_pairs->add_option("--workers", pairs_workers, "worker threads");
    cmd_pairs->add_option("--cond-file", cond_file, "condition index list (one per line)");
    cmd_pairs->add_option("--pairs-out", pairs_out, "shard output directory");
    bool pairs_verify = false;
    cmd_pairs->add_flag("--verify", pairs_verify, "re-solve sampled records after writing");

    auto* cmd_perc = app.add_subcommand("train-perceptual", "train backbones and calibrate");

    auto* cmd_distill = app.add_subcommand("distill", "run distillation");
    std::string stage = "both", distill_pairs, distill_out;
    cmd_distill->add_option("--stage", stage, "1, 2 or both")
        ->check(CLI::IsMember({"1", "2", "both"}));
    cmd_distill->add_option("--pairs", distill_pairs, "pair shard directory");
    cmd_distill->add_option("--distill-out", distill_out, "output directory");

    auto* cmd_eval = app.add_subcommand("eval", "compute the metric report");
    std::string eval_generator;
    cmd_eval->add_option("--generator", eval_generator, "generator checkpoint path");

    auto* cmd_bench = app.add_subcommand("bench-loss", "benchmark loss paths");
    auto* cmd_recon = app.add_subcommand("reconstruct", "single-latent recovery diagnostic");

    auto* cmd_rewire = app.add_subcommand("rewire", "randomly re-pair a shard");
    std::string rewire_in, rewire_out;
    int64_t rewire_seed = 0;
    cmd_rewire->add_option("--in", rewire_in, "input shard")->required();
    cmd_rewire->add_option("--seed", rewire_seed, "permutation seed")->required();
    cmd_rewire->add_option("--rewire-out", rewire_out, "output shard")->required();

    auto* cmd_pipeline = app.add_subcommand("pipeline", "run the full pipeline end to end");

    CLI11_PARSE(app, argc, argv);

    try {
        ExperimentConfig cfg = load_config(config_path, overrides, deterministic);
        ArtifactTree tree = ArtifactTree::resolve(out_dir);

        if (cmd_codec->parsed()) {
            auto p = run_train_codec(cfg, tree);
            std::printf("codec checkpoint: %s\n", p.string().c_str());
        } else if (cmd_teacher->parsed()) {
            auto p = run_train_teacher(cfg, tree);
            std::printf("teacher checkpoint: %s\n", p.string().c_str());
        } else if (cmd_pairs->parsed()) {
            pargs.count = static_cast<int>(pairs_count);
            pargs.steps = static_cast<int>(pairs_steps);
            pargs.guidance = pairs_cfg_w;
            pargs.seed = pairs_seed;
            pargs.workers = pairs_workers;
            pargs.verify = pairs_verify;
            pargs.cond_list = read_cond_file(cond_file);
            auto paths = run_gen_pairs(cfg, tree, pargs, pairs_teacher, pairs_out);
            std::printf("wrote %zu shard(s) under %s\n", paths.size(),
                        paths.empty() ? "-" : paths[0].parent_path().string().c_str());
        } else if (cmd_perc->parsed()) {
            auto art = run_train_perceptual(cfg, tree);
            std::printf("pixel acc %.3f (2afc %.3f)  latent acc %.3f (2afc %.3f)\n",
                        art.pixel_acc, art.pixel_2afc, art.latent_acc, art.latent_2afc);
        } else if (cmd_distill->parsed()) {
            auto p = run_distill(cfg, tree, stage, distill_pairs, distill_out);
            std::printf("generator checkpoint: %s\n", p.string().c_str());
        } else if (cmd_eval->parsed()) {
            MetricReport rep = run_eval(cfg, tree, eval_generator);
            std::printf("%s\n", rep.to_json().dump(2).c_str());
        } else if (cmd_bench->parsed()) {
            auto reports = run_bench_loss(cfg, tree);
            for (const auto& r : reports) {
                std::printf("%-22s batch=%d median=%.2fms peak=%lldB\n", r.path.c_str(), r.batch,
                            r.median_ms, static_cast<long long>(r.peak_bytes));
            }
        } else if (cmd_recon->parsed()) {
            auto results = run_reconstruct(cfg, tree);
            for (size_t i = 0; i < results.size(); ++i) {
                std::printf("target %zu: final rms %.5f\n", i / 2, results[i].final_rms);
            }
        } else if (cmd_rewire->parsed()) {
            auto p = run_rewire(rewire_in, static_cast<uint64_t>(rewire_seed), rewire_out);
            std::printf("rewired shard: %s\n", p.string().c_str());
        } else if (cmd_pipeline->parsed()) {
            MetricReport rep = run_pipeline(cfg, tree);
            std::printf("%s\n", rep.to_json().dump(2).c_str());
        }
        return 0;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 2;
    } catch (const DependencyError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
