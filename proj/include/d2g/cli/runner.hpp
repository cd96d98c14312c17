#ifndef D2G_CLI_RUNNER_HPP
#define D2G_CLI_RUNNER_HPP

#include <tuple>

#include "d2g/cli/config.hpp"
#include "d2g/codec/codec.hpp"
#include "d2g/data/toyset.hpp"
#include "d2g/distill/trainer.hpp"
#include "d2g/evalsuite/metrics.hpp"
#include "d2g/pairgen/pairgen.hpp"
#include "d2g/perceptual/elpips.hpp"

namespace d2g {

// Command implementations shared by the CLI binary, the smoke pipeline and
// the acceptance suite. Every command writes its resolved config next to its
// artifacts.

namespace fs = std::filesystem;

struct ArtifactTree {
    fs::path root;

    static ArtifactTree resolve(const std::string& cli_out) {
        if (!cli_out.empty()) return {fs::path(cli_out)};
        if (const char* env = std::getenv("D2G_CACHE")) return {fs::path(env)};
        return {fs::path("d2g-artifacts")};
    }

    fs::path codec_file() const { return root / "codec" / "codec.d2g"; }
    fs::path teacher_file() const { return root / "teacher" / "teacher.d2g"; }
    fs::path pairs_dir() const { return root / "pairs"; }
    fs::path perceptual_dir() const { return root / "perceptual"; }
    fs::path latent_distance_file() const { return perceptual_dir() / "latent_distance.d2g"; }
    fs::path pixel_distance_file() const { return perceptual_dir() / "pixel_distance.d2g"; }
    fs::path distill_dir() const { return root / "distill"; }
    fs::path generator_file() const { return distill_dir() / "generator_stage2.d2g"; }
    fs::path stage1_generator_file() const { return distill_dir() / "generator_stage1.d2g"; }
    fs::path eval_dir() const { return root / "eval"; }
    fs::path bench_dir() const { return root / "bench"; }
    fs::path reconstruct_dir() const { return root / "reconstruct"; }
};

inline void write_resolved_config(const fs::path& dir, const ExperimentConfig& cfg) {
    fs::create_directories(dir);
    std::ofstream f(dir / "resolved_config.json", std::ios::trunc);
    f << cfg.doc.dump(2) << "\n";
}

inline void require_artifact(const fs::path& p, const std::string& what) {
    if (!fs::exists(p)) throw DependencyError("missing " + what, p.string());
}

/*------------------------------- shared pieces -------------------------------*/

inline LabeledSet config_train_set(const ExperimentConfig& cfg) {
    return make_toyset(cfg.integer("data.train_count"), cfg.integer("data.image_size"),
                       hash_seed(cfg.integer("seed"), 0xDA7A));
}

inline LabeledSet config_eval_set(const ExperimentConfig& cfg) {
    return make_toyset(cfg.integer("data.eval_count"), cfg.integer("data.image_size"),
                       hash_seed(cfg.integer("seed"), 0xE7A1));
}

inline LabeledSet encode_set(const Codec& codec, const LabeledSet& images) {
    LabeledSet out;
    out.labels = images.labels;
    out.items.reserve(images.size());
    for (const auto& img : images.items) out.items.push_back(codec.encode(img));
    return out;
}

inline AugmentationSpec augment_spec_from(const ExperimentConfig& cfg) {
    AugmentationSpec s;
    s.blit = cfg.flag("augment.blit");
    s.geometric = cfg.flag("augment.geometric");
    s.color = cfg.flag("augment.color");
    s.cutout = cfg.flag("augment.cutout");
    s.p_blit = s.p_geom = s.p_color = s.p_cutout = cfg.num("augment.p");
    return s;
}

inline DistillConfig distill_config_from(const ExperimentConfig& cfg) {
    DistillConfig d;
    d.steps = cfg.integer("distill.steps");
    d.batch = cfg.integer("distill.batch");
    d.lr = cfg.num("distill.lr");
    d.beta1 = cfg.num("distill.beta1");
    d.beta2 = cfg.num("distill.beta2");
    d.weight_decay = cfg.num("distill.weight_decay");
    d.loss = loss_mode_from(cfg.str("distill.loss"));
    d.aug = augment_spec_from(cfg);
    d.blend_lambda = cfg.num("distill.blend_lambda");
    d.pseudo_huber_c = cfg.num("distill.pseudo_huber_c");
    d.stage2_steps = cfg.integer("distill.stage2_steps");
    d.stage2_lr = cfg.num("distill.stage2_lr");
    d.lambda_gan = cfg.num("distill.lambda_gan");
    d.r1_gamma = cfg.num("distill.r1_gamma");
    d.r1_interval = cfg.integer("distill.r1_interval");
    d.mixmatch = {cfg.num("distill.mixmatch.latent"), cfg.num("distill.mixmatch.condition"),
                  cfg.num("distill.mixmatch.noise")};
    d.ema_beta = cfg.num("distill.ema_beta");
    d.ema_start = cfg.integer("distill.ema_start");
    d.noise_augment_d = cfg.flag("distill.noise_augment_d");
    d.noise_augment_t_max = cfg.integer("distill.noise_augment_t_max");
    d.probe_batch = cfg.integer("distill.probe_batch");
    d.ckpt_every = cfg.integer("distill.ckpt_every");
    d.seed = cfg.integer("seed");
    return d;
}

/*--------------------------------- commands ----------------------------------*/

inline fs::path run_train_codec(const ExperimentConfig& cfg, const ArtifactTree& tree) {
    CodecTrainConfig cc;
    cc.kind = cfg.str("codec.kind") == "identity" ? CodecKind::identity : CodecKind::learned;
    cc.downsample_factor = cfg.integer("codec.downsample_factor");
    cc.latent_channels = cfg.integer("codec.latent_channels");
    cc.width = cfg.integer("codec.width");
    cc.steps = cfg.integer("codec.steps");
    cc.batch = cfg.integer("codec.batch");
    cc.lr = cfg.num("codec.lr");
    cc.seed = hash_seed(cfg.integer("seed"), 0xC0DE);
    Codec codec = train_codec(config_train_set(cfg), cc);
    write_resolved_config(tree.codec_file().parent_path(), cfg);
    save_codec(tree.codec_file(), codec);
    return tree.codec_file();
}

inline fs::path run_train_teacher(const ExperimentConfig& cfg, const ArtifactTree& tree) {
    require_artifact(tree.codec_file(), "codec checkpoint");
    Codec codec = load_codec(tree.codec_file());
    LabeledSet latents = encode_set(codec, config_train_set(cfg));

    TeacherTrainConfig tc;
    tc.steps = cfg.integer("teacher.steps");
    tc.batch = cfg.integer("teacher.batch");
    tc.lr = cfg.num("teacher.lr");
    tc.p_uncond = cfg.num("teacher.p_uncond");
    tc.seed = hash_seed(cfg.integer("seed"), 0x7EAC);
    tc.schedule_T = cfg.integer("teacher.T");
    tc.schedule_kind = schedule_kind_from(cfg.str("teacher.schedule"));
    tc.unet.in_ch = tc.unet.out_ch = codec.latent_channels;
    tc.unet.base = cfg.integer("teacher.unet.base");
    tc.unet.mult = cfg.at("teacher.unet.mult").get<std::vector<int>>();
    tc.unet.blocks = cfg.integer("teacher.unet.blocks");
    tc.unet.temb_dim = cfg.integer("teacher.unet.temb_dim");
    tc.unet.cond_count = cfg.integer("data.classes");
    TeacherModel teacher = train_teacher(latents, tc);
    write_resolved_config(tree.teacher_file().parent_path(), cfg);
    save_teacher(tree.teacher_file(), teacher);
    return tree.teacher_file();
}

struct GenPairsArgs {
    int count = -1;        // <0: from config
    int steps = -1;
    double guidance = -1;
    int64_t seed = -1;
    int workers = -1;
    bool verify = false;
    std::vector<int> cond_list;
};

inline std::vector<fs::path> run_gen_pairs(const ExperimentConfig& cfg, const ArtifactTree& tree,
                                           const GenPairsArgs& args = {},
                                           const fs::path& teacher_override = {},
                                           const fs::path& out_override = {}) {
    fs::path teacher_path = teacher_override.empty() ? tree.teacher_file() : teacher_override;
    require_artifact(teacher_path, "teacher checkpoint");
    require_artifact(tree.codec_file(), "codec checkpoint");
    TeacherModel teacher = load_teacher(teacher_path);
    Codec codec = load_codec(tree.codec_file());
    const int lat = cfg.integer("data.image_size") / codec.downsample_factor;

    PairGenConfig pc;
    pc.solver.solver = cfg.str("pairs.solver") == "heun" ? SolverId::heun : SolverId::ddim;
    pc.solver.steps = args.steps > 0 ? args.steps : cfg.integer("pairs.steps");
    pc.solver.guidance = args.guidance >= 0 ? args.guidance : cfg.num("pairs.cfg");
    pc.base_seed = args.seed >= 0 ? static_cast<uint64_t>(args.seed)
                                  : hash_seed(cfg.integer("seed"), 0x9A12);
    pc.workers = args.workers > 0 ? args.workers : cfg.integer("pairs.workers");
    pc.shard_size = cfg.integer("pairs.shard_size");
    pc.cond_list = args.cond_list;
    const int count = args.count > 0 ? args.count : cfg.integer("pairs.count");

    auto shards = generate_pairs(teacher, count, pc, codec.latent_channels, lat, lat);
    fs::path out = out_override.empty() ? tree.pairs_dir() : out_override;
    write_resolved_config(out, cfg);
    auto paths = write_shards(out, shards);
    if (args.verify || cfg.flag("pairs.verify")) {
        for (const auto& p : paths) verify_shard(read_shard(p), teacher);
    }
    return paths;
}

struct PerceptualArtifacts {
    CalibratedDistance latent, pixel;
    double latent_acc = 0, pixel_acc = 0;
    double latent_2afc = 0, pixel_2afc = 0;
};

inline PerceptualArtifacts run_train_perceptual(const ExperimentConfig& cfg,
                                                const ArtifactTree& tree) {
    require_artifact(tree.codec_file(), "codec checkpoint");
    Codec codec = load_codec(tree.codec_file());
    LabeledSet images = config_train_set(cfg);
    LabeledSet held = config_eval_set(cfg);
    LabeledSet latents = encode_set(codec, images);
    LabeledSet held_lat = encode_set(codec, held);

    BackboneTrainConfig bt;
    bt.steps = cfg.integer("perceptual.steps");
    bt.batch = cfg.integer("perceptual.batch");
    bt.lr = cfg.num("perceptual.lr");
    bt.seed = hash_seed(cfg.integer("seed"), 0xBB);
    BackboneConfig bc;
    bc.widths = cfg.at("perceptual.widths").get<std::vector<int>>();
    bc.classes = cfg.integer("data.classes");

    PerceptualArtifacts out;
    auto pixel_bb = std::make_shared<FeatureBackbone>(
        train_backbone(images, Domain::pixel, bt, bc));
    auto latent_bb = std::make_shared<FeatureBackbone>(
        train_backbone(latents, Domain::latent, bt, bc));
    out.pixel_acc = classifier_accuracy(*pixel_bb, held);
    out.latent_acc = classifier_accuracy(*latent_bb, held_lat);

    const int n2afc = cfg.integer("perceptual.twoafc_count");
    CalibrateConfig cc;
    cc.steps = cfg.integer("perceptual.calib_steps");
    cc.lr = cfg.num("perceptual.calib_lr");
    cc.seed = hash_seed(cfg.integer("seed"), 0x2AFC);
    auto pixel_trips = make_synthetic_2afc(images.items, {}, n2afc, hash_seed(cc.seed, 1));
    auto latent_trips = make_synthetic_2afc(latents.items, {}, n2afc, hash_seed(cc.seed, 2));
    out.pixel = calibrate(pixel_bb, pixel_trips, cc);
    out.latent = calibrate(latent_bb, latent_trips, cc);

    auto held_pixel_trips = make_synthetic_2afc(held.items, {}, n2afc / 2, hash_seed(cc.seed, 3));
    auto held_latent_trips =
        make_synthetic_2afc(held_lat.items, {}, n2afc / 2, hash_seed(cc.seed, 4));
    out.pixel_2afc = twoafc_agreement(out.pixel, held_pixel_trips);
    out.latent_2afc = twoafc_agreement(out.latent, held_latent_trips);

    write_resolved_config(tree.perceptual_dir(), cfg);
    save_distance(tree.latent_distance_file(), out.latent);
    save_distance(tree.pixel_distance_file(), out.pixel);
    {
        std::ofstream f(tree.perceptual_dir() / "summary.json", std::ios::trunc);
        f << json{{"pixel_accuracy", out.pixel_acc},
                  {"latent_accuracy", out.latent_acc},
                  {"pixel_2afc", out.pixel_2afc},
                  {"latent_2afc", out.latent_2afc}}
                 .dump(2)
          << "\n";
    }
    return out;
}

inline fs::path run_distill(const ExperimentConfig& cfg, const ArtifactTree& tree,
                            const std::string& stage = "both", const fs::path& pairs_override = {},
                            const fs::path& out_override = {}) {
    fs::path pairs_dir = pairs_override.empty() ? tree.pairs_dir() : pairs_override;
    require_artifact(pairs_dir, "pair shards");
    require_artifact(tree.teacher_file(), "teacher checkpoint");
    fs::path out = out_override.empty() ? tree.distill_dir() : out_override;

    DistillConfig dc = distill_config_from(cfg);
    dc.out_dir = out;
    auto shards = read_shards(pairs_dir);
    TeacherModel teacher = load_teacher(tree.teacher_file());

    const bool needs_dist = dc.loss != LossMode::mse && dc.loss != LossMode::pseudo_huber;
    CalibratedDistance dist;
    if (needs_dist) {
        require_artifact(tree.latent_distance_file(), "latent perceptual distance");
        dist = load_distance(tree.latent_distance_file());
    }
    write_resolved_config(out, cfg);

    Generator g;
    if (stage == "2") {
        fs::path s1 = out / "generator_stage1.d2g";
        require_artifact(s1, "stage-1 generator checkpoint");
        g = load_generator(s1);
    } else {
        g = init_generator_from_teacher(teacher);
    }
    if (stage == "1" || stage == "both") {
        distill_stage1(g, shards, needs_dist ? &dist : nullptr, dc);
    }
    if (stage == "2" || stage == "both") {
        Discriminator d = build_discriminator(teacher, static_cast<int>(g.den->cfg.mult.size()));
        distill_stage2(g, d, shards, needs_dist ? &dist : nullptr, dc);
    }
    return out / (stage == "1" ? "generator_stage1.d2g" : "generator_stage2.d2g");
}

/*----------------------------------- eval ------------------------------------*/

inline void write_ppm_grid(const fs::path& path, const std::vector<Tensor>& images, int cols) {
    if (images.empty()) return;
    const int h = images[0].h(), w = images[0].w();
    const int rows = (static_cast<int>(images.size()) + cols - 1) / cols;
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << "P6\n" << cols * w << " " << rows * h << "\n255\n";
    std::vector<uint8_t> canvas(static_cast<size_t>(rows * h) * cols * w * 3, 0);
    for (size_t i = 0; i < images.size(); ++i) {
        const int gy = static_cast<int>(i) / cols, gx = static_cast<int>(i) % cols;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int c = 0; c < 3; ++c) {
                    double v = (images[i].at(0, std::min(c, images[i].c() - 1), y, x) + 1.0) * 127.5;
                    canvas[((static_cast<size_t>(gy * h + y) * cols * w) + gx * w + x) * 3 + c] =
                        static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
                }
    }
    f.write(reinterpret_cast<const char*>(canvas.data()), static_cast<std::streamsize>(canvas.size()));
}

inline MetricReport evaluate_generator(const ExperimentConfig& cfg, const Generator& g,
                                       const TeacherModel& teacher, const Codec& codec,
                                       const CalibratedDistance& latent_dist,
                                       const FeatureBackbone& pixel_bb,
                                       const fs::path& out_dir = {}) {
    const int classes = cfg.integer("data.classes");
    const int lat = cfg.integer("data.image_size") / codec.downsample_factor;
    const int lc = codec.latent_channels;
    const uint64_t seed = hash_seed(cfg.integer("seed"), 0xE7A7);
    const int n_fake = cfg.integer("eval.fake_count");

    LabeledSet real = config_eval_set(cfg);
    std::vector<Tensor> fake_images;
    std::vector<int> fake_conds;
    std::vector<Tensor> fake_latents;
    for (int i = 0; i < n_fake; ++i) {
        Rng rng(hash_seed(seed, i));
        int c = static_cast<int>(rng.next_u64() % classes);
        Tensor z = rng.gaussian(1, lc, lat, lat);
        Tensor xl = g.one_step(z, c);
        fake_latents.push_back(xl);
        fake_images.push_back(codec.decode(xl));
        fake_conds.push_back(c);
    }

    MetricReport rep;
    rep.real_count = static_cast<int>(real.size());
    rep.fake_count = n_fake;
    rep.frechet = fid_proxy(pixel_bb, real.items, fake_images, cfg.num("eval.shrink"));
    auto rf = extract_features(pixel_bb, real.items);
    auto ff = extract_features(pixel_bb, fake_images);
    std::tie(rep.precision, rep.recall) = precision_recall(rf, ff, cfg.integer("eval.pr_k"));
    rep.alignment = alignment_score(pixel_bb, fake_images, fake_conds);

    GenerateFn gen = [&](const Tensor& z, int c) { return g.one_step(z, c); };
    double div = 0;
    for (int c = 0; c < classes; ++c) {
        div += diversity_score(gen, c, cfg.integer("eval.diversity_n"), latent_dist, lc, lat, lat,
                               hash_seed(seed, 0xD1F0 + c));
    }
    rep.diversity = div / classes;
    std::vector<int> conds(classes);
    for (int c = 0; c < classes; ++c) conds[c] = c;
    rep.trajectory_fidelity = trajectory_fidelity(
        gen, teacher, conds, cfg.integer("eval.trajectory_n"), latent_dist,
        cfg.integer("eval.solver_steps"), cfg.num("pairs.cfg"), lc, lat, lat, hash_seed(seed, 0x7F));

    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        {
            std::ofstream f(out_dir / "report.json", std::ios::trunc);
            f << rep.to_json().dump(2) << "\n";
        }
        {
            std::ofstream f(out_dir / "report.txt", std::ios::trunc);
            f << "metric                 value\n";
            f << "frechet                " << rep.frechet << "\n";
            f << "precision              " << rep.precision << "\n";
            f << "recall                 " << rep.recall << "\n";
            f << "alignment              " << rep.alignment << "\n";
            f << "diversity              " << rep.diversity << "\n";
            f << "trajectory_fidelity    " << rep.trajectory_fidelity << "\n";
            f << "real/fake              " << rep.real_count << "/" << rep.fake_count << "\n";
        }
        if (cfg.flag("eval.dump_grid")) {
            std::vector<Tensor> grid(fake_images.begin(),
                                     fake_images.begin() + std::min<size_t>(64, fake_images.size()));
            write_ppm_grid(out_dir / "samples.ppm", grid, 8);
        }
    }
    return rep;
}

inline MetricReport run_eval(const ExperimentConfig& cfg, const ArtifactTree& tree,
                             const fs::path& generator_override = {}) {
    fs::path gen_path = generator_override.empty() ? tree.generator_file() : generator_override;
    if (!fs::exists(gen_path) && generator_override.empty()) {
        // fall back to the stage-1 artifact when only stage 1 was run
        gen_path = tree.stage1_generator_file();
    }
    require_artifact(gen_path, "generator checkpoint");
    require_artifact(tree.teacher_file(), "teacher checkpoint");
    require_artifact(tree.codec_file(), "codec checkpoint");
    require_artifact(tree.latent_distance_file(), "latent perceptual distance");
    require_artifact(tree.pixel_distance_file(), "pixel perceptual distance");

    Generator g = load_generator(gen_path);
    TeacherModel teacher = load_teacher(tree.teacher_file());
    Codec codec = load_codec(tree.codec_file());
    CalibratedDistance latent_dist = load_distance(tree.latent_distance_file());
    CalibratedDistance pixel_dist = load_distance(tree.pixel_distance_file());
    write_resolved_config(tree.eval_dir(), cfg);
    return evaluate_generator(cfg, g, teacher, codec, latent_dist, *pixel_dist.backbone,
                              tree.eval_dir());
}

/*------------------------------ bench / reconstruct --------------------------*/

inline std::vector<BenchPathReport> run_bench_loss(const ExperimentConfig& cfg,
                                                   const ArtifactTree& tree) {
    require_artifact(tree.codec_file(), "codec checkpoint");
    require_artifact(tree.latent_distance_file(), "latent perceptual distance");
    require_artifact(tree.pixel_distance_file(), "pixel perceptual distance");
    Codec codec = load_codec(tree.codec_file());
    CalibratedDistance latent_dist = load_distance(tree.latent_distance_file());
    CalibratedDistance pixel_dist = load_distance(tree.pixel_distance_file());

    BenchConfig bc;
    bc.batch = cfg.integer("bench.batch");
    bc.trials = cfg.integer("bench.trials");
    bc.latent_h = bc.latent_w = cfg.integer("data.image_size") / codec.downsample_factor;
    bc.seed = hash_seed(cfg.integer("seed"), 0xBE);
    auto reports = bench_loss(codec, pixel_dist, latent_dist, augment_spec_from(cfg), bc);

    write_resolved_config(tree.bench_dir(), cfg);
    std::ofstream f(tree.bench_dir() / "report.jsonl", std::ios::trunc);
    for (const auto& r : reports) {
        f << json{{"path", r.path},
                  {"batch", r.batch},
                  {"median_ms", r.median_ms},
                  {"peak_bytes", r.peak_bytes}}
                 .dump()
          << "\n";
    }
    return reports;
}

inline std::vector<ReconResult> run_reconstruct(const ExperimentConfig& cfg,
                                                const ArtifactTree& tree) {
    require_artifact(tree.codec_file(), "codec checkpoint");
    require_artifact(tree.latent_distance_file(), "latent perceptual distance");
    Codec codec = load_codec(tree.codec_file());
    CalibratedDistance dist = load_distance(tree.latent_distance_file());
    LabeledSet held = config_eval_set(cfg);

    ReconConfig rc;
    rc.iters = cfg.integer("reconstruct.iters");
    rc.lr = cfg.num("reconstruct.lr");
    rc.seed = hash_seed(cfg.integer("seed"), 0x4EC0);
    AugmentationSpec spec = augment_spec_from(cfg);

    write_resolved_config(tree.reconstruct_dir(), cfg);
    std::ofstream f(tree.reconstruct_dir() / "curves.jsonl", std::ios::trunc);
    std::vector<ReconResult> results;
    const int targets = std::min<int>(cfg.integer("reconstruct.targets"),
                                      static_cast<int>(held.size()));
    for (int i = 0; i < targets; ++i) {
        Tensor target = codec.encode(held.items[i]);
        for (ReconLoss mode : {ReconLoss::latentlpips, ReconLoss::e_latentlpips}) {
            ReconResult r = reconstruct_single(mode, dist, spec, target, rc);
            f << json{{"target", i},
                      {"loss", recon_loss_name(mode)},
                      {"final_rms", r.final_rms},
                      {"curve", r.curve}}
                     .dump()
              << "\n";
            results.push_back(std::move(r));
        }
    }
    return results;
}

inline fs::path run_rewire(const fs::path& in_shard, uint64_t seed, const fs::path& out_shard) {
    PairShard shard = read_shard(in_shard);
    PairShard rewired = rewire_pairs(shard, seed);
    write_shard(out_shard, rewired);
    return out_shard;
}

/*------------------------------- smoke pipeline ------------------------------*/

// teacher -> codec -> pairs -> perceptual -> distill(both) -> eval
inline MetricReport run_pipeline(const ExperimentConfig& cfg, const ArtifactTree& tree) {
    run_train_codec(cfg, tree);
    run_train_teacher(cfg, tree);
    run_gen_pairs(cfg, tree);
    run_train_perceptual(cfg, tree);
    run_distill(cfg, tree, "both");
    return run_eval(cfg, tree);
}

}  // namespace d2g

#endif
