#ifndef D2G_DISTILL_TRAINER_HPP
#define D2G_DISTILL_TRAINER_HPP

#include <fstream>

#include "d2g/adversarial/losses.hpp"
#include "d2g/distill/generator.hpp"
#include "d2g/pairgen/pairgen.hpp"
#include "d2g/perceptual/elpips.hpp"

namespace d2g {

enum class LossMode { mse, pseudo_huber, latentlpips, e_latentlpips, blended };

inline std::string loss_mode_name(LossMode m) {
    switch (m) {
        case LossMode::mse: return "mse";
        case LossMode::pseudo_huber: return "pseudo_huber";
        case LossMode::latentlpips: return "latentlpips";
        case LossMode::e_latentlpips: return "e_latentlpips";
        case LossMode::blended: return "blended";
    }
    return "?";
}

inline LossMode loss_mode_from(const std::string& s) {
    for (LossMode m : {LossMode::mse, LossMode::pseudo_huber, LossMode::latentlpips,
                       LossMode::e_latentlpips, LossMode::blended}) {
        if (loss_mode_name(m) == s) return m;
    }
    throw std::invalid_argument("unknown loss mode: " + s);
}

struct DistillConfig {
    // stage 1
    int steps = 400;
    int batch = 12;
    double lr = 4e-4;
    double beta1 = 0.9, beta2 = 0.999;
    double weight_decay = 0.0;
    LossMode loss = LossMode::e_latentlpips;
    AugmentationSpec aug;          // used by e_latentlpips / blended
    double blend_lambda = 0.5;     // blended: l*latentlpips + (1-l)*e_latentlpips
    double pseudo_huber_c = 0.03;  // c = pseudo_huber_c * sqrt(dim)
    // stage 2
    int stage2_steps = 200;
    double stage2_lr = -1;  // <0: lr/10 step decay at the stage boundary
    double lambda_gan = 0.25;
    double r1_gamma = 0.01;
    int r1_interval = 16;
    MixAndMatchConfig mixmatch{0.1, 0.1, 0.1};
    double ema_beta = 0.99;
    int ema_start = 50;
    bool noise_augment_d = false;
    int noise_augment_t_max = 0;  // sampled t in [1, t_max] when enabled
    // common
    uint64_t seed = 1;
    int probe_batch = 16;
    int ckpt_every = 0;  // 0: final only
    std::filesystem::path out_dir;  // empty: no files written
};

// flattened view over a shard set
struct PairDataset {
    std::vector<const PairRecord*> records;
    int c = 0, h = 0, w = 0;
    bool rewired = false;

    static PairDataset from(const std::vector<PairShard>& shards) {
        if (shards.empty()) throw std::invalid_argument("pair dataset: no shards");
        PairDataset d;
        d.c = shards[0].header.dims[0];
        d.h = shards[0].header.dims[1];
        d.w = shards[0].header.dims[2];
        for (const auto& s : shards) {
            if (s.header.dims[0] != d.c || s.header.dims[1] != d.h || s.header.dims[2] != d.w) {
                throw std::invalid_argument("pair dataset: mixed latent shapes");
            }
            d.rewired = d.rewired || s.header.rewired;
            for (const auto& r : s.records) d.records.push_back(&r);
        }
        return d;
    }

    size_t size() const { return records.size(); }

    void fill_batch(const std::vector<size_t>& idx, Tensor& z, Tensor& x,
                    std::vector<int>& cond) const {
        const size_t per = static_cast<size_t>(c) * h * w;
        for (size_t i = 0; i < idx.size(); ++i) {
            const PairRecord& r = *records[idx[i]];
            std::memcpy(z.data() + i * per, r.z.data(), per * sizeof(double));
            std::memcpy(x.data() + i * per, r.x.data(), per * sizeof(double));
            cond[i] = static_cast<int>(r.cond);
        }
    }
};

// seed-stream tags; stage 2's G sampler must match stage 1's so lambda_gan=0
// reproduces stage-1 batches
inline constexpr uint64_t kGSamplerTag = 0x6501;
inline constexpr uint64_t kDSamplerTag = 0x6502;
inline constexpr uint64_t kDAuxTag = 0x6503;

/*-------------------------------- loss assembly ------------------------------*/

inline Var regression_loss(LossMode mode, const CalibratedDistance* dist,
                           const AugmentationSpec& aug, double blend_lambda,
                           double pseudo_huber_c, const Var& pred, const Var& target,
                           uint64_t step_seed) {
    switch (mode) {
        case LossMode::mse: return mean_all(square(sub(pred, target)));
        case LossMode::pseudo_huber: {
            const double dim = static_cast<double>(pred->val.size() / pred->val.n());
            const double c = pseudo_huber_c * std::sqrt(dim);
            Var sq = sum_chw(square(sub(pred, target)));
            return mean_all(add_scalar(sqrt_v(add_scalar(sq, c * c)), -c));
        }
        case LossMode::latentlpips: return mean_all(dist->dist_var(pred, target));
        case LossMode::e_latentlpips:
            return mean_all(e_latent_lpips_var(*dist, aug, pred, target, step_seed));
        case LossMode::blended: {
            Var plain = mean_all(dist->dist_var(pred, target));
            Var ens = mean_all(e_latent_lpips_var(*dist, aug, pred, target, step_seed));
            return add(scale(plain, blend_lambda), scale(ens, 1.0 - blend_lambda));
        }
    }
    throw std::invalid_argument("regression_loss: bad mode");
}

/*---------------------------------- logging ----------------------------------*/

class TrainLog {
public:
    explicit TrainLog(const std::filesystem::path& path) {
        if (!path.empty()) {
            std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
            out_.open(path, std::ios::trunc);
        }
    }
    void record(const json& j) {
        rows_.push_back(j);
        if (out_.is_open()) out_ << j.dump() << "\n";
    }
    const std::vector<json>& rows() const { return rows_; }

private:
    std::ofstream out_;
    std::vector<json> rows_;
};

/*---------------------------------- stage 1 ----------------------------------*/

struct DistillResult {
    double probe_loss_start = 0;
    double probe_loss_end = 0;
    std::vector<json> log;
};

namespace detail {

// frozen probe batch; deterministic in (dataset, seed, mode)
inline double probe_loss(const Generator& g, const PairDataset& data, LossMode mode,
                         const CalibratedDistance* dist, const AugmentationSpec& aug,
                         double blend_lambda, double pseudo_huber_c, int probe_batch,
                         uint64_t seed) {
    Rng rng(hash_seed(seed, 0x9201));
    const int n = static_cast<int>(std::min<size_t>(probe_batch, data.size()));
    Tensor z(n, data.c, data.h, data.w), x(n, data.c, data.h, data.w);
    std::vector<int> cond(n);
    std::vector<size_t> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = rng.next_u64() % data.size();
    data.fill_batch(idx, z, x, cond);
    Var pred = g.one_step_var(constant(z), cond);
    Var loss = regression_loss(mode, dist, aug, blend_lambda, pseudo_huber_c, pred, constant(x),
                               hash_seed(seed, 0x9202));
    return loss->val[0];
}

}  // namespace detail

inline DistillResult distill_stage1(Generator& g, const std::vector<PairShard>& shards,
                                    const CalibratedDistance* dist, const DistillConfig& cfg) {
    PairDataset data = PairDataset::from(shards);
    if (data.c != g.den->cfg.in_ch) {
        throw std::invalid_argument("distill_stage1: shard/latent channel mismatch");
    }
    const bool needs_dist = cfg.loss == LossMode::latentlpips ||
                            cfg.loss == LossMode::e_latentlpips || cfg.loss == LossMode::blended;
    if (needs_dist && !dist) throw std::invalid_argument("distill_stage1: loss needs a distance");

    TrainLog log(cfg.out_dir.empty() ? std::filesystem::path{}
                                     : cfg.out_dir / "stage1_log.jsonl");
    DistillResult res;
    res.probe_loss_start = detail::probe_loss(g, data, cfg.loss, dist, cfg.aug, cfg.blend_lambda,
                                              cfg.pseudo_huber_c, cfg.probe_batch, cfg.seed);

    Adam opt(g.den->params, cfg.lr, cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay);
    BatchSampler sampler(data.size(), cfg.batch, hash_seed(cfg.seed, kGSamplerTag));
    Tensor z(cfg.batch, data.c, data.h, data.w), x(cfg.batch, data.c, data.h, data.w);
    std::vector<int> cond(cfg.batch);
    for (int step = 0; step < cfg.steps; ++step) {
        data.fill_batch(sampler.next(), z, x, cond);
        Var pred = g.one_step_var(constant(z), cond);
        Var loss = regression_loss(cfg.loss, dist, cfg.aug, cfg.blend_lambda, cfg.pseudo_huber_c,
                                   pred, constant(x), hash_seed(cfg.seed, 0xE000 + step));
        opt.zero_grad();
        backward(loss);
        opt.step();
        log.record({{"step", step}, {"loss", loss->val[0]}});
        if (cfg.ckpt_every > 0 && !cfg.out_dir.empty() && (step + 1) % cfg.ckpt_every == 0) {
            char name[32];
            std::snprintf(name, sizeof(name), "gen-s1-%06d.d2g", step + 1);
            save_generator(cfg.out_dir / name, g);
        }
    }

    res.probe_loss_end = detail::probe_loss(g, data, cfg.loss, dist, cfg.aug, cfg.blend_lambda,
                                            cfg.pseudo_huber_c, cfg.probe_batch, cfg.seed);
    res.log = log.rows();
    if (!cfg.out_dir.empty()) save_generator(cfg.out_dir / "generator_stage1.d2g", g);
    return res;
}

/*---------------------------------- stage 2 ----------------------------------*/

struct Stage2Result {
    DistillResult base;
    EmaState ema;
    bool ema_active = false;
};

inline Stage2Result distill_stage2(Generator& g, Discriminator& d,
                                   const std::vector<PairShard>& shards,
                                   const CalibratedDistance* dist, const DistillConfig& cfg) {
    if (cfg.lambda_gan < 0) throw std::invalid_argument("distill_stage2: lambda_gan must be >= 0");
    PairDataset data = PairDataset::from(shards);
    if (data.c != g.den->cfg.in_ch) {
        throw std::invalid_argument("distill_stage2: shard/latent channel mismatch");
    }

    TrainLog log(cfg.out_dir.empty() ? std::filesystem::path{}
                                     : cfg.out_dir / "stage2_log.jsonl");
    Stage2Result res;
    res.base.probe_loss_start = detail::probe_loss(g, data, cfg.loss, dist, cfg.aug,
                                                   cfg.blend_lambda, cfg.pseudo_huber_c,
                                                   cfg.probe_batch, cfg.seed);

    const double g_lr = cfg.stage2_lr > 0 ? cfg.stage2_lr : cfg.lr * 0.1;
    Adam opt_g(g.den->params, g_lr, cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay);
    Adam opt_d(*d.params, g_lr, cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay);

    // the G-side batch stream matches stage 1's derivation so a lambda_gan=0
    // run reproduces stage-1 updates on the same sequence
    BatchSampler g_sampler(data.size(), cfg.batch, hash_seed(cfg.seed, kGSamplerTag));
    BatchSampler d_sampler(data.size(), cfg.batch, hash_seed(cfg.seed, kDSamplerTag));
    Rng d_rng(hash_seed(cfg.seed, kDAuxTag));

    res.ema = EmaState::init(g.den->params, cfg.ema_beta);
    R1State r1{cfg.r1_interval, 0};

    Tensor zg(cfg.batch, data.c, data.h, data.w), xg(cfg.batch, data.c, data.h, data.w);
    std::vector<int> cg(cfg.batch);
    for (int step = 0; step < cfg.stage2_steps; ++step) {
        // ---- D update ----
        double d_loss_v = 0, r1_v = 0;
        {
            std::vector<size_t> idx = d_sampler.next();
            std::vector<MixBatchItem> items(idx.size());
            Tensor zb(cfg.batch, data.c, data.h, data.w), xb(cfg.batch, data.c, data.h, data.w);
            std::vector<int> cb(cfg.batch);
            data.fill_batch(idx, zb, xb, cb);
            Tensor fake = g.one_step(zb, cb);
            const size_t per = static_cast<size_t>(data.c) * data.h * data.w;
            for (size_t i = 0; i < idx.size(); ++i) {
                items[i].z = Tensor(1, data.c, data.h, data.w);
                items[i].x_real = Tensor(1, data.c, data.h, data.w);
                items[i].x_fake = Tensor(1, data.c, data.h, data.w);
                std::memcpy(items[i].z.data(), zb.data() + i * per, per * sizeof(double));
                std::memcpy(items[i].x_real.data(), xb.data() + i * per, per * sizeof(double));
                std::memcpy(items[i].x_fake.data(), fake.data() + i * per, per * sizeof(double));
                items[i].cond = cb[i];
            }
            auto entries = mix_and_match(items, cfg.mixmatch, hash_seed(cfg.seed, 0xF000 + step));

            int disc_t = 0;
            if (cfg.noise_augment_d && cfg.noise_augment_t_max > 0) {
                disc_t = d_rng.uniform_int(1, cfg.noise_augment_t_max);
            }
            auto pack = [&](bool real_side) {
                std::vector<const DiscEntry*> sel;
                for (const auto& e : entries)
                    if (e.real == real_side) sel.push_back(&e);
                Tensor z(std::max<size_t>(1, sel.size()), data.c, data.h, data.w);
                Tensor x(std::max<size_t>(1, sel.size()), data.c, data.h, data.w);
                std::vector<int> c(std::max<size_t>(1, sel.size()), 0);
                for (size_t i = 0; i < sel.size(); ++i) {
                    std::memcpy(z.data() + i * per, sel[i]->z.data(), per * sizeof(double));
                    Tensor xs = sel[i]->x;
                    if (disc_t > 0) {
                        // schedule noise at a small sampled t before discrimination
                        Tensor noise(1, data.c, data.h, data.w);
                        d_rng.fill_gaussian(noise);
                        xs.scale_(g.schedule.alpha[disc_t]);
                        xs.axpy_(g.schedule.sigma[disc_t], noise);
                    }
                    std::memcpy(x.data() + i * per, xs.data(), per * sizeof(double));
                    c[i] = sel[i]->cond;
                }
                return std::tuple<Tensor, Tensor, std::vector<int>, bool>(
                    std::move(z), std::move(x), std::move(c), !sel.empty());
            };
            auto [zr, xr, cr, has_real] = pack(true);
            auto [zf, xf, cf, has_fake] = pack(false);

            opt_g.zero_grad();
            opt_d.zero_grad();
            set_params_requires_grad(g.den->params, false);
            Var d_loss;
            if (has_real && has_fake) {
                d_loss = gan_disc_loss(d.forward_var(cr, constant(zr), constant(xr), disc_t),
                                       d.forward_var(cf, constant(zf), constant(xf), disc_t));
            } else {
                // degenerate mix (all entries one-sided); train on what exists
                auto& zz = has_real ? zr : zf;
                auto& xx = has_real ? xr : xf;
                auto& cc = has_real ? cr : cf;
                d_loss = detail::mean_softplus(
                    d.forward_var(cc, constant(zz), constant(xx), disc_t).all(), has_real);
            }
            backward(d_loss);
            d_loss_v = d_loss->val[0];
            if (r1.due() && has_real) {
                Tensor z1(1, data.c, data.h, data.w), x1(1, data.c, data.h, data.w);
                std::memcpy(z1.data(), zr.data(), per * sizeof(double));
                std::memcpy(x1.data(), xr.data(), per * sizeof(double));
                r1_v = apply_r1_to_param_grads(d, cr[0], z1, x1, cfg.r1_gamma);
            }
            r1.advance();
            opt_d.step();
            set_params_requires_grad(g.den->params, true);
        }

        // ---- G update ----
        double g_loss_v = 0, reg_v = 0;
        {
            data.fill_batch(g_sampler.next(), zg, xg, cg);
            opt_g.zero_grad();
            opt_d.zero_grad();
            Var pred = g.one_step_var(constant(zg), cg);
            Var reg = regression_loss(cfg.loss, dist, cfg.aug, cfg.blend_lambda,
                                      cfg.pseudo_huber_c, pred, constant(xg),
                                      hash_seed(cfg.seed, 0xE000 + step));
            Var total = reg;
            if (cfg.lambda_gan > 0) {
                set_params_requires_grad(*d.params, false);
                Var gan = gan_generator_loss(d.forward_var(cg, constant(zg), pred));
                total = add(reg, scale(gan, cfg.lambda_gan));
                g_loss_v = gan->val[0];
            }
            backward(total);
            if (cfg.lambda_gan > 0) set_params_requires_grad(*d.params, true);
            opt_g.step();
            reg_v = reg->val[0];
            if (step >= cfg.ema_start) {
                res.ema.update(g.den->params);
                res.ema_active = true;
            }
        }

        log.record({{"step", step},
                    {"d_loss", d_loss_v},
                    {"g_loss", g_loss_v},
                    {"reg_loss", reg_v},
                    {"r1", r1_v}});
        if (cfg.ckpt_every > 0 && !cfg.out_dir.empty() && (step + 1) % cfg.ckpt_every == 0) {
            char name[32];
            std::snprintf(name, sizeof(name), "gen-s2-%06d.d2g", step + 1);
            save_generator(cfg.out_dir / name, g);
        }
    }

    res.base.probe_loss_end = detail::probe_loss(g, data, cfg.loss, dist, cfg.aug,
                                                 cfg.blend_lambda, cfg.pseudo_huber_c,
                                                 cfg.probe_batch, cfg.seed);
    res.base.log = log.rows();
    if (res.ema_active) res.ema.write_to(g.den->params);
    if (!cfg.out_dir.empty()) {
        save_generator(cfg.out_dir / "generator_stage2.d2g", g);
        save_discriminator(cfg.out_dir / "discriminator.d2g", d);
    }
    return res;
}

}  // namespace d2g

#endif
