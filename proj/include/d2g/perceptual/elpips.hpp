#ifndef D2G_PERCEPTUAL_ELPIPS_HPP
#define D2G_PERCEPTUAL_ELPIPS_HPP

#include <chrono>

#include "d2g/codec/codec.hpp"
#include "d2g/core/optim.hpp"
#include "d2g/perceptual/distance.hpp"

namespace d2g {

// One augmentation draw per call; the ensemble expectation builds up across
// SGD iterations. A fresh (inputs, seed) pair fully determines the value.
inline Var e_latent_lpips_var(const CalibratedDistance& dist, const AugmentationSpec& spec,
                              const Var& x0, const Var& x1, uint64_t seed) {
    if (!x0->val.same_shape(x1->val)) throw std::invalid_argument("e_latent_lpips: shape mismatch");
    AugmentationOp op = sample_augmentation(spec, seed);
    return dist.dist_var(apply_augmentation_var(op, x0), apply_augmentation_var(op, x1));
}

inline double e_latent_lpips(const CalibratedDistance& dist, const AugmentationSpec& spec,
                             const Tensor& x0, const Tensor& x1, uint64_t seed) {
    Tensor d = e_latent_lpips_var(dist, spec, constant(x0), constant(x1), seed)->val;
    double s = 0;
    for (size_t i = 0; i < d.size(); ++i) s += d[i];
    return s / d.n();
}

/*--------------------------- single-image diagnostic -------------------------*/

enum class ReconLoss { mse, latentlpips, e_latentlpips };

inline std::string recon_loss_name(ReconLoss m) {
    switch (m) {
        case ReconLoss::mse: return "mse";
        case ReconLoss::latentlpips: return "latentlpips";
        case ReconLoss::e_latentlpips: return "e_latentlpips";
    }
    return "?";
}

struct ReconResult {
    Tensor recovered;
    std::vector<double> curve;  // loss at every iteration
    double final_rms = 0;       // against the target
};

struct ReconConfig {
    int iters = 1500;
    double lr = 0.02;
    double lr_min_frac = 0.05;  // cosine decay floor as a fraction of lr
    double init_std = 1.0;
    uint64_t seed = 23;
};

// gradient-based recovery of a single latent: argmin_x d(x, target)
inline ReconResult reconstruct_single(ReconLoss mode, const CalibratedDistance& dist,
                                      const AugmentationSpec& spec, const Tensor& target,
                                      const ReconConfig& cfg) {
    if (cfg.iters < 1) throw std::invalid_argument("reconstruct_single: iters must be >= 1");
    ParamStore ps(hash_seed(cfg.seed, 0xC0));
    Var x = ps.create_gaussian("x", target.n(), target.c(), target.h(), target.w(), cfg.init_std);
    Adam opt(ps, cfg.lr);
    Var tgt = constant(target);

    ReconResult res;
    res.curve.reserve(cfg.iters);
    for (int it = 0; it < cfg.iters; ++it) {
        double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * it / cfg.iters));
        opt.set_lr(cfg.lr * (cfg.lr_min_frac + (1.0 - cfg.lr_min_frac) * cosine));
        Var loss;
        switch (mode) {
            case ReconLoss::mse: loss = mean_all(square(sub(x, tgt))); break;
            case ReconLoss::latentlpips: loss = mean_all(dist.dist_var(x, tgt)); break;
            case ReconLoss::e_latentlpips:
                loss = mean_all(e_latent_lpips_var(dist, spec, x, tgt, hash_seed(cfg.seed, it)));
                break;
        }
        res.curve.push_back(loss->val[0]);
        opt.zero_grad();
        backward(loss);
        opt.step();
    }
    res.recovered = x->val;
    res.final_rms = res.recovered.rms(target);
    return res;
}

/*------------------------------- loss benchmark ------------------------------*/

// Matched-batch comparison of the decode-to-pixel perceptual path against the
// direct latent path. Each timed call includes the backward pass to the
// inputs, which is what a training iteration pays.
struct BenchPathReport {
    std::string path;
    int batch = 0;
    double median_ms = 0;
    int64_t peak_bytes = 0;
    std::vector<double> trial_ms;
};

struct BenchConfig {
    int batch = 4;
    int latent_h = 8, latent_w = 8;
    int trials = 24;
    int warmup = 3;
    uint64_t seed = 31;
};

namespace detail {

template <class F>
BenchPathReport bench_path(const std::string& name, const BenchConfig& cfg, F&& call) {
    BenchPathReport rep;
    rep.path = name;
    rep.batch = cfg.batch;
    for (int i = 0; i < cfg.warmup; ++i) call(i);
    for (int i = 0; i < cfg.trials; ++i) {
        MemStats::reset_peak();
        auto t0 = std::chrono::steady_clock::now();
        call(cfg.warmup + i);
        auto t1 = std::chrono::steady_clock::now();
        rep.trial_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        rep.peak_bytes = std::max(rep.peak_bytes, MemStats::peak().load());
    }
    std::vector<double> sorted = rep.trial_ms;
    std::sort(sorted.begin(), sorted.end());
    rep.median_ms = sorted[sorted.size() / 2];
    return rep;
}

}  // namespace detail

inline std::vector<BenchPathReport> bench_loss(const Codec& codec,
                                               const CalibratedDistance& pixel_dist,
                                               const CalibratedDistance& latent_dist,
                                               const AugmentationSpec& spec,
                                               const BenchConfig& cfg) {
    if (cfg.trials < 20) throw std::invalid_argument("bench_loss: need >= 20 trials");
    Rng rng(hash_seed(cfg.seed, 0xB0));
    const int lc = codec.latent_channels;
    Tensor za = rng.gaussian(cfg.batch, lc, cfg.latent_h, cfg.latent_w);
    Tensor zb = rng.gaussian(cfg.batch, lc, cfg.latent_h, cfg.latent_w);

    std::vector<BenchPathReport> out;
    out.push_back(detail::bench_path("pixel_decode_lpips", cfg, [&](int) {
        Var a = leaf(za);
        Var b = leaf(zb);
        Var loss = mean_all(pixel_dist.dist_var(codec.decode_var(a), codec.decode_var(b)));
        backward(loss);
    }));
    out.push_back(detail::bench_path("latent_elpips", cfg, [&](int trial) {
        Var a = leaf(za);
        Var b = leaf(zb);
        Var loss = mean_all(e_latent_lpips_var(latent_dist, spec, a, b, hash_seed(cfg.seed, trial)));
        backward(loss);
    }));
    return out;
}

}  // namespace d2g

#endif
