#ifndef D2G_TEACHER_UNET_HPP
#define D2G_TEACHER_UNET_HPP

#include <vector>

#include "d2g/core/nn.hpp"

namespace d2g {

// Small conditional U-Net denoiser: 3 resolutions, 2 residual blocks each,
// class-condition embedding added to the time embedding. The discriminator
// reuses the same trunk, so parameter names and construction order here are
// part of the checkpoint contract.
struct UNetConfig {
    int in_ch = 4;
    int out_ch = 4;
    int base = 24;
    std::vector<int> mult = {1, 2, 3};
    int blocks = 2;
    int temb_dim = 48;
    int cond_count = 10;  // real conditions; index cond_count is the CFG null
    int gn_groups = 4;

    int channels(int r) const { return base * mult[r]; }
    int resolutions() const { return static_cast<int>(mult.size()); }
};

// intermediate features exposed for the multi-scale discriminator readouts
struct UNetTrace {
    std::vector<Var> enc_skip;    // encoder output per resolution
    std::vector<Var> dec_deeper;  // features arriving from below, per resolution
    std::vector<Var> dec_out;     // decoder block output per resolution
};

inline Tensor sinusoidal_embedding(const std::vector<int>& t, int dim) {
    Tensor out(static_cast<int>(t.size()), dim, 1, 1);
    const int half = dim / 2;
    for (size_t i = 0; i < t.size(); ++i) {
        for (int j = 0; j < half; ++j) {
            double freq = std::exp(-std::log(10000.0) * j / std::max(1, half - 1));
            out[i * dim + j] = std::sin(t[i] * freq);
            out[i * dim + half + j] = std::cos(t[i] * freq);
        }
    }
    return out;
}

struct ResBlock {
    GroupNorm n1, n2;
    Conv2d c1, c2, skip;
    Linear emb;
    bool has_skip = false;

    ResBlock() = default;
    ResBlock(ParamStore& ps, const std::string& name, int c_in, int c_out, int temb_dim,
             int groups) {
        n1 = GroupNorm(ps, name + ".n1", c_in, groups);
        c1 = Conv2d(ps, name + ".c1", c_in, c_out, 3);
        emb = Linear(ps, name + ".emb", temb_dim, c_out);
        n2 = GroupNorm(ps, name + ".n2", c_out, groups);
        c2 = Conv2d(ps, name + ".c2", c_out, c_out, 3, 1, -1, /*zero_init=*/true);
        has_skip = c_in != c_out;
        if (has_skip) skip = Conv2d(ps, name + ".skip", c_in, c_out, 1, 1, 0);
    }

    Var fwd(const Var& x, const Var& temb) const {
        Var h = c1.fwd(silu(n1.fwd(x)));
        h = add(h, emb.fwd(temb));  // (n,c,1,1) broadcast over h,w
        h = c2.fwd(silu(n2.fwd(h)));
        return add(h, has_skip ? skip.fwd(x) : x);
    }
};

struct UNet {
    UNetConfig cfg;
    Conv2d stem;
    std::vector<std::vector<ResBlock>> enc;
    std::vector<Conv2d> down;
    std::vector<ResBlock> mid;
    std::vector<std::vector<ResBlock>> dec;
    std::vector<Conv2d> up;
    GroupNorm out_norm;
    Conv2d out_conv;
    Linear temb0, temb1;
    Embedding cond_emb;

    UNet() = default;
    UNet(ParamStore& ps, const std::string& prefix, const UNetConfig& cfg_) : cfg(cfg_) {
        const int R = cfg.resolutions();
        temb0 = Linear(ps, prefix + "temb.l0", cfg.temb_dim, cfg.temb_dim);
        temb1 = Linear(ps, prefix + "temb.l1", cfg.temb_dim, cfg.temb_dim);
        cond_emb = Embedding(ps, prefix + "cond", cfg.cond_count + 1, cfg.temb_dim);
        stem = Conv2d(ps, prefix + "stem", cfg.in_ch, cfg.channels(0), 3);
        enc.resize(R);
        for (int r = 0; r < R; ++r) {
            for (int b = 0; b < cfg.blocks; ++b) {
                enc[r].emplace_back(ps, prefix + "enc" + std::to_string(r) + ".b" + std::to_string(b),
                                    cfg.channels(r), cfg.channels(r), cfg.temb_dim, cfg.gn_groups);
            }
            if (r + 1 < R) {
                down.emplace_back(ps, prefix + "down" + std::to_string(r), cfg.channels(r),
                                  cfg.channels(r + 1), 3, 2);
            }
        }
        mid.emplace_back(ps, prefix + "mid.b0", cfg.channels(R - 1), cfg.channels(R - 1),
                         cfg.temb_dim, cfg.gn_groups);
        mid.emplace_back(ps, prefix + "mid.b1", cfg.channels(R - 1), cfg.channels(R - 1),
                         cfg.temb_dim, cfg.gn_groups);
        dec.resize(R);
        up.resize(R - 1);
        for (int r = R - 1; r >= 0; --r) {
            for (int b = 0; b < cfg.blocks; ++b) {
                int c_in = b == 0 ? 2 * cfg.channels(r) : cfg.channels(r);
                dec[r].emplace_back(ps, prefix + "dec" + std::to_string(r) + ".b" + std::to_string(b),
                                    c_in, cfg.channels(r), cfg.temb_dim, cfg.gn_groups);
            }
            if (r > 0) {
                up[r - 1] = Conv2d(ps, prefix + "up" + std::to_string(r - 1), cfg.channels(r),
                                   cfg.channels(r - 1), 3);
            }
        }
        out_norm = GroupNorm(ps, prefix + "out.norm", cfg.channels(0), cfg.gn_groups);
        out_conv = Conv2d(ps, prefix + "out.conv", cfg.channels(0), cfg.out_ch, 3, 1, -1,
                          /*zero_init=*/true);
    }

    // inject, when given, holds one Var per resolution r >= 1, added right
    // after that resolution's downsampling conv (the discriminator's resized
    // input path)
    Var forward(const Var& x, const std::vector<int>& t, const std::vector<int>& cond,
                UNetTrace* trace = nullptr, const std::vector<Var>* inject = nullptr) const {
        const int R = cfg.resolutions();
        Var temb = temb1.fwd(silu(temb0.fwd(constant(sinusoidal_embedding(t, cfg.temb_dim)))));
        temb = add(temb, cond_emb.fwd(cond));

        std::vector<Var> skips(R);
        Var h = stem.fwd(x);
        for (int r = 0; r < R; ++r) {
            if (r > 0) {
                h = down[r - 1].fwd(h);
                if (inject) h = add(h, (*inject)[r - 1]);
            }
            for (const auto& blk : enc[r]) h = blk.fwd(h, temb);
            skips[r] = h;
        }
        for (const auto& blk : mid) h = blk.fwd(h, temb);

        if (trace) {
            trace->enc_skip = skips;
            trace->dec_deeper.resize(R);
            trace->dec_out.resize(R);
        }
        for (int r = R - 1; r >= 0; --r) {
            if (r < R - 1) h = up[r].fwd(upsample_nearest2x(h));
            if (trace) trace->dec_deeper[r] = h;
            h = concat_c(h, skips[r]);
            for (const auto& blk : dec[r]) h = blk.fwd(h, temb);
            if (trace) trace->dec_out[r] = h;
        }
        return out_conv.fwd(silu(out_norm.fwd(h)));
    }
};

}  // namespace d2g

#endif
