#ifndef D2G_ADVERSARIAL_DISCRIMINATOR_HPP
#define D2G_ADVERSARIAL_DISCRIMINATOR_HPP

#include "d2g/teacher/teacher.hpp"

namespace d2g {

// Conditional discriminator built on the teacher's U-Net trunk. The trunk is
// initialized from teacher weights; everything the discriminator adds starts
// at (or reads out to) zero influence:
//   - z conditioning enters through a zero-initialized 1x1 projection,
//   - resized copies of the input latent are injected after every
//     downsampling conv through zero-initialized 1x1 projections,
//   - three 1x1 readout heads per decoder scale (skip features, upsampled
//     bottleneck features, combined features) produce per-location logits.
struct ScaleLogits {
    Var skip, bneck, comb;
};

struct MultiScaleLogits {
    std::vector<ScaleLogits> scales;

    std::vector<Var> all() const {
        std::vector<Var> out;
        for (const auto& s : scales) {
            out.push_back(s.skip);
            out.push_back(s.bneck);
            out.push_back(s.comb);
        }
        return out;
    }
    size_t head_count() const { return 3 * scales.size(); }
};

struct Discriminator {
    UNetConfig cfg;
    std::shared_ptr<ParamStore> params;
    UNet net;
    Conv2d z_proj;
    std::vector<Conv2d> inject;  // one per resolution r >= 1
    struct Heads {
        Conv2d skip, bneck, comb;
    };
    std::vector<Heads> heads;
    int scales = 0;

    MultiScaleLogits forward(const std::vector<int>& cond, const Tensor& z, const Tensor& x,
                             int t = 0) const {
        return forward_var(cond, constant(z), constant(x), t);
    }

    MultiScaleLogits forward_var(const std::vector<int>& cond, const Var& z, const Var& x,
                                 int t = 0) const {
        if (!z->val.same_shape(x->val)) {
            throw std::invalid_argument("disc_forward: z/x shape mismatch");
        }
        if (x->val.c() != cfg.in_ch) throw std::invalid_argument("disc_forward: channel mismatch");
        if (static_cast<int>(cond.size()) != x->val.n()) {
            throw std::invalid_argument("disc_forward: condition count mismatch");
        }
        Var merged = add(x, z_proj.fwd(z));

        std::vector<Var> inj;
        Var resized = x;
        for (int r = 1; r < cfg.resolutions(); ++r) {
            resized = avg_pool2x(resized);
            inj.push_back(inject[r - 1].fwd(resized));
        }

        UNetTrace trace;
        std::vector<int> ts(cond.size(), t);
        net.forward(merged, ts, cond, &trace, &inj);

        MultiScaleLogits out;
        for (int r = 0; r < scales; ++r) {
            ScaleLogits s;
            s.skip = heads[r].skip.fwd(trace.enc_skip[r]);
            s.bneck = heads[r].bneck.fwd(trace.dec_deeper[r]);
            s.comb = heads[r].comb.fwd(trace.dec_out[r]);
            out.scales.push_back(std::move(s));
        }
        return out;
    }
};

inline Discriminator build_discriminator(const TeacherModel& teacher, int scales) {
    auto den = std::dynamic_pointer_cast<UNetDenoiser>(teacher.denoiser);
    if (!den) {
        throw std::invalid_argument("build_discriminator: teacher has no network weights");
    }
    if (scales != den->cfg.resolutions()) {
        throw std::invalid_argument("build_discriminator: scales must match teacher resolutions");
    }
    Discriminator d;
    d.cfg = den->cfg;
    d.scales = scales;
    d.params = std::make_shared<ParamStore>(hash_seed(0xD15C, scales));
    d.net = UNet(*d.params, "unet.", d.cfg);
    d.z_proj = Conv2d(*d.params, "disc.z_proj", d.cfg.in_ch, d.cfg.in_ch, 1, 1, 0,
                      /*zero_init=*/true);
    for (int r = 1; r < d.cfg.resolutions(); ++r) {
        d.inject.emplace_back(*d.params, "disc.inject" + std::to_string(r), d.cfg.in_ch,
                              d.cfg.channels(r), 1, 1, 0, /*zero_init=*/true);
    }
    for (int r = 0; r < scales; ++r) {
        Discriminator::Heads h;
        h.skip = Conv2d(*d.params, "disc.head" + std::to_string(r) + ".skip", d.cfg.channels(r), 1,
                        1, 1, 0);
        h.bneck = Conv2d(*d.params, "disc.head" + std::to_string(r) + ".bneck", d.cfg.channels(r),
                         1, 1, 1, 0);
        h.comb = Conv2d(*d.params, "disc.head" + std::to_string(r) + ".comb", d.cfg.channels(r), 1,
                        1, 1, 0);
        d.heads.push_back(std::move(h));
    }
    size_t copied = d.params->copy_matching_from(den->params);
    if (copied != den->params.size()) {
        throw std::invalid_argument("build_discriminator: teacher weight copy incomplete");
    }
    return d;
}

inline void save_discriminator(const std::filesystem::path& path, const Discriminator& d) {
    json meta = {{"unet", unet_config_json(d.cfg)}, {"scales", d.scales}};
    save_checkpoint(path, "D2G-DSC1", meta, *d.params);
}

}  // namespace d2g

#endif
