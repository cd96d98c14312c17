#ifndef D2G_PERCEPTUAL_AUGMENT_HPP
#define D2G_PERCEPTUAL_AUGMENT_HPP

#include "d2g/core/graph.hpp"
#include "d2g/core/rng.hpp"

namespace d2g {

// Differentiable latent augmentations, applied with identical sampled
// parameters to both inputs of a perceptual loss. Families follow the usual
// split: blit (hflip, 90-degree rotation, integer translation), geometric
// (isotropic/anisotropic scaling, arbitrary rotation, fractional translation),
// color (brightness, saturation, contrast) and cutout.
struct AugmentationSpec {
    bool blit = true, geometric = true, color = true, cutout = true;
    double p_blit = 1.0, p_geom = 1.0, p_color = 1.0, p_cutout = 1.0;

    double blit_translate_frac = 0.125;
    double geom_rot_max_deg = 45.0;
    double geom_iso_min = 0.8, geom_iso_max = 1.25;
    double geom_aniso_min = 0.85, geom_aniso_max = 1.18;
    double geom_translate_frac = 0.125;
    double color_brightness = 0.3;
    double color_sat_min = 0.5, color_sat_max = 1.5;
    double color_con_min = 0.6, color_con_max = 1.5;
    double cutout_min = 0.25, cutout_max = 0.5;

    static AugmentationSpec identity() {
        AugmentationSpec s;
        s.blit = s.geometric = s.color = s.cutout = false;
        return s;
    }
    static AugmentationSpec blit_only() {
        AugmentationSpec s = identity();
        s.blit = true;
        return s;
    }
    static AugmentationSpec bg() {  // blit + geometric
        AugmentationSpec s = identity();
        s.blit = s.geometric = true;
        return s;
    }
    static AugmentationSpec bg_cutout() {
        AugmentationSpec s = identity();
        s.blit = s.geometric = s.cutout = true;
        return s;
    }
    static AugmentationSpec bgc_cutout() { return AugmentationSpec{}; }
};

// one sampled instance; fractions are resolved against tensor dims at apply
// time so the same op can serve any latent size
struct AugmentationOp {
    bool do_blit = false, do_geom = false, do_color = false, do_cutout = false;
    // blit
    bool hflip = false;
    int rot90 = 0;
    double tx_frac = 0, ty_frac = 0;
    // geometric
    double angle_deg = 0, iso = 1, aniso_x = 1, aniso_y = 1, ftx = 0, fty = 0;
    // color
    double brightness = 0, saturation = 1, contrast = 1;
    // cutout (center and size as fractions)
    double cut_cx = 0.5, cut_cy = 0.5, cut_w = 0, cut_h = 0;

    bool is_identity() const { return !(do_blit || do_geom || do_color || do_cutout); }
};

inline AugmentationOp sample_augmentation(const AugmentationSpec& spec, uint64_t seed) {
    Rng rng(hash_seed(seed, 0xA6));
    AugmentationOp op;
    if (spec.blit && rng.bernoulli(spec.p_blit)) {
        op.do_blit = true;
        op.hflip = rng.bernoulli(0.5);
        op.rot90 = rng.uniform_int(0, 3);
        op.tx_frac = rng.uniform(-spec.blit_translate_frac, spec.blit_translate_frac);
        op.ty_frac = rng.uniform(-spec.blit_translate_frac, spec.blit_translate_frac);
    }
    if (spec.geometric && rng.bernoulli(spec.p_geom)) {
        op.do_geom = true;
        op.angle_deg = rng.uniform(-spec.geom_rot_max_deg, spec.geom_rot_max_deg);
        op.iso = std::exp(rng.uniform(std::log(spec.geom_iso_min), std::log(spec.geom_iso_max)));
        op.aniso_x = std::exp(rng.uniform(std::log(spec.geom_aniso_min), std::log(spec.geom_aniso_max)));
        op.aniso_y = std::exp(rng.uniform(std::log(spec.geom_aniso_min), std::log(spec.geom_aniso_max)));
        op.ftx = rng.uniform(-spec.geom_translate_frac, spec.geom_translate_frac);
        op.fty = rng.uniform(-spec.geom_translate_frac, spec.geom_translate_frac);
    }
    if (spec.color && rng.bernoulli(spec.p_color)) {
        op.do_color = true;
        op.brightness = rng.uniform(-spec.color_brightness, spec.color_brightness);
        op.saturation = std::exp(rng.uniform(std::log(spec.color_sat_min), std::log(spec.color_sat_max)));
        op.contrast = std::exp(rng.uniform(std::log(spec.color_con_min), std::log(spec.color_con_max)));
    }
    if (spec.cutout && rng.bernoulli(spec.p_cutout)) {
        op.do_cutout = true;
        op.cut_w = rng.uniform(spec.cutout_min, spec.cutout_max);
        op.cut_h = rng.uniform(spec.cutout_min, spec.cutout_max);
        op.cut_cx = rng.next_unit();
        op.cut_cy = rng.next_unit();
    }
    return op;
}

namespace detail {

// Forward transform composed around the image center; the sampler needs the
// inverse (dst -> src). Blit-only matrices keep exact integer entries so pure
// blits stay bitwise lossless through bilinear sampling.
inline AffineMat augment_affine_inverse(const AugmentationOp& op, int hgt, int wid) {
    const double cx = (wid - 1) / 2.0, cy = (hgt - 1) / 2.0;
    auto about_center = [&](double a, double b, double c, double d, double tx, double ty) {
        AffineMat m{};
        m.m[0] = a; m.m[1] = b;
        m.m[3] = c; m.m[4] = d;
        m.m[2] = cx - (a * cx + b * cy) + tx;
        m.m[5] = cy - (c * cx + d * cy) + ty;
        return m;
    };

    AffineMat fwd = AffineMat::identity();
    if (op.do_blit) {
        if (op.hflip) fwd = about_center(-1, 0, 0, 1, 0, 0).compose(fwd);
        for (int r = 0; r < op.rot90; ++r) fwd = about_center(0, -1, 1, 0, 0, 0).compose(fwd);
        AffineMat t = AffineMat::identity();
        t.m[2] = static_cast<double>(std::lround(op.tx_frac * wid));
        t.m[5] = static_cast<double>(std::lround(op.ty_frac * hgt));
        fwd = t.compose(fwd);
    }
    if (op.do_geom) {
        const double th = op.angle_deg * std::numbers::pi / 180.0;
        const double sx = op.iso * op.aniso_x, sy = op.iso * op.aniso_y;
        AffineMat g = about_center(std::cos(th) * sx, -std::sin(th) * sy, std::sin(th) * sx,
                                   std::cos(th) * sy, op.ftx * wid, op.fty * hgt);
        fwd = g.compose(fwd);
    }

    // analytic 2x3 inverse
    const double a = fwd.m[0], b = fwd.m[1], tx = fwd.m[2];
    const double c = fwd.m[3], d = fwd.m[4], ty = fwd.m[5];
    const double det = a * d - b * c;
    AffineMat inv{};
    inv.m[0] = d / det;
    inv.m[1] = -b / det;
    inv.m[3] = -c / det;
    inv.m[4] = a / det;
    inv.m[2] = -(inv.m[0] * tx + inv.m[1] * ty);
    inv.m[5] = -(inv.m[3] * tx + inv.m[4] * ty);
    return inv;
}

inline Tensor cutout_mask(const AugmentationOp& op, int n, int c, int hgt, int wid) {
    Tensor mask = Tensor::full(1, 1, hgt, wid, 1.0);
    const int cw = static_cast<int>(std::lround(op.cut_w * wid));
    const int ch = static_cast<int>(std::lround(op.cut_h * hgt));
    const int x0 = static_cast<int>(std::lround(op.cut_cx * wid)) - cw / 2;
    const int y0 = static_cast<int>(std::lround(op.cut_cy * hgt)) - ch / 2;
    for (int y = std::max(0, y0); y < std::min(hgt, y0 + ch); ++y)
        for (int x = std::max(0, x0); x < std::min(wid, x0 + cw); ++x)
            mask.at(0, 0, y, x) = 0.0;
    (void)n;
    (void)c;
    return mask;
}

}  // namespace detail

// apply one sampled op to a single tensor; differentiable w.r.t. x
inline Var apply_augmentation_var(const AugmentationOp& op, const Var& x) {
    if (op.is_identity()) return x;
    Var h = x;
    if (op.do_blit || op.do_geom) {
        h = affine_sample(h, detail::augment_affine_inverse(op, x->val.h(), x->val.w()));
    }
    if (op.do_color) {
        // saturation scales deviation from the per-pixel channel mean,
        // contrast from the per-sample mean; brightness is a shift
        Var pixel_mean = mean_c(h);
        h = add(scale(sub(h, pixel_mean), op.saturation), pixel_mean);
        Var sample_mean = mean_chw(h);
        h = add(scale(sub(h, sample_mean), op.contrast), sample_mean);
        h = add_scalar(h, op.brightness);
    }
    if (op.do_cutout) {
        h = mul_mask(h, detail::cutout_mask(op, x->val.n(), x->val.c(), x->val.h(), x->val.w()));
    }
    return h;
}

inline std::pair<Tensor, Tensor> apply_augmentation(const AugmentationOp& op, const Tensor& x0,
                                                    const Tensor& x1) {
    if (!x0.same_shape(x1)) throw std::invalid_argument("apply_augmentation: shape mismatch");
    if (op.is_identity()) return {x0, x1};
    return {apply_augmentation_var(op, constant(x0))->val,
            apply_augmentation_var(op, constant(x1))->val};
}

}  // namespace d2g

#endif
