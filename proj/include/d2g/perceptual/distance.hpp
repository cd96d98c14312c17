#ifndef D2G_PERCEPTUAL_DISTANCE_HPP
#define D2G_PERCEPTUAL_DISTANCE_HPP

#include "d2g/perceptual/augment.hpp"
#include "d2g/perceptual/backbone.hpp"

namespace d2g {

// Calibrated perceptual distance: channel-normalized backbone features,
// per-channel non-negative weights on squared differences, spatial average,
// summed over the 5 tapped layers.
struct CalibratedDistance {
    std::shared_ptr<FeatureBackbone> backbone;
    std::vector<Tensor> weights;  // one (1,c_l,1,1) per tap, elementwise >= 0

    static CalibratedDistance uncalibrated(std::shared_ptr<FeatureBackbone> bb) {
        CalibratedDistance d;
        d.backbone = std::move(bb);
        for (int w : d.backbone->cfg.widths) d.weights.push_back(Tensor::full(1, w, 1, 1, 1.0));
        return d;
    }

    // per-sample distance, shape (n,1,1,1)
    Var dist_var(const Var& a, const Var& b) const {
        if (!a->val.same_shape(b->val)) throw std::invalid_argument("distance: shape mismatch");
        if (a->val.c() != backbone->cfg.in_ch) {
            throw std::invalid_argument("distance: input channels do not match backbone");
        }
        auto ta = backbone->taps(a);
        auto tb = backbone->taps(b);
        Var total;
        for (size_t l = 0; l < ta.size(); ++l) {
            Var diff = sub(channel_unit_norm(ta[l]), channel_unit_norm(tb[l]));
            Var wsq = mul(square(diff), constant(weights[l]));
            Var layer = sum_chw(mean_hw(wsq));  // spatial mean, channel sum
            total = total ? add(total, layer) : layer;
        }
        return total;
    }

    double operator()(const Tensor& a, const Tensor& b) const {
        Tensor d = dist_var(constant(a), constant(b))->val;
        double s = 0;
        for (size_t i = 0; i < d.size(); ++i) s += d[i];
        return s / d.n();
    }
};

inline double latent_lpips(const CalibratedDistance& dist, const Tensor& x0, const Tensor& x1) {
    return dist(x0, x1);
}

/*------------------------------- synthetic 2afc ------------------------------*/

// stands in for human-judgment triplets: two distortions of the same kind at
// different magnitudes; ground-truth label is the smaller one
struct TwoAFCTriplet {
    Tensor ref, a, b;
    int closer = 0;          // 0: a, 1: b
    int kind = 0;            // distortion family
    double mag_a = 0, mag_b = 0;  // true magnitudes behind the label
};

struct DistortionConfig {
    double mag_min = 0.08, mag_max = 1.0;
    double noise_scale = 0.6;    // gaussian sigma at magnitude 1
    double blur_scale = 1.0;     // blend toward 3x3 blur at magnitude 1
    double contrast_scale = 0.7; // deviation-gain shift at magnitude 1
    double warp_deg = 7.0;       // rotation degrees at magnitude 1
};

namespace detail {

inline Tensor blur3(const Tensor& x) {
    Tensor out(x.n(), x.c(), x.h(), x.w());
    const double k[3] = {0.25, 0.5, 0.25};
    for (int i = 0; i < x.n(); ++i)
        for (int j = 0; j < x.c(); ++j)
            for (int r = 0; r < x.h(); ++r)
                for (int cc = 0; cc < x.w(); ++cc) {
                    double s = 0;
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx) {
                            int rr = std::clamp(r + dy, 0, x.h() - 1);
                            int c2 = std::clamp(cc + dx, 0, x.w() - 1);
                            s += k[dy + 1] * k[dx + 1] * x.at(i, j, rr, c2);
                        }
                    out.at(i, j, r, cc) = s;
                }
    return out;
}

inline Tensor distort(const Tensor& x, int kind, double mag, const DistortionConfig& dc,
                      Rng& rng) {
    switch (kind) {
        case 0: {  // additive gaussian noise
            Tensor out = x;
            for (size_t i = 0; i < out.size(); ++i) {
                out[i] += dc.noise_scale * mag * rng.next_gaussian();
            }
            return out;
        }
        case 1: {  // blur blend
            Tensor b = blur3(x);
            Tensor out = x;
            double t = std::min(1.0, dc.blur_scale * mag);
            for (size_t i = 0; i < out.size(); ++i) out[i] = (1 - t) * out[i] + t * b[i];
            return out;
        }
        case 2: {  // contrast shift around the sample mean
            double mean = x.sum() / static_cast<double>(x.size());
            double gain = 1.0 + dc.contrast_scale * mag * (rng.bernoulli(0.5) ? 1.0 : -1.0);
            Tensor out = x;
            for (size_t i = 0; i < out.size(); ++i) out[i] = mean + gain * (out[i] - mean);
            return out;
        }
        case 3: {  // small warp
            AugmentationOp op;
            op.do_geom = true;
            op.angle_deg = dc.warp_deg * mag * (rng.bernoulli(0.5) ? 1.0 : -1.0);
            op.ftx = 0.02 * mag;
            op.fty = -0.015 * mag;
            return apply_augmentation_var(op, constant(x))->val;
        }
        default: throw std::invalid_argument("distort: bad kind");
    }
}

}  // namespace detail

inline std::vector<TwoAFCTriplet> make_synthetic_2afc(const std::vector<Tensor>& items,
                                                      const DistortionConfig& dc, int count,
                                                      uint64_t seed) {
    if (items.empty()) throw std::invalid_argument("make_synthetic_2afc: empty input");
    std::vector<TwoAFCTriplet> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
        Rng rng(hash_seed(seed, i));
        const Tensor& ref = items[rng.next_u64() % items.size()];
        int kind = rng.uniform_int(0, 3);
        double ma = rng.uniform(dc.mag_min, dc.mag_max);
        double mb = rng.uniform(dc.mag_min, dc.mag_max);
        if (std::abs(ma - mb) < 0.04) continue;  // undefined label; drop
        TwoAFCTriplet t;
        t.ref = ref;
        t.a = detail::distort(ref, kind, ma, dc, rng);
        t.b = detail::distort(ref, kind, mb, dc, rng);
        t.closer = ma < mb ? 0 : 1;
        t.kind = kind;
        t.mag_a = ma;
        t.mag_b = mb;
        out.push_back(std::move(t));
    }
    return out;
}

/*--------------------------------- calibration ------------------------------*/

// per-channel spatial means of normalized-feature squared differences; the
// distance is linear in the calibration weights over this representation
inline std::vector<double> lpips_channel_features(const FeatureBackbone& bb, const Tensor& u,
                                                  const Tensor& v) {
    auto tu = bb.taps(constant(u));
    auto tv = bb.taps(constant(v));
    std::vector<double> phi;
    for (size_t l = 0; l < tu.size(); ++l) {
        Tensor m = mean_hw(square(sub(channel_unit_norm(tu[l]), channel_unit_norm(tv[l]))))->val;
        for (int c = 0; c < m.c(); ++c) phi.push_back(m[c]);
    }
    return phi;
}

inline double twoafc_agreement(const CalibratedDistance& d,
                               const std::vector<TwoAFCTriplet>& triplets) {
    if (triplets.empty()) return 0.0;
    int agree = 0;
    for (const auto& t : triplets) {
        double da = d(t.ref, t.a), db = d(t.ref, t.b);
        int pick = da <= db ? 0 : 1;
        if (pick == t.closer) ++agree;
    }
    return static_cast<double>(agree) / triplets.size();
}

struct CalibrateConfig {
    int steps = 300;
    double lr = 0.02;
    double val_fraction = 0.3;
    double min_gain = 0.01;  // required held-out improvement to keep the fit
    uint64_t seed = 17;
};

// Logistic fit of non-negative per-channel weights on 2AFC triplets. The fit
// is kept only when it beats the uniform weighting on an internal validation
// split, so the returned distance never scores below the w=1 baseline.
inline CalibratedDistance calibrate(std::shared_ptr<FeatureBackbone> backbone,
                                    const std::vector<TwoAFCTriplet>& triplets,
                                    const CalibrateConfig& cc = {}) {
    if (triplets.empty()) throw std::invalid_argument("calibrate: empty triplet set");
    const FeatureBackbone& bb = *backbone;

    struct Row {
        std::vector<double> delta;  // phi(ref,a) - phi(ref,b)
        int label;
    };
    std::vector<Row> rows;
    rows.reserve(triplets.size());
    for (const auto& t : triplets) {
        auto pa = lpips_channel_features(bb, t.ref, t.a);
        auto pb = lpips_channel_features(bb, t.ref, t.b);
        Row r;
        r.delta.resize(pa.size());
        for (size_t i = 0; i < pa.size(); ++i) r.delta[i] = pa[i] - pb[i];
        r.label = t.closer;
        rows.push_back(std::move(r));
    }
    const size_t dim = rows[0].delta.size();
    const size_t n_val = std::max<size_t>(1, static_cast<size_t>(rows.size() * cc.val_fraction));
    const size_t n_fit = rows.size() - n_val;

    auto agreement = [&](const std::vector<double>& w, size_t lo, size_t hi) {
        int agree = 0;
        for (size_t i = lo; i < hi; ++i) {
            double delta = 0;
            for (size_t c = 0; c < dim; ++c) delta += w[c] * rows[i].delta[c];
            int pick = delta <= 0 ? 0 : 1;  // smaller distance wins
            if (pick == rows[i].label) ++agree;
        }
        return static_cast<double>(agree) / std::max<size_t>(1, hi - lo);
    };

    // Adam on the logistic loss, weights clamped to >= 0 each step
    std::vector<double> w(dim, 1.0), m(dim, 0.0), v(dim, 0.0);
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    for (int step = 1; step <= cc.steps; ++step) {
        std::vector<double> g(dim, 0.0);
        for (size_t i = 0; i < n_fit; ++i) {
            double delta = 0;
            for (size_t c = 0; c < dim; ++c) delta += w[c] * rows[i].delta[c];
            // P(label==1) = sigmoid(delta); delta>0 means b is closer
            double p = sigmoid_s(delta);
            double r = p - rows[i].label;
            for (size_t c = 0; c < dim; ++c) g[c] += r * rows[i].delta[c];
        }
        for (size_t c = 0; c < dim; ++c) {
            g[c] /= static_cast<double>(n_fit);
            m[c] = b1 * m[c] + (1 - b1) * g[c];
            v[c] = b2 * v[c] + (1 - b2) * g[c] * g[c];
            double mh = m[c] / (1 - std::pow(b1, step));
            double vh = v[c] / (1 - std::pow(b2, step));
            w[c] -= cc.lr * mh / (std::sqrt(vh) + eps);
            w[c] = std::max(0.0, w[c]);
        }
    }

    std::vector<double> uniform(dim, 1.0);
    double fit_val = agreement(w, n_fit, rows.size());
    double uni_val = agreement(uniform, n_fit, rows.size());
    bool keep_fit = fit_val >= uni_val + cc.min_gain;
    const std::vector<double>& chosen = keep_fit ? w : uniform;

    if (agreement(chosen, 0, n_fit) <= 0.5) {
        throw InvalidStateError("calibrate: fit does not beat the chance floor");
    }

    CalibratedDistance d;
    d.backbone = std::move(backbone);
    size_t off = 0;
    for (int wd : bb.cfg.widths) {
        Tensor wt(1, wd, 1, 1);
        for (int c = 0; c < wd; ++c) wt[c] = chosen[off++];
        d.weights.push_back(std::move(wt));
    }
    return d;
}

/*--------------------------------- checkpoints ------------------------------*/

inline void save_distance(const std::filesystem::path& path, const CalibratedDistance& d) {
    std::vector<std::pair<std::string, Tensor>> tensors;
    for (const auto& [name, v] : d.backbone->params->items()) tensors.emplace_back(name, v->val);
    for (size_t l = 0; l < d.weights.size(); ++l) {
        tensors.emplace_back("calib.w" + std::to_string(l), d.weights[l]);
    }
    json meta = {{"backbone", backbone_config_json(d.backbone->cfg)}};
    save_checkpoint(path, "D2G-PCP1", meta, tensors);
}

inline CalibratedDistance load_distance(const std::filesystem::path& path) {
    Checkpoint ck = load_checkpoint(path, "D2G-PCP1");
    BackboneConfig cfg = backbone_config_from_json(ck.meta.at("backbone"));
    auto bb = std::make_shared<FeatureBackbone>(cfg, 0);
    for (auto& [name, v] : bb->params->items()) v->val = ck.find(name);
    CalibratedDistance d;
    d.backbone = bb;
    for (size_t l = 0; l < FeatureBackbone::kTaps; ++l) {
        d.weights.push_back(ck.find("calib.w" + std::to_string(l)));
    }
    return d;
}

}  // namespace d2g

#endif
