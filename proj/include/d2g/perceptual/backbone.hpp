#ifndef D2G_PERCEPTUAL_BACKBONE_HPP
#define D2G_PERCEPTUAL_BACKBONE_HPP

#include <memory>
#include <set>

#include "d2g/core/checkpoint.hpp"
#include "d2g/core/optim.hpp"
#include "d2g/data/dataset.hpp"

namespace d2g {

enum class Domain { pixel, latent };

inline std::string domain_name(Domain d) { return d == Domain::pixel ? "pixel" : "latent"; }
inline Domain domain_from(const std::string& s) {
    if (s == "pixel") return Domain::pixel;
    if (s == "latent") return Domain::latent;
    throw std::invalid_argument("unknown domain: " + s);
}

// VGG-style conv stack with 5 feature taps and a classifier head. The pixel
// variant downsamples after taps 1-4; the latent variant drops the first
// downsampling stage since the codec already shrank the input.
struct BackboneConfig {
    Domain domain = Domain::pixel;
    int in_ch = 3;
    std::vector<int> widths = {16, 32, 48, 64, 80};
    int classes = 10;
    int gn_groups = 4;
};

struct FeatureBackbone {
    BackboneConfig cfg;
    std::shared_ptr<ParamStore> params;
    std::vector<Conv2d> convs;   // 2 per stage
    std::vector<GroupNorm> norms;
    std::set<int> pool_after;    // stage indices followed by 2x avg pool
    Linear head;

    static constexpr int kTaps = 5;

    FeatureBackbone() = default;
    explicit FeatureBackbone(const BackboneConfig& c, uint64_t seed)
        : cfg(c), params(std::make_shared<ParamStore>(seed)) {
        ParamStore& ps = *params;
        int prev = c.in_ch;
        for (int s = 0; s < kTaps; ++s) {
            const int w = c.widths[s];
            convs.emplace_back(ps, "s" + std::to_string(s) + ".c0", prev, w, 3);
            norms.emplace_back(ps, "s" + std::to_string(s) + ".n0", w, c.gn_groups);
            convs.emplace_back(ps, "s" + std::to_string(s) + ".c1", w, w, 3);
            norms.emplace_back(ps, "s" + std::to_string(s) + ".n1", w, c.gn_groups);
            prev = w;
        }
        const int first_pool = c.domain == Domain::pixel ? 0 : 1;
        for (int s = first_pool; s < kTaps - 1; ++s) pool_after.insert(s);
        head = Linear(ps, "head", c.widths[kTaps - 1], c.classes);
    }

    // the 5 tapped feature maps; pooling stops once a dim reaches 1 so inputs
    // smaller than the design resolution still pass through
    std::vector<Var> taps(const Var& x) const {
        std::vector<Var> out;
        Var h = x;
        for (int s = 0; s < kTaps; ++s) {
            h = relu(norms[2 * s].fwd(convs[2 * s].fwd(h)));
            h = relu(norms[2 * s + 1].fwd(convs[2 * s + 1].fwd(h)));
            out.push_back(h);
            if (pool_after.count(s) && h->val.h() > 1 && h->val.w() > 1) h = avg_pool2x(h);
        }
        return out;
    }

    // global-average-pooled features feeding the classifier; also the
    // feature space of the Frechet proxy
    Var pooled(const Var& x) const { return mean_hw(taps(x).back()); }
    Var logits(const Var& x) const { return head.fwd(pooled(x)); }

    Tensor pooled_features(const Tensor& x) const { return pooled(constant(x))->val; }

    std::vector<int> predict(const Tensor& x) const {
        Tensor lg = logits(constant(x))->val;
        std::vector<int> out(lg.n());
        for (int i = 0; i < lg.n(); ++i) {
            int best = 0;
            for (int j = 1; j < lg.c(); ++j) {
                if (lg[static_cast<size_t>(i) * lg.c() + j] >
                    lg[static_cast<size_t>(i) * lg.c() + best]) {
                    best = j;
                }
            }
            out[i] = best;
        }
        return out;
    }

    int feature_dim() const { return cfg.widths[kTaps - 1]; }
};

struct BackboneTrainConfig {
    int steps = 400;
    int batch = 16;
    double lr = 2e-3;
    uint64_t seed = 11;
};

inline double classifier_accuracy(const FeatureBackbone& bb, const LabeledSet& set,
                                  int max_items = 512) {
    int correct = 0, total = 0;
    const int chunk = 32;
    for (size_t lo = 0; lo < set.size() && total < max_items; lo += chunk) {
        std::vector<size_t> idx;
        for (size_t i = lo; i < std::min(set.size(), lo + chunk); ++i) idx.push_back(i);
        auto pred = bb.predict(set.batch(idx));
        for (size_t i = 0; i < idx.size() && total < max_items; ++i, ++total) {
            if (pred[i] == set.labels[idx[i]]) ++correct;
        }
    }
    return total ? static_cast<double>(correct) / total : 0.0;
}

inline FeatureBackbone train_backbone(const LabeledSet& data, Domain domain,
                                      const BackboneTrainConfig& tcfg,
                                      BackboneConfig cfg = {}) {
    if (data.empty()) throw std::invalid_argument("train_backbone: empty dataset");
    std::set<int> classes(data.labels.begin(), data.labels.end());
    if (classes.size() < 2) {
        throw std::invalid_argument("train_backbone: need at least 2 classes");
    }
    cfg.domain = domain;
    cfg.in_ch = data.items[0].c();
    FeatureBackbone bb(cfg, hash_seed(tcfg.seed, 0x61));
    Adam opt(*bb.params, tcfg.lr);
    BatchSampler sampler(data.size(), tcfg.batch, hash_seed(tcfg.seed, 0x62));
    for (int step = 0; step < tcfg.steps; ++step) {
        auto idx = sampler.next();
        Var loss = cross_entropy(bb.logits(constant(data.batch(idx))), data.batch_labels(idx));
        opt.zero_grad();
        backward(loss);
        opt.step();
    }
    return bb;
}

inline json backbone_config_json(const BackboneConfig& c) {
    return {{"domain", domain_name(c.domain)},
            {"in_ch", c.in_ch},
            {"widths", c.widths},
            {"classes", c.classes},
            {"gn_groups", c.gn_groups}};
}

inline BackboneConfig backbone_config_from_json(const json& j) {
    BackboneConfig c;
    c.domain = domain_from(j.at("domain"));
    c.in_ch = j.at("in_ch");
    c.widths = j.at("widths").get<std::vector<int>>();
    c.classes = j.at("classes");
    c.gn_groups = j.at("gn_groups");
    return c;
}

}  // namespace d2g

#endif
