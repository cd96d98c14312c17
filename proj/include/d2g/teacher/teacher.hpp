#ifndef D2G_TEACHER_TEACHER_HPP
#define D2G_TEACHER_TEACHER_HPP

#include <memory>

#include "d2g/core/checkpoint.hpp"
#include "d2g/core/optim.hpp"
#include "d2g/data/dataset.hpp"
#include "d2g/teacher/schedule.hpp"
#include "d2g/teacher/unet.hpp"

namespace d2g {

// epsilon prediction; same shape as the noisy input
struct EpsDenoiser {
    virtual ~EpsDenoiser() = default;
    // one t shared across the batch; cond uses the model's null index for the
    // unconditional CFG branch
    virtual Tensor eps(const Tensor& x_t, const std::vector<int>& cond, int t) const = 0;
};

struct TeacherModel {
    std::shared_ptr<EpsDenoiser> denoiser;
    DiffusionSchedule schedule;
    int condition_arity = 0;
    Digest weights_hash{};

    int null_condition() const { return condition_arity; }
};

/*------------------------------ parameterization ----------------------------*/

// data prediction from noise prediction: (x_t - sigma_t * eps) / alpha_t
inline Tensor eps_to_x0(const Tensor& x_t, const Tensor& eps, int t,
                        const DiffusionSchedule& sched) {
    if (t < 0 || t > sched.T) throw std::invalid_argument("eps_to_x0: t out of range");
    if (!x_t.same_shape(eps)) throw std::invalid_argument("eps_to_x0: shape mismatch");
    const double a = sched.alpha[t], s = sched.sigma[t];
    if (a == 0.0) throw std::invalid_argument("eps_to_x0: alpha_t is zero (degenerate)");
    Tensor out(x_t.n(), x_t.c(), x_t.h(), x_t.w());
    for (size_t i = 0; i < out.size(); ++i) out[i] = (x_t[i] - s * eps[i]) / a;
    return out;
}

/*--------------------------------- guidance ---------------------------------*/

inline Tensor cfg_eps(const TeacherModel& m, const Tensor& x_t, const std::vector<int>& cond,
                      int t, double w) {
    for (int c : cond) {
        if (c == m.null_condition()) {
            throw std::invalid_argument("cfg_eps: null condition not allowed");
        }
        if (c < 0 || c > m.condition_arity) throw std::invalid_argument("cfg_eps: bad condition");
    }
    if (w == 1.0) return m.denoiser->eps(x_t, cond, t);
    std::vector<int> null_cond(cond.size(), m.null_condition());
    Tensor eu = m.denoiser->eps(x_t, null_cond, t);
    if (w == 0.0) return eu;
    Tensor ec = m.denoiser->eps(x_t, cond, t);
    Tensor out(eu.n(), eu.c(), eu.h(), eu.w());
    for (size_t i = 0; i < out.size(); ++i) out[i] = eu[i] + w * (ec[i] - eu[i]);
    return out;
}

inline Tensor cfg_eps(const TeacherModel& m, const Tensor& x_t, int c, int t, double w) {
    return cfg_eps(m, x_t, std::vector<int>(static_cast<size_t>(x_t.n()), c), t, w);
}

/*---------------------------------- solvers ---------------------------------*/

// uniform stride over [T..0], both endpoints included
inline std::vector<int> solver_step_indices(int T, int steps) {
    std::vector<int> idx(steps + 1);
    for (int k = 0; k <= steps; ++k) {
        idx[k] = static_cast<int>(std::lround(static_cast<double>(T) *
                                              (1.0 - static_cast<double>(k) / steps)));
    }
    return idx;
}

// Deterministic DDIM: x_{t'} = alpha_{t'} * x0_hat + sigma_{t'} * eps_hat.
inline Tensor ddim_solve(const TeacherModel& m, const Tensor& z, const std::vector<int>& cond,
                         int steps, double w) {
    if (steps < 1 || steps > m.schedule.T) {
        throw std::invalid_argument("ddim_solve: steps must be in [1, T]");
    }
    const auto idx = solver_step_indices(m.schedule.T, steps);
    Tensor x = z;
    for (int k = 0; k < steps; ++k) {
        const int t = idx[k], tn = idx[k + 1];
        Tensor eps = cfg_eps(m, x, cond, t, w);
        Tensor x0 = eps_to_x0(x, eps, t, m.schedule);
        if (tn == 0) {
            x = std::move(x0);
        } else {
            const double a = m.schedule.alpha[tn], s = m.schedule.sigma[tn];
            for (size_t i = 0; i < x.size(); ++i) x[i] = a * x0[i] + s * eps[i];
        }
    }
    return x;
}

inline Tensor ddim_solve(const TeacherModel& m, const Tensor& z, int c, int steps, double w) {
    return ddim_solve(m, z, std::vector<int>(static_cast<size_t>(z.n()), c), steps, w);
}

// Second-order Heun in variance-exploding coordinates X = x / alpha, where the
// probability-flow derivative is exactly the eps prediction. Requires the edm
// schedule. Starts from the same normalized state as ddim_solve (x_T = z).
inline Tensor heun_solve(const TeacherModel& m, const Tensor& z, const std::vector<int>& cond,
                         int steps) {
    if (m.schedule.kind != ScheduleKind::edm) {
        throw std::invalid_argument("heun_solve: requires an edm-kind schedule");
    }
    if (steps < 1 || steps > m.schedule.T) {
        throw std::invalid_argument("heun_solve: steps must be in [1, T]");
    }
    const auto idx = solver_step_indices(m.schedule.T, steps);
    const auto& sch = m.schedule;

    Tensor X = z;
    X.scale_(1.0 / sch.alpha[sch.T]);
    Tensor xt(z.n(), z.c(), z.h(), z.w());
    for (int k = 0; k < steps; ++k) {
        const int t = idx[k], tn = idx[k + 1];
        const double s0 = sch.ve_sigma(t), s1 = sch.ve_sigma(tn);
        const double a0 = sch.alpha[t], a1 = sch.alpha[tn];
        for (size_t i = 0; i < X.size(); ++i) xt[i] = a0 * X[i];
        Tensor d0 = m.denoiser->eps(xt, cond, t);
        if (tn == 0) {
            // last step to sigma=0 stays first-order
            X.axpy_(s1 - s0, d0);
        } else {
            Tensor Xe = X;
            Xe.axpy_(s1 - s0, d0);
            for (size_t i = 0; i < Xe.size(); ++i) xt[i] = a1 * Xe[i];
            Tensor d1 = m.denoiser->eps(xt, cond, tn);
            for (size_t i = 0; i < X.size(); ++i) {
                X[i] += (s1 - s0) * 0.5 * (d0[i] + d1[i]);
            }
        }
    }
    return X;  // alpha_0 = 1
}

inline Tensor heun_solve(const TeacherModel& m, const Tensor& z, int c, int steps) {
    return heun_solve(m, z, std::vector<int>(static_cast<size_t>(z.n()), c), steps);
}

/*----------------------------- analytic gaussian ----------------------------*/

// Exact posterior eps for data ~ N(mu, s^2 I); the solver test oracle.
struct AnalyticGaussianDenoiser : EpsDenoiser {
    Tensor mu;  // (1,c,h,w)
    double s;
    DiffusionSchedule sched;

    AnalyticGaussianDenoiser(Tensor mu_, double s_, DiffusionSchedule sc)
        : mu(std::move(mu_)), s(s_), sched(std::move(sc)) {}

    Tensor eps(const Tensor& x_t, const std::vector<int>&, int t) const override {
        const double a = sched.alpha[t], sg = sched.sigma[t];
        const double denom = a * a * s * s + sg * sg;
        Tensor out(x_t.n(), x_t.c(), x_t.h(), x_t.w());
        const size_t per = mu.size();
        for (int n = 0; n < x_t.n(); ++n) {
            for (size_t i = 0; i < per; ++i) {
                size_t j = static_cast<size_t>(n) * per + i;
                out[j] = sg * (x_t[j] - a * mu[i]) / denom;
            }
        }
        return out;
    }
};

inline TeacherModel analytic_gaussian_teacher(const Tensor& mu, double s,
                                              DiffusionSchedule sched) {
    if (s <= 0.0) throw std::invalid_argument("analytic_gaussian_teacher: s must be positive");
    TeacherModel m;
    m.schedule = sched;
    m.condition_arity = 1;
    m.denoiser = std::make_shared<AnalyticGaussianDenoiser>(mu, s, std::move(sched));
    auto f = mu.to_f32();
    std::vector<uint8_t> bytes(reinterpret_cast<uint8_t*>(f.data()),
                               reinterpret_cast<uint8_t*>(f.data()) + f.size() * sizeof(float));
    float sf = static_cast<float>(s);
    bytes.insert(bytes.end(), reinterpret_cast<uint8_t*>(&sf), reinterpret_cast<uint8_t*>(&sf) + 4);
    m.weights_hash = sha256(bytes);
    return m;
}

/*------------------------------ trained teacher -----------------------------*/

struct UNetDenoiser : EpsDenoiser {
    UNetConfig cfg;
    ParamStore params;
    UNet net;

    UNetDenoiser(const UNetConfig& cfg_, uint64_t init_seed)
        : cfg(cfg_), params(init_seed), net(params, "unet.", cfg_) {}

    Tensor eps(const Tensor& x_t, const std::vector<int>& cond, int t) const override {
        std::vector<int> ts(static_cast<size_t>(x_t.n()), t);
        return net.forward(constant(x_t), ts, cond)->val;
    }

    Var forward_var(const Var& x, const std::vector<int>& t, const std::vector<int>& cond) const {
        return net.forward(x, t, cond);
    }
};

struct TeacherTrainConfig {
    int steps = 600;
    int batch = 16;
    double lr = 2e-3;
    double p_uncond = 0.1;  // CFG condition dropout
    uint64_t seed = 1;
    int schedule_T = 1000;
    ScheduleKind schedule_kind = ScheduleKind::vp_cosine;
    UNetConfig unet;
};

// held-out denoising loss E||eps - eps_hat||^2 at seeded (t, eps) draws
inline double teacher_eps_mse(const TeacherModel& m, const LabeledSet& set, uint64_t seed,
                              int max_items = 64) {
    Rng rng(seed);
    double total = 0;
    int count = 0;
    for (size_t i = 0; i < set.size() && count < max_items; ++i, ++count) {
        const Tensor& x0 = set.items[i];
        int t = rng.uniform_int(1, m.schedule.T);
        Tensor eps(x0.n(), x0.c(), x0.h(), x0.w());
        rng.fill_gaussian(eps);
        Tensor xt = x0;
        xt.scale_(m.schedule.alpha[t]);
        xt.axpy_(m.schedule.sigma[t], eps);
        Tensor pred = m.denoiser->eps(xt, {set.labels[i]}, t);
        total += pred.rms(eps) * pred.rms(eps);
    }
    return total / std::max(1, count);
}

inline TeacherModel train_teacher(const LabeledSet& data, const TeacherTrainConfig& cfg) {
    if (data.empty()) throw std::invalid_argument("train_teacher: empty dataset");
    for (int l : data.labels) {
        if (l < 0 || l >= cfg.unet.cond_count) {
            throw std::invalid_argument("train_teacher: label out of range");
        }
    }
    auto den = std::make_shared<UNetDenoiser>(cfg.unet, hash_seed(cfg.seed, 0x11));
    DiffusionSchedule sched = make_schedule(cfg.schedule_kind, cfg.schedule_T);

    Adam opt(den->params, cfg.lr);
    Rng rng(hash_seed(cfg.seed, 0x22));
    BatchSampler sampler(data.size(), cfg.batch, hash_seed(cfg.seed, 0x33));
    const int null_idx = cfg.unet.cond_count;

    for (int step = 0; step < cfg.steps; ++step) {
        auto idx = sampler.next();
        Tensor x0 = data.batch(idx);
        std::vector<int> cond = data.batch_labels(idx);
        std::vector<int> t(idx.size());
        for (size_t i = 0; i < idx.size(); ++i) {
            t[i] = rng.uniform_int(1, sched.T);
            if (rng.bernoulli(cfg.p_uncond)) cond[i] = null_idx;
        }
        Tensor eps(x0.n(), x0.c(), x0.h(), x0.w());
        rng.fill_gaussian(eps);
        Tensor xt(x0.n(), x0.c(), x0.h(), x0.w());
        const size_t per = x0.size() / x0.n();
        for (size_t i = 0; i < idx.size(); ++i) {
            double a = sched.alpha[t[i]], sg = sched.sigma[t[i]];
            for (size_t j = 0; j < per; ++j) {
                size_t k = i * per + j;
                xt[k] = a * x0[k] + sg * eps[k];
            }
        }
        Var pred = den->forward_var(constant(xt), t, cond);
        Var loss = mean_all(square(sub(pred, constant(eps))));
        opt.zero_grad();
        backward(loss);
        opt.step();
    }

    TeacherModel m;
    m.schedule = std::move(sched);
    m.condition_arity = cfg.unet.cond_count;
    m.denoiser = den;
    m.weights_hash = checkpoint_payload_hash(
        [&] {
            std::vector<std::pair<std::string, Tensor>> ts;
            for (const auto& [n, v] : den->params.items()) ts.emplace_back(n, v->val);
            return ts;
        }());
    return m;
}

/*--------------------------------- checkpoints ------------------------------*/

inline json unet_config_json(const UNetConfig& c) {
    return {{"in_ch", c.in_ch},     {"out_ch", c.out_ch},   {"base", c.base},
            {"mult", c.mult},       {"blocks", c.blocks},   {"temb_dim", c.temb_dim},
            {"cond_count", c.cond_count}, {"gn_groups", c.gn_groups}};
}

inline UNetConfig unet_config_from_json(const json& j) {
    UNetConfig c;
    c.in_ch = j.at("in_ch");
    c.out_ch = j.at("out_ch");
    c.base = j.at("base");
    c.mult = j.at("mult").get<std::vector<int>>();
    c.blocks = j.at("blocks");
    c.temb_dim = j.at("temb_dim");
    c.cond_count = j.at("cond_count");
    c.gn_groups = j.at("gn_groups");
    return c;
}

inline void save_teacher(const std::filesystem::path& path, const TeacherModel& m) {
    auto den = std::dynamic_pointer_cast<UNetDenoiser>(m.denoiser);
    if (!den) throw std::invalid_argument("save_teacher: only network teachers are saved");
    json meta = {{"schedule_kind", schedule_kind_name(m.schedule.kind)},
                 {"schedule_T", m.schedule.T},
                 {"condition_arity", m.condition_arity},
                 {"unet", unet_config_json(den->cfg)}};
    save_checkpoint(path, "D2G-TCH1", meta, den->params);
}

inline TeacherModel load_teacher(const std::filesystem::path& path) {
    Checkpoint ck = load_checkpoint(path, "D2G-TCH1");
    UNetConfig ucfg = unet_config_from_json(ck.meta.at("unet"));
    auto den = std::make_shared<UNetDenoiser>(ucfg, 0);
    load_into(ck, den->params);
    TeacherModel m;
    m.schedule = make_schedule(schedule_kind_from(ck.meta.at("schedule_kind")),
                               ck.meta.at("schedule_T"));
    m.condition_arity = ck.meta.at("condition_arity");
    m.denoiser = den;
    m.weights_hash = ck.payload_hash;
    return m;
}

}  // namespace d2g

#endif
