#ifndef D2G_DISTILL_GENERATOR_HPP
#define D2G_DISTILL_GENERATOR_HPP

#include "d2g/teacher/teacher.hpp"

namespace d2g {

// One-step generator: the teacher-shaped eps network applied at t=T with the
// data-prediction readout G(z,c) = (z - sigma_T * eps(z,c,T)) / alpha_T.
struct Generator {
    std::shared_ptr<UNetDenoiser> den;
    DiffusionSchedule schedule;
    std::string source = "scratch";

    int condition_arity() const { return den->cfg.cond_count; }

    Tensor one_step(const Tensor& z, const std::vector<int>& cond) const {
        if (z.c() != den->cfg.in_ch) throw std::invalid_argument("one_step: shape mismatch");
        Tensor eps = den->eps(z, cond, schedule.T);
        return eps_to_x0(z, eps, schedule.T, schedule);
    }
    Tensor one_step(const Tensor& z, int c) const {
        return one_step(z, std::vector<int>(static_cast<size_t>(z.n()), c));
    }

    // training-graph variant
    Var one_step_var(const Var& z, const std::vector<int>& cond) const {
        std::vector<int> ts(cond.size(), schedule.T);
        Var eps = den->forward_var(z, ts, cond);
        const double a = schedule.alpha[schedule.T], s = schedule.sigma[schedule.T];
        return scale(sub(z, scale(eps, s)), 1.0 / a);
    }
};

inline Generator init_generator_from_teacher(const TeacherModel& teacher) {
    auto tden = std::dynamic_pointer_cast<UNetDenoiser>(teacher.denoiser);
    if (!tden) throw std::invalid_argument("init_generator: teacher has no network weights");
    Generator g;
    g.den = std::make_shared<UNetDenoiser>(tden->cfg, 0);
    size_t copied = g.den->params.copy_matching_from(tden->params);
    if (copied != tden->params.size()) throw std::invalid_argument("init_generator: copy failed");
    g.schedule = teacher.schedule;
    g.source = "teacher:" + hex(teacher.weights_hash).substr(0, 12);
    return g;
}

inline void save_generator(const std::filesystem::path& path, const Generator& g) {
    json meta = {{"schedule_kind", schedule_kind_name(g.schedule.kind)},
                 {"schedule_T", g.schedule.T},
                 {"unet", unet_config_json(g.den->cfg)},
                 {"source", g.source}};
    save_checkpoint(path, "D2G-GEN1", meta, g.den->params);
}

inline Generator load_generator(const std::filesystem::path& path) {
    Checkpoint ck = load_checkpoint(path, "D2G-GEN1");
    Generator g;
    g.den = std::make_shared<UNetDenoiser>(unet_config_from_json(ck.meta.at("unet")), 0);
    load_into(ck, g.den->params);
    g.schedule = make_schedule(schedule_kind_from(ck.meta.at("schedule_kind")),
                               ck.meta.at("schedule_T"));
    g.source = ck.meta.value("source", "unknown");
    return g;
}

}  // namespace d2g

#endif
