#ifndef D2G_TEACHER_SCHEDULE_HPP
#define D2G_TEACHER_SCHEDULE_HPP

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "d2g/core/errors.hpp"

namespace d2g {

enum class ScheduleKind { vp_cosine, vp_linear, edm };

inline std::string schedule_kind_name(ScheduleKind k) {
    switch (k) {
        case ScheduleKind::vp_cosine: return "vp_cosine";
        case ScheduleKind::vp_linear: return "vp_linear";
        case ScheduleKind::edm: return "edm";
    }
    return "?";
}

inline ScheduleKind schedule_kind_from(const std::string& s) {
    if (s == "vp_cosine") return ScheduleKind::vp_cosine;
    if (s == "vp_linear") return ScheduleKind::vp_linear;
    if (s == "edm") return ScheduleKind::edm;
    throw std::invalid_argument("unknown schedule kind: " + s);
}

// Discrete (alpha_t, sigma_t) tables over t = 0..T. t=0 is clean data
// (alpha=1, sigma=0); alpha strictly decreases and sigma strictly increases.
// VP kinds keep alpha^2 + sigma^2 = 1. The edm kind stores the sigma grid in
// the same normalized form with alpha = 1/sqrt(1+s^2), where s = sigma/alpha
// recovers the variance-exploding noise level used by the Heun solver.
struct DiffusionSchedule {
    int T = 0;
    std::vector<double> alpha, sigma;  // size T+1
    ScheduleKind kind = ScheduleKind::vp_cosine;

    bool is_vp() const { return kind != ScheduleKind::edm; }
    double ve_sigma(int t) const { return sigma[t] / alpha[t]; }
};

inline DiffusionSchedule make_schedule(ScheduleKind kind, int T) {
    if (T < 2) throw std::invalid_argument("make_schedule: T must be >= 2");
    DiffusionSchedule s;
    s.T = T;
    s.kind = kind;
    s.alpha.resize(T + 1);
    s.sigma.resize(T + 1);
    s.alpha[0] = 1.0;
    s.sigma[0] = 0.0;

    switch (kind) {
        case ScheduleKind::vp_cosine: {
            // squared-cosine abar normalized so abar(0) = 1 exactly; the time
            // axis is squashed so abar(T) ends at a finite floor, keeping the
            // one-step readout 1/alpha_T amplification bounded
            const double off = 0.008;
            const double abar_end = 4e-3;
            auto f = [&](double u) {
                double a = std::cos((u + off) / (1.0 + off) * std::numbers::pi / 2.0);
                return a * a;
            };
            const double f0 = f(0.0);
            const double u_max =
                (2.0 / std::numbers::pi) * std::acos(std::sqrt(abar_end * f0)) * (1.0 + off) - off;
            for (int t = 1; t <= T; ++t) {
                double abar = f(u_max * t / T) / f0;
                s.alpha[t] = std::sqrt(abar);
                s.sigma[t] = std::sqrt(1.0 - abar);
            }
            break;
        }
        case ScheduleKind::vp_linear: {
            // DDPM linear betas, rescaled to the requested step count
            const double b0 = 1e-4, b1 = 0.02;
            const double rescale = 1000.0 / T;
            double abar = 1.0;
            for (int t = 1; t <= T; ++t) {
                double beta = (b0 + (b1 - b0) * (t - 1) / std::max(1, T - 1)) * rescale;
                beta = std::min(beta, 0.999);
                abar *= 1.0 - beta;
                s.alpha[t] = std::sqrt(abar);
                s.sigma[t] = std::sqrt(1.0 - abar);
            }
            break;
        }
        case ScheduleKind::edm: {
            // Karras rho=7 grid from sigma_min at t=1 up to sigma_max at t=T.
            // sigma_max is sized for unit-std toy latents, not pixel images.
            const double smin = 0.002, smax = 2.0, rho = 7.0;
            const double a = std::pow(smin, 1.0 / rho), b = std::pow(smax, 1.0 / rho);
            for (int t = 1; t <= T; ++t) {
                double u = static_cast<double>(t - 1) / (T - 1);
                double sv = std::pow(a + u * (b - a), rho);
                s.alpha[t] = 1.0 / std::sqrt(1.0 + sv * sv);
                s.sigma[t] = sv / std::sqrt(1.0 + sv * sv);
            }
            break;
        }
    }
    return s;
}

}  // namespace d2g

#endif
