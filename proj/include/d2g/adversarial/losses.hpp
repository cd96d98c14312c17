#ifndef D2G_ADVERSARIAL_LOSSES_HPP
#define D2G_ADVERSARIAL_LOSSES_HPP

#include "d2g/adversarial/discriminator.hpp"

namespace d2g {

// Non-saturating GAN losses in stabilized softplus form, averaged uniformly
// over every head, scale and spatial location:
//   d_loss = E[softplus(-real)] + E[softplus(fake)]
//   g_loss = E[softplus(-fake)]
struct GanLossValues {
    Var d_loss, g_loss;
};

namespace detail {

inline Var mean_softplus(const std::vector<Var>& maps, bool negate) {
    Var total;
    size_t count = 0;
    for (const auto& m : maps) {
        Var v = sum_all(softplus(negate ? neg(m) : m));
        total = total ? add(total, v) : v;
        count += m->val.size();
    }
    return scale(total, 1.0 / static_cast<double>(count));
}

}  // namespace detail

inline GanLossValues gan_losses(const MultiScaleLogits& real, const MultiScaleLogits& fake) {
    for (const auto& m : real.all())
        if (!m->val.all_finite()) throw std::invalid_argument("gan_losses: non-finite real logits");
    for (const auto& m : fake.all())
        if (!m->val.all_finite()) throw std::invalid_argument("gan_losses: non-finite fake logits");
    GanLossValues out;
    out.d_loss = add(detail::mean_softplus(real.all(), true), detail::mean_softplus(fake.all(), false));
    out.g_loss = detail::mean_softplus(fake.all(), true);
    return out;
}

// generator-side loss when only fake logits exist in the graph
inline Var gan_generator_loss(const MultiScaleLogits& fake) {
    return detail::mean_softplus(fake.all(), true);
}

inline Var gan_disc_loss(const MultiScaleLogits& real, const MultiScaleLogits& fake) {
    return add(detail::mean_softplus(real.all(), true), detail::mean_softplus(fake.all(), false));
}

/*------------------------------- single-sample r1 ----------------------------*/

struct R1State {
    int interval = 16;
    int64_t step = 0;

    bool due() const { return step % interval == 0; }
    void advance() { ++step; }
};

namespace detail {

inline Var sum_logits(const MultiScaleLogits& lg) {
    Var total;
    for (const auto& m : lg.all()) {
        Var s = sum_all(m);
        total = total ? add(total, s) : s;
    }
    return total;
}

}  // namespace detail

// penalty = (gamma/2) * ||d(sum of all logits)/dx||^2 on one gradient-tracked
// sample; the logits function is pluggable so closed-form cases stay testable
using LogitsFn = std::function<std::vector<Var>(const Var& x)>;

inline double r1_penalty(const LogitsFn& f, const Var& x_real, double gamma,
                         Tensor* grad_out = nullptr) {
    if (!x_real->requires_grad) {
        throw InvalidStateError("r1: x_real is not gradient-tracked");
    }
    if (x_real->val.n() != 1) {
        throw std::invalid_argument("r1: exactly one sample expected");
    }
    Var total;
    for (const auto& m : f(x_real)) {
        Var s = sum_all(m);
        total = total ? add(total, s) : s;
    }
    backward(total);
    const Tensor& g = x_real->grad;
    double penalty = 0.5 * gamma * g.sq_norm();
    if (grad_out) *grad_out = g;
    return penalty;
}

inline double single_sample_r1(const Discriminator& d, int cond, const Tensor& z,
                               const Var& x_real, double gamma, Tensor* grad_out = nullptr) {
    return r1_penalty(
        [&](const Var& x) { return d.forward_var({cond}, constant(z), x).all(); }, x_real, gamma,
        grad_out);
}

// Adds gamma * d/dtheta of (1/2)||grad_x S||^2 into the discriminator's
// parameter gradients and returns the penalty value. The mixed second
// derivative is taken by a central finite difference of grad_theta S along
// the normalized input gradient, which avoids a second-order graph.
inline double apply_r1_to_param_grads(Discriminator& d, int cond, const Tensor& z,
                                      const Tensor& x_real, double gamma) {
    // input gradient only; parameters temporarily frozen
    set_params_requires_grad(*d.params, false);
    Var x = leaf(x_real);
    double penalty = single_sample_r1(d, cond, z, x, gamma);
    Tensor g = x->grad;
    set_params_requires_grad(*d.params, true);

    const double gnorm = std::sqrt(g.sq_norm());
    if (gnorm < 1e-12) return penalty;  // flat response; nothing to push

    const double h = 1e-3;
    Tensor xp = x_real;
    xp.axpy_(h / gnorm, g);
    Tensor xm = x_real;
    xm.axpy_(-h / gnorm, g);
    // grad_theta P = gamma*||g|| * d/de grad_theta S(x + e*ghat)
    const double k = gamma * gnorm / (2.0 * h);
    backward(scale(detail::sum_logits(d.forward_var({cond}, constant(z), constant(xp))), k));
    backward(scale(detail::sum_logits(d.forward_var({cond}, constant(z), constant(xm))), -k));
    return penalty;
}

/*------------------------------- mix and match -------------------------------*/

struct MixAndMatchConfig {
    double swap_latent_prob = 0.0;
    double swap_condition_prob = 0.0;
    double swap_noise_prob = 0.0;
};

struct MixBatchItem {
    Tensor z;
    int cond = 0;
    Tensor x_fake, x_real;
};

struct DiscEntry {
    Tensor z;
    int cond = 0;
    Tensor x;
    bool real = false;
};

// Builds the discriminator batch: generated latents are always fake; real
// triples are corrupted with the configured probabilities (latent, then
// condition, then noise; mutually exclusive) and any corrupted triple is
// labeled fake.
inline std::vector<DiscEntry> mix_and_match(const std::vector<MixBatchItem>& batch,
                                            const MixAndMatchConfig& cfg, uint64_t seed) {
    for (double p : {cfg.swap_latent_prob, cfg.swap_condition_prob, cfg.swap_noise_prob}) {
        if (p < 0.0 || p > 1.0) throw std::invalid_argument("mix_and_match: prob out of range");
    }
    const bool any_swap =
        cfg.swap_latent_prob > 0 || cfg.swap_condition_prob > 0 || cfg.swap_noise_prob > 0;
    if (any_swap && batch.size() < 2) {
        throw std::invalid_argument("mix_and_match: need >= 2 records to swap");
    }
    Rng rng(hash_seed(seed, 0x3A3A));
    auto other_index = [&](size_t i) {
        size_t j = rng.next_u64() % (batch.size() - 1);
        return j >= i ? j + 1 : j;
    };

    std::vector<DiscEntry> out;
    out.reserve(2 * batch.size());
    for (size_t i = 0; i < batch.size(); ++i) {
        DiscEntry e;
        e.z = batch[i].z;
        e.cond = batch[i].cond;
        e.x = batch[i].x_real;
        e.real = true;
        if (rng.bernoulli(cfg.swap_latent_prob)) {
            e.x = batch[other_index(i)].x_real;
            e.real = false;
        } else if (rng.bernoulli(cfg.swap_condition_prob)) {
            e.cond = batch[other_index(i)].cond;
            e.real = false;
        } else if (rng.bernoulli(cfg.swap_noise_prob)) {
            e.z = batch[other_index(i)].z;
            e.real = false;
        }
        out.push_back(std::move(e));
    }
    for (const auto& item : batch) {
        out.push_back({item.z, item.cond, item.x_fake, false});
    }
    return out;
}

}  // namespace d2g

#endif
