#include <catch2/catch_amalgamated.hpp>

#include "d2g/adversarial/losses.hpp"
#include "test_util.hpp"

using namespace d2g;

namespace {

UNetConfig tiny_unet() {
    UNetConfig uc;
    uc.in_ch = uc.out_ch = 2;
    uc.base = 8;
    uc.mult = {1, 2, 2};
    uc.blocks = 1;
    uc.temb_dim = 16;
    uc.cond_count = 3;
    uc.gn_groups = 2;
    return uc;
}

TeacherModel tiny_teacher(int steps = 3) {
    TeacherTrainConfig cfg;
    cfg.unet = tiny_unet();
    cfg.schedule_T = 40;
    cfg.steps = steps;
    cfg.batch = 4;
    cfg.seed = 5;
    Rng rng(9);
    LabeledSet set;
    for (int i = 0; i < 8; ++i) {
        set.items.push_back(rng.gaussian(1, 2, 8, 8));
        set.labels.push_back(i % 3);
    }
    return train_teacher(set, cfg);
}

MultiScaleLogits const_logits(double v, int scales = 2) {
    MultiScaleLogits lg;
    for (int s = 0; s < scales; ++s) {
        ScaleLogits sl;
        sl.skip = constant(Tensor::full(2, 1, 4 >> s, 4 >> s, v));
        sl.bneck = constant(Tensor::full(2, 1, 4 >> s, 4 >> s, v));
        sl.comb = constant(Tensor::full(2, 1, 4 >> s, 4 >> s, v));
        lg.scales.push_back(sl);
    }
    return lg;
}

}  // namespace

TEST_CASE("build_discriminator: teacher initialization contracts") {
    TeacherModel t = tiny_teacher();
    auto tden = std::dynamic_pointer_cast<UNetDenoiser>(t.denoiser);

    REQUIRE_THROWS_AS(build_discriminator(t, 2), std::invalid_argument);  // wrong scale count

    Discriminator d = build_discriminator(t, 3);
    REQUIRE(d.heads.size() == 3);

    // every shared trunk tensor equals the teacher's bitwise
    size_t matched = 0;
    for (const auto& [name, v] : d.params->items()) {
        if (tden->params.contains(name)) {
            REQUIRE(v->val.bitwise_equal(tden->params.find(name)->val));
            ++matched;
        }
    }
    REQUIRE(matched == tden->params.size());

    // zero-init z path: output invariant to z at construction
    Rng rng(3);
    Tensor x = rng.gaussian(2, 2, 8, 8);
    Tensor z1 = rng.gaussian(2, 2, 8, 8);
    Tensor z2 = rng.gaussian(2, 2, 8, 8);
    auto l1 = d.forward({0, 1}, z1, x);
    auto l2 = d.forward({0, 1}, z2, x);
    auto a1 = l1.all(), a2 = l2.all();
    REQUIRE(a1.size() == 9);  // 3 heads per scale
    for (size_t i = 0; i < a1.size(); ++i) REQUIRE(a1[i]->val.bitwise_equal(a2[i]->val));

    // analytic teachers carry no network weights
    DiffusionSchedule sc = make_schedule(ScheduleKind::vp_cosine, 10);
    TeacherModel an = analytic_gaussian_teacher(Tensor::zeros(1, 2, 8, 8), 1.0, sc);
    REQUIRE_THROWS_AS(build_discriminator(an, 3), std::invalid_argument);
}

TEST_CASE("disc_forward: shapes, determinism, head participation") {
    TeacherModel t = tiny_teacher();
    Discriminator d = build_discriminator(t, 3);
    Rng rng(5);
    Tensor x = rng.gaussian(2, 2, 8, 8);
    Tensor z = rng.gaussian(2, 2, 8, 8);

    MultiScaleLogits lg = d.forward({0, 2}, z, x);
    // spatial dims halve per scale: 8, 4, 2
    for (int s = 0; s < 3; ++s) {
        REQUIRE(lg.scales[s].skip->val.h() == 8 >> s);
        REQUIRE(lg.scales[s].bneck->val.h() == 8 >> s);
        REQUIRE(lg.scales[s].comb->val.h() == 8 >> s);
        REQUIRE(lg.scales[s].skip->val.c() == 1);
    }

    // eval-mode determinism
    MultiScaleLogits lg2 = d.forward({0, 2}, z, x);
    auto a = lg.all(), b = lg2.all();
    for (size_t i = 0; i < a.size(); ++i) REQUIRE(a[i]->val.bitwise_equal(b[i]->val));

    // every head parameter receives gradient from the summed logits
    Var total;
    MultiScaleLogits lg3 = d.forward({0, 2}, z, x);
    for (const auto& m : lg3.all()) total = total ? add(total, sum_all(m)) : sum_all(m);
    d.params->zero_grad();
    backward(total);
    for (const auto& [name, v] : d.params->items()) {
        if (name.find("disc.head") != std::string::npos) {
            INFO(name);
            REQUIRE_FALSE(v->grad.empty());
            REQUIRE(v->grad.sq_norm() > 0.0);
        }
    }

    REQUIRE_THROWS_AS(d.forward({0}, z, x), std::invalid_argument);  // cond count
    Tensor bad = rng.gaussian(2, 2, 4, 4);
    REQUIRE_THROWS_AS(d.forward({0, 1}, z, bad), std::invalid_argument);
}

TEST_CASE("gan_losses: fixed points, stability, limits") {
    // all-zero logits: d = 2 ln 2, g = ln 2
    auto zero = const_logits(0.0);
    GanLossValues v = gan_losses(zero, zero);
    REQUIRE_THAT(v.d_loss->val[0], Catch::Matchers::WithinAbs(2 * std::log(2.0), 1e-6));
    REQUIRE_THAT(v.g_loss->val[0], Catch::Matchers::WithinAbs(std::log(2.0), 1e-6));

    // stabilized at extreme logits
    GanLossValues ext = gan_losses(const_logits(100.0), const_logits(-100.0));
    REQUIRE(std::isfinite(ext.d_loss->val[0]));
    REQUIRE(std::isfinite(ext.g_loss->val[0]));
    GanLossValues ext2 = gan_losses(const_logits(-100.0), const_logits(100.0));
    REQUIRE(std::isfinite(ext2.d_loss->val[0]));

    // perfect discriminator: real -> +inf, fake -> -inf drives d_loss to 0
    GanLossValues perfect = gan_losses(const_logits(60.0), const_logits(-60.0));
    REQUIRE(perfect.d_loss->val[0] < 1e-8);
}

TEST_CASE("r1 penalty: closed forms and finite differences") {
    Rng rng(7);

    SECTION("constant response gives zero penalty") {
        auto f = [](const Var& x) {
            std::vector<Var> maps = {scale(mul(x, constant(Tensor::zeros(1, 2, 3, 3))), 1.0)};
            return maps;
        };
        Var x = leaf(rng.gaussian(1, 2, 3, 3));
        REQUIRE(r1_penalty(f, x, 2.0) == 0.0);
    }

    SECTION("linear response: penalty equals ||w||^2 at gamma 2") {
        Tensor w = rng.gaussian(1, 2, 3, 3);
        auto f = [&](const Var& x) {
            std::vector<Var> maps = {mul(x, constant(w))};
            return maps;
        };
        Var x = leaf(rng.gaussian(1, 2, 3, 3));
        double penalty = r1_penalty(f, x, 2.0);
        REQUIRE_THAT(penalty, Catch::Matchers::WithinAbs(w.sq_norm(), 1e-6));
    }

    SECTION("gradient tracking is required") {
        auto f = [](const Var& x) { return std::vector<Var>{x}; };
        Var x = constant(rng.gaussian(1, 1, 2, 2));
        REQUIRE_THROWS_AS(r1_penalty(f, x, 1.0), InvalidStateError);
    }

    SECTION("discriminator penalty matches the finite-difference estimate") {
        TeacherModel t = tiny_teacher(6);
        Discriminator d = build_discriminator(t, 3);
        // give the z path and heads some signal so gradients are nontrivial
        Rng wr(17);
        for (auto& [name, v] : d.params->items()) {
            if (name.find("disc.") != std::string::npos && name.find(".w") != std::string::npos) {
                wr.fill_gaussian(v->val, 0.1);
            }
        }
        Tensor z = wr.gaussian(1, 2, 8, 8);
        Tensor x0 = wr.gaussian(1, 2, 8, 8);

        set_params_requires_grad(*d.params, false);
        Var x = leaf(x0);
        Tensor g;
        double gamma = 0.7;
        double penalty = single_sample_r1(d, 1, z, x, gamma, &g);
        set_params_requires_grad(*d.params, true);

        auto sum_logits_at = [&](const Tensor& probe) {
            double s = 0;
            for (const auto& m : d.forward({1}, z, probe).all()) s += m->val.sum();
            return s;
        };
        Tensor fd(1, 2, 8, 8);
        Tensor probe = x0;
        const double eps = 1e-4;
        for (size_t i = 0; i < probe.size(); ++i) {
            double orig = probe[i];
            probe[i] = orig + eps;
            double up = sum_logits_at(probe);
            probe[i] = orig - eps;
            double dn = sum_logits_at(probe);
            probe[i] = orig;
            fd[i] = (up - dn) / (2 * eps);
        }
        // analytic input gradient vs finite differences (criterion tolerance 1e-3)
        double diff = 0;
        for (size_t i = 0; i < fd.size(); ++i) {
            double dd = fd[i] - g[i];
            diff += dd * dd;
        }
        REQUIRE(std::sqrt(diff / g.sq_norm()) < 1e-3);
        // penalty value vs the finite-difference squared norm
        REQUIRE_THAT(penalty, Catch::Matchers::WithinRel(0.5 * gamma * fd.sq_norm(), 1e-2));
    }
}

TEST_CASE("apply_r1_to_param_grads: pushes gradient into discriminator") {
    TeacherModel t = tiny_teacher(6);
    Discriminator d = build_discriminator(t, 3);
    Rng rng(23);
    for (auto& [name, v] : d.params->items()) {
        if (name.find("disc.") != std::string::npos && name.find(".w") != std::string::npos) {
            rng.fill_gaussian(v->val, 0.1);
        }
    }
    Tensor z = rng.gaussian(1, 2, 8, 8);
    Tensor x = rng.gaussian(1, 2, 8, 8);

    d.params->zero_grad();
    double penalty = apply_r1_to_param_grads(d, 0, z, x, 0.01);
    REQUIRE(penalty > 0.0);
    double total = 0;
    for (const auto& [name, v] : d.params->items()) {
        if (!v->grad.empty()) total += v->grad.sq_norm();
    }
    REQUIRE(total > 0.0);

    // value agrees with the penalty-only path
    set_params_requires_grad(*d.params, false);
    Var xl = leaf(x);
    double penalty2 = single_sample_r1(d, 0, z, xl, 0.01);
    set_params_requires_grad(*d.params, true);
    REQUIRE_THAT(penalty, Catch::Matchers::WithinRel(penalty2, 1e-12));
}

TEST_CASE("mix_and_match: labels, swaps, rates") {
    Rng rng(31);
    auto make_batch = [&](int n) {
        std::vector<MixBatchItem> batch(n);
        for (int i = 0; i < n; ++i) {
            batch[i].z = Tensor::full(1, 1, 1, 1, 100.0 + i);
            batch[i].cond = i;
            batch[i].x_real = Tensor::full(1, 1, 1, 1, i);
            batch[i].x_fake = Tensor::full(1, 1, 1, 1, -1.0 - i);
        }
        return batch;
    };

    SECTION("all probabilities zero: batch unchanged") {
        auto batch = make_batch(4);
        auto out = mix_and_match(batch, {}, 1);
        REQUIRE(out.size() == 8);
        for (int i = 0; i < 4; ++i) {
            REQUIRE(out[i].real);
            REQUIRE(out[i].x[0] == batch[i].x_real[0]);
            REQUIRE(out[i].cond == batch[i].cond);
        }
        for (int i = 4; i < 8; ++i) {
            REQUIRE_FALSE(out[i].real);
            REQUIRE(out[i].x[0] == batch[i - 4].x_fake[0]);
        }
    }

    SECTION("latent swap probability one: every real slot swapped and fake") {
        auto batch = make_batch(6);
        MixAndMatchConfig cfg;
        cfg.swap_latent_prob = 1.0;
        auto out = mix_and_match(batch, cfg, 2);
        for (int i = 0; i < 6; ++i) {
            REQUIRE_FALSE(out[i].real);
            REQUIRE(out[i].x[0] != batch[i].x_real[0]);  // from a different record
        }
    }

    SECTION("swap rate converges to the configured probability") {
        auto batch = make_batch(8);
        MixAndMatchConfig cfg;
        cfg.swap_condition_prob = 0.25;
        int swapped = 0, trials = 10000;
        for (int trial = 0; trial < trials; ++trial) {
            auto out = mix_and_match(batch, cfg, 1000 + trial);
            for (int i = 0; i < 8; ++i) {
                if (!out[i].real) ++swapped;
            }
        }
        double rate = static_cast<double>(swapped) / (8.0 * trials);
        double sigma = std::sqrt(0.25 * 0.75 / (8.0 * trials));
        REQUIRE_THAT(rate, Catch::Matchers::WithinAbs(0.25, 3 * sigma));
    }

    SECTION("preconditions") {
        auto batch = make_batch(1);
        MixAndMatchConfig cfg;
        cfg.swap_latent_prob = 0.5;
        REQUIRE_THROWS_AS(mix_and_match(batch, cfg, 1), std::invalid_argument);
        MixAndMatchConfig bad;
        bad.swap_noise_prob = 1.5;
        REQUIRE_THROWS_AS(mix_and_match(make_batch(4), bad, 1), std::invalid_argument);
    }
}
