#ifndef D2G_CLI_CONFIG_HPP
#define D2G_CLI_CONFIG_HPP

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>

#include <nlohmann/json.hpp>

#include "d2g/core/errors.hpp"

namespace d2g {

using json = nlohmann::json;

// Experiment configuration: one JSON document with a section per module.
// Unknown keys are rejected; every violation is reported, not just the first.
inline json default_config() {
    return json{
        {"seed", 1},
        {"deterministic", true},
        {"data",
         {{"image_size", 16}, {"classes", 10}, {"train_count", 2000}, {"eval_count", 512}}},
        {"teacher",
         {{"schedule", "vp_cosine"},
          {"T", 1000},
          {"steps", 700},
          {"batch", 16},
          {"lr", 2e-3},
          {"p_uncond", 0.1},
          {"unet", {{"base", 24}, {"mult", {1, 2, 3}}, {"blocks", 2}, {"temb_dim", 48}}}}},
        {"codec",
         {{"kind", "learned"},
          {"downsample_factor", 2},
          {"latent_channels", 4},
          {"width", 24},
          {"steps", 350},
          {"batch", 8},
          {"lr", 2e-3}}},
        {"pairs",
         {{"count", 4096},
          {"solver", "ddim"},
          {"steps", 8},
          {"cfg", 1.0},
          {"shard_size", 4096},
          {"workers", 1},
          {"verify", false}}},
        {"perceptual",
         {{"widths", {16, 32, 48, 64, 80}},
          {"steps", 350},
          {"batch", 16},
          {"lr", 2e-3},
          {"twoafc_count", 500},
          {"calib_steps", 300},
          {"calib_lr", 0.02}}},
        {"augment",
         {{"blit", true}, {"geometric", true}, {"color", true}, {"cutout", true}, {"p", 1.0}}},
        {"distill",
         {{"loss", "e_latentlpips"},
          {"steps", 400},
          {"batch", 12},
          {"lr", 4e-4},
          {"beta1", 0.9},
          {"beta2", 0.999},
          {"weight_decay", 0.0},
          {"blend_lambda", 0.5},
          {"pseudo_huber_c", 0.03},
          {"lambda_gan", 0.25},
          {"stage2_steps", 200},
          {"stage2_lr", -1.0},
          {"r1_gamma", 0.01},
          {"r1_interval", 16},
          {"mixmatch", {{"latent", 0.1}, {"condition", 0.1}, {"noise", 0.1}}},
          {"ema_beta", 0.99},
          {"ema_start", 50},
          {"noise_augment_d", false},
          {"noise_augment_t_max", 50},
          {"probe_batch", 16},
          {"ckpt_every", 0}}},
        {"eval",
         {{"fake_count", 512},
          {"pr_k", 3},
          {"shrink", 1e-3},
          {"diversity_n", 6},
          {"trajectory_n", 24},
          {"solver_steps", 8},
          {"dump_grid", false}}},
        {"reconstruct", {{"iters", 1500}, {"lr", 0.02}, {"targets", 5}}},
        {"bench", {{"batch", 4}, {"trials", 24}}},
    };
}

struct ExperimentConfig {
    json doc;

    const json& at(const std::string& dotted) const {
        const json* cur = &doc;
        size_t pos = 0;
        while (pos != std::string::npos) {
            size_t dot = dotted.find('.', pos);
            std::string key =
                dot == std::string::npos ? dotted.substr(pos) : dotted.substr(pos, dot - pos);
            cur = &cur->at(key);
            pos = dot == std::string::npos ? std::string::npos : dot + 1;
        }
        return *cur;
    }
    double num(const std::string& k) const { return at(k).get<double>(); }
    int integer(const std::string& k) const { return at(k).get<int>(); }
    std::string str(const std::string& k) const { return at(k).get<std::string>(); }
    bool flag(const std::string& k) const { return at(k).get<bool>(); }
};

namespace detail {

inline void merge_check(const json& defaults, const json& user, const std::string& prefix,
                        json& out, std::vector<std::string>& violations) {
    for (auto it = user.begin(); it != user.end(); ++it) {
        std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!defaults.contains(it.key())) {
            violations.push_back("unknown key: " + path);
            continue;
        }
        const json& dv = defaults.at(it.key());
        if (dv.is_object() && it->is_object()) {
            merge_check(dv, *it, path, out.at(it.key()), violations);
        } else if (dv.is_object() != it->is_object()) {
            violations.push_back("type mismatch at " + path);
        } else {
            out[it.key()] = *it;
        }
    }
}

struct RangeRule {
    std::string key;
    std::function<bool(const json&)> ok;
    std::string what;
};

inline const std::vector<RangeRule>& range_rules() {
    auto num_ge = [](double lo) {
        return [lo](const json& v) { return v.is_number() && v.get<double>() >= lo; };
    };
    auto num_gt = [](double lo) {
        return [lo](const json& v) { return v.is_number() && v.get<double>() > lo; };
    };
    auto int_ge = [](int lo) {
        return [lo](const json& v) { return v.is_number_integer() && v.get<int>() >= lo; };
    };
    auto prob = [](const json& v) {
        return v.is_number() && v.get<double>() >= 0.0 && v.get<double>() <= 1.0;
    };
    auto one_of = [](std::vector<std::string> opts) {
        return [opts](const json& v) {
            return v.is_string() &&
                   std::find(opts.begin(), opts.end(), v.get<std::string>()) != opts.end();
        };
    };
    static const std::vector<RangeRule> rules = {
        {"data.image_size", int_ge(4), "must be an integer >= 4"},
        {"data.classes", int_ge(2), "must be an integer >= 2"},
        {"data.train_count", int_ge(1), "must be >= 1"},
        {"teacher.schedule", one_of({"vp_cosine", "vp_linear", "edm"}), "unknown schedule"},
        {"teacher.T", int_ge(2), "must be >= 2"},
        {"teacher.steps", int_ge(0), "must be >= 0"},
        {"teacher.lr", num_gt(0), "must be > 0"},
        {"teacher.p_uncond", prob, "must be in [0,1]"},
        {"codec.kind", one_of({"learned", "identity"}), "unknown codec kind"},
        {"codec.lr", num_gt(0), "must be > 0"},
        {"pairs.count", int_ge(1), "must be >= 1"},
        {"pairs.solver", one_of({"ddim", "heun"}), "unknown solver"},
        {"pairs.steps", int_ge(1), "must be >= 1"},
        {"pairs.cfg", num_ge(0), "must be >= 0"},
        {"pairs.workers", int_ge(1), "must be >= 1"},
        {"perceptual.lr", num_gt(0), "must be > 0"},
        {"augment.p", prob, "must be in [0,1]"},
        {"distill.loss",
         one_of({"mse", "pseudo_huber", "latentlpips", "e_latentlpips", "blended"}),
         "unknown loss mode"},
        {"distill.lr", num_gt(0), "must be > 0"},
        {"distill.steps", int_ge(0), "must be >= 0"},
        {"distill.lambda_gan", num_ge(0), "must be >= 0"},
        {"distill.r1_gamma", num_ge(0), "must be >= 0"},
        {"distill.r1_interval", int_ge(1), "must be >= 1"},
        {"distill.ema_beta", [](const json& v) {
             return v.is_number() && v.get<double>() >= 0.0 && v.get<double>() < 1.0;
         }, "must be in [0,1)"},
        {"distill.mixmatch.latent", prob, "must be in [0,1]"},
        {"distill.mixmatch.condition", prob, "must be in [0,1]"},
        {"distill.mixmatch.noise", prob, "must be in [0,1]"},
        {"distill.blend_lambda", prob, "must be in [0,1]"},
        {"eval.fake_count", int_ge(2), "must be >= 2"},
        {"eval.pr_k", int_ge(1), "must be >= 1"},
        {"eval.shrink", num_ge(0), "must be >= 0"},
        {"reconstruct.iters", int_ge(1), "must be >= 1"},
        {"bench.trials", int_ge(20), "must be >= 20"},
    };
    return rules;
}

inline bool lookup(const json& doc, const std::string& dotted, const json** out) {
    const json* cur = &doc;
    size_t pos = 0;
    while (pos != std::string::npos) {
        size_t dot = dotted.find('.', pos);
        std::string key =
            dot == std::string::npos ? dotted.substr(pos) : dotted.substr(pos, dot - pos);
        if (!cur->is_object() || !cur->contains(key)) return false;
        cur = &cur->at(key);
        pos = dot == std::string::npos ? std::string::npos : dot + 1;
    }
    *out = cur;
    return true;
}

}  // namespace detail

inline ExperimentConfig validate_config(const json& user) {
    json resolved = default_config();
    std::vector<std::string> violations;
    detail::merge_check(default_config(), user, "", resolved, violations);
    for (const auto& rule : detail::range_rules()) {
        const json* v = nullptr;
        if (detail::lookup(resolved, rule.key, &v) && !rule.ok(*v)) {
            violations.push_back(rule.key + ": " + rule.what);
        }
    }
    if (!violations.empty()) throw ConfigError(violations);
    return ExperimentConfig{resolved};
}

inline ExperimentConfig parse_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) {
        throw ConfigError({"config file not found: " + path.string()});
    }
    json user;
    try {
        user = json::parse(f);
    } catch (const json::parse_error& e) {
        throw ConfigError({std::string("config parse error: ") + e.what()});
    }
    return validate_config(user);
}

// dotted key=value overrides; values are coerced to the default's type
inline ExperimentConfig apply_overrides(const ExperimentConfig& cfg,
                                        const std::vector<std::string>& kvs) {
    json doc = cfg.doc;
    std::vector<std::string> violations;
    for (const auto& kv : kvs) {
        size_t eq = kv.find('=');
        if (eq == std::string::npos) {
            violations.push_back("override missing '=': " + kv);
            continue;
        }
        std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
        json* cur = &doc;
        size_t pos = 0;
        bool ok = true;
        while (pos != std::string::npos) {
            size_t dot = key.find('.', pos);
            std::string k = dot == std::string::npos ? key.substr(pos) : key.substr(pos, dot - pos);
            if (!cur->is_object() || !cur->contains(k)) {
                violations.push_back("unknown key: " + key);
                ok = false;
                break;
            }
            cur = &(*cur)[k];
            pos = dot == std::string::npos ? std::string::npos : dot + 1;
        }
        if (!ok) continue;
        try {
            if (cur->is_string()) {
                *cur = val;
            } else if (cur->is_boolean()) {
                *cur = (val == "true" || val == "1");
            } else if (cur->is_number_integer()) {
                *cur = std::stoll(val);
            } else if (cur->is_number()) {
                *cur = std::stod(val);
            } else {
                *cur = json::parse(val);
            }
        } catch (...) {
            violations.push_back("cannot coerce override " + key + "=" + val);
        }
    }
    if (!violations.empty()) throw ConfigError(violations);
    return validate_config(doc);
}

}  // namespace d2g

#endif
