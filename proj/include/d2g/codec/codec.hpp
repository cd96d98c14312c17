#ifndef D2G_CODEC_CODEC_HPP
#define D2G_CODEC_CODEC_HPP

#include <atomic>
#include <memory>
#include <set>

#include "d2g/core/checkpoint.hpp"
#include "d2g/core/optim.hpp"
#include "d2g/data/dataset.hpp"

namespace d2g {

enum class CodecKind { learned, identity };

// Pixel <-> latent boundary. The learned codec is a plain reconstruction
// autoencoder; raw latents are rescaled to roughly unit standard deviation so
// the diffusion schedule sees well-scaled data. decode() bumps a counter:
// the distillation loop is required to keep it at zero.
struct Codec {
    CodecKind kind = CodecKind::identity;
    int downsample_factor = 1;
    int latent_channels = 3;
    int image_channels = 3;
    int width = 24;
    double latent_scale = 1.0;  // multiplies raw encoder output
    std::shared_ptr<ParamStore> params;
    std::shared_ptr<std::atomic<int64_t>> decode_calls = std::make_shared<std::atomic<int64_t>>(0);

    // module handles into params (learned kind only)
    std::vector<Conv2d> enc_convs;  // stride-1 / stride-2 mix
    std::vector<Conv2d> dec_convs;

    int64_t decode_count() const { return decode_calls->load(); }

    Tensor encode(const Tensor& img) const {
        if (img.c() != image_channels) throw std::invalid_argument("encode: channel mismatch");
        if (img.h() % downsample_factor != 0 || img.w() % downsample_factor != 0) {
            throw std::invalid_argument("encode: dims not divisible by downsample factor");
        }
        if (kind == CodecKind::identity) return img;
        return encode_var(constant(img))->val;
    }

    Tensor decode(const Tensor& lat) const {
        decode_calls->fetch_add(1);
        if (lat.c() != latent_channels) throw std::invalid_argument("decode: channel mismatch");
        if (kind == CodecKind::identity) return lat;
        return decode_var(constant(lat))->val;
    }

    Var encode_var(const Var& x) const {
        if (kind == CodecKind::identity) return x;
        Var h = x;
        for (size_t i = 0; i < enc_convs.size(); ++i) {
            h = enc_convs[i].fwd(h);
            if (i + 1 < enc_convs.size()) h = silu(h);
        }
        return scale(h, latent_scale);
    }

    // gradient-carrying decode used by the pixel-path loss benchmark
    Var decode_var(const Var& z) const {
        if (kind == CodecKind::identity) return z;
        Var h = scale(z, 1.0 / latent_scale);
        for (size_t i = 0; i < dec_convs.size(); ++i) {
            h = dec_convs[i].fwd(h);
            if (i + 1 < dec_convs.size()) h = silu(h);
            if (up_after_.count(i)) h = upsample_nearest2x(h);
        }
        return h;
    }

    std::set<size_t> up_after_;  // decoder conv indices followed by 2x upsample
};

struct CodecTrainConfig {
    CodecKind kind = CodecKind::learned;
    int downsample_factor = 2;
    int latent_channels = 4;
    int width = 24;
    int steps = 400;
    int batch = 8;
    double lr = 2e-3;
    uint64_t seed = 7;
};

inline Codec make_identity_codec(int channels = 3) {
    Codec c;
    c.kind = CodecKind::identity;
    c.downsample_factor = 1;
    c.latent_channels = channels;
    c.image_channels = channels;
    return c;
}

namespace detail {

inline Codec build_learned_codec(const CodecTrainConfig& cfg, uint64_t init_seed) {
    if ((cfg.downsample_factor & (cfg.downsample_factor - 1)) != 0 || cfg.downsample_factor < 1) {
        throw std::invalid_argument("codec: downsample factor must be a power of two");
    }
    Codec c;
    c.kind = CodecKind::learned;
    c.downsample_factor = cfg.downsample_factor;
    c.latent_channels = cfg.latent_channels;
    c.width = cfg.width;
    c.params = std::make_shared<ParamStore>(init_seed);
    ParamStore& ps = *c.params;
    const int W = cfg.width;
    int n_down = 0;
    for (int f = cfg.downsample_factor; f > 1; f /= 2) ++n_down;

    c.enc_convs.emplace_back(ps, "enc.in", 3, W, 3);
    for (int i = 0; i < n_down; ++i) c.enc_convs.emplace_back(ps, "enc.down" + std::to_string(i), W, W, 3, 2);
    c.enc_convs.emplace_back(ps, "enc.mid", W, W, 3);
    c.enc_convs.emplace_back(ps, "enc.out", W, cfg.latent_channels, 3);

    c.dec_convs.emplace_back(ps, "dec.in", cfg.latent_channels, W, 3);
    c.dec_convs.emplace_back(ps, "dec.mid", W, W, 3);
    for (int i = 0; i < n_down; ++i) {
        c.up_after_.insert(c.dec_convs.size() - 1);
        c.dec_convs.emplace_back(ps, "dec.up" + std::to_string(i), W, W, 3);
    }
    c.dec_convs.emplace_back(ps, "dec.out", W, 3, 3);
    return c;
}

}  // namespace detail

inline double psnr(const Tensor& a, const Tensor& b) {
    double mse = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.size());
    // data range is [-1,1], peak-to-peak 2
    return 10.0 * std::log10(4.0 / std::max(mse, 1e-12));
}

inline double codec_psnr(const Codec& c, const LabeledSet& set) {
    double total = 0;
    for (const auto& img : set.items) total += psnr(img, c.decode(c.encode(img)));
    return total / static_cast<double>(set.size());
}

inline Codec train_codec(const LabeledSet& images, const CodecTrainConfig& cfg) {
    if (images.empty()) throw std::invalid_argument("train_codec: empty image set");
    if (cfg.kind == CodecKind::identity) return make_identity_codec(images.items[0].c());

    Codec c = detail::build_learned_codec(cfg, hash_seed(cfg.seed, 0x51));
    Adam opt(*c.params, cfg.lr);
    BatchSampler sampler(images.size(), cfg.batch, hash_seed(cfg.seed, 0x52));
    for (int step = 0; step < cfg.steps; ++step) {
        Tensor x = images.batch(sampler.next());
        Var in = constant(x);
        Var recon = c.decode_var(c.encode_var(in));
        Var loss = mean_all(square(sub(recon, in)));
        opt.zero_grad();
        backward(loss);
        opt.step();
    }

    // rescale raw latents to unit-ish std for the diffusion stage
    double sq = 0;
    size_t cnt = 0;
    for (size_t i = 0; i < images.size() && i < 64; ++i) {
        Tensor lat = c.encode_var(constant(images.items[i]))->val;
        sq += lat.sq_norm();
        cnt += lat.size();
    }
    double raw_std = std::sqrt(sq / std::max<size_t>(1, cnt));
    c.latent_scale = raw_std > 1e-8 ? 1.0 / raw_std : 1.0;
    return c;
}

/*--------------------------------- checkpoints ------------------------------*/

inline void save_codec(const std::filesystem::path& path, const Codec& c) {
    if (c.kind == CodecKind::identity) {
        save_checkpoint(path, "D2G-CDC1", {{"kind", "identity"}, {"channels", c.latent_channels}},
                        std::vector<std::pair<std::string, Tensor>>{});
        return;
    }
    json meta = {{"kind", "learned"},
                 {"downsample_factor", c.downsample_factor},
                 {"latent_channels", c.latent_channels},
                 {"width", c.width},
                 {"latent_scale", c.latent_scale}};
    save_checkpoint(path, "D2G-CDC1", meta, *c.params);
}

inline Codec load_codec(const std::filesystem::path& path) {
    Checkpoint ck = load_checkpoint(path, "D2G-CDC1");
    if (ck.meta.at("kind") == "identity") {
        return make_identity_codec(ck.meta.at("channels"));
    }
    CodecTrainConfig cfg;
    cfg.downsample_factor = ck.meta.at("downsample_factor");
    cfg.latent_channels = ck.meta.at("latent_channels");
    cfg.width = ck.meta.at("width");
    Codec c = detail::build_learned_codec(cfg, 0);
    load_into(ck, *c.params);
    c.latent_scale = ck.meta.at("latent_scale");
    return c;
}

}  // namespace d2g

#endif
