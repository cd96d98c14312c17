#ifndef D2G_DATA_TOYSET_HPP
#define D2G_DATA_TOYSET_HPP

#include <algorithm>
#include <cmath>

#include "d2g/data/dataset.hpp"

namespace d2g {

// Procedural 10-class RGB dataset. Each class is a shape/texture family with
// per-sample color, position and scale variation, so classes are clearly
// separable yet multi-modal. Pixels are in [-1, 1]; edges are smoothed so a
// small codec reconstructs them well.
inline constexpr int kToyClassCount = 10;

namespace detail {

inline double smoothstep_edge(double sd, double softness = 1.2) {
    // signed distance -> coverage in [0,1]
    return 1.0 / (1.0 + std::exp(sd / softness * 4.0));
}

}  // namespace detail

inline Tensor render_toy_image(int cls, int size, uint64_t seed) {
    Rng rng(seed);
    Tensor img(1, 3, size, size);

    double bg[3], fg[3];
    for (int c = 0; c < 3; ++c) bg[c] = rng.uniform(-0.85, 0.0);
    for (int c = 0; c < 3; ++c) fg[c] = rng.uniform(0.1, 0.9);
    // keep figure and ground apart so every class stays recognizable
    int boost = rng.uniform_int(0, 2);
    fg[boost] = rng.uniform(0.55, 0.95);

    const double cx = size * rng.uniform(0.35, 0.65);
    const double cy = size * rng.uniform(0.35, 0.65);
    const double rad = size * rng.uniform(0.2, 0.32);
    // texture frequency in whole cycles across the image; kept coarse so a
    // 2x-downsampling codec can represent every class
    const double cycles = rng.uniform(1.5, 2.8);
    const double freq = 2.0 * std::numbers::pi * cycles / size;
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    // diagonal stripes stay near 45 degrees so they never collide with the
    // axis-aligned stripe classes
    const double angle = std::numbers::pi / 4.0 + rng.uniform(-0.25, 0.25);

    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const double dx = x - cx, dy = y - cy;
            const double r = std::sqrt(dx * dx + dy * dy);
            double cov = 0.0;  // foreground coverage
            switch (cls) {
                case 0:  // disc
                    cov = detail::smoothstep_edge(r - rad);
                    break;
                case 1: {  // filled square
                    double sd = std::max(std::abs(dx), std::abs(dy)) - rad;
                    cov = detail::smoothstep_edge(sd);
                    break;
                }
                case 2: {  // triangle (upward)
                    double sd = std::max({dy - rad * 0.8, -dy - rad * 0.8 + std::abs(dx) * 1.6});
                    cov = detail::smoothstep_edge(sd);
                    break;
                }
                case 3: {  // plus sign
                    double arm = rad * 0.38;
                    double sd = std::min(std::max(std::abs(dx) - arm, std::abs(dy) - rad),
                                         std::max(std::abs(dy) - arm, std::abs(dx) - rad));
                    cov = detail::smoothstep_edge(sd);
                    break;
                }
                case 4: {  // ring
                    double sd = std::abs(r - rad) - rad * 0.28;
                    cov = detail::smoothstep_edge(sd);
                    break;
                }
                case 5:  // horizontal stripes
                    cov = 0.5 + 0.5 * std::sin(y * freq + phase);
                    break;
                case 6:  // vertical stripes
                    cov = 0.5 + 0.5 * std::sin(x * freq + phase);
                    break;
                case 7: {  // checkerboard
                    double sx = std::sin(x * freq + phase);
                    double sy = std::sin(y * freq + phase * 0.7);
                    cov = 0.5 + 0.5 * std::tanh(3.0 * sx * sy);
                    break;
                }
                case 8: {  // soft radial blob
                    cov = std::exp(-(r * r) / (2.0 * rad * rad));
                    break;
                }
                case 9: {  // diagonal stripes
                    double u = std::cos(angle) * x + std::sin(angle) * y;
                    cov = 0.5 + 0.5 * std::sin(u * freq + phase);
                    break;
                }
                default: throw std::invalid_argument("render_toy_image: bad class");
            }
            for (int c = 0; c < 3; ++c) {
                img.at(0, c, y, x) = bg[c] + (fg[c] - bg[c]) * cov;
            }
        }
    }
    return img;
}

inline LabeledSet make_toyset(int count, int size, uint64_t seed) {
    if (count < 1) throw std::invalid_argument("make_toyset: count must be positive");
    LabeledSet set;
    set.items.reserve(count);
    for (int i = 0; i < count; ++i) {
        int cls = i % kToyClassCount;
        set.items.push_back(render_toy_image(cls, size, hash_seed(seed, i)));
        set.labels.push_back(cls);
    }
    return set;
}

}  // namespace d2g

#endif
