#ifndef RELIGHT_TESTS_SUPPORT_HPP
#define RELIGHT_TESTS_SUPPORT_HPP

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>

#include "relight/relight.hpp"

namespace relight::testing {

inline constexpr double kGradTol = 1e-4;
inline constexpr int kGradSeeds = 20;

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0)
{
    Tensor<double> t(std::move(shape));
    for (auto& v : t.values())
        v = rng.uniform(lo, hi);
    return t;
}

/// Random values with |v| >= margin, so ReLU and L1 kinks stay out of reach of
/// finite differences.
inline Tensor<double> away_from_zero(Shape shape, Rng& rng, double margin = 0.05)
{
    Tensor<double> t(std::move(shape));
    for (auto& v : t.values()) {
        const double m = rng.uniform(margin, 1.0);
        v = rng.uniform() < 0.5 ? -m : m;
    }
    return t;
}

inline Tensor<double> random_mask(int n, int h, int w, Rng& rng)
{
    Tensor<double> m({n, 1, h, w});
    for (int b = 0; b < n; ++b) {
        for (int k = 0; k < h * w; ++k)
            m[static_cast<std::size_t>(b * h * w + k)] = rng.uniform() < 0.6 ? 1.0 : 0.0;
        m[static_cast<std::size_t>(b * h * w)] = 1.0;
    }
    return m;
}

inline PortraitImage random_image(int w, int h, Rng& rng)
{
    PortraitImage im(w, h);
    for (auto& v : im.values())
        v = static_cast<float>(rng.uniform());
    return im;
}

inline SegMask random_binary_mask(int w, int h, Rng& rng, double p = 0.5)
{
    SegMask m(w, h);
    for (auto& v : m.values())
        v = rng.uniform() < p ? 1.0f : 0.0f;
    m.values()[0] = 1.0f;
    return m;
}

/// Small architecture for gradient checks.
inline ModelConfig tiny_config(std::uint64_t seed = 1)
{
    ModelConfig c;
    c.resolution = 8;
    c.subject_channels = 4;
    c.trunk_width = 8;
    c.trunk_layers = 2;
    c.seed = seed;
    return c;
}

/// Random training batch of n samples for `cfg`.
inline LossBatch<double> random_batch(const ModelConfig& cfg, Rng& rng, int n = 2)
{
    const int r = cfg.resolution;
    LossBatch<double> b;
    auto img = [&] { return random_tensor({n, 3, r, r}, rng, 0.0, 1.0); };
    auto msk = [&] { return random_mask(n, r, r, rng); };
    b.x_image = img();
    b.x_mask = msk();
    b.y_image = img();
    b.y_mask = msk();
    b.gt_zero = img();
    b.gt_plus90 = img();
    b.gt_minus90 = img();
    b.y_plus90_image = img();
    b.y_plus90_mask = msk();
    b.y_minus90_image = img();
    b.y_minus90_mask = msk();
    b.feat_noise = random_tensor({n, ModelConfig::kIllumDims}, rng, -2.0, 2.0);
    return b;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name)
{
    const auto dir = std::filesystem::temp_directory_path() / ("relight_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace relight::testing

#endif // RELIGHT_TESTS_SUPPORT_HPP
