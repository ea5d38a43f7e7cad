#ifndef RELIGHT_METRICS_HPP
#define RELIGHT_METRICS_HPP

#include <algorithm>
#include <array>
#include <cmath>

#include "relight/imaging.hpp"

namespace relight {

inline constexpr double kPsnrCap = 100.0;

namespace detail {

inline void check_metric_inputs(const PortraitImage& a, const PortraitImage& b, const SegMask& mask, const char* op)
{
    require(a.width() == b.width() && a.height() == b.height(), std::string(op) + ": image sizes differ");
    require_same_size(a, mask.width(), mask.height(), op);
    require(mask.sum() > 0, std::string(op) + ": mask is empty");
}

} // namespace detail

/// Root mean squared error over masked pixels and the three channels.
inline double rmse(const PortraitImage& a, const PortraitImage& b, const SegMask& mask)
{
    detail::check_metric_inputs(a, b, mask, "rmse");
    double acc = 0.0, wsum = 0.0;
    for (int y = 0; y < a.height(); ++y)
        for (int x = 0; x < a.width(); ++x) {
            const double w = mask.at(y, x);
            if (w == 0.0)
                continue;
            wsum += 3.0 * w;
            for (int c = 0; c < 3; ++c) {
                const double d = static_cast<double>(a.at(c, y, x)) - b.at(c, y, x);
                acc += w * d * d;
            }
        }
    return std::sqrt(acc / wsum);
}

/// 20 log10(1 / rmse) for unit dynamic range, capped at 100 dB.
inline double psnr_from_rmse(double e)
{
    if (e <= 0.0)
        return kPsnrCap;
    return std::min(kPsnrCap, -20.0 * std::log10(e));
}

inline double psnr(const PortraitImage& a, const PortraitImage& b, const SegMask& mask) { return psnr_from_rmse(rmse(a, b, mask)); }

struct SsimParams {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;
};

/// Single-scale SSIM with a Gaussian window (truncated and renormalized at
/// image borders), averaged over channels and weighted by the mask.
inline double ssim(const PortraitImage& a, const PortraitImage& b, const SegMask& mask, const SsimParams& p = {})
{
    detail::check_metric_inputs(a, b, mask, "ssim");
    const int w = a.width(), h = a.height(), r = p.window / 2;
    const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
    const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);
    std::vector<double> g(static_cast<std::size_t>(p.window));
    for (int i = -r; i <= r; ++i)
        g[static_cast<std::size_t>(i + r)] = std::exp(-(i * i) / (2.0 * p.sigma * p.sigma));

    double total = 0.0;
    for (int c = 0; c < 3; ++c) {
        double acc = 0.0, wsum = 0.0;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double mw = mask.at(y, x);
                if (mw == 0.0)
                    continue;
                double norm = 0, ma = 0, mb = 0;
                for (int dy = -r; dy <= r; ++dy)
                    for (int dx = -r; dx <= r; ++dx) {
                        const int yy = y + dy, xx = x + dx;
                        if (yy < 0 || xx < 0 || yy >= h || xx >= w)
                            continue;
                        const double k = g[static_cast<std::size_t>(dy + r)] * g[static_cast<std::size_t>(dx + r)];
                        norm += k;
                        ma += k * a.at(c, yy, xx);
                        mb += k * b.at(c, yy, xx);
                    }
                ma /= norm;
                mb /= norm;
                double va = 0, vb = 0, cov = 0;
                for (int dy = -r; dy <= r; ++dy)
                    for (int dx = -r; dx <= r; ++dx) {
                        const int yy = y + dy, xx = x + dx;
                        if (yy < 0 || xx < 0 || yy >= h || xx >= w)
                            continue;
                        const double k = g[static_cast<std::size_t>(dy + r)] * g[static_cast<std::size_t>(dx + r)];
                        const double da = a.at(c, yy, xx) - ma, db = b.at(c, yy, xx) - mb;
                        va += k * da * da;
                        vb += k * db * db;
                        cov += k * da * db;
                    }
                va /= norm;
                vb /= norm;
                cov /= norm;
                const double s = ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                acc += mw * s;
                wsum += mw;
            }
        total += acc / wsum;
    }
    return total / 3.0;
}

/// Per-image metrics averaged over images.
struct MetricRecord {
    double rmse = 0.0;
    double psnr = 0.0;
    double ssim = 0.0;
    std::size_t count = 0;

    void add(const PortraitImage& out, const PortraitImage& truth, const SegMask& mask)
    {
        const double e = relight::rmse(out, truth, mask);
        const double n = static_cast<double>(count);
        rmse = (rmse * n + e) / (n + 1);
        psnr = (psnr * n + psnr_from_rmse(e)) / (n + 1);
        ssim = (ssim * n + relight::ssim(out, truth, mask)) / (n + 1);
        ++count;
    }
};

} // namespace relight

#endif // RELIGHT_METRICS_HPP
