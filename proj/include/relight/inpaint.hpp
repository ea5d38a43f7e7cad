#ifndef RELIGHT_INPAINT_HPP
#define RELIGHT_INPAINT_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <queue>
#include <vector>

#include "relight/imaging.hpp"

namespace relight {

/// Default neighbourhood radius (pixels) for fast-marching inpainting.
inline constexpr int kDefaultInpaintRadius = 5;

/// Optional instrumentation of a fast-marching run.
struct InpaintTrace {
    /// Arrival distance of each pixel as it leaves the narrow band, in processing order.
    std::vector<double> processed_distance;
    /// Final distance-to-boundary field (0 outside the hole).
    std::vector<double> distance;
};

namespace detail {

enum class FmmFlag : std::uint8_t { kKnown, kBand, kInside };

struct FmmGrid {
    int width, height;
    std::vector<FmmFlag> flag;
    std::vector<double> dist;

    bool valid(int y, int x) const { return y >= 0 && x >= 0 && y < height && x < width; }
    std::size_t idx(int y, int x) const { return static_cast<std::size_t>(y) * width + x; }
    bool known(int y, int x) const { return valid(y, x) && flag[idx(y, x)] != FmmFlag::kInside; }
    double t(int y, int x) const { return dist[idx(y, x)]; }

    /// Upwind eikonal update from two orthogonal neighbours.
    double solve(int y1, int x1, int y2, int x2) const
    {
        const bool k1 = known(y1, x1), k2 = known(y2, x2);
        constexpr double kFar = 1e6;
        const double a = k1 ? t(y1, x1) : kFar;
        const double b = k2 ? t(y2, x2) : kFar;
        if (k1 && k2) {
            if (std::abs(a - b) >= 1.0)
                return 1.0 + std::min(a, b);
            return 0.5 * (a + b + std::sqrt(2.0 - (a - b) * (a - b)));
        }
        if (k1)
            return 1.0 + a;
        if (k2)
            return 1.0 + b;
        return kFar;
    }

    double arrival(int y, int x) const
    {
        return std::min({solve(y - 1, x, y, x - 1), solve(y + 1, x, y, x - 1), solve(y - 1, x, y, x + 1), solve(y + 1, x, y, x + 1)});
    }

    /// Centered difference where both sides are known, one-sided otherwise.
    template <class F>
    double diff(int y, int x, int dy, int dx, F value) const
    {
        const bool fwd = known(y + dy, x + dx), bwd = known(y - dy, x - dx);
        if (fwd && bwd)
            return 0.5 * (value(y + dy, x + dx) - value(y - dy, x - dx));
        if (fwd)
            return value(y + dy, x + dx) - value(y, x);
        if (bwd)
            return value(y, x) - value(y - dy, x - dx);
        return 0.0;
    }
};

} // namespace detail

/// Fills the pixels of `hole` (mask > 0.5) by Telea's fast marching method.
///
/// Hole pixels are visited in increasing distance from the hole boundary. Each
/// is set to a weighted average over already-known pixels q within `radius`
/// of the first-order estimates I(q) + grad I(q) . (p - q), with weight
///   dir * dst * lev,  dir = |cos(p - q, grad T(p))|,  dst = 1 / |p - q|^2,
///   lev = 1 / (1 + |T(q) - T(p)|).
/// Pixels outside the hole are returned unchanged.
inline PortraitImage inpaint_fast_marching(const PortraitImage& image, const SegMask& hole, int radius = kDefaultInpaintRadius,
    InpaintTrace* trace = nullptr)
{
    using detail::FmmFlag;
    detail::require_same_size(image, hole.width(), hole.height(), "inpaint_fast_marching");
    detail::require(radius >= 1, "inpaint radius must be at least 1");
    const int w = image.width(), h = image.height();

    detail::FmmGrid g{w, h, std::vector<FmmFlag>(static_cast<std::size_t>(w) * h, FmmFlag::kKnown),
        std::vector<double>(static_cast<std::size_t>(w) * h, 0.0)};
    std::size_t hole_count = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (hole.inside(y, x)) {
                g.flag[g.idx(y, x)] = FmmFlag::kInside;
                g.dist[g.idx(y, x)] = 1e6;
                ++hole_count;
            }
    if (hole_count == static_cast<std::size_t>(w) * h)
        throw ConfigError("inpaint_fast_marching: hole covers the entire image");

    PortraitImage out(image);
    if (trace) {
        trace->processed_distance.clear();
        trace->distance.assign(g.dist.size(), 0.0);
    }
    if (hole_count == 0)
        return out;

    static constexpr std::array<std::array<int, 2>, 4> kNeighbours{{{-1, 0}, {0, -1}, {1, 0}, {0, 1}}};

    // Min-heap on (distance, insertion order).
    using Entry = std::tuple<double, std::uint64_t, int, int>;
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> band;
    std::uint64_t seq = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (g.flag[g.idx(y, x)] != FmmFlag::kKnown)
                continue;
            bool touches = false;
            for (auto [dy, dx] : kNeighbours)
                touches = touches || (g.valid(y + dy, x + dx) && g.flag[g.idx(y + dy, x + dx)] == FmmFlag::kInside);
            if (touches) {
                g.flag[g.idx(y, x)] = FmmFlag::kBand;
                band.emplace(0.0, seq++, y, x);
            }
        }

    auto fill = [&](int py, int px) {
        const auto tval = [&](int y, int x) { return g.t(y, x); };
        double gty = g.diff(py, px, 1, 0, tval);
        double gtx = g.diff(py, px, 0, 1, tval);
        const double gnorm = std::hypot(gty, gtx);
        if (gnorm > 0) {
            gty /= gnorm;
            gtx /= gnorm;
        }

        std::array<double, 3> ref{};
        bool have_ref = false;
        std::array<double, 3> num{};
        double den = 0.0;
        for (int qy = std::max(0, py - radius); qy <= std::min(h - 1, py + radius); ++qy) {
            for (int qx = std::max(0, px - radius); qx <= std::min(w - 1, px + radius); ++qx) {
                if ((qy == py && qx == px) || !g.known(qy, qx))
                    continue;
                const double ry = py - qy, rx = px - qx;
                const double r2 = ry * ry + rx * rx;
                if (r2 > static_cast<double>(radius) * radius)
                    continue;
                const double rlen = std::sqrt(r2);
                const double dir = gnorm > 0 ? std::max(std::abs(ry * gty + rx * gtx) / rlen, 1e-6) : 1.0;
                const double dst = 1.0 / r2;
                const double lev = 1.0 / (1.0 + std::abs(g.t(qy, qx) - g.t(py, px)));
                const double wgt = dir * dst * lev;
                for (int c = 0; c < 3; ++c) {
                    const auto ival = [&](int y, int x) { return static_cast<double>(out.at(c, y, x)); };
                    const double q = ival(qy, qx);
                    if (!have_ref)
                        ref[c] = q;
                    const double gy = g.diff(qy, qx, 1, 0, ival);
                    const double gx = g.diff(qy, qx, 0, 1, ival);
                    num[c] += wgt * (q - ref[c] + gy * ry + gx * rx);
                }
                have_ref = true;
                den += wgt;
            }
        }
        for (int c = 0; c < 3; ++c) {
            const double v = den > 0 ? ref[c] + num[c] / den : ref[c];
            out.at(c, py, px) = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    };

    while (!band.empty()) {
        const auto [d, s, y, x] = band.top();
        band.pop();
        g.flag[g.idx(y, x)] = FmmFlag::kKnown;
        if (trace)
            trace->processed_distance.push_back(d);
        for (auto [dy, dx] : kNeighbours) {
            const int ny = y + dy, nx = x + dx;
            if (!g.valid(ny, nx) || g.flag[g.idx(ny, nx)] != FmmFlag::kInside)
                continue;
            g.dist[g.idx(ny, nx)] = g.arrival(ny, nx);
            fill(ny, nx);
            g.flag[g.idx(ny, nx)] = FmmFlag::kBand;
            band.emplace(g.dist[g.idx(ny, nx)], seq++, ny, nx);
        }
    }
    if (trace)
        trace->distance = g.dist;
    return out;
}

} // namespace relight

#endif // RELIGHT_INPAINT_HPP
