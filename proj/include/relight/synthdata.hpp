#ifndef RELIGHT_SYNTHDATA_HPP
#define RELIGHT_SYNTHDATA_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "relight/imaging.hpp"
#include "relight/rng.hpp"

namespace relight {

inline constexpr int kRotationSteps = 12;
inline constexpr int kRotationStepDegrees = 30;
inline constexpr const char* kGeneratorVersion = "relight-synth-1";

using Vec3 = std::array<double, 3>;

namespace detail {

inline double radians(double deg) { return deg * std::numbers::pi / 180.0; }

inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

inline Vec3 normalize(const Vec3& v)
{
    const double n = std::sqrt(dot(v, v));
    return {v[0] / n, v[1] / n, v[2] / n};
}

inline int wrap(int i, int n) { return ((i % n) + n) % n; }

} // namespace detail

/// Unit direction for azimuth/elevation in degrees. Azimuth 0 points to the
/// image right (+x), 90 away from the camera (-z), -90 towards it (+z);
/// positive rotation is counterclockwise seen from above.
inline Vec3 direction(double azimuth_deg, double elevation_deg)
{
    const double phi = detail::radians(azimuth_deg), theta = detail::radians(elevation_deg);
    return {std::cos(theta) * std::cos(phi), std::sin(theta), -std::cos(theta) * std::sin(phi)};
}

inline double azimuth_of(const Vec3& d)
{
    double a = std::atan2(-d[2], d[0]) * 180.0 / std::numbers::pi;
    return a < 0 ? a + 360.0 : a;
}

inline double elevation_of(const Vec3& d) { return std::asin(std::clamp(d[1], -1.0, 1.0)) * 180.0 / std::numbers::pi; }

/// Gaussian lobe of light on the sphere.
struct LightLobe {
    double azimuth_deg = 0.0;
    double elevation_deg = 30.0;
    double power = 1.0;      ///< irradiance delivered at normal incidence
    double width_deg = 6.0;  ///< angular standard deviation
    Vec3 color{1.0, 1.0, 1.0};
};

/// Procedural environment description.
struct EnvParams {
    Vec3 zenith{0.25, 0.35, 0.55};
    Vec3 horizon{0.45, 0.45, 0.45};
    Vec3 ground{0.20, 0.18, 0.15};
    LightLobe sun;
    std::vector<LightLobe> area_lights;

    static EnvParams random(std::uint64_t seed)
    {
        Rng rng(seed);
        EnvParams p;
        const double warmth = rng.uniform(-0.15, 0.15);
        const double sky = rng.uniform(0.15, 0.45);
        p.zenith = {sky * (0.6 - warmth), sky * 0.8, sky * (1.2 + warmth)};
        p.horizon = {sky * (1.1 + warmth), sky * 1.05, sky * (0.95 - warmth)};
        const double g = rng.uniform(0.08, 0.3);
        p.ground = {g * rng.uniform(0.8, 1.2), g * rng.uniform(0.8, 1.2), g * rng.uniform(0.6, 1.0)};
        p.sun.azimuth_deg = rng.uniform(0.0, 360.0);
        p.sun.elevation_deg = rng.uniform(8.0, 55.0);
        p.sun.power = rng.uniform(1.2, 3.2);
        p.sun.width_deg = 5.0;
        p.sun.color = {1.0, rng.uniform(0.85, 0.98), rng.uniform(0.65, 0.92)};
        const int k = 2;
        for (int i = 0; i < k; ++i) {
            LightLobe l;
            l.azimuth_deg = rng.uniform(0.0, 360.0);
            l.elevation_deg = rng.uniform(-5.0, 45.0);
            l.power = rng.uniform(0.2, 0.9);
            l.width_deg = rng.uniform(12.0, 25.0);
            l.color = {rng.uniform(0.3, 1.0), rng.uniform(0.3, 1.0), rng.uniform(0.3, 1.0)};
            p.area_lights.push_back(l);
        }
        return p;
    }

    /// Uniform radiance from every direction and no lights.
    static EnvParams uniform(double radiance)
    {
        EnvParams p;
        p.zenith = p.horizon = p.ground = {radiance, radiance, radiance};
        p.sun.power = 0.0;
        return p;
    }

    Vec3 radiance(const Vec3& d) const
    {
        Vec3 out{};
        const double el = elevation_of(d);
        if (el >= 0) {
            const double t = std::sqrt(std::sin(detail::radians(el)));
            for (int c = 0; c < 3; ++c)
                out[c] = horizon[c] + (zenith[c] - horizon[c]) * t;
        } else {
            out = ground;
        }
        auto add_lobe = [&](const LightLobe& l) {
            if (l.power <= 0)
                return;
            const double sigma = detail::radians(l.width_deg);
            const double cosg = detail::dot(d, direction(l.azimuth_deg, l.elevation_deg));
            // exp((cos g - 1) / sigma^2) integrates to ~2 pi sigma^2 over the sphere.
            const double peak = l.power / (2.0 * std::numbers::pi * sigma * sigma);
            const double v = peak * std::exp((cosg - 1.0) / (sigma * sigma));
            for (int c = 0; c < 3; ++c)
                out[c] += v * l.color[c];
        };
        add_lobe(sun);
        for (const auto& l : area_lights)
            add_lobe(l);
        return out;
    }
};

/// Equirectangular radiance grid (width = 2 * height). Column u covers
/// azimuth 360 * (u + 0.5) / width; row v elevation 90 - 180 * (v + 0.5) / height.
class EnvMap {
public:
    EnvMap() = default;

    static EnvMap from_params(const EnvParams& params, int width = 96)
    {
        detail::require(width >= 4 && width % 2 == 0, "environment map width must be even and >= 4");
        EnvMap m;
        m.width_ = width;
        m.height_ = width / 2;
        m.params_ = params;
        m.radiance_.assign(static_cast<std::size_t>(3) * width * m.height_, 0.0f);
        for (int v = 0; v < m.height_; ++v)
            for (int u = 0; u < width; ++u) {
                const Vec3 r = params.radiance(m.texel_direction(u, v));
                for (int c = 0; c < 3; ++c)
                    m.at(c, v, u) = static_cast<float>(std::max(0.0, r[c]));
            }
        return m;
    }

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    double rotation_deg() const noexcept { return rotation_deg_; }
    const EnvParams& params() const noexcept { return params_; }

    float& at(int c, int v, int u) noexcept { return radiance_[(static_cast<std::size_t>(c) * height_ + v) * width_ + u]; }
    float at(int c, int v, int u) const noexcept { return radiance_[(static_cast<std::size_t>(c) * height_ + v) * width_ + u]; }
    std::span<const float> values() const noexcept { return radiance_; }

    double texel_azimuth(int u) const { return 360.0 * (u + 0.5) / width_; }
    double texel_elevation(int v) const { return 90.0 - 180.0 * (v + 0.5) / height_; }
    Vec3 texel_direction(int u, int v) const { return direction(texel_azimuth(u), texel_elevation(v)); }

    /// Exact solid angle of a texel in row v.
    double texel_solid_angle(int v) const
    {
        const double top = detail::radians(90.0 - 180.0 * v / height_);
        const double bottom = detail::radians(90.0 - 180.0 * (v + 1) / height_);
        return (2.0 * std::numbers::pi / width_) * (std::sin(top) - std::sin(bottom));
    }

    /// Bilinear lookup along a direction (wraps in azimuth, clamps in elevation).
    Vec3 sample(const Vec3& d) const
    {
        const double fu = azimuth_of(d) / 360.0 * width_ - 0.5;
        const double fv = (90.0 - elevation_of(d)) / 180.0 * height_ - 0.5;
        const int u0 = static_cast<int>(std::floor(fu));
        const int v0 = static_cast<int>(std::floor(fv));
        const double au = fu - u0, av = fv - v0;
        Vec3 out{};
        for (int dv = 0; dv <= 1; ++dv)
            for (int du = 0; du <= 1; ++du) {
                const double wgt = (du ? au : 1 - au) * (dv ? av : 1 - av);
                const int u = detail::wrap(u0 + du, width_);
                const int v = std::clamp(v0 + dv, 0, height_ - 1);
                for (int c = 0; c < 3; ++c)
                    out[c] += wgt * at(c, v, u);
            }
        return out;
    }

    /// Dominant lights, rotated along with the map.
    std::vector<LightLobe> lights() const
    {
        std::vector<LightLobe> ls;
        auto push = [&](LightLobe l) {
            if (l.power <= 0)
                return;
            l.azimuth_deg = std::fmod(l.azimuth_deg + rotation_deg_ + 720.0, 360.0);
            ls.push_back(l);
        };
        push(params_.sun);
        for (const auto& l : params_.area_lights)
            push(l);
        return ls;
    }

    friend EnvMap rotate_env(const EnvMap& env, double degrees);

    friend bool operator==(const EnvMap& a, const EnvMap& b) { return a.radiance_ == b.radiance_ && a.width_ == b.width_; }

private:
    int width_ = 0;
    int height_ = 0;
    double rotation_deg_ = 0.0;
    EnvParams params_;
    std::vector<float> radiance_;
};

/// Rotates the environment about the vertical axis: a circular column shift by
/// degrees / 360 * width, bilinear between columns for fractional shifts.
inline EnvMap rotate_env(const EnvMap& env, double degrees)
{
    EnvMap out(env);
    out.rotation_deg_ = std::fmod(env.rotation_deg_ + degrees, 360.0);
    if (out.rotation_deg_ < 0)
        out.rotation_deg_ += 360.0;
    const double shift = degrees / 360.0 * env.width_;
    const double whole = std::floor(shift);
    const double frac = shift - whole;
    const int k = static_cast<int>(std::fmod(whole, static_cast<double>(env.width_)));
    for (int c = 0; c < 3; ++c)
        for (int v = 0; v < env.height_; ++v)
            for (int u = 0; u < env.width_; ++u) {
                // new(azimuth) = old(azimuth - degrees)
                const float a = env.at(c, v, detail::wrap(u - k, env.width_));
                if (frac == 0.0) {
                    out.at(c, v, u) = a;
                } else {
                    const float b = env.at(c, v, detail::wrap(u - k - 1, env.width_));
                    out.at(c, v, u) = static_cast<float>((1.0 - frac) * a + frac * b);
                }
            }
    return out;
}

/// Diffuse irradiance over a grid of normal directions, from a texel-exact
/// quadrature of the map; looked up bilinearly when shading.
class IrradianceMap {
public:
    explicit IrradianceMap(const EnvMap& env, int width = 64) : width_(width), height_(width / 2)
    {
        std::vector<Vec3> dirs;
        std::vector<Vec3> weighted;
        for (int v = 0; v < env.height(); ++v) {
            const double sa = env.texel_solid_angle(v);
            for (int u = 0; u < env.width(); ++u) {
                dirs.push_back(env.texel_direction(u, v));
                weighted.push_back({env.at(0, v, u) * sa, env.at(1, v, u) * sa, env.at(2, v, u) * sa});
            }
        }
        grid_.resize(static_cast<std::size_t>(width_) * height_);
        for (int v = 0; v < height_; ++v)
            for (int u = 0; u < width_; ++u) {
                const Vec3 n = direction(360.0 * (u + 0.5) / width_, 90.0 - 180.0 * (v + 0.5) / height_);
                Vec3 e{};
                for (std::size_t i = 0; i < dirs.size(); ++i) {
                    const double c = detail::dot(n, dirs[i]);
                    if (c > 0)
                        for (int k = 0; k < 3; ++k)
                            e[k] += c * weighted[i][k];
                }
                grid_[static_cast<std::size_t>(v) * width_ + u] = e;
            }
    }

    Vec3 operator()(const Vec3& n) const
    {
        const double fu = azimuth_of(n) / 360.0 * width_ - 0.5;
        const double fv = (90.0 - elevation_of(n)) / 180.0 * height_ - 0.5;
        const int u0 = static_cast<int>(std::floor(fu));
        const int v0 = static_cast<int>(std::floor(fv));
        const double au = fu - u0, av = fv - v0;
        Vec3 out{};
        for (int dv = 0; dv <= 1; ++dv)
            for (int du = 0; du <= 1; ++du) {
                const double wgt = (du ? au : 1 - au) * (dv ? av : 1 - av);
                const Vec3& e = grid_[static_cast<std::size_t>(std::clamp(v0 + dv, 0, height_ - 1)) * width_ + detail::wrap(u0 + du, width_)];
                for (int c = 0; c < 3; ++c)
                    out[c] += wgt * e[c];
            }
        return out;
    }

private:
    int width_, height_;
    std::vector<Vec3> grid_;
};

/// A half-body stand-in made of a sphere head and capsules, in image-plane
/// coordinates [-1,1]^2 (y up), seen orthographically along -z.
struct SubjectSpec {
    struct Sphere {
        double x, y, radius;
    };
    struct Capsule {
        double x0, y0, x1, y1, radius;
    };

    Sphere head{0.0, 0.35, 0.2};
    Capsule neck{0.0, 0.3, 0.0, -0.05, 0.07};
    Capsule shoulders{-0.38, -0.1, 0.38, -0.1, 0.16};
    Capsule torso{0.0, -0.1, 0.0, -0.55, 0.31};
    Vec3 skin_albedo{0.75, 0.55, 0.45};
    Vec3 cloth_albedo{0.3, 0.4, 0.7};
    double specular = 0.2;
    double shininess = 24.0;

    static SubjectSpec random(std::uint64_t seed)
    {
        Rng rng(seed);
        SubjectSpec s;
        const double cx = rng.uniform(-0.05, 0.05);
        s.head = {cx, rng.uniform(0.3, 0.42), rng.uniform(0.17, 0.23)};
        const double shoulder_y = rng.uniform(-0.14, -0.05);
        const double half_width = rng.uniform(0.3, 0.42);
        s.neck = {cx, s.head.y, cx * 0.5, shoulder_y, rng.uniform(0.06, 0.08)};
        s.shoulders = {-half_width, shoulder_y + rng.uniform(-0.03, 0.03), half_width, shoulder_y + rng.uniform(-0.03, 0.03),
            rng.uniform(0.13, 0.18)};
        s.torso = {0.0, shoulder_y, 0.0, -0.55, rng.uniform(0.27, 0.33)};
        static constexpr std::array<Vec3, 5> kSkin{{{0.85, 0.66, 0.55}, {0.75, 0.55, 0.45}, {0.6, 0.42, 0.32}, {0.45, 0.3, 0.22}, {0.3, 0.2, 0.15}}};
        const Vec3& base = kSkin[rng.below(kSkin.size())];
        for (int c = 0; c < 3; ++c)
            s.skin_albedo[c] = std::clamp(base[c] * rng.uniform(0.92, 1.08), 0.0, 1.0);
        for (int c = 0; c < 3; ++c)
            s.cloth_albedo[c] = rng.uniform(0.08, 0.9);
        s.specular = rng.uniform(0.05, 0.35);
        s.shininess = rng.uniform(8.0, 48.0);
        return s;
    }

    void validate() const
    {
        const bool ok = head.radius > 0 && neck.radius > 0 && shoulders.radius > 0 && torso.radius > 0;
        if (!ok)
            throw ConfigError("degenerate subject: primitive radii must be positive");
    }
};

/// Surface point found by an orthographic ray through (x, y).
struct SurfaceHit {
    Vec3 normal;
    bool skin;
};

inline std::optional<SurfaceHit> trace_subject(const SubjectSpec& s, double x, double y)
{
    std::optional<SurfaceHit> best;
    double best_z = -1e9;
    auto consider = [&](double cx, double cy, double r, bool skin) {
        const double dx = x - cx, dy = y - cy;
        const double d2 = dx * dx + dy * dy;
        if (d2 >= r * r)
            return;
        const double z = std::sqrt(r * r - d2);
        if (z > best_z) {
            best_z = z;
            best = SurfaceHit{{dx / r, dy / r, z / r}, skin};
        }
    };
    auto capsule = [&](const SubjectSpec::Capsule& c, bool skin) {
        const double ex = c.x1 - c.x0, ey = c.y1 - c.y0;
        const double len2 = ex * ex + ey * ey;
        double t = len2 > 0 ? ((x - c.x0) * ex + (y - c.y0) * ey) / len2 : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        consider(c.x0 + t * ex, c.y0 + t * ey, c.radius, skin);
    };
    consider(s.head.x, s.head.y, s.head.radius, true);
    capsule(s.neck, true);
    capsule(s.shoulders, false);
    capsule(s.torso, false);
    return best;
}

/// Image-plane coordinate of pixel centre i on an n-pixel axis.
inline double pixel_coord(int i, int n) { return 2.0 * (i + 0.5) / n - 1.0; }

/// Renders a subject lit by an environment. Subject pixels get
/// albedo * E(n) / pi plus Phong highlights from the dominant lights; other
/// pixels show the environment seen through a 90 degree pinhole behind the
/// subject. Returns the image and the coverage mask.
inline std::pair<PortraitImage, SegMask> shade_subject(const SubjectSpec& subject, const EnvMap& env, const IrradianceMap& irradiance,
    int resolution)
{
    subject.validate();
    detail::require(resolution > 0, "resolution must be positive");
    PortraitImage img(resolution, resolution);
    SegMask mask(resolution, resolution);
    const auto lights = env.lights();
    std::vector<Vec3> light_dirs;
    for (const auto& l : lights)
        light_dirs.push_back(direction(l.azimuth_deg, l.elevation_deg));

    for (int py = 0; py < resolution; ++py) {
        for (int px = 0; px < resolution; ++px) {
            const double x = pixel_coord(px, resolution);
            const double y = -pixel_coord(py, resolution);
            Vec3 color{};
            if (auto hit = trace_subject(subject, x, y)) {
                mask.at(py, px) = 1.0f;
                const Vec3& n = hit->normal;
                const Vec3& albedo = hit->skin ? subject.skin_albedo : subject.cloth_albedo;
                const Vec3 e = irradiance(n);
                // Reflected view direction (viewer along +z).
                const Vec3 r{2 * n[2] * n[0], 2 * n[2] * n[1], 2 * n[2] * n[2] - 1.0};
                double spec_scale = 0.0;
                Vec3 spec{};
                for (std::size_t i = 0; i < lights.size(); ++i) {
                    const double c = detail::dot(r, light_dirs[i]);
                    if (c <= 0 || detail::dot(n, light_dirs[i]) <= 0)
                        continue;
                    spec_scale = subject.specular * lights[i].power * std::pow(c, subject.shininess);
                    for (int k = 0; k < 3; ++k)
                        spec[k] += spec_scale * lights[i].color[k];
                }
                for (int k = 0; k < 3; ++k)
                    color[k] = albedo[k] * e[k] / std::numbers::pi + spec[k];
            } else {
                color = env.sample(detail::normalize({x, y, -1.0}));
            }
            for (int k = 0; k < 3; ++k)
                img.at(k, py, px) = static_cast<float>(std::clamp(color[k], 0.0, 1.0));
        }
    }
    return {std::move(img), std::move(mask)};
}

inline std::pair<PortraitImage, SegMask> shade_subject(const SubjectSpec& subject, const EnvMap& env, int resolution)
{
    return shade_subject(subject, env, IrradianceMap(env), resolution);
}

// ---------------------------------------------------------------------------
// Dataset

struct SceneRecord {
    int subject_id = 0;
    int env_id = 0;
    int rotation = 0;  ///< index d, angle 30 * d degrees
    std::string image;
    std::string mask;

    friend bool operator==(const SceneRecord&, const SceneRecord&) = default;
};

struct DatasetManifest {
    std::string split;
    std::string generator_version = kGeneratorVersion;
    int resolution = 64;
    int env_width = 96;
    std::uint64_t seed = 1;
    std::vector<int> subject_ids;
    std::vector<std::uint64_t> subject_seeds;
    std::vector<int> env_ids;
    std::vector<std::uint64_t> env_seeds;
    std::vector<SceneRecord> records;

    /// Directory holding the split's files; set when loaded from disk.
    std::filesystem::path directory;

    const SceneRecord* find(int subject, int env, int rotation) const
    {
        for (const auto& r : records)
            if (r.subject_id == subject && r.env_id == env && r.rotation == rotation)
                return &r;
        return nullptr;
    }
};

inline void to_json(nlohmann::ordered_json& j, const SceneRecord& r)
{
    j = nlohmann::ordered_json{{"subject_id", r.subject_id}, {"env_id", r.env_id}, {"rotation_index", r.rotation}, {"image", r.image}, {"mask", r.mask}};
}

inline void from_json(const nlohmann::ordered_json& j, SceneRecord& r)
{
    r.subject_id = j.at("subject_id").get<int>();
    r.env_id = j.at("env_id").get<int>();
    r.rotation = j.at("rotation_index").get<int>();
    r.image = j.at("image").get<std::string>();
    r.mask = j.at("mask").get<std::string>();
}

inline nlohmann::ordered_json manifest_to_json(const DatasetManifest& m)
{
    return nlohmann::ordered_json{
        {"split", m.split},
        {"generator_version", m.generator_version},
        {"resolution", m.resolution},
        {"env_width", m.env_width},
        {"env_height", m.env_width / 2},
        {"seed", m.seed},
        {"rotations", kRotationSteps},
        {"subject_ids", m.subject_ids},
        {"subject_seeds", m.subject_seeds},
        {"env_ids", m.env_ids},
        {"env_seeds", m.env_seeds},
        {"records", m.records},
    };
}

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path)
{
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw IoError("cannot write manifest " + path.string());
    os << manifest_to_json(m).dump(2) << '\n';
    if (!os)
        throw IoError("failed writing manifest " + path.string());
}

/// Loads `<dir>/manifest.json` (or a manifest file path directly).
inline DatasetManifest load_manifest(const std::filesystem::path& path)
{
    const auto file = std::filesystem::is_directory(path) ? path / "manifest.json" : path;
    std::ifstream is(file, std::ios::binary);
    if (!is)
        throw IoError("cannot open manifest " + file.string());
    nlohmann::ordered_json j;
    try {
        j = nlohmann::ordered_json::parse(is);
        DatasetManifest m;
        m.split = j.at("split").get<std::string>();
        m.generator_version = j.at("generator_version").get<std::string>();
        m.resolution = j.at("resolution").get<int>();
        m.env_width = j.at("env_width").get<int>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.subject_ids = j.at("subject_ids").get<std::vector<int>>();
        m.subject_seeds = j.at("subject_seeds").get<std::vector<std::uint64_t>>();
        m.env_ids = j.at("env_ids").get<std::vector<int>>();
        m.env_seeds = j.at("env_seeds").get<std::vector<std::uint64_t>>();
        m.records = j.at("records").get<std::vector<SceneRecord>>();
        m.directory = file.parent_path();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed manifest " + file.string() + ": " + e.what());
    }
}

inline int wrap_rotation(int d) { return detail::wrap(d, kRotationSteps); }

/// Rotation steps for a multiple of 30 degrees (+90 -> +3).
inline int rotation_steps(int degrees)
{
    detail::require(degrees % kRotationStepDegrees == 0, "rotation offset must be a multiple of 30 degrees");
    return degrees / kRotationStepDegrees;
}

/// Record of the same subject and environment at rotation (d + offset) mod 12.
inline const SceneRecord& lookup_rotated(const DatasetManifest& m, int subject, int env, int rotation, int offset_steps)
{
    const int d = wrap_rotation(rotation + offset_steps);
    if (const SceneRecord* r = m.find(subject, env, d))
        return *r;
    throw ConfigError("missing record s" + std::to_string(subject) + "_e" + std::to_string(env) + "_r" + std::to_string(d));
}

struct DatasetConfig {
    int subjects = 8;
    int envs = 6;
    int test_subjects = 2;
    int test_envs = 2;
    int resolution = 64;
    int env_width = 96;
    std::uint64_t seed = 1;

    static DatasetConfig full_scale()
    {
        DatasetConfig c;
        c.subjects = 68;
        c.envs = 160;
        c.test_subjects = 30;
        c.test_envs = 68;
        c.resolution = 512;
        return c;
    }

    std::size_t train_images() const { return static_cast<std::size_t>(subjects) * envs * kRotationSteps; }
};

inline void to_json(nlohmann::ordered_json& j, const DatasetConfig& c)
{
    j = nlohmann::ordered_json{{"subjects", c.subjects}, {"envs", c.envs}, {"test_subjects", c.test_subjects}, {"test_envs", c.test_envs},
        {"resolution", c.resolution}, {"env_width", c.env_width}, {"seed", c.seed}};
}

inline void from_json(const nlohmann::ordered_json& j, DatasetConfig& c)
{
    c.subjects = j.value("subjects", c.subjects);
    c.envs = j.value("envs", c.envs);
    c.test_subjects = j.value("test_subjects", c.test_subjects);
    c.test_envs = j.value("test_envs", c.test_envs);
    c.resolution = j.value("resolution", c.resolution);
    c.env_width = j.value("env_width", c.env_width);
    c.seed = j.value("seed", c.seed);
}

inline std::uint64_t subject_seed(std::uint64_t seed, int id) { return derive_seed(seed, {0x5375626aULL, static_cast<std::uint64_t>(id)}); }
inline std::uint64_t env_seed(std::uint64_t seed, int id) { return derive_seed(seed, {0x456e76ULL, static_cast<std::uint64_t>(id)}); }

inline std::string record_stem(int subject, int env, int rotation)
{
    return "s" + std::to_string(subject) + "_e" + std::to_string(env) + "_r" + std::to_string(rotation);
}

/// Renders one split (full subject x environment x rotation product) into `dir`.
inline DatasetManifest generate_split(const std::string& split, const std::vector<int>& subject_ids, const std::vector<int>& env_ids,
    const DatasetConfig& cfg, const std::filesystem::path& dir)
{
    detail::require(!subject_ids.empty() && !env_ids.empty(), "a split needs at least one subject and one environment");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec)
        throw IoError("cannot create " + dir.string() + ": " + ec.message());

    DatasetManifest m;
    m.split = split;
    m.resolution = cfg.resolution;
    m.env_width = cfg.env_width;
    m.seed = cfg.seed;
    m.subject_ids = subject_ids;
    m.env_ids = env_ids;
    m.directory = dir;
    std::vector<SubjectSpec> subjects;
    for (int id : subject_ids) {
        m.subject_seeds.push_back(subject_seed(cfg.seed, id));
        subjects.push_back(SubjectSpec::random(m.subject_seeds.back()));
    }
    for (int id : env_ids)
        m.env_seeds.push_back(env_seed(cfg.seed, id));

    for (std::size_t si = 0; si < subject_ids.size(); ++si) {
        for (std::size_t ei = 0; ei < env_ids.size(); ++ei) {
            const EnvMap base = EnvMap::from_params(EnvParams::random(m.env_seeds[ei]), cfg.env_width);
            for (int d = 0; d < kRotationSteps; ++d) {
                const EnvMap env = rotate_env(base, d * kRotationStepDegrees);
                const auto [img, mask] = shade_subject(subjects[si], env, cfg.resolution);
                const std::string stem = record_stem(subject_ids[si], env_ids[ei], d);
                SceneRecord r{subject_ids[si], env_ids[ei], d, stem + ".png", stem + "_mask.png"};
                write_image(dir / r.image, img);
                write_mask(dir / r.mask, mask);
                m.records.push_back(std::move(r));
            }
        }
    }
    save_manifest(m, dir / "manifest.json");
    return m;
}

/// Writes `<root>/train` (and `<root>/test` when test counts are non-zero).
/// Train and test use disjoint subject and environment ids, hence disjoint seeds.
inline std::vector<DatasetManifest> generate_dataset(const DatasetConfig& cfg, const std::filesystem::path& root)
{
    detail::require(cfg.subjects > 0 && cfg.envs > 0, "dataset needs at least one subject and one environment");
    detail::require(cfg.test_subjects >= 0 && cfg.test_envs >= 0, "test counts must be non-negative");
    detail::require((cfg.test_subjects == 0) == (cfg.test_envs == 0), "test split needs both subjects and environments");
    detail::require(cfg.resolution >= 8, "resolution must be at least 8");
    std::vector<int> train_s, train_e, test_s, test_e;
    for (int i = 0; i < cfg.subjects; ++i)
        train_s.push_back(i);
    for (int i = 0; i < cfg.envs; ++i)
        train_e.push_back(i);
    for (int i = 0; i < cfg.test_subjects; ++i)
        test_s.push_back(cfg.subjects + i);
    for (int i = 0; i < cfg.test_envs; ++i)
        test_e.push_back(cfg.envs + i);

    // Seeds are hashes of ids; verify no collision across splits.
    std::set<std::uint64_t> seen_s, seen_e;
    for (int id : train_s)
        seen_s.insert(subject_seed(cfg.seed, id));
    for (int id : train_e)
        seen_e.insert(env_seed(cfg.seed, id));
    for (int id : test_s)
        if (!seen_s.insert(subject_seed(cfg.seed, id)).second)
            throw ConfigError("train/test subject seeds are not disjoint");
    for (int id : test_e)
        if (!seen_e.insert(env_seed(cfg.seed, id)).second)
            throw ConfigError("train/test environment seeds are not disjoint");

    std::vector<DatasetManifest> out;
    out.push_back(generate_split("train", train_s, train_e, cfg, root / "train"));
    if (!test_s.empty())
        out.push_back(generate_split("test", test_s, test_e, cfg, root / "test"));
    return out;
}

/// All images and masks of one split held in memory, indexed by record.
class SceneStore {
public:
    SceneStore() = default;

    explicit SceneStore(DatasetManifest manifest) : manifest_(std::move(manifest))
    {
        for (std::size_t i = 0; i < manifest_.records.size(); ++i) {
            const auto& r = manifest_.records[i];
            images_.push_back(read_image(manifest_.directory / r.image));
            masks_.push_back(read_mask(manifest_.directory / r.mask));
            index_[{r.subject_id, r.env_id, r.rotation}] = i;
        }
    }

    /// Keeps only the given subjects and environments (for small training subsets).
    SceneStore subset(const std::vector<int>& subjects, const std::vector<int>& envs) const
    {
        SceneStore s;
        s.manifest_ = manifest_;
        s.manifest_.records.clear();
        s.manifest_.subject_ids.clear();
        s.manifest_.subject_seeds.clear();
        s.manifest_.env_ids.clear();
        s.manifest_.env_seeds.clear();
        for (std::size_t i = 0; i < manifest_.subject_ids.size(); ++i)
            if (std::find(subjects.begin(), subjects.end(), manifest_.subject_ids[i]) != subjects.end()) {
                s.manifest_.subject_ids.push_back(manifest_.subject_ids[i]);
                s.manifest_.subject_seeds.push_back(manifest_.subject_seeds[i]);
            }
        for (std::size_t i = 0; i < manifest_.env_ids.size(); ++i)
            if (std::find(envs.begin(), envs.end(), manifest_.env_ids[i]) != envs.end()) {
                s.manifest_.env_ids.push_back(manifest_.env_ids[i]);
                s.manifest_.env_seeds.push_back(manifest_.env_seeds[i]);
            }
        for (std::size_t i = 0; i < manifest_.records.size(); ++i) {
            const auto& r = manifest_.records[i];
            if (std::find(subjects.begin(), subjects.end(), r.subject_id) == subjects.end() ||
                std::find(envs.begin(), envs.end(), r.env_id) == envs.end())
                continue;
            s.index_[{r.subject_id, r.env_id, r.rotation}] = s.images_.size();
            s.manifest_.records.push_back(r);
            s.images_.push_back(images_[i]);
            s.masks_.push_back(masks_[i]);
        }
        detail::require(!s.images_.empty(), "subset selects no records");
        return s;
    }

    const DatasetManifest& manifest() const noexcept { return manifest_; }
    std::size_t size() const noexcept { return images_.size(); }
    const SceneRecord& record(std::size_t i) const { return manifest_.records.at(i); }
    const PortraitImage& image(std::size_t i) const { return images_.at(i); }
    const SegMask& mask(std::size_t i) const { return masks_.at(i); }

    std::size_t index_of(int subject, int env, int rotation) const
    {
        auto it = index_.find({subject, env, wrap_rotation(rotation)});
        if (it == index_.end())
            throw ConfigError("missing record " + record_stem(subject, env, wrap_rotation(rotation)));
        return it->second;
    }

    /// Index of (subject, env, rotation + offset).
    std::size_t rotated(std::size_t i, int offset_steps) const
    {
        const auto& r = record(i);
        return index_of(r.subject_id, r.env_id, r.rotation + offset_steps);
    }

private:
    DatasetManifest manifest_;
    std::vector<PortraitImage> images_;
    std::vector<SegMask> masks_;
    std::map<std::tuple<int, int, int>, std::size_t> index_;
};

} // namespace relight

#endif // RELIGHT_SYNTHDATA_HPP
