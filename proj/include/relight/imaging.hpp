#ifndef RELIGHT_IMAGING_HPP
#define RELIGHT_IMAGING_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <png.h>

#include "relight/errors.hpp"
#include "relight/tensor.hpp"

namespace relight {

/// RGB image with planar float storage ([3][H][W]), values in [0,1].
class PortraitImage {
public:
    PortraitImage() = default;

    PortraitImage(int width, int height, float fill = 0.0f) : width_(width), height_(height)
    {
        detail::require(width > 0 && height > 0, "image dimensions must be positive");
        rgb_.assign(static_cast<std::size_t>(3) * width * height, fill);
    }

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::size_t plane() const noexcept { return static_cast<std::size_t>(width_) * height_; }
    bool empty() const noexcept { return rgb_.empty(); }

    float& at(int c, int y, int x) noexcept { return rgb_[c * plane() + static_cast<std::size_t>(y) * width_ + x]; }
    float at(int c, int y, int x) const noexcept { return rgb_[c * plane() + static_cast<std::size_t>(y) * width_ + x]; }

    std::span<float> values() noexcept { return rgb_; }
    std::span<const float> values() const noexcept { return rgb_; }

    void clamp()
    {
        for (auto& v : rgb_)
            v = std::clamp(v, 0.0f, 1.0f);
    }

    friend bool operator==(const PortraitImage&, const PortraitImage&) = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<float> rgb_;
};

/// Per-pixel foreground weight in [0,1].
class SegMask {
public:
    SegMask() = default;

    SegMask(int width, int height, float fill = 0.0f) : width_(width), height_(height)
    {
        detail::require(width > 0 && height > 0, "mask dimensions must be positive");
        w_.assign(static_cast<std::size_t>(width) * height, fill);
    }

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }

    float& at(int y, int x) noexcept { return w_[static_cast<std::size_t>(y) * width_ + x]; }
    float at(int y, int x) const noexcept { return w_[static_cast<std::size_t>(y) * width_ + x]; }

    std::span<float> values() noexcept { return w_; }
    std::span<const float> values() const noexcept { return w_; }

    double sum() const
    {
        double s = 0;
        for (float v : w_)
            s += v;
        return s;
    }

    /// Foreground test used wherever a binary decision is needed.
    bool inside(int y, int x) const noexcept { return at(y, x) > 0.5f; }

    SegMask binarized() const
    {
        SegMask m(*this);
        for (auto& v : m.w_)
            v = v > 0.5f ? 1.0f : 0.0f;
        return m;
    }

    friend bool operator==(const SegMask&, const SegMask&) = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<float> w_;
};

namespace detail {

inline void require_same_size(const PortraitImage& a, int w, int h, const char* op)
{
    if (a.width() != w || a.height() != h)
        throw ConfigError(std::string(op) + ": dimension mismatch (" + std::to_string(a.width()) + "x" +
            std::to_string(a.height()) + " vs " + std::to_string(w) + "x" + std::to_string(h) + ")");
}

inline std::uint8_t quantize(float v)
{
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

} // namespace detail

/// (I * M, I * (1 - M)).
inline std::pair<PortraitImage, PortraitImage> split(const PortraitImage& image, const SegMask& mask)
{
    detail::require_same_size(image, mask.width(), mask.height(), "split");
    PortraitImage fg(image.width(), image.height()), bg(image.width(), image.height());
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < image.height(); ++y)
            for (int x = 0; x < image.width(); ++x) {
                const float m = mask.at(y, x);
                fg.at(c, y, x) = image.at(c, y, x) * m;
                bg.at(c, y, x) = image.at(c, y, x) * (1.0f - m);
            }
    return {std::move(fg), std::move(bg)};
}

/// 3x3 box-filtered mask, used for optional 1-pixel edge feathering.
inline SegMask feathered(const SegMask& mask)
{
    SegMask out(mask.width(), mask.height());
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x) {
            float s = 0;
            int n = 0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || xx < 0 || yy >= mask.height() || xx >= mask.width())
                        continue;
                    s += mask.at(yy, xx);
                    ++n;
                }
            out.at(y, x) = s / static_cast<float>(n);
        }
    return out;
}

/// relit_fg * M + background * (1 - M).
inline PortraitImage composite(const PortraitImage& relit_fg, const SegMask& mask, const PortraitImage& background, bool feather = false)
{
    detail::require_same_size(relit_fg, mask.width(), mask.height(), "composite");
    detail::require_same_size(background, mask.width(), mask.height(), "composite");
    const SegMask m = feather ? feathered(mask) : mask;
    PortraitImage out(mask.width(), mask.height());
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < mask.height(); ++y)
            for (int x = 0; x < mask.width(); ++x) {
                const float w = m.at(y, x);
                out.at(c, y, x) = relit_fg.at(c, y, x) * w + background.at(c, y, x) * (1.0f - w);
            }
    return out;
}

/// Side-by-side concatenation of equally tall images.
inline PortraitImage hstack(std::span<const PortraitImage> images)
{
    detail::require(!images.empty(), "hstack: no images");
    const int h = images.front().height();
    int w = 0;
    for (const auto& im : images) {
        detail::require(im.height() == h, "hstack: heights differ");
        w += im.width();
    }
    PortraitImage out(w, h);
    int x0 = 0;
    for (const auto& im : images) {
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < im.width(); ++x)
                    out.at(c, y, x0 + x) = im.at(c, y, x);
        x0 += im.width();
    }
    return out;
}

// PNG I/O through libpng's simplified API (errors are reported, never longjmp'd into us).

inline PortraitImage read_image(const std::filesystem::path& path)
{
    if (!std::filesystem::exists(path))
        throw IoError("image not found: " + path.string());
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str()))
        throw IoError("cannot decode PNG " + path.string() + ": " + img.message);
    img.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&img);
        throw IoError("cannot decode PNG " + path.string() + ": " + img.message);
    }
    PortraitImage out(static_cast<int>(img.width), static_cast<int>(img.height));
    for (int y = 0; y < out.height(); ++y)
        for (int x = 0; x < out.width(); ++x)
            for (int c = 0; c < 3; ++c)
                out.at(c, y, x) = buf[(static_cast<std::size_t>(y) * out.width() + x) * 3 + c] / 255.0f;
    return out;
}

inline void write_image(const std::filesystem::path& path, const PortraitImage& image)
{
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(image.width()) * image.height() * 3);
    for (int y = 0; y < image.height(); ++y)
        for (int x = 0; x < image.width(); ++x)
            for (int c = 0; c < 3; ++c)
                buf[(static_cast<std::size_t>(y) * image.width() + x) * 3 + c] = detail::quantize(image.at(c, y, x));
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width());
    img.height = static_cast<png_uint_32>(image.height());
    img.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr))
        throw IoError("cannot write PNG " + path.string() + ": " + img.message);
}

/// Reads an 8-bit grayscale mask. Values are binarized at 0.5.
inline SegMask read_mask(const std::filesystem::path& path)
{
    if (!std::filesystem::exists(path))
        throw IoError("mask not found: " + path.string());
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str()))
        throw IoError("cannot decode PNG " + path.string() + ": " + img.message);
    img.format = PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&img);
        throw IoError("cannot decode PNG " + path.string() + ": " + img.message);
    }
    SegMask out(static_cast<int>(img.width), static_cast<int>(img.height));
    for (std::size_t i = 0; i < buf.size(); ++i)
        out.values()[i] = buf[i] >= 128 ? 1.0f : 0.0f;
    return out;
}

inline void write_mask(const std::filesystem::path& path, const SegMask& mask)
{
    std::vector<std::uint8_t> buf(mask.values().size());
    for (std::size_t i = 0; i < buf.size(); ++i)
        buf[i] = detail::quantize(mask.values()[i]);
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(mask.width());
    img.height = static_cast<png_uint_32>(mask.height());
    img.format = PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr))
        throw IoError("cannot write PNG " + path.string() + ": " + img.message);
}

// Batch conversion to [N,C,H,W] tensors.

template <class T>
Tensor<T> to_tensor(std::span<const PortraitImage> images)
{
    detail::require(!images.empty(), "to_tensor: empty batch");
    const int w = images[0].width(), h = images[0].height();
    Tensor<T> t({static_cast<int>(images.size()), 3, h, w});
    std::size_t k = 0;
    for (const auto& im : images) {
        detail::require_same_size(im, w, h, "to_tensor");
        for (float v : im.values())
            t[k++] = static_cast<T>(v);
    }
    return t;
}

template <class T>
Tensor<T> to_tensor(std::span<const SegMask> masks)
{
    detail::require(!masks.empty(), "to_tensor: empty batch");
    const int w = masks[0].width(), h = masks[0].height();
    Tensor<T> t({static_cast<int>(masks.size()), 1, h, w});
    std::size_t k = 0;
    for (const auto& m : masks) {
        detail::require(m.width() == w && m.height() == h, "to_tensor: mask dimension mismatch");
        for (float v : m.values())
            t[k++] = static_cast<T>(v);
    }
    return t;
}

template <class T>
PortraitImage image_from_tensor(const Tensor<T>& t, int index = 0)
{
    detail::require(t.rank() == 4 && t.dim(1) == 3 && index < t.dim(0), "image_from_tensor: expected [N,3,H,W]");
    PortraitImage im(t.dim(3), t.dim(2));
    const std::size_t off = static_cast<std::size_t>(index) * 3 * im.plane();
    for (std::size_t i = 0; i < 3 * im.plane(); ++i)
        im.values()[i] = static_cast<float>(t[off + i]);
    return im;
}

/// image * mask (or image * (1 - mask)) for whole batches.
template <class T>
Tensor<T> apply_mask(const Tensor<T>& images, const Tensor<T>& masks, bool complement = false)
{
    detail::require(images.rank() == 4 && masks.rank() == 4 && masks.dim(1) == 1 && images.dim(0) == masks.dim(0) &&
            images.dim(2) == masks.dim(2) && images.dim(3) == masks.dim(3),
        "apply_mask: shape mismatch");
    Tensor<T> out(images.shape());
    const int n = images.dim(0), c = images.dim(1);
    const std::size_t plane = static_cast<std::size_t>(images.dim(2)) * images.dim(3);
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch)
            for (std::size_t k = 0; k < plane; ++k) {
                const T m = masks[b * plane + k];
                const std::size_t i = (static_cast<std::size_t>(b) * c + ch) * plane + k;
                out[i] = images[i] * (complement ? T(1) - m : m);
            }
    return out;
}

} // namespace relight

#endif // RELIGHT_IMAGING_HPP
