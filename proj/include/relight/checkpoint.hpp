#ifndef RELIGHT_CHECKPOINT_HPP
#define RELIGHT_CHECKPOINT_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "relight/errors.hpp"
#include "relight/tensor.hpp"

namespace relight {

/// Binary checkpoint layout (all integers little-endian):
///   magic "RELIGHT\0" | u32 version | u64 n + config JSON (UTF-8) | i64 step |
///   u64 array count | per array: u32 n + name, u8 n + dtype tag ("f32"/"f64"),
///   u32 rank, u64 dims..., values (little-endian IEEE 754).
inline constexpr char kCheckpointMagic[8] = {'R', 'E', 'L', 'I', 'G', 'H', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class U>
void put_le(std::string& out, U v)
{
    static_assert(std::is_unsigned_v<U>);
    for (std::size_t i = 0; i < sizeof(U); ++i)
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

class ByteReader {
public:
    explicit ByteReader(std::string data) : data_(std::move(data)) {}

    template <class U>
    U get()
    {
        static_assert(std::is_unsigned_v<U>);
        need(sizeof(U));
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i)
            v |= static_cast<U>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += sizeof(U);
        return v;
    }

    std::string bytes(std::size_t n)
    {
        need(n);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool at_end() const { return pos_ == data_.size(); }

private:
    void need(std::size_t n) const
    {
        if (n > data_.size() - pos_)
            throw IoError("checkpoint is truncated");
    }

    std::string data_;
    std::size_t pos_ = 0;
};

template <class T>
constexpr const char* dtype_tag()
{
    if constexpr (std::is_same_v<T, float>)
        return "f32";
    else if constexpr (std::is_same_v<T, double>)
        return "f64";
    else
        static_assert(sizeof(T) == 0, "unsupported checkpoint dtype");
}

} // namespace detail

/// One named array of a checkpoint, values kept in their stored precision.
struct NamedArray {
    std::string name;
    std::string dtype;
    Shape shape;
    std::vector<double> values;  ///< exact widening of the stored values

    template <class T>
    static NamedArray from(std::string name, const Tensor<T>& t)
    {
        NamedArray a{std::move(name), detail::dtype_tag<T>(), t.shape(), {}};
        a.values.assign(t.values().begin(), t.values().end());
        return a;
    }

    /// Values as a tensor of T; the dtype must match exactly.
    template <class T>
    Tensor<T> to() const
    {
        if (dtype != detail::dtype_tag<T>())
            throw CheckpointMismatch("array " + name + " has dtype " + dtype + ", expected " + detail::dtype_tag<T>());
        std::vector<T> v(values.begin(), values.end());
        return Tensor<T>(shape, std::move(v));
    }

    friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    nlohmann::ordered_json config;
    std::int64_t step = 0;
    std::vector<NamedArray> arrays;

    const NamedArray* find(const std::string& name) const
    {
        for (const auto& a : arrays)
            if (a.name == name)
                return &a;
        return nullptr;
    }

    const NamedArray& at(const std::string& name) const
    {
        if (const NamedArray* a = find(name))
            return *a;
        throw CheckpointMismatch("checkpoint has no array named " + name);
    }

    std::string serialize() const
    {
        std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
        detail::put_le<std::uint32_t>(out, version);
        const std::string cfg = config.dump(2);
        detail::put_le<std::uint64_t>(out, cfg.size());
        out += cfg;
        detail::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(step));
        detail::put_le<std::uint64_t>(out, arrays.size());
        for (const auto& a : arrays) {
            detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
            out += a.name;
            detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(a.dtype.size()));
            out += a.dtype;
            detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.shape.size()));
            for (int d : a.shape)
                detail::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(d));
            if (a.dtype == "f32") {
                for (double v : a.values)
                    detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
            } else if (a.dtype == "f64") {
                for (double v : a.values)
                    detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
            } else {
                throw ConfigError("unknown dtype " + a.dtype + " for array " + a.name);
            }
        }
        return out;
    }

    static Checkpoint deserialize(std::string data)
    {
        detail::ByteReader r(std::move(data));
        if (r.bytes(sizeof(kCheckpointMagic)) != std::string(kCheckpointMagic, sizeof(kCheckpointMagic)))
            throw IoError("not a checkpoint file (bad magic)");
        Checkpoint c;
        c.version = r.get<std::uint32_t>();
        if (c.version != kCheckpointVersion)
            throw CheckpointMismatch("unsupported checkpoint version " + std::to_string(c.version));
        const auto cfg_len = r.get<std::uint64_t>();
        try {
            c.config = nlohmann::ordered_json::parse(r.bytes(cfg_len));
        } catch (const nlohmann::json::exception& e) {
            throw IoError(std::string("checkpoint config is not valid JSON: ") + e.what());
        }
        c.step = static_cast<std::int64_t>(r.get<std::uint64_t>());
        const auto count = r.get<std::uint64_t>();
        for (std::uint64_t i = 0; i < count; ++i) {
            NamedArray a;
            a.name = r.bytes(r.get<std::uint32_t>());
            a.dtype = r.bytes(r.get<std::uint8_t>());
            const auto rank = r.get<std::uint32_t>();
            std::size_t n = 1;
            for (std::uint32_t d = 0; d < rank; ++d) {
                a.shape.push_back(static_cast<int>(r.get<std::uint64_t>()));
                n *= static_cast<std::size_t>(a.shape.back());
            }
            a.values.resize(n);
            if (a.dtype == "f32") {
                for (auto& v : a.values)
                    v = std::bit_cast<float>(r.get<std::uint32_t>());
            } else if (a.dtype == "f64") {
                for (auto& v : a.values)
                    v = std::bit_cast<double>(r.get<std::uint64_t>());
            } else {
                throw IoError("checkpoint array " + a.name + " has unknown dtype " + a.dtype);
            }
            c.arrays.push_back(std::move(a));
        }
        if (!r.at_end())
            throw IoError("checkpoint has trailing bytes");
        return c;
    }

    void save(const std::filesystem::path& path) const
    {
        const std::string bytes = serialize();
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        if (!os)
            throw IoError("cannot write checkpoint " + path.string());
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!os)
            throw IoError("failed writing checkpoint " + path.string());
    }

    static Checkpoint load(const std::filesystem::path& path)
    {
        std::ifstream is(path, std::ios::binary);
        if (!is)
            throw IoError("cannot open checkpoint " + path.string());
        std::string data((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
        return deserialize(std::move(data));
    }
};

} // namespace relight

#endif // RELIGHT_CHECKPOINT_HPP
