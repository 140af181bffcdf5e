#include "lrdif/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "lrdif/errors.hpp"

namespace lrdif {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
        for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(raw[sizeof(T) - 1 - i]);
    else
        out.insert(out.end(), raw, raw + sizeof(T));
}

template <typename T>
T get_le(const std::vector<std::uint8_t>& in, std::size_t& pos, const std::string& origin) {
    if (pos + sizeof(T) > in.size()) throw DataError(origin + ": truncated TNSR file");
    std::uint8_t raw[sizeof(T)];
    if constexpr (std::endian::native == std::endian::big)
        for (std::size_t i = 0; i < sizeof(T); ++i) raw[i] = in[pos + sizeof(T) - 1 - i];
    else
        std::memcpy(raw, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    T value;
    std::memcpy(&value, raw, sizeof(T));
    return value;
}

}  // namespace

std::vector<std::uint8_t> encode_tnsr(const Tensor& t, DType dtype) {
    std::vector<std::uint8_t> out{'T', 'N', 'S', 'R'};
    put_le<std::uint32_t>(out, kTnsrVersion);
    out.push_back(static_cast<std::uint8_t>(dtype));
    if (t.rank() > 255) throw ShapeError("TNSR: rank above 255");
    out.push_back(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) put_le<std::uint64_t>(out, d);
    out.reserve(out.size() + t.numel() * (dtype == DType::f32 ? 4 : 8));
    for (double v : t.values()) {
        if (dtype == DType::f32)
            put_le<float>(out, static_cast<float>(v));
        else
            put_le<double>(out, v);
    }
    return out;
}

Tensor decode_tnsr(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "TNSR", 4) != 0) throw DataError(origin + ": bad TNSR magic");
    std::size_t pos = 4;
    const auto version = get_le<std::uint32_t>(bytes, pos, origin);
    if (version != kTnsrVersion) throw DataError(origin + ": unsupported TNSR version " + std::to_string(version));
    const auto code = get_le<std::uint8_t>(bytes, pos, origin);
    if (code != 1 && code != 2) throw DataError(origin + ": unknown TNSR dtype code " + std::to_string(code));
    const auto rank = get_le<std::uint8_t>(bytes, pos, origin);
    Shape shape;
    for (std::uint8_t i = 0; i < rank; ++i) {
        const auto d = get_le<std::uint64_t>(bytes, pos, origin);
        if (d == 0) throw DataError(origin + ": zero extent in TNSR header");
        shape.push_back(static_cast<std::size_t>(d));
    }
    const std::size_t n = shape_numel(shape);
    const std::size_t width = code == 1 ? 4 : 8;
    if (bytes.size() - pos != n * width)
        throw DataError(origin + ": TNSR payload has " + std::to_string(bytes.size() - pos) + " bytes, expected " +
                        std::to_string(n * width));
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i)
        values[i] = code == 1 ? static_cast<double>(get_le<float>(bytes, pos, origin)) : get_le<double>(bytes, pos, origin);
    return Tensor::from(std::move(shape), std::move(values));
}

void write_tnsr(const Tensor& t, const std::filesystem::path& path, DType dtype) {
    write_bytes_atomic(path, encode_tnsr(t, dtype));
}

Tensor read_tnsr(const std::filesystem::path& path) { return decode_tnsr(read_bytes(path), path.string()); }

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw DataError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    write_bytes_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string checksum_hex(const std::vector<std::uint8_t>& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (auto b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[h & 0xf];
        h >>= 4;
    }
    return s;
}

std::string file_checksum(const std::filesystem::path& path) { return checksum_hex(read_bytes(path)); }

std::string text_checksum(const std::string& text) {
    return checksum_hex(std::vector<std::uint8_t>(text.begin(), text.end()));
}

}  // namespace lrdif
