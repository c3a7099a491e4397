#include "ndesteer/tensor_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "ndesteer/errors.hpp"

namespace ndesteer {

namespace le {

void put_bytes(std::ostream& out, const void* data, std::size_t n) {
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

void get_bytes(std::istream& in, void* data, std::size_t n, const char* what) {
    in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) {
        throw TruncatedFile(std::string("unexpected end of data while reading ") + what);
    }
}

void put_u32(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 24)};
    put_bytes(out, b, 4);
}

std::uint32_t get_u32(std::istream& in, const char* what) {
    unsigned char b[4];
    get_bytes(in, b, 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

}  // namespace le

void write_tensor(std::ostream& out, const Tensor& t) {
    if (t.empty()) throw ShapeError("cannot serialize an empty tensor");
    le::put_bytes(out, kTensorMagic, 4);
    const std::uint8_t header[2] = {kTensorVersion, kTensorDtypeF32};
    le::put_bytes(out, header, 2);
    le::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.dims()) le::put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : t.data()) le::put_f32(out, v);
}

Tensor read_tensor(std::istream& in) {
    char magic[4];
    le::get_bytes(in, magic, 4, "tensor magic");
    if (std::memcmp(magic, kTensorMagic, 4) != 0) throw FormatError("bad tensor magic");
    std::uint8_t header[2];
    le::get_bytes(in, header, 2, "tensor header");
    if (header[0] != kTensorVersion) {
        throw VersionError("unsupported tensor version " + std::to_string(header[0]));
    }
    if (header[1] != kTensorDtypeF32) {
        throw FormatError("unsupported tensor dtype " + std::to_string(header[1]));
    }
    const std::uint32_t ndim = le::get_u32(in, "tensor rank");
    if (ndim == 0 || ndim > 8) throw FormatError("bad tensor rank " + std::to_string(ndim));
    std::vector<std::size_t> dims(ndim);
    std::size_t count = 1;
    for (auto& d : dims) {
        d = le::get_u32(in, "tensor dims");
        if (d == 0) throw FormatError("zero tensor dimension");
        count *= d;
        if (count > (std::size_t{1} << 31)) throw FormatError("tensor too large");
    }
    std::vector<unsigned char> raw(count * 4);
    le::get_bytes(in, raw.data(), raw.size(), "tensor payload");
    std::vector<float> data(count);
    for (std::size_t i = 0; i < count; ++i) {
        const unsigned char* b = raw.data() + 4 * i;
        const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) |
                                   (static_cast<std::uint32_t>(b[1]) << 8) |
                                   (static_cast<std::uint32_t>(b[2]) << 16) |
                                   (static_cast<std::uint32_t>(b[3]) << 24);
        data[i] = std::bit_cast<float>(bits);
    }
    return Tensor(std::move(dims), std::move(data));
}

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
    std::ostringstream os(std::ios::binary);
    write_tensor(os, t);
    const std::string s = os.str();
    return {s.begin(), s.end()};
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + path.string() + " for writing");
    write_tensor(out, t);
    if (!out) throw FormatError("write failed for " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return read_tensor(in);
}

Tensor tensor_roundtrip(const Tensor& t, const std::filesystem::path& path) {
    save_tensor(path, t);
    return load_tensor(path);
}

Tensor load_image(const std::filesystem::path& path, std::size_t* clamped) {
    Tensor img = load_tensor(path);
    if (img.rank() != 2) throw ShapeError("image must be [H, W], got " + img.shape_string());
    std::size_t n = 0;
    for (float& v : img.data()) {
        const float c = std::clamp(v, 0.0f, 1.0f);
        if (c != v) {
            v = c;
            ++n;
        }
    }
    if (clamped) *clamped += n;
    return img;
}

}  // namespace ndesteer
