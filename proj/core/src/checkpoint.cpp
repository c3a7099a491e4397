#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include <openssl/evp.h>

#include "ndesteer/errors.hpp"
#include "ndesteer/tensor_io.hpp"
#include "ndesteer/vlm.hpp"

namespace ndesteer {

namespace {

constexpr char kCheckpointMagic[4] = {'T', 'V', 'L', 'M'};

class ByteStreamBuf : public std::streambuf {
public:
    explicit ByteStreamBuf(std::span<const std::uint8_t> bytes) {
        auto* p = reinterpret_cast<char*>(const_cast<std::uint8_t*>(bytes.data()));
        setg(p, p, p + bytes.size());
    }
};

}  // namespace

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("sha256 digest failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 0xF];
    }
    return out;
}

std::vector<std::uint8_t> encode_checkpoint(const ToyVlmConfig& config, const ModelWeights& weights) {
    std::ostringstream os(std::ios::binary);
    le::put_bytes(os, kCheckpointMagic, 4);
    const std::uint8_t version = kCheckpointVersion;
    le::put_bytes(os, &version, 1);
    const std::string blob = config.to_json();
    le::put_u32(os, static_cast<std::uint32_t>(blob.size()));
    le::put_bytes(os, blob.data(), blob.size());
    for_each_section(weights, [&](const std::string& name, const Tensor& t) {
        le::put_u32(os, static_cast<std::uint32_t>(name.size()));
        le::put_bytes(os, name.data(), name.size());
        write_tensor(os, t);
    });
    const std::string s = os.str();
    return {s.begin(), s.end()};
}

Model decode_checkpoint(std::span<const std::uint8_t> bytes) {
    ByteStreamBuf buf(bytes);
    std::istream in(&buf);

    char magic[4];
    le::get_bytes(in, magic, 4, "checkpoint magic");
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw FormatError("bad checkpoint magic");
    std::uint8_t version = 0;
    le::get_bytes(in, &version, 1, "checkpoint version");
    if (version != kCheckpointVersion) {
        throw VersionError("unsupported checkpoint version " + std::to_string(version));
    }
    const std::uint32_t blob_len = le::get_u32(in, "config length");
    if (blob_len > bytes.size()) throw TruncatedFile("config blob longer than file");
    std::string blob(blob_len, '\0');
    le::get_bytes(in, blob.data(), blob_len, "config blob");
    const ToyVlmConfig config = ToyVlmConfig::from_json(blob);

    std::map<std::string, Tensor> sections;
    while (in.peek() != std::char_traits<char>::eof()) {
        const std::uint32_t name_len = le::get_u32(in, "section name length");
        if (name_len == 0 || name_len > 256) throw FormatError("bad section name length");
        std::string name(name_len, '\0');
        le::get_bytes(in, name.data(), name_len, "section name");
        Tensor t = read_tensor(in);
        if (!sections.emplace(name, std::move(t)).second) {
            throw FormatError("duplicate section '" + name + "'");
        }
    }

    ModelWeights w;
    w.blocks.resize(config.n_layers);
    const auto shapes = section_shapes(config);
    std::size_t idx = 0;
    for_each_section(w, [&](const std::string& name, Tensor& t) {
        auto it = sections.find(name);
        if (it == sections.end()) throw FormatError("checkpoint is missing section '" + name + "'");
        if (it->second.dims() != shapes[idx].second) {
            throw ShapeError("section '" + name + "' has shape " + it->second.shape_string() +
                             ", config requires another");
        }
        t = std::move(it->second);
        sections.erase(it);
        ++idx;
    });
    if (!sections.empty()) {
        throw FormatError("checkpoint has unknown section '" + sections.begin()->first + "'");
    }
    return Model(config, std::move(w));
}

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
    const auto bytes = encode_checkpoint(model.config(), model.weights());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write failed for " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

Model checkpoint_roundtrip(const Model& model, const std::filesystem::path& path) {
    save_checkpoint(path, model);
    return load_checkpoint(path);
}

}  // namespace ndesteer
