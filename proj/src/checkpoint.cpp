#include "drtl/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace drtl {

namespace {

constexpr char kMagic[4] = {'N', 'T', 'C', 'K'};
constexpr uint32_t kVersion = 1;
constexpr uint32_t kEndianMarker = 0x01020304u;
constexpr uint8_t kDtypeF32 = 0;

template <class T>
void write_raw(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_raw(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::vector<std::string>& names,
                     const std::vector<Tensor<float>>& values) {
    if (names.size() != values.size())
        throw std::invalid_argument("save_checkpoint: name/value count mismatch");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path.string());

    os.write(kMagic, 4);
    write_raw(os, kVersion);
    write_raw(os, kEndianMarker);
    write_raw(os, static_cast<uint64_t>(names.size()));
    for (size_t i = 0; i < names.size(); ++i) {
        const auto& name = names[i];
        const auto& t = values[i];
        write_raw(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_raw(os, kDtypeF32);
        write_raw(os, static_cast<uint8_t>(t.shape.size()));
        for (int64_t d : t.shape) write_raw(os, static_cast<uint64_t>(d));
        os.write(reinterpret_cast<const char*>(t.data()),
                 static_cast<std::streamsize>(sizeof(float) * t.numel()));
    }
    if (!os) throw std::runtime_error("save_checkpoint: write failure for " + path.string());
}

std::vector<std::pair<std::string, Tensor<float>>> load_checkpoint(
    const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path.string());

    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("load_checkpoint: bad magic in " + path.string());
    if (read_raw<uint32_t>(is) != kVersion)
        throw std::runtime_error("load_checkpoint: unsupported version in " + path.string());
    if (read_raw<uint32_t>(is) != kEndianMarker)
        throw std::runtime_error("load_checkpoint: endianness mismatch in " + path.string());

    const uint64_t count = read_raw<uint64_t>(is);
    std::vector<std::pair<std::string, Tensor<float>>> out;
    out.reserve(count);
    for (uint64_t i = 0; i < count; ++i) {
        const uint32_t name_len = read_raw<uint32_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const uint8_t dtype = read_raw<uint8_t>(is);
        if (dtype != kDtypeF32)
            throw std::runtime_error("load_checkpoint: unsupported dtype for " + name);
        const uint8_t ndim = read_raw<uint8_t>(is);
        Shape shape;
        for (uint8_t d = 0; d < ndim; ++d)
            shape.push_back(static_cast<int64_t>(read_raw<uint64_t>(is)));
        Tensor<float> t = Tensor<float>::zeros(shape);
        is.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(sizeof(float) * t.numel()));
        if (!is) throw std::runtime_error("load_checkpoint: truncated payload for " + name);
        out.emplace_back(std::move(name), std::move(t));
    }
    return out;
}

namespace {

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint_path) {
    std::filesystem::path p = checkpoint_path;
    p.replace_extension(".meta.json");
    return p;
}

}  // namespace

void write_meta_sidecar(const std::filesystem::path& checkpoint_path,
                        const nlohmann::json& meta) {
    std::ofstream f(sidecar_path(checkpoint_path));
    if (!f) throw std::runtime_error("write_meta_sidecar: cannot open sidecar");
    f << meta.dump(2) << "\n";
}

nlohmann::json read_meta_sidecar(const std::filesystem::path& checkpoint_path) {
    std::ifstream f(sidecar_path(checkpoint_path));
    if (!f) throw std::runtime_error("read_meta_sidecar: missing sidecar for " +
                                     checkpoint_path.string());
    return nlohmann::json::parse(f);
}

}  // namespace drtl
