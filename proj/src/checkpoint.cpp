#include "skelocc/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

namespace skelocc {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, const std::filesystem::path& path) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
        throw std::runtime_error("truncated checkpoint " + path.string());
    return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
    os.write(kCheckpointMagic, 4);
    put<uint32_t>(os, kCheckpointVersion);
    put<uint32_t>(os, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        put<uint32_t>(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<uint32_t>(os, static_cast<uint32_t>(t.rank()));
        for (int64_t e : t.shape()) put<uint64_t>(os, static_cast<uint64_t>(e));
        os.write(reinterpret_cast<const char*>(t.data().data()),
                 static_cast<std::streamsize>(t.numel() * sizeof(float)));
    }
    if (!os) throw std::runtime_error("failed writing checkpoint " + path.string());
}

std::map<std::string, Tensor> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw std::runtime_error("not a checkpoint (bad magic): " + path.string());
    const auto version = get<uint32_t>(is, path);
    if (version != kCheckpointVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version) + " in " +
                                 path.string());
    const auto count = get<uint32_t>(is, path);
    std::map<std::string, Tensor> out;
    for (uint32_t i = 0; i < count; ++i) {
        const auto len = get<uint32_t>(is, path);
        std::string name(len, '\0');
        if (!is.read(name.data(), len)) throw std::runtime_error("truncated checkpoint " + path.string());
        const auto rank = get<uint32_t>(is, path);
        Shape shape;
        for (uint32_t r = 0; r < rank; ++r) shape.push_back(static_cast<int64_t>(get<uint64_t>(is, path)));
        Tensor t = Tensor::zeros(shape);
        if (!is.read(reinterpret_cast<char*>(t.data().data()),
                     static_cast<std::streamsize>(t.numel() * sizeof(float))))
            throw std::runtime_error("truncated checkpoint " + path.string());
        out.emplace(std::move(name), std::move(t));
    }
    return out;
}

void assign_from(const NamedTensors& params, const std::map<std::string, Tensor>& source) {
    for (const auto& [name, p] : params) {
        auto it = source.find(name);
        if (it == source.end()) throw std::runtime_error("checkpoint is missing tensor '" + name + "'");
        if (it->second.shape() != p.shape())
            throw std::runtime_error("checkpoint tensor '" + name + "' has shape " +
                                     shape_str(it->second.shape()) + ", expected " + shape_str(p.shape()));
        Tensor dst = p;
        std::copy(it->second.data().begin(), it->second.data().end(), dst.data().begin());
    }
}

}  // namespace skelocc
