#include "loadcast/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace loadcast {

namespace {

constexpr char kMagic[4] = {'L', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
    write_u32(os, static_cast<std::uint32_t>(v));
    write_u32(os, static_cast<std::uint32_t>(v >> 32));
}

void write_f64(std::ostream& os, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, sizeof bits);
    write_u64(os, bits);
}

void write_string(std::ostream& os, const std::string& s) {
    write_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
           static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

std::uint64_t read_u64(std::istream& is) {
    const std::uint64_t lo = read_u32(is);
    const std::uint64_t hi = read_u32(is);
    return lo | hi << 32;
}

double read_f64(std::istream& is) {
    const std::uint64_t bits = read_u64(is);
    double d;
    std::memcpy(&d, &bits, sizeof d);
    return d;
}

std::string read_string(std::istream& is) {
    const std::uint64_t n = read_u64(is);
    if (n > (1ull << 32)) throw std::runtime_error("checkpoint: implausible string length");
    std::string s(static_cast<std::size_t>(n), '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    os.write(kMagic, 4);
    write_u32(os, kVersion);
    write_string(os, ckpt.kind);
    write_string(os, ckpt.config_json);
    write_u64(os, ckpt.params.size());
    for (const auto& [name, tensor] : ckpt.params) {
        write_string(os, name);
        const auto& shape = tensor.shape();
        write_u32(os, static_cast<std::uint32_t>(shape.size()));
        for (int d : shape) write_u32(os, static_cast<std::uint32_t>(d));
        for (double v : tensor.values()) write_f64(os, v);
    }
    if (!os) throw std::runtime_error("checkpoint: write to " + path + " failed");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("checkpoint: " + path + " is not a checkpoint file");
    const std::uint32_t version = read_u32(is);
    if (version != kVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));

    Checkpoint ckpt;
    ckpt.kind = read_string(is);
    ckpt.config_json = read_string(is);
    const std::uint64_t count = read_u64(is);
    ckpt.params.reserve(static_cast<std::size_t>(count));
    for (std::uint64_t i = 0; i < count; ++i) {
        std::string name = read_string(is);
        const std::uint32_t rank = read_u32(is);
        if (rank > 8) throw std::runtime_error("checkpoint: implausible tensor rank");
        std::vector<int> shape(rank);
        std::int64_t total = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            shape[r] = static_cast<int>(read_u32(is));
            if (shape[r] <= 0) throw std::runtime_error("checkpoint: non-positive dimension");
            total *= shape[r];
        }
        std::vector<double> values(static_cast<std::size_t>(total));
        for (double& v : values) v = read_f64(is);
        ckpt.params.push_back(
            {std::move(name), ad::Tensor::from_values(std::move(shape), std::move(values), true)});
    }
    return ckpt;
}

}  // namespace loadcast
