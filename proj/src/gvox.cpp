#include "geotopo/gvox.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace geotopo {

namespace {

constexpr char kMagic[8] = {'G', 'V', 'O', 'X', 'V', 'O', 'L', '\0'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& os, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(os, bits);
}

float get_f32(std::istream& is) {
    const std::uint32_t bits = get_u32(is);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

void write_header(std::ostream& os, std::uint32_t c, const Dim3& dims, GvoxDtype dtype) {
    os.write(kMagic, 8);
    put_u32(os, kVersion);
    put_u32(os, 0);
    put_u32(os, c);
    put_u32(os, static_cast<std::uint32_t>(dims.h));
    put_u32(os, static_cast<std::uint32_t>(dims.w));
    put_u32(os, static_cast<std::uint32_t>(dims.d));
    const std::uint8_t tag = static_cast<std::uint8_t>(dtype);
    os.write(reinterpret_cast<const char*>(&tag), 1);
}

}  // namespace

void gvox_write(const std::string& path, const LabelGrid& labels) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("gvox_write: cannot open " + path);
    write_header(os, labels.num_classes, labels.labels.dims(), GvoxDtype::Labels);
    const auto& data = labels.labels.data();
    os.write(reinterpret_cast<const char*>(data.data()),
             static_cast<std::streamsize>(data.size()));
    if (!os) throw std::runtime_error("gvox_write: write failed for " + path);
}

void gvox_write(const std::string& path, const VoxelMap& map) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("gvox_write: cannot open " + path);
    write_header(os, map.channels(), map.dims(), GvoxDtype::Values);
    for (std::uint32_t c = 0; c < map.channels(); ++c)
        for (double v : map.channel(c).data()) put_f32(os, static_cast<float>(v));
    if (!os) throw std::runtime_error("gvox_write: write failed for " + path);
}

GvoxPayload gvox_read(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("gvox_read: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("gvox_read: bad magic in " + path);
    const std::uint32_t version = get_u32(is);
    if (version != kVersion) throw std::runtime_error("gvox_read: unsupported version");
    get_u32(is);  // reserved
    const std::uint32_t c = get_u32(is);
    const Dim3 dims{get_u32(is), get_u32(is), get_u32(is)};
    std::uint8_t tag = 0;
    is.read(reinterpret_cast<char*>(&tag), 1);
    if (!is) throw std::runtime_error("gvox_read: truncated header in " + path);
    if (c == 0 || dims.count() == 0) throw std::runtime_error("gvox_read: empty volume");

    if (tag == static_cast<std::uint8_t>(GvoxDtype::Labels)) {
        LabelGrid out;
        out.num_classes = c;
        out.labels = Grid3<std::uint8_t>(dims);
        is.read(reinterpret_cast<char*>(out.labels.data().data()),
                static_cast<std::streamsize>(dims.count()));
        if (!is) throw std::runtime_error("gvox_read: truncated payload in " + path);
        return out;
    }
    if (tag == static_cast<std::uint8_t>(GvoxDtype::Values)) {
        VoxelMap out(c, dims);
        for (std::uint32_t ch = 0; ch < c; ++ch)
            for (auto& v : out.channel(ch).data()) v = static_cast<double>(get_f32(is));
        if (!is) throw std::runtime_error("gvox_read: truncated payload in " + path);
        return out;
    }
    throw std::runtime_error("gvox_read: unknown dtype tag");
}

VoxelMap gvox_read_map(const std::string& path) {
    GvoxPayload p = gvox_read(path);
    if (std::holds_alternative<VoxelMap>(p)) return std::get<VoxelMap>(std::move(p));
    const auto& labels = std::get<LabelGrid>(p);
    return one_hot_encode(labels, labels.num_classes);
}

}  // namespace geotopo
