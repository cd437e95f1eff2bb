#include "fiberseg/trk.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "fiberseg/errors.hpp"

namespace fiberseg {

namespace {

// Explicit little-endian packing; host byte order never leaks into files.
void put_u16(unsigned char* p, std::uint16_t v) {
    p[0] = static_cast<unsigned char>(v & 0xff);
    p[1] = static_cast<unsigned char>((v >> 8) & 0xff);
}

void put_u32(unsigned char* p, std::uint32_t v) {
    p[0] = static_cast<unsigned char>(v & 0xff);
    p[1] = static_cast<unsigned char>((v >> 8) & 0xff);
    p[2] = static_cast<unsigned char>((v >> 16) & 0xff);
    p[3] = static_cast<unsigned char>((v >> 24) & 0xff);
}

std::uint16_t get_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) |
           (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_i16(unsigned char* p, std::int16_t v) { put_u16(p, static_cast<std::uint16_t>(v)); }
void put_i32(unsigned char* p, std::int32_t v) { put_u32(p, static_cast<std::uint32_t>(v)); }
std::int16_t get_i16(const unsigned char* p) { return static_cast<std::int16_t>(get_u16(p)); }
std::int32_t get_i32(const unsigned char* p) { return static_cast<std::int32_t>(get_u32(p)); }

void put_f32(unsigned char* p, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(p, bits);
}

float get_f32(const unsigned char* p) {
    const std::uint32_t bits = get_u32(p);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

constexpr std::size_t kOffMagic = 0;
constexpr std::size_t kOffDim = 6;
constexpr std::size_t kOffVoxelSize = 12;
constexpr std::size_t kOffOrigin = 24;
constexpr std::size_t kOffNScalars = 36;
constexpr std::size_t kOffNProperties = 238;
constexpr std::size_t kOffVoxToRas = 440;
constexpr std::size_t kOffVoxelOrder = 948;
constexpr std::size_t kOffNCount = 988;
constexpr std::size_t kOffVersion = 992;
constexpr std::size_t kOffHdrSize = 996;

}  // namespace

std::array<unsigned char, kTrkHeaderSize> serialize_header(const TrkHeader& h) {
    std::array<unsigned char, kTrkHeaderSize> buf = h.raw;
    std::memcpy(buf.data() + kOffMagic, h.magic.data(), 6);
    for (int i = 0; i < 3; ++i) put_i16(buf.data() + kOffDim + 2 * i, h.dim[i]);
    for (int i = 0; i < 3; ++i) put_f32(buf.data() + kOffVoxelSize + 4 * i, h.voxel_size[i]);
    for (int i = 0; i < 3; ++i) put_f32(buf.data() + kOffOrigin + 4 * i, h.origin[i]);
    put_i16(buf.data() + kOffNScalars, h.n_scalars);
    put_i16(buf.data() + kOffNProperties, h.n_properties);
    for (int i = 0; i < 16; ++i) put_f32(buf.data() + kOffVoxToRas + 4 * i, h.vox_to_ras[i]);
    std::memcpy(buf.data() + kOffVoxelOrder, h.voxel_order.data(), 4);
    put_i32(buf.data() + kOffNCount, h.n_count);
    put_i32(buf.data() + kOffVersion, h.version);
    put_i32(buf.data() + kOffHdrSize, h.hdr_size);
    return buf;
}

TrkHeader parse_header(const unsigned char* bytes, std::size_t len) {
    if (len < kTrkHeaderSize)
        throw TruncatedFile("trk stream shorter than the 1000-byte header");

    TrkHeader h;
    std::memcpy(h.raw.data(), bytes, kTrkHeaderSize);
    std::memcpy(h.magic.data(), bytes + kOffMagic, 6);
    if (std::memcmp(h.magic.data(), "TRACK", 5) != 0)
        throw BadHeader("trk magic mismatch: expected 'TRACK'");
    for (int i = 0; i < 3; ++i) h.dim[i] = get_i16(bytes + kOffDim + 2 * i);
    for (int i = 0; i < 3; ++i) h.voxel_size[i] = get_f32(bytes + kOffVoxelSize + 4 * i);
    for (int i = 0; i < 3; ++i) h.origin[i] = get_f32(bytes + kOffOrigin + 4 * i);
    h.n_scalars = get_i16(bytes + kOffNScalars);
    h.n_properties = get_i16(bytes + kOffNProperties);
    for (int i = 0; i < 16; ++i) h.vox_to_ras[i] = get_f32(bytes + kOffVoxToRas + 4 * i);
    std::memcpy(h.voxel_order.data(), bytes + kOffVoxelOrder, 4);
    h.n_count = get_i32(bytes + kOffNCount);
    h.version = get_i32(bytes + kOffVersion);
    h.hdr_size = get_i32(bytes + kOffHdrSize);

    if (h.hdr_size != 1000)
        throw BadHeader("trk hdr_size is " + std::to_string(h.hdr_size) +
                        ", expected 1000 (byte-swapped files are not supported)");
    if (h.n_scalars < 0 || h.n_properties < 0)
        throw BadHeader("negative n_scalars or n_properties");
    return h;
}

bool operator==(const TrkHeader& a, const TrkHeader& b) {
    return serialize_header(a) == serialize_header(b);
}

Tractogram read_trk(const std::vector<unsigned char>& bytes) {
    Tractogram t;
    t.header = parse_header(bytes.data(), bytes.size());

    const unsigned char* p = bytes.data() + kTrkHeaderSize;
    const unsigned char* end = bytes.data() + bytes.size();
    const std::size_t floats_per_point = 3 + static_cast<std::size_t>(t.header.n_scalars);
    const std::size_t props = static_cast<std::size_t>(t.header.n_properties);

    while (p < end) {
        if (static_cast<std::size_t>(end - p) < 4)
            throw TruncatedFile("trk stream ends inside a fiber record header");
        const std::int32_t n_points = get_i32(p);
        p += 4;
        if (n_points <= 0)
            throw TruncatedFile("fiber record declares a non-positive point count");
        const std::size_t record_bytes =
            4 * (static_cast<std::size_t>(n_points) * floats_per_point + props);
        if (static_cast<std::size_t>(end - p) < record_bytes)
            throw TruncatedFile("trk stream ends inside a fiber record body");

        Fiber f;
        f.points.resize(static_cast<std::size_t>(n_points));
        for (std::int32_t i = 0; i < n_points; ++i) {
            for (int d = 0; d < 3; ++d) {
                const float v = get_f32(p);
                p += 4;
                if (!std::isfinite(v))
                    throw NonFinitePoint("non-finite coordinate in fiber " +
                                         std::to_string(t.fibers.size()) + ", point " +
                                         std::to_string(i));
                f.points[static_cast<std::size_t>(i)][d] = static_cast<double>(v);
            }
            p += 4 * static_cast<std::size_t>(t.header.n_scalars);  // discard scalars
        }
        p += 4 * props;  // discard per-fiber properties
        t.fibers.push_back(std::move(f));
    }

    if (t.header.n_count > 0 &&
        static_cast<std::size_t>(t.header.n_count) != t.fibers.size()) {
        if (t.fibers.size() < static_cast<std::size_t>(t.header.n_count))
            throw TruncatedFile("header declares " + std::to_string(t.header.n_count) +
                                " fibers but stream holds " +
                                std::to_string(t.fibers.size()));
        throw BadHeader("header declares " + std::to_string(t.header.n_count) +
                        " fibers but stream holds " + std::to_string(t.fibers.size()));
    }
    return t;
}

Tractogram read_trk(std::istream& in) {
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    return read_trk(bytes);
}

Tractogram read_trk_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open trk file: " + path);
    return read_trk(in);
}

std::vector<unsigned char> write_trk(const Tractogram& t) {
    TrkHeader h = t.header;
    h.n_scalars = 0;
    h.n_properties = 0;
    h.n_count = static_cast<std::int32_t>(t.fibers.size());
    h.hdr_size = 1000;

    std::size_t body = 0;
    for (const auto& f : t.fibers) body += 4 + 12 * f.points.size();

    std::vector<unsigned char> out(kTrkHeaderSize + body);
    const auto hdr = serialize_header(h);
    std::memcpy(out.data(), hdr.data(), kTrkHeaderSize);

    unsigned char* p = out.data() + kTrkHeaderSize;
    for (const auto& f : t.fibers) {
        if (f.points.empty()) throw DataError("cannot write an empty fiber");
        put_i32(p, static_cast<std::int32_t>(f.points.size()));
        p += 4;
        for (const auto& pt : f.points) {
            for (int d = 0; d < 3; ++d) {
                if (!std::isfinite(pt[d]))
                    throw NonFinitePoint("non-finite coordinate on write");
                put_f32(p, static_cast<float>(pt[d]));
                p += 4;
            }
        }
    }
    return out;
}

void write_trk(const Tractogram& t, std::ostream& out) {
    const auto bytes = write_trk(t);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

void write_trk_file(const Tractogram& t, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    write_trk(t, out);
    if (!out) throw DataError("write failed: " + path);
}

std::vector<int> read_labels(std::istream& in) {
    std::vector<int> labels;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) {
            // only a trailing newline is tolerated
            if (in.peek() != std::char_traits<char>::eof())
                throw BadLabel("blank label line " + std::to_string(lineno));
            continue;
        }
        std::size_t pos = 0;
        int value = 0;
        try {
            value = std::stoi(line, &pos);
        } catch (const std::exception&) {
            throw BadLabel("line " + std::to_string(lineno) + ": not an integer: '" +
                           line + "'");
        }
        if (pos != line.size())
            throw BadLabel("line " + std::to_string(lineno) + ": trailing characters: '" +
                           line + "'");
        if (value < 0 || value >= kNumClasses)
            throw BadLabel("line " + std::to_string(lineno) + ": label " +
                           std::to_string(value) + " outside 0..8");
        labels.push_back(value);
    }
    return labels;
}

std::vector<int> read_labels(const std::string& text) {
    std::istringstream in(text);
    return read_labels(in);
}

std::vector<int> read_labels_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open label file: " + path);
    return read_labels(in);
}

void write_labels(const std::vector<int>& labels, std::ostream& out) {
    for (const int v : labels) out << v << '\n';
}

void write_labels_file(const std::vector<int>& labels, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    write_labels(labels, out);
}

void attach_labels(Tractogram& t, const std::vector<int>& labels) {
    if (labels.size() != t.fibers.size())
        throw CountMismatch("label count " + std::to_string(labels.size()) +
                            " does not match fiber count " +
                            std::to_string(t.fibers.size()));
    for (std::size_t i = 0; i < labels.size(); ++i) t.fibers[i].label = labels[i];
}

}  // namespace fiberseg
