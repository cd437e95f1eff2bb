#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace fiberseg {

inline constexpr std::size_t kTrkHeaderSize = 1000;
inline constexpr int kNumClasses = 9;  // class 0 = grey matter, 1..8 = white tracts

// TrackVis-style .trk header. Only the fields below are interpreted; every
// other byte of the 1000-byte block is carried through `raw` so foreign
// files round-trip verbatim.
//
// Interpreted layout (little-endian):
//   offset 0    char[6]   id string, must start with "TRACK"
//   offset 6    int16[3]  voxel grid dimensions
//   offset 12   float[3]  voxel size (mm)
//   offset 24   float[3]  origin (mm)
//   offset 36   int16     n_scalars (per-point scalars)
//   offset 238  int16     n_properties (per-fiber properties)
//   offset 440  float[16] vox_to_ras 4x4, row-major
//   offset 948  char[4]   voxel order
//   offset 988  int32     n_count (0 = unknown)
//   offset 992  int32     version
//   offset 996  int32     hdr_size, must equal 1000
struct TrkHeader {
    std::array<char, 6> magic{{'T', 'R', 'A', 'C', 'K', '\0'}};
    std::array<std::int16_t, 3> dim{{0, 0, 0}};
    std::array<float, 3> voxel_size{{1.0f, 1.0f, 1.0f}};
    std::array<float, 3> origin{{0.0f, 0.0f, 0.0f}};
    std::int16_t n_scalars = 0;
    std::int16_t n_properties = 0;
    std::array<float, 16> vox_to_ras{};  // all-zero = not recorded
    std::array<char, 4> voxel_order{{'R', 'A', 'S', '\0'}};
    std::int32_t n_count = 0;
    std::int32_t version = 2;
    std::int32_t hdr_size = 1000;
    // Uninterpreted bytes of the header block, preserved on write.
    std::array<unsigned char, kTrkHeaderSize> raw{};
};

struct Fiber {
    // Coordinates in mm; stored as double, widened from the file's float32.
    std::vector<std::array<double, 3>> points;
    std::optional<int> label;  // 0..8 when present

    std::size_t size() const { return points.size(); }
};

struct Tractogram {
    TrkHeader header;
    std::vector<Fiber> fibers;
};

// Serialize the interpreted fields on top of the preserved raw bytes.
std::array<unsigned char, kTrkHeaderSize> serialize_header(const TrkHeader& h);
TrkHeader parse_header(const unsigned char* bytes, std::size_t len);

// Headers compare equal iff their serialized blocks are identical.
bool operator==(const TrkHeader& a, const TrkHeader& b);

Tractogram read_trk(std::istream& in);
Tractogram read_trk(const std::vector<unsigned char>& bytes);
Tractogram read_trk_file(const std::string& path);

// Writes with n_scalars = 0, n_properties = 0, n_count = fiber count.
void write_trk(const Tractogram& t, std::ostream& out);
std::vector<unsigned char> write_trk(const Tractogram& t);
void write_trk_file(const Tractogram& t, const std::string& path);

// Label sidecar (.lbl): one integer per line, each in 0..8.
std::vector<int> read_labels(std::istream& in);
std::vector<int> read_labels(const std::string& text);
std::vector<int> read_labels_file(const std::string& path);
void write_labels(const std::vector<int>& labels, std::ostream& out);
void write_labels_file(const std::vector<int>& labels, const std::string& path);

// Pairs labels with fibers; throws CountMismatch on length disagreement.
void attach_labels(Tractogram& t, const std::vector<int>& labels);

}  // namespace fiberseg
