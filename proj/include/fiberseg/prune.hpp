#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "fiberseg/trk.hpp"

namespace fiberseg {

enum class Plane { XY, YZ, ZX };

inline constexpr std::array<Plane, 3> kAllPlanes{Plane::XY, Plane::YZ, Plane::ZX};
inline constexpr std::array<int, 2> kCurvatureOffsets{1, 4};
inline constexpr double kDefaultKeepFraction = 0.75;
inline constexpr std::size_t kDefaultSeqLen = 100;
inline constexpr double kDefaultMaskValue = 0.0;

// Drop the axis absent from `plane`: XY -> (x,y), YZ -> (y,z), ZX -> (z,x).
std::array<double, 2> project(const std::array<double, 3>& p, Plane plane);
std::vector<std::array<double, 2>> project(const std::vector<std::array<double, 3>>& pts,
                                           Plane plane);

struct CurvatureScores {
    std::vector<double> scores;  // one per point, radians, >= 0
};

// Per-point turning-angle score summed over the three axis planes and the
// step offsets {1, 4}. Terms whose neighbours fall outside the fiber, or
// whose projected direction vector is zero, contribute nothing.
CurvatureScores curvature_scores(const Fiber& f);

// Keep the ceil(keep_fraction * n) highest-scoring points in sequence order;
// ties go to the lower index. Label passes through.
Fiber prune_fiber(const Fiber& f, double keep_fraction = kDefaultKeepFraction);

struct MaskedSequence {
    std::vector<std::array<double, 3>> coords;  // max_len rows
    std::vector<std::uint8_t> valid;            // prefix of 1s, then 0s

    std::size_t length() const { return coords.size(); }
    std::size_t n_valid() const {
        std::size_t n = 0;
        while (n < valid.size() && valid[n]) ++n;
        return n;
    }
};

// Truncate to the first max_len points or pad the tail with mask_value.
MaskedSequence to_fixed_length(const Fiber& f, std::size_t max_len = kDefaultSeqLen,
                               double mask_value = kDefaultMaskValue);

// A real point sitting exactly at the mask value on all three axes would be
// indistinguishable from padding, so ingestion shifts the whole fiber by a
// tiny offset when that happens.
Fiber shift_off_mask_value(Fiber f, double mask_value = kDefaultMaskValue,
                           double eps = 1e-6);

}  // namespace fiberseg
