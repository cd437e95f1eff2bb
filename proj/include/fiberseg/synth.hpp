#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fiberseg/trk.hpp"

namespace fiberseg {

enum class CurveKind { Straight, Arc, UCurve, SCurve, Helix };

// Parametric recipe for one class of fibers. Geometry is synthetic: the
// shapes are chosen to give each class a distinct curvature signature and
// spatial region, not to model anatomy.
struct ClassTemplate {
    int class_id = 0;
    CurveKind kind = CurveKind::Straight;
    double size_min = 20.0, size_max = 30.0;  // principal extent (mm)
    double shape_min = 0.0, shape_max = 0.0;  // arc span (rad), U/S depth (mm), helix turns
    std::size_t points_min = 36, points_max = 120;
    std::array<double, 3> region_offset{0.0, 0.0, 0.0};   // mm
    std::array<double, 3> base_rotation{0.0, 0.0, 0.0};   // XYZ Euler angles (rad)
    double noise_mm = 0.5;       // isotropic per-point noise
    double orient_jitter = 0.12; // per-fiber random rotation bound (rad)
    double center_jitter = 4.0;  // per-fiber translation bound (mm)
    bool scattered = false;      // ignore region; place anywhere in the volume
};

struct SynthConfig {
    // Grey-dominant counts echoing the clinical imbalance at desk scale.
    std::array<std::size_t, kNumClasses> class_counts{2000, 150, 150, 150,
                                                      150,  150, 150, 150, 150};
    std::uint64_t seed = 7;
    double global_jitter = 1.0;        // scales noise and per-fiber jitter
    double brain_rotation_max = 0.25;  // cohort perturbation bounds
    double brain_scale_max = 0.10;
    std::vector<ClassTemplate> templates;  // empty selects default_templates()
};

std::vector<ClassTemplate> default_templates();

struct LabeledBrain {
    Tractogram tractogram;
    std::vector<int> labels;
    std::string id;
};

// Deterministic in cfg + seed; coordinates are rounded to float32 so the
// in-memory brain matches its .trk serialization exactly.
LabeledBrain generate_brain(const SynthConfig& cfg);

// Each brain gets its own seed and slightly perturbed templates (rotated and
// scaled region offsets), so cohorts differ the way separate subjects would.
std::vector<LabeledBrain> generate_cohort(const SynthConfig& base, std::size_t n_brains,
                                          std::uint64_t seed);

}  // namespace fiberseg
