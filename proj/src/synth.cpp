#include "fiberseg/synth.hpp"

#include <cmath>

#include "fiberseg/errors.hpp"
#include "fiberseg/prune.hpp"
#include "fiberseg/rng.hpp"

namespace fiberseg {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kBrainExtent = 70.0;  // grey fibers scatter within this cube (mm)

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 rotation_xyz(double ax, double ay, double az) {
    const double cx = std::cos(ax), sx = std::sin(ax);
    const double cy = std::cos(ay), sy = std::sin(ay);
    const double cz = std::cos(az), sz = std::sin(az);
    // Rz * Ry * Rx
    return Mat3{{{cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx},
                 {sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx},
                 {-sy, cy * sx, cy * cx}}};
}

Mat3 axis_angle(const Vec3& axis, double angle) {
    const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
    const double x = axis[0], y = axis[1], z = axis[2];
    return Mat3{{{t * x * x + c, t * x * y - s * z, t * x * z + s * y},
                 {t * x * y + s * z, t * y * y + c, t * y * z - s * x},
                 {t * x * z - s * y, t * y * z + s * x, t * z * z + c}}};
}

Vec3 apply(const Mat3& m, const Vec3& v) {
    return {m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2]};
}

Vec3 random_unit(Rng& rng) {
    while (true) {
        const Vec3 v{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                     rng.uniform(-1.0, 1.0)};
        const double n2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        if (n2 > 1e-6 && n2 <= 1.0) {
            const double n = std::sqrt(n2);
            return {v[0] / n, v[1] / n, v[2] / n};
        }
    }
}

Vec3 base_curve(CurveKind kind, double t, double size, double shape) {
    const double u = t - 0.5;
    switch (kind) {
        case CurveKind::Straight:
            return {size * u, 0.0, 0.0};
        case CurveKind::Arc: {
            const double a = shape * u;  // shape = angular span (rad)
            return {size * std::sin(a), size * (1.0 - std::cos(a)), 0.0};
        }
        case CurveKind::UCurve:
            return {size * u, shape * (2.0 * u) * (2.0 * u), 0.0};
        case CurveKind::SCurve:
            return {size * u, shape * std::sin(kPi * 2.0 * u), 0.0};
        case CurveKind::Helix: {
            const double r = 0.3 * size;
            const double a = 2.0 * kPi * shape * t;  // shape = turns
            return {r * std::cos(a), r * std::sin(a), size * u};
        }
    }
    return {0.0, 0.0, 0.0};
}

double round_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

Fiber make_fiber(const ClassTemplate& tpl, double global_jitter, Rng& rng) {
    const std::size_t n =
        tpl.points_min + static_cast<std::size_t>(rng.below(
                             static_cast<std::uint64_t>(tpl.points_max - tpl.points_min + 1)));
    const double size = rng.uniform(tpl.size_min, tpl.size_max);
    const double shape = rng.uniform(tpl.shape_min, tpl.shape_max);

    const Mat3 base =
        rotation_xyz(tpl.base_rotation[0], tpl.base_rotation[1], tpl.base_rotation[2]);
    Mat3 orient;
    if (tpl.scattered) {
        orient = axis_angle(random_unit(rng), rng.uniform(0.0, kPi));
    } else {
        orient = axis_angle(random_unit(rng),
                            rng.uniform(0.0, tpl.orient_jitter * global_jitter));
    }

    Vec3 center;
    if (tpl.scattered) {
        center = {rng.uniform(-kBrainExtent, kBrainExtent),
                  rng.uniform(-kBrainExtent, kBrainExtent),
                  rng.uniform(-kBrainExtent, kBrainExtent)};
    } else {
        const double cj = tpl.center_jitter * global_jitter;
        center = {tpl.region_offset[0] + rng.uniform(-cj, cj),
                  tpl.region_offset[1] + rng.uniform(-cj, cj),
                  tpl.region_offset[2] + rng.uniform(-cj, cj)};
    }

    const double noise = tpl.noise_mm * global_jitter;
    Fiber f;
    f.label = tpl.class_id;
    f.points.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.5;
        Vec3 p = base_curve(tpl.kind, t, size, shape);
        p = apply(orient, apply(base, p));
        for (int d = 0; d < 3; ++d)
            f.points[i][d] = p[d] + center[d] + rng.normal(0.0, noise);
    }

    for (auto& p : f.points)
        for (int d = 0; d < 3; ++d) p[d] = round_f32(p[d]);
    f = shift_off_mask_value(std::move(f));
    for (auto& p : f.points)
        for (int d = 0; d < 3; ++d) p[d] = round_f32(p[d]);
    return f;
}

void validate(const SynthConfig& cfg, const std::vector<ClassTemplate>& templates) {
    std::size_t total = 0;
    for (const std::size_t c : cfg.class_counts) total += c;
    if (total == 0) throw BadConfig("synthesis needs at least one fiber");
    if (templates.size() != static_cast<std::size_t>(kNumClasses))
        throw BadConfig("expected one template per class (9)");
    for (const auto& t : templates) {
        if (t.points_min < 36 || t.points_max > 120 || t.points_min > t.points_max)
            throw BadConfig("template point-count range must lie within [36, 120]");
        if (t.noise_mm < 0.0) throw BadConfig("noise scale must be >= 0");
        if (t.size_min > t.size_max || t.shape_min > t.shape_max)
            throw BadConfig("template parameter range is inverted");
    }
    if (cfg.global_jitter < 0.0) throw BadConfig("global_jitter must be >= 0");
}

}  // namespace

std::vector<ClassTemplate> default_templates() {
    std::vector<ClassTemplate> t(kNumClasses);

    // class 0: grey matter; short near-straight segments scattered everywhere
    t[0] = {0, CurveKind::Straight, 16.0, 30.0, 0.0, 0.0, 36, 60,
            {0, 0, 0}, {0, 0, 0}, 0.4, 0.0, 0.0, true};

    // white tracts: one distinct curve family + region each
    t[1] = {1, CurveKind::Arc, 34.0, 44.0, 2.0, 2.5, 70, 120,
            {48, 22, 12}, {0.3, 0.2, 0.4}, 0.6, 0.12, 4.0, false};
    t[2] = {2, CurveKind::Arc, 50.0, 60.0, 1.0, 1.3, 60, 110,
            {-48, 28, 18}, {1.2, 0.1, -0.5}, 0.6, 0.12, 4.0, false};
    t[3] = {3, CurveKind::Straight, 70.0, 90.0, 0.0, 0.0, 60, 100,
            {2, -12, 34}, {0.0, 1.2, 0.15}, 0.6, 0.10, 4.0, false};
    t[4] = {4, CurveKind::UCurve, 60.0, 75.0, 28.0, 38.0, 70, 120,
            {-4, 52, -12}, {0.1, 0.25, 1.1}, 0.6, 0.12, 4.0, false};
    t[5] = {5, CurveKind::SCurve, 55.0, 70.0, 13.0, 19.0, 56, 100,
            {-42, -38, 2}, {0.7, -0.3, 0.2}, 0.6, 0.12, 4.0, false};
    t[6] = {6, CurveKind::Arc, 38.0, 46.0, 1.7, 2.0, 60, 110,
            {42, -42, -16}, {1.5, 0.4, 0.8}, 0.6, 0.12, 4.0, false};
    t[7] = {7, CurveKind::Helix, 45.0, 60.0, 0.8, 1.1, 80, 120,
            {-2, -2, -46}, {0.2, 0.3, 0.0}, 0.6, 0.10, 4.0, false};
    t[8] = {8, CurveKind::UCurve, 26.0, 36.0, 15.0, 23.0, 36, 80,
            {56, -12, 36}, {-0.6, 0.8, 0.3}, 0.6, 0.12, 4.0, false};
    return t;
}

LabeledBrain generate_brain(const SynthConfig& cfg) {
    const std::vector<ClassTemplate> templates =
        cfg.templates.empty() ? default_templates() : cfg.templates;
    validate(cfg, templates);

    LabeledBrain out;
    out.id = "brain";
    for (int cls = 0; cls < kNumClasses; ++cls) {
        const ClassTemplate& tpl = templates[static_cast<std::size_t>(cls)];
        for (std::size_t i = 0; i < cfg.class_counts[static_cast<std::size_t>(cls)]; ++i) {
            Rng rng(mix_seed(cfg.seed, 0x5f1b7a2dULL, static_cast<std::uint64_t>(cls),
                             static_cast<std::uint64_t>(i)));
            out.tractogram.fibers.push_back(make_fiber(tpl, cfg.global_jitter, rng));
            out.labels.push_back(cls);
        }
    }

    TrkHeader& h = out.tractogram.header;
    h.dim = {200, 200, 200};
    h.voxel_size = {1.0f, 1.0f, 1.0f};
    h.origin = {0.0f, 0.0f, 0.0f};
    for (int i = 0; i < 4; ++i) h.vox_to_ras[static_cast<std::size_t>(i * 4 + i)] = 1.0f;
    h.n_count = static_cast<std::int32_t>(out.tractogram.fibers.size());
    return out;
}

std::vector<LabeledBrain> generate_cohort(const SynthConfig& base, std::size_t n_brains,
                                          std::uint64_t seed) {
    if (n_brains < 1) throw BadConfig("cohort needs at least one brain");
    const std::vector<ClassTemplate> templates =
        base.templates.empty() ? default_templates() : base.templates;
    validate(base, templates);

    std::vector<LabeledBrain> cohort;
    cohort.reserve(n_brains);
    for (std::size_t b = 0; b < n_brains; ++b) {
        SynthConfig cfg = base;
        cfg.seed = mix_seed(seed, 0xb7a1ULL, static_cast<std::uint64_t>(b));
        cfg.templates = templates;

        // per-brain anatomy perturbation: rotate and rescale the class
        // regions within the configured bounds
        Rng rng(mix_seed(seed, 0x7e317ULL, static_cast<std::uint64_t>(b)));
        const Mat3 rot = axis_angle(random_unit(rng),
                                    rng.uniform(0.0, base.brain_rotation_max));
        const double scl = 1.0 + rng.uniform(-base.brain_scale_max, base.brain_scale_max);
        for (auto& tpl : cfg.templates) {
            if (tpl.scattered) continue;
            const Vec3 r = apply(rot, tpl.region_offset);
            for (int d = 0; d < 3; ++d) tpl.region_offset[d] = scl * r[d];
            tpl.size_min *= scl;
            tpl.size_max *= scl;
        }

        LabeledBrain brain = generate_brain(cfg);
        brain.id = "brain_" + std::to_string(b + 1);
        cohort.push_back(std::move(brain));
    }
    return cohort;
}

}  // namespace fiberseg
