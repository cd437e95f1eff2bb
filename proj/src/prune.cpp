#include "fiberseg/prune.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fiberseg/errors.hpp"

namespace fiberseg {

std::array<double, 2> project(const std::array<double, 3>& p, Plane plane) {
    switch (plane) {
        case Plane::XY: return {p[0], p[1]};
        case Plane::YZ: return {p[1], p[2]};
        case Plane::ZX: return {p[2], p[0]};
    }
    return {0.0, 0.0};  // unreachable
}

std::vector<std::array<double, 2>> project(const std::vector<std::array<double, 3>>& pts,
                                           Plane plane) {
    std::vector<std::array<double, 2>> out(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) out[i] = project(pts[i], plane);
    return out;
}

namespace {

// Unsigned angle in [0, pi] between two 2D vectors; zero vectors turn nowhere.
double turning_angle(const std::array<double, 2>& u, const std::array<double, 2>& v) {
    if ((u[0] == 0.0 && u[1] == 0.0) || (v[0] == 0.0 && v[1] == 0.0)) return 0.0;
    const double dot = u[0] * v[0] + u[1] * v[1];
    const double cross = u[0] * v[1] - u[1] * v[0];
    return std::atan2(std::fabs(cross), dot);
}

}  // namespace

CurvatureScores curvature_scores(const Fiber& f) {
    const std::size_t n = f.points.size();
    if (n < 2) throw DegenerateFiber("curvature needs at least 2 points");

    CurvatureScores cs;
    cs.scores.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (const int k : kCurvatureOffsets) {
            if (i < static_cast<std::size_t>(k) || i + static_cast<std::size_t>(k) >= n)
                continue;
            const auto& prev = f.points[i - static_cast<std::size_t>(k)];
            const auto& cur = f.points[i];
            const auto& next = f.points[i + static_cast<std::size_t>(k)];
            const std::array<double, 3> incoming{cur[0] - prev[0], cur[1] - prev[1],
                                                 cur[2] - prev[2]};
            const std::array<double, 3> outgoing{next[0] - cur[0], next[1] - cur[1],
                                                 next[2] - cur[2]};
            for (const Plane plane : kAllPlanes)
                s += turning_angle(project(incoming, plane), project(outgoing, plane));
        }
        cs.scores[i] = s;
    }
    return cs;
}

Fiber prune_fiber(const Fiber& f, double keep_fraction) {
    if (!(keep_fraction > 0.0) || keep_fraction > 1.0)
        throw BadConfig("keep_fraction must be in (0, 1]");
    const std::size_t n = f.points.size();
    if (n < 2) throw DegenerateFiber("pruning needs at least 2 points");

    const auto cs = curvature_scores(f);
    const auto keep =
        static_cast<std::size_t>(std::ceil(keep_fraction * static_cast<double>(n)));

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return cs.scores[a] > cs.scores[b];  // stable: equal scores keep lower index
    });
    order.resize(keep);
    std::sort(order.begin(), order.end());

    Fiber out;
    out.label = f.label;
    out.points.reserve(keep);
    for (const std::size_t idx : order) out.points.push_back(f.points[idx]);
    return out;
}

MaskedSequence to_fixed_length(const Fiber& f, std::size_t max_len, double mask_value) {
    if (f.points.empty()) throw DegenerateFiber("cannot convert an empty fiber");
    if (max_len == 0) throw BadConfig("max_len must be positive");

    MaskedSequence seq;
    seq.coords.assign(max_len, {mask_value, mask_value, mask_value});
    seq.valid.assign(max_len, 0);
    const std::size_t n = std::min(f.points.size(), max_len);
    for (std::size_t i = 0; i < n; ++i) {
        seq.coords[i] = f.points[i];
        seq.valid[i] = 1;
    }
    return seq;
}

Fiber shift_off_mask_value(Fiber f, double mask_value, double eps) {
    const bool collides = std::any_of(
        f.points.begin(), f.points.end(), [&](const std::array<double, 3>& p) {
            return p[0] == mask_value && p[1] == mask_value && p[2] == mask_value;
        });
    if (collides) {
        for (auto& p : f.points)
            for (int d = 0; d < 3; ++d) p[d] += eps;
    }
    return f;
}

}  // namespace fiberseg
