#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tseg/optim.hpp"  // parse_kv_file
#include "tseg/roi_pipeline.hpp"
#include "tseg/volume.hpp"

namespace tseg {

// Synthetic stand-in for a contrast-enhanced abdominal volume: a bright
// lumen tube wrapped by a soft-tissue annulus (the segmentation target) over
// a limited z span, a spine-like block below, two kidney-like ellipsoids
// beside it at near-thrombus intensity, and voxel noise.
struct PhantomSpec {
    std::uint64_t seed = 1;
    std::int64_t nx = 64, ny = 64, nz = 48;
    double sx = 1.0, sy = 1.0, sz = 1.0;
    std::int64_t thrombus_zmin = 13, thrombus_zmax = 34;  // inclusive
    double lumen_radius = 7.0;
    double outer_radius = 16.0;
    double radius_wobble = 2.0;  // amplitude of the seeded smooth profile
    double center_wobble = 1.5;
    bool spine = true;
    bool ellipsoids = true;
    double noise_std = 5.0;
    double intensity_background = 0.0;
    double intensity_lumen = 300.0;
    double intensity_thrombus = 40.0;
    double intensity_spine = 45.0;
    double intensity_ellipsoid = 42.0;
    int observer_count = 3;
    double observer_jitter_std = 2.0;

    void validate() const {
        if (nx < 16 || ny < 16 || nz < 4) throw std::invalid_argument("phantom: extents too small");
        if (sx <= 0 || sy <= 0 || sz <= 0) throw std::invalid_argument("phantom: spacing must be > 0");
        if (thrombus_zmin < 0 || thrombus_zmax >= nz || thrombus_zmin > thrombus_zmax)
            throw std::invalid_argument("phantom: thrombus z-span outside the volume");
        if (lumen_radius <= 0 || outer_radius <= lumen_radius + 2.0 + radius_wobble)
            throw std::invalid_argument("phantom: degenerate radii (outer must clear lumen plus wobble)");
        if (noise_std < 0) throw std::invalid_argument("phantom: noise std must be >= 0");
    }
};

inline PhantomSpec phantom_spec_from_file(const std::string& path) {
    PhantomSpec s;
    for (const auto& [k, v] : parse_kv_file(path)) {
        if (k == "seed") s.seed = std::stoull(v);
        else if (k == "nx") s.nx = std::stoll(v);
        else if (k == "ny") s.ny = std::stoll(v);
        else if (k == "nz") s.nz = std::stoll(v);
        else if (k == "sx") s.sx = std::stod(v);
        else if (k == "sy") s.sy = std::stod(v);
        else if (k == "sz") s.sz = std::stod(v);
        else if (k == "thrombus_zmin") s.thrombus_zmin = std::stoll(v);
        else if (k == "thrombus_zmax") s.thrombus_zmax = std::stoll(v);
        else if (k == "lumen_radius") s.lumen_radius = std::stod(v);
        else if (k == "outer_radius") s.outer_radius = std::stod(v);
        else if (k == "radius_wobble") s.radius_wobble = std::stod(v);
        else if (k == "center_wobble") s.center_wobble = std::stod(v);
        else if (k == "spine") s.spine = v == "1" || v == "true";
        else if (k == "ellipsoids") s.ellipsoids = v == "1" || v == "true";
        else if (k == "noise_std") s.noise_std = std::stod(v);
        else if (k == "intensity_background") s.intensity_background = std::stod(v);
        else if (k == "intensity_lumen") s.intensity_lumen = std::stod(v);
        else if (k == "intensity_thrombus") s.intensity_thrombus = std::stod(v);
        else if (k == "intensity_spine") s.intensity_spine = std::stod(v);
        else if (k == "intensity_ellipsoid") s.intensity_ellipsoid = std::stod(v);
        else if (k == "observer_count") s.observer_count = std::stoi(v);
        else if (k == "observer_jitter_std") s.observer_jitter_std = std::stod(v);
        else throw std::runtime_error("phantom config: unknown key '" + k + "'");
    }
    s.validate();
    return s;
}

struct PhantomOutput {
    Volume image;
    Volume mask;
    std::vector<std::pair<std::int64_t, std::int64_t>> observers;  // inclusive (zmin, zmax)
};

inline PhantomOutput generate_phantom(const PhantomSpec& spec) {
    spec.validate();
    Rng rng(derive_seed(spec.seed, "phantom"));

    // seeded smooth profiles along z: two low-frequency sinusoids
    auto profile = [&](double amplitude) {
        const double f1 = rng.uniform(0.8, 1.6), f2 = rng.uniform(2.0, 3.5);
        const double p1 = rng.uniform(0.0, 6.283185307), p2 = rng.uniform(0.0, 6.283185307);
        const double a1 = rng.uniform(0.5, 1.0), a2 = rng.uniform(0.2, 0.6);
        std::vector<double> prof(static_cast<std::size_t>(spec.nz));
        for (std::int64_t z = 0; z < spec.nz; ++z) {
            const double t = static_cast<double>(z) / static_cast<double>(spec.nz);
            const double raw = a1 * std::sin(6.283185307 * f1 * t + p1) + a2 * std::sin(6.283185307 * f2 * t + p2);
            prof[static_cast<std::size_t>(z)] = amplitude * raw / (a1 + a2);
        }
        return prof;
    };
    const auto r_out = profile(spec.radius_wobble);
    const auto r_lum = profile(0.5);
    const auto cx_wob = profile(spec.center_wobble);
    const auto cy_wob = profile(spec.center_wobble);

    const double cx0 = static_cast<double>(spec.nx) * 0.5;
    const double cy0 = static_cast<double>(spec.ny) * 0.42;

    PhantomOutput out;
    out.image = Volume(spec.nx, spec.ny, spec.nz, ValueKind::intensity);
    out.mask = Volume(spec.nx, spec.ny, spec.nz, ValueKind::mask);

    const double spine_y0 = cy0 + spec.outer_radius + spec.radius_wobble + 3.0;
    const double ell_dx = spec.outer_radius + spec.radius_wobble + 9.0;
    const double ell_a = 5.0, ell_b = 7.0, ell_c = static_cast<double>(spec.nz) * 0.22;
    const double ell_zc = static_cast<double>(spec.nz) * 0.5;

    for (std::int64_t z = 0; z < spec.nz; ++z) {
        const double cx = cx0 + cx_wob[static_cast<std::size_t>(z)];
        const double cy = cy0 + cy_wob[static_cast<std::size_t>(z)];
        const double rl = spec.lumen_radius + r_lum[static_cast<std::size_t>(z)];
        const double ro = spec.outer_radius + r_out[static_cast<std::size_t>(z)];
        const bool in_span = z >= spec.thrombus_zmin && z <= spec.thrombus_zmax;
        for (std::int64_t y = 0; y < spec.ny; ++y) {
            for (std::int64_t x = 0; x < spec.nx; ++x) {
                const double dx = static_cast<double>(x) - cx;
                const double dy = static_cast<double>(y) - cy;
                const double d = std::sqrt(dx * dx + dy * dy);
                double v = spec.intensity_background;
                bool mask_on = false;
                if (d <= rl) {
                    v = spec.intensity_lumen;
                } else if (in_span && d <= ro) {
                    v = spec.intensity_thrombus;
                    mask_on = true;
                } else if (spec.spine && static_cast<double>(y) >= spine_y0 &&
                           static_cast<double>(y) < spine_y0 + 11.0 && std::abs(static_cast<double>(x) - cx0) <= 8.0) {
                    v = spec.intensity_spine;
                } else if (spec.ellipsoids) {
                    const double ezn = (static_cast<double>(z) - ell_zc) / ell_c;
                    const double eyn = (static_cast<double>(y) - cy0) / ell_b;
                    const double exl = (static_cast<double>(x) - (cx0 - ell_dx)) / ell_a;
                    const double exr = (static_cast<double>(x) - (cx0 + ell_dx)) / ell_a;
                    if (exl * exl + eyn * eyn + ezn * ezn <= 1.0 || exr * exr + eyn * eyn + ezn * ezn <= 1.0)
                        v = spec.intensity_ellipsoid;
                }
                out.image.at(x, y, z) = v;
                out.mask.at(x, y, z) = mask_on ? 1.0 : 0.0;
            }
        }
    }
    if (spec.noise_std > 0) {
        Rng noise(derive_seed(spec.seed, "noise"));
        for (auto& v : out.image.voxels) v += noise.normal(0.0, spec.noise_std);
    }
    out.image.sx = out.mask.sx = spec.sx;
    out.image.sy = out.mask.sy = spec.sy;
    out.image.sz = out.mask.sz = spec.sz;

    Rng obs(derive_seed(spec.seed, "observers"));
    for (int o = 0; o < spec.observer_count; ++o) {
        auto jitter = [&](std::int64_t base) {
            const std::int64_t j = base + static_cast<std::int64_t>(std::llround(obs.normal(0.0, spec.observer_jitter_std)));
            return std::clamp<std::int64_t>(j, 0, spec.nz - 1);
        };
        std::int64_t a = jitter(spec.thrombus_zmin);
        std::int64_t b = jitter(spec.thrombus_zmax);
        if (a > b) std::swap(a, b);
        out.observers.emplace_back(a, b);
    }
    return out;
}

// Tight per-slice bounding boxes of a binary mask; half-open coordinates.
// Slices without foreground produce no box.
inline std::vector<BBox2D> mask_to_bboxes(const Volume& mask) {
    if (mask.value_kind != ValueKind::mask) throw std::invalid_argument("mask_to_bboxes: not a mask volume");
    std::vector<BBox2D> out;
    for (std::int64_t z = 0; z < mask.nz; ++z) {
        std::int64_t x0 = mask.nx, y0 = mask.ny, x1 = -1, y1 = -1;
        for (std::int64_t y = 0; y < mask.ny; ++y)
            for (std::int64_t x = 0; x < mask.nx; ++x)
                if (mask.at(x, y, z) != 0.0) {
                    x0 = std::min(x0, x);
                    y0 = std::min(y0, y);
                    x1 = std::max(x1, x);
                    y1 = std::max(y1, y);
                }
        if (x1 >= 0) {
            BBox2D b;
            b.z = z;
            b.xmin = static_cast<double>(x0);
            b.ymin = static_cast<double>(y0);
            b.xmax = static_cast<double>(x1 + 1);
            b.ymax = static_cast<double>(y1 + 1);
            out.push_back(b);
        }
    }
    return out;
}

// Cross-validation plan: seeded shuffle then round-robin fold assignment.
struct FoldPlan {
    int fold_count = 4;
    std::vector<int> assignment;  // dataset index -> fold

    std::vector<std::size_t> test_ids(int fold) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < assignment.size(); ++i)
            if (assignment[i] == fold) out.push_back(i);
        return out;
    }
    std::vector<std::size_t> train_ids(int fold) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < assignment.size(); ++i)
            if (assignment[i] != fold) out.push_back(i);
        return out;
    }
};

inline FoldPlan make_folds(std::size_t dataset_count, int fold_count, std::uint64_t seed) {
    if (fold_count < 1 || static_cast<std::size_t>(fold_count) > dataset_count)
        throw std::invalid_argument("make_folds: fold_count " + std::to_string(fold_count) +
                                    " exceeds dataset count " + std::to_string(dataset_count));
    std::vector<std::size_t> order(dataset_count);
    for (std::size_t i = 0; i < dataset_count; ++i) order[i] = i;
    Rng rng(derive_seed(seed, "folds"));
    shuffle(order, rng);
    FoldPlan plan;
    plan.fold_count = fold_count;
    plan.assignment.assign(dataset_count, 0);
    for (std::size_t i = 0; i < dataset_count; ++i)
        plan.assignment[order[i]] = static_cast<int>(i % static_cast<std::size_t>(fold_count));
    return plan;
}

// Seeded 10% validation split over training slice indices (at least one
// slice when the pool is non-empty).
inline std::vector<bool> validation_mask(std::size_t slice_count, std::uint64_t seed, double fraction = 0.1) {
    std::vector<std::size_t> order(slice_count);
    for (std::size_t i = 0; i < slice_count; ++i) order[i] = i;
    Rng rng(derive_seed(seed, "validation"));
    shuffle(order, rng);
    std::size_t take = static_cast<std::size_t>(std::floor(static_cast<double>(slice_count) * fraction));
    if (slice_count > 0 && take == 0) take = 1;
    std::vector<bool> is_val(slice_count, false);
    for (std::size_t i = 0; i < take; ++i) is_val[order[i]] = true;
    return is_val;
}

}  // namespace tseg
