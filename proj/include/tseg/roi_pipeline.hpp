#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "tseg/detection.hpp"
#include "tseg/volume.hpp"

namespace tseg {

// Axis-aligned box on one slice; x/y are half-open pixel intervals [min,max).
struct BBox2D {
    std::int64_t z = 0;
    double xmin = 0, ymin = 0, xmax = 0, ymax = 0;
    double score = 1.0;

    double area() const { return std::max(0.0, xmax - xmin) * std::max(0.0, ymax - ymin); }
};

inline double iou(const BBox2D& a, const BBox2D& b) {
    const double ix = std::max(0.0, std::min(a.xmax, b.xmax) - std::max(a.xmin, b.xmin));
    const double iy = std::max(0.0, std::min(a.ymax, b.ymax) - std::max(a.ymin, b.ymin));
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    return uni > 0 ? inter / uni : 0.0;
}

// 3-d region of interest; x/y half-open pixel bounds, z an inclusive slice range.
struct Roi3D {
    std::int64_t zmin = 0, zmax = 0;
    std::int64_t xmin = 0, xmax = 0, ymin = 0, ymax = 0;
    std::int64_t src_nx = 0, src_ny = 0, src_nz = 0;
    double sx = 1.0, sy = 1.0, sz = 1.0;
};

// Labels one slice's boxes onto the coverage grid: a cell is covered when its
// rectangle intersects a box; covered cells carry that box's corners relative
// to the cell origin. When several boxes touch a cell the one with the larger
// overlap wins (first in input order on ties).
inline DetectionTargets rasterize_grid_labels(const std::vector<BBox2D>& boxes, std::int64_t cell_size,
                                              std::int64_t width, std::int64_t height) {
    if (width % cell_size != 0 || height % cell_size != 0)
        throw std::invalid_argument("rasterize_grid_labels: extents not divisible by cell size");
    DetectionTargets t(height / cell_size, width / cell_size, cell_size);
    for (std::int64_t gy = 0; gy < t.grid_h; ++gy) {
        for (std::int64_t gx = 0; gx < t.grid_w; ++gx) {
            const double cx0 = static_cast<double>(gx * cell_size);
            const double cy0 = static_cast<double>(gy * cell_size);
            const double cx1 = cx0 + static_cast<double>(cell_size);
            const double cy1 = cy0 + static_cast<double>(cell_size);
            double best_overlap = 0.0;
            const BBox2D* best = nullptr;
            for (const auto& b : boxes) {
                const double ox = std::max(0.0, std::min(b.xmax, cx1) - std::max(b.xmin, cx0));
                const double oy = std::max(0.0, std::min(b.ymax, cy1) - std::max(b.ymin, cy0));
                if (ox * oy > best_overlap) {
                    best_overlap = ox * oy;
                    best = &b;
                }
            }
            if (best) {
                const std::size_t u = t.at(gy, gx);
                t.coverage[u] = 1;
                t.x1[u] = static_cast<real_t>(best->xmin - cx0);
                t.y1[u] = static_cast<real_t>(best->ymin - cy0);
                t.x2[u] = static_cast<real_t>(best->xmax - cx0);
                t.y2[u] = static_cast<real_t>(best->ymax - cy0);
            }
        }
    }
    return t;
}

// Decodes thresholded cells into rectangles and greedily groups rectangles
// whose IoU against a group's running representative reaches `group_iou`.
// Each group is replaced by its coverage-weighted mean rectangle with
// score = max member coverage. A final fix-up pass ejects members that ended
// up below `group_iou` against their group mean, so every reported input
// rectangle keeps IoU >= group_iou with its representative.
inline std::vector<BBox2D> decode_candidates(const DetectionTargets& pred, double threshold,
                                             std::int64_t z = 0, double group_iou = 0.5) {
    if (!(threshold > 0.0 && threshold < 1.0))
        throw std::invalid_argument("decode_candidates: threshold must lie in (0,1)");
    std::vector<BBox2D> cand;
    for (std::int64_t gy = 0; gy < pred.grid_h; ++gy)
        for (std::int64_t gx = 0; gx < pred.grid_w; ++gx) {
            const std::size_t u = pred.at(gy, gx);
            if (pred.coverage[u] < threshold) continue;
            BBox2D b;
            b.z = z;
            b.xmin = static_cast<double>(gx * pred.cell_size) + pred.x1[u];
            b.ymin = static_cast<double>(gy * pred.cell_size) + pred.y1[u];
            b.xmax = static_cast<double>(gx * pred.cell_size) + pred.x2[u];
            b.ymax = static_cast<double>(gy * pred.cell_size) + pred.y2[u];
            b.score = pred.coverage[u];
            if (b.xmax > b.xmin && b.ymax > b.ymin) cand.push_back(b);
        }
    std::stable_sort(cand.begin(), cand.end(), [](const BBox2D& a, const BBox2D& b) { return a.score > b.score; });

    struct Group {
        std::vector<std::size_t> members;
        BBox2D rep;
        double wsum = 0.0;
        double max_cov = 0.0;
    };
    std::vector<Group> groups;
    auto weighted_mean = [&](const std::vector<std::size_t>& ms) {
        BBox2D r = cand[ms[0]];
        double w = 0.0;
        r.xmin = r.ymin = r.xmax = r.ymax = 0.0;
        double max_cov = 0.0;
        for (std::size_t i : ms) {
            const BBox2D& b = cand[i];
            r.xmin += b.score * b.xmin;
            r.ymin += b.score * b.ymin;
            r.xmax += b.score * b.xmax;
            r.ymax += b.score * b.ymax;
            w += b.score;
            max_cov = std::max(max_cov, b.score);
        }
        r.xmin /= w;
        r.ymin /= w;
        r.xmax /= w;
        r.ymax /= w;
        r.score = max_cov;
        return r;
    };

    for (std::size_t i = 0; i < cand.size(); ++i) {
        bool joined = false;
        for (auto& g : groups) {
            if (iou(cand[i], g.rep) >= group_iou) {
                g.members.push_back(i);
                g.rep = weighted_mean(g.members);
                joined = true;
                break;
            }
        }
        if (!joined) groups.push_back({{i}, cand[i], cand[i].score, cand[i].score});
    }

    // stabilise: every member must hold group_iou against the final mean
    bool changed = true;
    while (changed) {
        changed = false;
        for (std::size_t gi = 0; gi < groups.size(); ++gi) {
            auto& g = groups[gi];
            if (g.members.size() < 2) continue;
            for (std::size_t mi = 0; mi < g.members.size(); ++mi) {
                if (iou(cand[g.members[mi]], g.rep) < group_iou) {
                    const std::size_t moved = g.members[mi];
                    g.members.erase(g.members.begin() + static_cast<std::ptrdiff_t>(mi));
                    g.rep = weighted_mean(g.members);
                    groups.push_back({{moved}, cand[moved], cand[moved].score, cand[moved].score});
                    changed = true;
                    break;
                }
            }
        }
    }

    std::vector<BBox2D> out;
    out.reserve(groups.size());
    for (auto& g : groups) out.push_back(g.rep);
    std::stable_sort(out.begin(), out.end(), [](const BBox2D& a, const BBox2D& b) { return a.score > b.score; });
    return out;
}

// The sliding-window z rule: an ROI opens once a run of `run_length`
// consecutive candidate slices exists; gaps shorter than `run_length` do not
// close it, a gap of `run_length` (or the end of the stack) does. Intervals
// are inclusive and trimmed to candidate slices at both ends.
inline std::vector<std::pair<std::int64_t, std::int64_t>> reconstruct_roi_z(const std::vector<bool>& present,
                                                                            std::int64_t run_length = 10) {
    if (run_length < 1) throw std::invalid_argument("reconstruct_roi_z: run_length must be >= 1");
    // maximal candidate runs
    std::vector<std::pair<std::int64_t, std::int64_t>> runs;
    const std::int64_t n = static_cast<std::int64_t>(present.size());
    for (std::int64_t i = 0; i < n;) {
        if (!present[static_cast<std::size_t>(i)]) {
            ++i;
            continue;
        }
        std::int64_t j = i;
        while (j + 1 < n && present[static_cast<std::size_t>(j + 1)]) ++j;
        runs.emplace_back(i, j);
        i = j + 1;
    }
    // bridge gaps shorter than run_length
    std::vector<std::pair<std::int64_t, std::int64_t>> bridged;
    std::vector<std::int64_t> longest_run;  // longest original run inside each bridged group
    for (const auto& r : runs) {
        if (!bridged.empty() && r.first - bridged.back().second - 1 < run_length) {
            bridged.back().second = r.second;
            longest_run.back() = std::max(longest_run.back(), r.second - r.first + 1);
        } else {
            bridged.push_back(r);
            longest_run.push_back(r.second - r.first + 1);
        }
    }
    std::vector<std::pair<std::int64_t, std::int64_t>> out;
    for (std::size_t i = 0; i < bridged.size(); ++i)
        if (longest_run[i] >= run_length) out.push_back(bridged[i]);
    return out;
}

// Expands x/y bounds by a physical margin per border and clamps to the
// source extents. Margins convert to pixels by rounding to nearest.
inline Roi3D expand_and_clamp(const Roi3D& roi, double margin_x_mm = 110.0, double margin_y_mm = 80.0) {
    if (roi.sx <= 0 || roi.sy <= 0) throw std::invalid_argument("expand_and_clamp: spacing must be > 0");
    Roi3D r = roi;
    const std::int64_t mx = static_cast<std::int64_t>(std::llround(margin_x_mm / roi.sx));
    const std::int64_t my = static_cast<std::int64_t>(std::llround(margin_y_mm / roi.sy));
    r.xmin = std::max<std::int64_t>(0, roi.xmin - mx);
    r.xmax = std::min<std::int64_t>(roi.src_nx, roi.xmax + mx);
    r.ymin = std::max<std::int64_t>(0, roi.ymin - my);
    r.ymax = std::min<std::int64_t>(roi.src_ny, roi.ymax + my);
    r.zmin = std::max<std::int64_t>(0, roi.zmin);
    r.zmax = std::min<std::int64_t>(roi.src_nz - 1, roi.zmax);
    return r;
}

// Crops each ROI slice and resamples it to target_xy x target_xy with
// corner-aligned bilinear interpolation; slice count is unchanged and the
// spacing metadata is rescaled to keep the physical span.
inline Volume resample_roi(const Volume& vol, const Roi3D& roi, std::int64_t target_xy = 256) {
    const std::int64_t cw = roi.xmax - roi.xmin;
    const std::int64_t ch = roi.ymax - roi.ymin;
    const std::int64_t cz = roi.zmax - roi.zmin + 1;
    if (cw < 1 || ch < 1 || cz < 1 || target_xy < 1)
        throw std::invalid_argument("resample_roi: degenerate region of interest");
    if (roi.xmin < 0 || roi.ymin < 0 || roi.zmin < 0 || roi.xmax > vol.nx || roi.ymax > vol.ny ||
        roi.zmax >= vol.nz)
        throw std::invalid_argument("resample_roi: region exceeds volume bounds");
    Volume out(target_xy, target_xy, cz, vol.value_kind == ValueKind::mask ? ValueKind::mask : vol.value_kind);
    auto scale = [](std::int64_t src, std::int64_t dst) {
        return dst > 1 ? static_cast<double>(src - 1) / static_cast<double>(dst - 1) : 0.0;
    };
    const double fx = scale(cw, target_xy);
    const double fy = scale(ch, target_xy);
    out.sx = vol.sx * (target_xy > 1 ? static_cast<double>(cw - 1) / static_cast<double>(target_xy - 1) : cw);
    out.sy = vol.sy * (target_xy > 1 ? static_cast<double>(ch - 1) / static_cast<double>(target_xy - 1) : ch);
    out.sz = vol.sz;
    out.ox = vol.ox + static_cast<double>(roi.xmin) * vol.sx;
    out.oy = vol.oy + static_cast<double>(roi.ymin) * vol.sy;
    out.oz = vol.oz + static_cast<double>(roi.zmin) * vol.sz;
    for (std::int64_t z = 0; z < cz; ++z) {
        for (std::int64_t y = 0; y < target_xy; ++y) {
            const double syf = static_cast<double>(y) * fy;
            const std::int64_t y0 = std::min<std::int64_t>(static_cast<std::int64_t>(syf), ch - 1);
            const std::int64_t y1 = std::min<std::int64_t>(y0 + 1, ch - 1);
            const double wy = syf - static_cast<double>(y0);
            for (std::int64_t x = 0; x < target_xy; ++x) {
                const double sxf = static_cast<double>(x) * fx;
                const std::int64_t x0 = std::min<std::int64_t>(static_cast<std::int64_t>(sxf), cw - 1);
                const std::int64_t x1 = std::min<std::int64_t>(x0 + 1, cw - 1);
                const double wx = sxf - static_cast<double>(x0);
                const double v00 = vol.at(roi.xmin + x0, roi.ymin + y0, roi.zmin + z);
                const double v01 = vol.at(roi.xmin + x1, roi.ymin + y0, roi.zmin + z);
                const double v10 = vol.at(roi.xmin + x0, roi.ymin + y1, roi.zmin + z);
                const double v11 = vol.at(roi.xmin + x1, roi.ymin + y1, roi.zmin + z);
                double v = (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
                if (out.value_kind == ValueKind::mask) v = v > 0.5 ? 1.0 : 0.0;
                out.at(x, y, z) = v;
            }
        }
    }
    return out;
}

// Nearest-neighbour inverse of resample_roi for masks: paints the ROI-space
// mask back onto the source grid, zero outside the region.
inline Volume mask_to_source(const Volume& roi_mask, const Roi3D& roi) {
    Volume out(roi.src_nx, roi.src_ny, roi.src_nz, ValueKind::mask);
    const std::int64_t cw = roi.xmax - roi.xmin;
    const std::int64_t ch = roi.ymax - roi.ymin;
    auto scale = [](std::int64_t src, std::int64_t dst) {
        return src > 1 ? static_cast<double>(dst - 1) / static_cast<double>(src - 1) : 0.0;
    };
    const double fx = scale(cw, roi_mask.nx);
    const double fy = scale(ch, roi_mask.ny);
    for (std::int64_t z = roi.zmin; z <= roi.zmax; ++z) {
        if (z - roi.zmin >= roi_mask.nz) break;
        for (std::int64_t y = roi.ymin; y < roi.ymax; ++y) {
            const std::int64_t my = std::min<std::int64_t>(
                roi_mask.ny - 1, static_cast<std::int64_t>(std::llround(static_cast<double>(y - roi.ymin) * fy)));
            for (std::int64_t x = roi.xmin; x < roi.xmax; ++x) {
                const std::int64_t mx = std::min<std::int64_t>(
                    roi_mask.nx - 1,
                    static_cast<std::int64_t>(std::llround(static_cast<double>(x - roi.xmin) * fx)));
                out.at(x, y, z) = roi_mask.at(mx, my, z - roi.zmin);
            }
        }
    }
    return out;
}

}  // namespace tseg
