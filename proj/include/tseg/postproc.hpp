#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "tseg/volume.hpp"

namespace tseg {

// 1-d Gaussian along z with sigma = 2 * spacing_z (in mm), i.e. 2 slice
// units; kernel truncated at 3 sigma and renormalized over the valid support
// at the borders. Output clipped to [0,1].
inline Volume smooth_z(const Volume& prob) {
    if (prob.sz <= 0) throw std::invalid_argument("smooth_z: spacing_z must be > 0");
    const double sigma = 2.0;  // slices; 2*spacing_z mm divided by spacing_z mm per slice
    const std::int64_t radius = static_cast<std::int64_t>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    for (std::int64_t i = -radius; i <= radius; ++i)
        kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * (static_cast<double>(i) / sigma) * (static_cast<double>(i) / sigma));
    const double ksum = std::accumulate(kernel.begin(), kernel.end(), 0.0);
    for (auto& w : kernel) w /= ksum;

    Volume out = prob;
    if (prob.nz == 1) return out;
    const std::int64_t plane = prob.nx * prob.ny;
    for (std::int64_t z = 0; z < prob.nz; ++z) {
        const std::int64_t lo = std::max<std::int64_t>(-radius, -z);
        const std::int64_t hi = std::min<std::int64_t>(radius, prob.nz - 1 - z);
        double wsum = 0.0;
        for (std::int64_t i = lo; i <= hi; ++i) wsum += kernel[static_cast<std::size_t>(i + radius)];
        for (std::int64_t p = 0; p < plane; ++p) {
            double acc = 0.0;
            for (std::int64_t i = lo; i <= hi; ++i)
                acc += kernel[static_cast<std::size_t>(i + radius)] *
                       prob.voxels[static_cast<std::size_t>((z + i) * plane + p)];
            out.voxels[static_cast<std::size_t>(z * plane + p)] = std::clamp(acc / wsum, 0.0, 1.0);
        }
    }
    return out;
}

struct KmeansResult {
    std::vector<double> centroids;         // ascending
    std::vector<std::int32_t> assignment;  // per value, index into centroids
    int k_used = 0;
    int iterations = 0;
    double objective = 0.0;  // sum of squared distances at termination
    std::string warning;
};

// Lloyd iterations with deterministic quantile initialization: centroid j
// starts at the (j+0.5)/k quantile of the sorted values. Empty clusters are
// re-seeded at the point farthest from its assigned centroid.
inline KmeansResult kmeans_1d(const std::vector<double>& values, int k = 6, int max_iters = 100) {
    if (k < 2) throw std::invalid_argument("kmeans_1d: k must be >= 2");
    if (values.empty()) throw std::invalid_argument("kmeans_1d: empty input");
    KmeansResult res;

    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    std::size_t distinct = sorted.empty() ? 0 : 1;
    for (std::size_t i = 1; i < sorted.size(); ++i)
        if (sorted[i] != sorted[i - 1]) ++distinct;
    if (distinct < static_cast<std::size_t>(k)) {
        res.warning = "kmeans_1d: only " + std::to_string(distinct) + " distinct values, reduced k from " +
                      std::to_string(k);
        k = static_cast<int>(distinct);
    }
    res.k_used = k;
    if (k == 1) {
        res.centroids = {sorted[0]};
        res.assignment.assign(values.size(), 0);
        return res;
    }

    const std::size_t n = values.size();
    std::vector<double> c(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) {
        std::size_t idx = static_cast<std::size_t>((static_cast<double>(j) + 0.5) * static_cast<double>(n) /
                                                   static_cast<double>(k));
        c[static_cast<std::size_t>(j)] = sorted[std::min(idx, n - 1)];
    }

    std::vector<std::int32_t> assign(n, 0);
    auto assign_all = [&]() {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            int best = 0;
            double bd = std::abs(values[i] - c[0]);
            for (int j = 1; j < k; ++j) {
                const double d = std::abs(values[i] - c[static_cast<std::size_t>(j)]);
                if (d < bd) {
                    bd = d;
                    best = j;
                }
            }
            if (assign[i] != best) {
                assign[i] = best;
                changed = true;
            }
        }
        return changed;
    };

    assign_all();
    for (int it = 0; it < max_iters; ++it) {
        // update step
        std::vector<double> sum(static_cast<std::size_t>(k), 0.0);
        std::vector<std::size_t> cnt(static_cast<std::size_t>(k), 0);
        for (std::size_t i = 0; i < n; ++i) {
            sum[static_cast<std::size_t>(assign[i])] += values[i];
            ++cnt[static_cast<std::size_t>(assign[i])];
        }
        for (int j = 0; j < k; ++j)
            if (cnt[static_cast<std::size_t>(j)] > 0)
                c[static_cast<std::size_t>(j)] = sum[static_cast<std::size_t>(j)] / static_cast<double>(cnt[static_cast<std::size_t>(j)]);
        // re-seed empties at the point farthest from its assigned centroid
        for (int j = 0; j < k; ++j) {
            if (cnt[static_cast<std::size_t>(j)] > 0) continue;
            std::size_t far = 0;
            double fd = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double d = std::abs(values[i] - c[static_cast<std::size_t>(assign[i])]);
                if (d > fd) {
                    fd = d;
                    far = i;
                }
            }
            c[static_cast<std::size_t>(j)] = values[far];
        }
        res.iterations = it + 1;
        if (!assign_all()) break;
    }

    // ascending centroid order with assignment remap
    std::vector<int> order(static_cast<std::size_t>(k));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return c[static_cast<std::size_t>(a)] < c[static_cast<std::size_t>(b)]; });
    std::vector<int> rank(static_cast<std::size_t>(k));
    res.centroids.resize(static_cast<std::size_t>(k));
    for (int r = 0; r < k; ++r) {
        rank[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] = r;
        res.centroids[static_cast<std::size_t>(r)] = c[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])];
    }
    res.assignment.resize(n);
    for (std::size_t i = 0; i < n; ++i) res.assignment[i] = static_cast<std::int32_t>(rank[static_cast<std::size_t>(assign[i])]);
    for (std::size_t i = 0; i < n; ++i) {
        const double d = values[i] - res.centroids[static_cast<std::size_t>(res.assignment[i])];
        res.objective += d * d;
    }
    return res;
}

enum class BinarizePolicy { drop_lowest, keep_highest };

inline BinarizePolicy binarize_policy_from_string(const std::string& s) {
    if (s == "drop_lowest") return BinarizePolicy::drop_lowest;
    if (s == "keep_highest") return BinarizePolicy::keep_highest;
    throw std::invalid_argument("unknown binarize policy '" + s + "'");
}

// drop_lowest: voxels of the lowest-centroid cluster become background, all
// others foreground. keep_highest: only the highest-centroid cluster is
// foreground. With a single cluster both policies mark everything foreground
// (flagged by the caller-visible warning in KmeansResult).
inline Volume binarize_clusters(const KmeansResult& km, const Volume& like, BinarizePolicy policy) {
    if (km.assignment.size() != like.voxels.size())
        throw std::invalid_argument("binarize_clusters: assignment does not match the volume");
    Volume out(like.nx, like.ny, like.nz, ValueKind::mask);
    out.sx = like.sx;
    out.sy = like.sy;
    out.sz = like.sz;
    out.ox = like.ox;
    out.oy = like.oy;
    out.oz = like.oz;
    const std::int32_t top = static_cast<std::int32_t>(km.k_used - 1);
    for (std::size_t i = 0; i < km.assignment.size(); ++i) {
        const bool fg = km.k_used == 1 ||
                        (policy == BinarizePolicy::drop_lowest ? km.assignment[i] > 0 : km.assignment[i] == top);
        out.voxels[i] = fg ? 1.0 : 0.0;
    }
    return out;
}

// Keeps the largest 6- or 26-connected foreground component; ties broken by
// the component whose seed voxel comes first in (z,y,x) scan order.
inline Volume largest_component(const Volume& mask, int connectivity = 26) {
    if (connectivity != 6 && connectivity != 26)
        throw std::invalid_argument("largest_component: connectivity must be 6 or 26");
    if (mask.value_kind != ValueKind::mask) throw std::invalid_argument("largest_component: not a mask");
    const std::int64_t nx = mask.nx, ny = mask.ny, nz = mask.nz;
    std::vector<std::int32_t> label(mask.voxels.size(), 0);
    std::int32_t next = 0;
    std::vector<std::int64_t> sizes;
    std::vector<std::size_t> stack;

    std::vector<std::array<int, 3>> offsets;
    for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                if (dx == 0 && dy == 0 && dz == 0) continue;
                if (connectivity == 6 && std::abs(dx) + std::abs(dy) + std::abs(dz) != 1) continue;
                offsets.push_back({dx, dy, dz});
            }

    for (std::int64_t z = 0; z < nz; ++z)
        for (std::int64_t y = 0; y < ny; ++y)
            for (std::int64_t x = 0; x < nx; ++x) {
                const std::size_t u = mask.idx(x, y, z);
                if (mask.voxels[u] == 0.0 || label[u] != 0) continue;
                ++next;
                std::int64_t count = 0;
                label[u] = next;
                stack.assign(1, u);
                while (!stack.empty()) {
                    const std::size_t cur = stack.back();
                    stack.pop_back();
                    ++count;
                    const std::int64_t cz = static_cast<std::int64_t>(cur) / (nx * ny);
                    const std::int64_t cy = (static_cast<std::int64_t>(cur) / nx) % ny;
                    const std::int64_t cx = static_cast<std::int64_t>(cur) % nx;
                    for (const auto& o : offsets) {
                        const std::int64_t qx = cx + o[0], qy = cy + o[1], qz = cz + o[2];
                        if (qx < 0 || qy < 0 || qz < 0 || qx >= nx || qy >= ny || qz >= nz) continue;
                        const std::size_t q = mask.idx(qx, qy, qz);
                        if (mask.voxels[q] != 0.0 && label[q] == 0) {
                            label[q] = next;
                            stack.push_back(q);
                        }
                    }
                }
                sizes.push_back(count);
            }

    Volume out = mask;
    if (next == 0) return out;  // empty input stays empty
    std::int32_t best = 1;
    for (std::int32_t l = 2; l <= next; ++l)
        if (sizes[static_cast<std::size_t>(l - 1)] > sizes[static_cast<std::size_t>(best - 1)]) best = l;
    for (std::size_t i = 0; i < out.voxels.size(); ++i) out.voxels[i] = label[i] == best ? 1.0 : 0.0;
    return out;
}

}  // namespace tseg
