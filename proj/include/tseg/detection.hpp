#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "tseg/tensor.hpp"

namespace tseg {

// Per-cell grid labels for one 2-d slice: coverage plus the two bounding-box
// corners expressed relative to each cell's origin. Cells with coverage 0
// carry zero corner targets and are excluded from the corner term.
struct DetectionTargets {
    std::int64_t grid_h = 0, grid_w = 0;
    std::int64_t cell_size = 16;
    std::vector<real_t> coverage;            // grid_h*grid_w
    std::vector<real_t> x1, y1, x2, y2;      // corner coordinates per cell

    DetectionTargets() = default;
    DetectionTargets(std::int64_t gh, std::int64_t gw, std::int64_t cell)
        : grid_h(gh),
          grid_w(gw),
          cell_size(cell),
          coverage(static_cast<std::size_t>(gh * gw), 0),
          x1(coverage.size(), 0),
          y1(coverage.size(), 0),
          x2(coverage.size(), 0),
          y2(coverage.size(), 0) {}

    std::int64_t cells() const { return grid_h * grid_w; }
    std::size_t at(std::int64_t gy, std::int64_t gx) const {
        return static_cast<std::size_t>(gy * grid_w + gx);
    }
};

struct DetectionLossGrads {
    std::vector<real_t> d_coverage;
    std::vector<real_t> d_x1, d_y1, d_x2, d_y2;
};

// F = (1/2n) sum_i [ |c_i^g - c_i^p|^2 + (|P1_i^g - P1_i^p| + |P2_i^g - P2_i^p|) ]
// where |P - Q| is the sum of absolute coordinate differences and the corner
// term only contributes for cells with ground-truth coverage 1. Subgradient
// at corner ties is 0.
inline real_t detection_loss(const DetectionTargets& truth, const DetectionTargets& pred,
                             DetectionLossGrads* grads = nullptr) {
    if (truth.grid_h != pred.grid_h || truth.grid_w != pred.grid_w)
        throw std::invalid_argument("detection_loss: grid " + std::to_string(pred.grid_h) + "x" +
                                    std::to_string(pred.grid_w) + " does not match truth " +
                                    std::to_string(truth.grid_h) + "x" + std::to_string(truth.grid_w));
    const std::int64_t n = truth.cells();
    if (n == 0) throw std::invalid_argument("detection_loss: empty grid");
    const real_t inv2n = real_t(1) / (real_t(2) * static_cast<real_t>(n));
    if (grads) {
        grads->d_coverage.assign(static_cast<std::size_t>(n), 0);
        grads->d_x1.assign(static_cast<std::size_t>(n), 0);
        grads->d_y1.assign(static_cast<std::size_t>(n), 0);
        grads->d_x2.assign(static_cast<std::size_t>(n), 0);
        grads->d_y2.assign(static_cast<std::size_t>(n), 0);
    }
    real_t loss = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        const std::size_t u = static_cast<std::size_t>(i);
        const real_t dc = truth.coverage[u] - pred.coverage[u];
        loss += dc * dc * inv2n;
        if (grads) grads->d_coverage[u] = -2 * dc * inv2n;
        if (truth.coverage[u] == real_t(1)) {
            const real_t d[4] = {truth.x1[u] - pred.x1[u], truth.y1[u] - pred.y1[u],
                                 truth.x2[u] - pred.x2[u], truth.y2[u] - pred.y2[u]};
            for (real_t v : d) loss += std::abs(v) * inv2n;
            if (grads) {
                auto sg = [&](real_t v) { return v > 0 ? -inv2n : v < 0 ? inv2n : real_t(0); };
                grads->d_x1[u] = sg(d[0]);
                grads->d_y1[u] = sg(d[1]);
                grads->d_x2[u] = sg(d[2]);
                grads->d_y2[u] = sg(d[3]);
            }
        }
    }
    return loss;
}

// Views a detector's head outputs ([1,1,G,G] coverage and [1,4,G,G] corners)
// as DetectionTargets for loss evaluation and decoding.
inline DetectionTargets targets_from_maps(const Tensor& coverage, const Tensor& bbox, std::int64_t cell_size) {
    require_4d(coverage, "targets_from_maps coverage");
    require_4d(bbox, "targets_from_maps bbox");
    if (bbox.shape[1] != 4 || coverage.shape[1] != 1 || bbox.shape[2] != coverage.shape[2] ||
        bbox.shape[3] != coverage.shape[3])
        throw std::invalid_argument("targets_from_maps: expected [1,1,G,G] coverage and [1,4,G,G] corners");
    DetectionTargets t(coverage.shape[2], coverage.shape[3], cell_size);
    const std::int64_t plane = t.cells();
    for (std::int64_t i = 0; i < plane; ++i) {
        const std::size_t u = static_cast<std::size_t>(i);
        t.coverage[u] = coverage.data[u];
        t.x1[u] = bbox.data[static_cast<std::size_t>(0 * plane + i)];
        t.y1[u] = bbox.data[static_cast<std::size_t>(1 * plane + i)];
        t.x2[u] = bbox.data[static_cast<std::size_t>(2 * plane + i)];
        t.y2[u] = bbox.data[static_cast<std::size_t>(3 * plane + i)];
    }
    return t;
}

// Packs per-cell gradients back into head-shaped tensors for Graph::backward.
inline std::pair<Tensor, Tensor> maps_from_grads(const DetectionLossGrads& g, std::int64_t gh,
                                                 std::int64_t gw) {
    Tensor dcov({1, 1, gh, gw});
    Tensor dbox({1, 4, gh, gw});
    const std::int64_t plane = gh * gw;
    for (std::int64_t i = 0; i < plane; ++i) {
        const std::size_t u = static_cast<std::size_t>(i);
        dcov.data[u] = g.d_coverage[u];
        dbox.data[static_cast<std::size_t>(0 * plane + i)] = g.d_x1[u];
        dbox.data[static_cast<std::size_t>(1 * plane + i)] = g.d_y1[u];
        dbox.data[static_cast<std::size_t>(2 * plane + i)] = g.d_x2[u];
        dbox.data[static_cast<std::size_t>(3 * plane + i)] = g.d_y2[u];
    }
    return {std::move(dcov), std::move(dbox)};
}

}  // namespace tseg
