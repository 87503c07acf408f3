#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tseg/volume.hpp"

namespace tseg {

// Overlap measures between a source mask S (the automatic segmentation) and
// a target mask T (the ground truth). Undefined ratios (empty T or S) are
// reported as NaN with a diagnostic.
struct MetricsReport {
    double total_overlap = 0;  // |S n T| / |T|
    double jaccard = 0;        // |S n T| / |S u T|
    double dice = 0;           // 2|S n T| / (|S| + |T|)
    double fn_rate = 0;        // |T \ S| / |T|
    double fp_rate = 0;        // |S \ T| / |S|
    double relative_volume_diff = 0;  // ||S| - |T|| / |T|
    std::int64_t source_voxels = 0, target_voxels = 0, intersection_voxels = 0;
    double voxel_volume_mm3 = 1.0;
    std::string diagnostic;
};

inline MetricsReport overlap_report(const Volume& source_mask, const Volume& truth_mask) {
    if (source_mask.nx != truth_mask.nx || source_mask.ny != truth_mask.ny || source_mask.nz != truth_mask.nz)
        throw std::invalid_argument("overlap_report: mask extents differ");
    MetricsReport r;
    r.voxel_volume_mm3 = truth_mask.voxel_volume_mm3();
    for (std::size_t i = 0; i < source_mask.voxels.size(); ++i) {
        const bool s = source_mask.voxels[i] != 0.0;
        const bool t = truth_mask.voxels[i] != 0.0;
        r.source_voxels += s;
        r.target_voxels += t;
        r.intersection_voxels += s && t;
    }
    const double S = static_cast<double>(r.source_voxels);
    const double T = static_cast<double>(r.target_voxels);
    const double I = static_cast<double>(r.intersection_voxels);
    const double U = S + T - I;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    if (r.target_voxels == 0) {
        r.total_overlap = r.fn_rate = r.relative_volume_diff = nan;
        r.diagnostic += "empty truth mask: total_overlap/fn/rvd undefined; ";
    } else {
        r.total_overlap = I / T;
        r.fn_rate = (T - I) / T;
        r.relative_volume_diff = std::abs(S - T) / T;
    }
    if (r.source_voxels == 0) {
        r.fp_rate = nan;
        r.diagnostic += "empty source mask: fp undefined; ";
    } else {
        r.fp_rate = (S - I) / S;
    }
    r.jaccard = U > 0 ? I / U : nan;
    r.dice = (S + T) > 0 ? 2.0 * I / (S + T) : nan;
    if (U == 0) r.diagnostic += "both masks empty: jaccard/dice undefined; ";
    return r;
}

// Ratio of truth slices missed by the predicted z interval (inclusive
// intervals). An absent prediction counts every truth slice as missed.
inline double detection_slice_fnr(bool have_prediction, std::int64_t pred_zmin, std::int64_t pred_zmax,
                                  std::int64_t truth_zmin, std::int64_t truth_zmax) {
    if (truth_zmin > truth_zmax) throw std::invalid_argument("detection_slice_fnr: empty truth interval");
    const std::int64_t total = truth_zmax - truth_zmin + 1;
    if (!have_prediction) return 1.0;
    std::int64_t covered = std::min(pred_zmax, truth_zmax) - std::max(pred_zmin, truth_zmin) + 1;
    covered = std::max<std::int64_t>(0, covered);
    return static_cast<double>(total - covered) / static_cast<double>(total);
}

struct ObserverStats {
    double initial_mean = 0, initial_std = 0;
    double final_mean = 0, final_std = 0;
    std::int64_t reference_zmin = 0, reference_zmax = 0;  // mean interval, rounded
};

inline std::pair<double, double> mean_sample_std(const std::vector<double>& xs) {
    const double n = static_cast<double>(xs.size());
    double mean = 0;
    for (double x : xs) mean += x;
    mean /= n;
    double ss = 0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    const double sd = xs.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    return {mean, sd};
}

// Inter-observer variability of the initial and final slice selections,
// as mean and sample standard deviation (n-1). The FNR reference interval is
// the per-slice mean rounded to the nearest slice.
inline ObserverStats observer_stats(const std::vector<std::pair<std::int64_t, std::int64_t>>& selections) {
    if (selections.size() < 2)
        throw std::invalid_argument("observer_stats: needs at least 2 observers, got " +
                                    std::to_string(selections.size()));
    std::vector<double> first, last;
    for (const auto& [a, b] : selections) {
        first.push_back(static_cast<double>(a));
        last.push_back(static_cast<double>(b));
    }
    ObserverStats st;
    std::tie(st.initial_mean, st.initial_std) = mean_sample_std(first);
    std::tie(st.final_mean, st.final_std) = mean_sample_std(last);
    st.reference_zmin = static_cast<std::int64_t>(std::llround(st.initial_mean));
    st.reference_zmax = static_cast<std::int64_t>(std::llround(st.final_mean));
    return st;
}

struct AggregateReport {
    // order: total_overlap, jaccard, dice, fn, fp, rvd
    std::vector<double> mean{0, 0, 0, 0, 0, 0};
    std::vector<double> stddev{0, 0, 0, 0, 0, 0};
    std::size_t count = 0;
};

inline AggregateReport aggregate(const std::vector<MetricsReport>& reports) {
    if (reports.empty()) throw std::invalid_argument("aggregate: no reports");
    AggregateReport agg;
    agg.count = reports.size();
    auto field = [](const MetricsReport& r, int i) {
        switch (i) {
            case 0: return r.total_overlap;
            case 1: return r.jaccard;
            case 2: return r.dice;
            case 3: return r.fn_rate;
            case 4: return r.fp_rate;
            default: return r.relative_volume_diff;
        }
    };
    for (int i = 0; i < 6; ++i) {
        std::vector<double> xs;
        xs.reserve(reports.size());
        for (const auto& r : reports) xs.push_back(field(r, i));
        std::tie(agg.mean[static_cast<std::size_t>(i)], agg.stddev[static_cast<std::size_t>(i)]) = mean_sample_std(xs);
    }
    return agg;
}

inline const char* metric_columns() { return "total_overlap,jaccard,dice,fn,fp,rvd"; }

inline void reports_to_csv(const std::string& path, const std::vector<std::string>& ids,
                           const std::vector<MetricsReport>& reports) {
    if (ids.size() != reports.size()) throw std::invalid_argument("reports_to_csv: id/report count mismatch");
    std::ofstream os(path);
    if (!os) throw std::runtime_error("reports_to_csv: cannot write " + path);
    os << "dataset," << metric_columns() << "\n";
    char buf[256];
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const auto& r = reports[i];
        std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", ids[i].c_str(),
                      r.total_overlap, r.jaccard, r.dice, r.fn_rate, r.fp_rate, r.relative_volume_diff);
        os << buf;
    }
}

}  // namespace tseg
