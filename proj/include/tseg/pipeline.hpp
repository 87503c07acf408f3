#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tseg/metrics.hpp"
#include "tseg/nets.hpp"
#include "tseg/optim.hpp"
#include "tseg/phantom.hpp"
#include "tseg/png.hpp"
#include "tseg/postproc.hpp"
#include "tseg/roi_pipeline.hpp"

namespace tseg {

using json = nlohmann::json;

// Stage-independent pipeline knobs. The desk defaults keep the whole
// pipeline CPU-sized; resample_xy 256 mirrors the full-size setup.
struct PipelineConfig {
    Scale scale = Scale::desk;
    double input_scale = 0.01;  // intensity -> network input units
    double margin_x_mm = 110.0;
    double margin_y_mm = 80.0;
    std::int64_t roi_z_margin = 2;
    std::int64_t resample_xy = 64;
    std::int64_t cell_size = 16;
    double coverage_threshold = 0.5;
    std::int64_t run_length = 10;
    BinarizePolicy policy = BinarizePolicy::drop_lowest;
    int connectivity = 26;
    int kmeans_k = 6;
    bool smooth = true;
    int num_classes = 2;
};

struct Dataset {
    std::string id;
    Volume image;
    Volume mask;
    std::vector<std::pair<std::int64_t, std::int64_t>> observers;
};

// ----------------------------- dataset I/O ---------------------------------

inline void save_dataset(const Dataset& d, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    write_volume(d.image, (fs::path(dir) / (d.id + ".mhd")).string());
    write_volume(d.mask, (fs::path(dir) / (d.id + "_mask.mhd")).string());
    json j;
    j["observers"] = json::array();
    for (const auto& [a, b] : d.observers) j["observers"].push_back({a, b});
    std::ofstream os(fs::path(dir) / (d.id + "_observers.json"));
    os << j.dump(2) << "\n";
}

inline Dataset load_dataset(const std::string& dir, const std::string& id) {
    namespace fs = std::filesystem;
    Dataset d;
    d.id = id;
    d.image = read_volume((fs::path(dir) / (id + ".mhd")).string());
    d.mask = read_volume((fs::path(dir) / (id + "_mask.mhd")).string());
    std::ifstream is(fs::path(dir) / (id + "_observers.json"));
    if (is) {
        json j;
        is >> j;
        for (const auto& e : j["observers"]) d.observers.emplace_back(e[0].get<std::int64_t>(), e[1].get<std::int64_t>());
    }
    return d;
}

inline std::vector<std::string> list_dataset_ids(const std::string& dir) {
    namespace fs = std::filesystem;
    std::vector<std::string> ids;
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        const std::string suffix = "_mask.mhd";
        if (name.size() > suffix.size() && name.substr(name.size() - suffix.size()) == suffix)
            ids.push_back(name.substr(0, name.size() - suffix.size()));
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

inline std::vector<Dataset> load_dataset_dir(const std::string& dir) {
    std::vector<Dataset> out;
    for (const auto& id : list_dataset_ids(dir)) out.push_back(load_dataset(dir, id));
    if (out.empty()) throw std::runtime_error("no datasets (*_mask.mhd pairs) under " + dir);
    return out;
}

// ------------------------------ ROI helpers --------------------------------

inline Roi3D mask_tight_roi(const Volume& mask) {
    Roi3D r;
    r.src_nx = mask.nx;
    r.src_ny = mask.ny;
    r.src_nz = mask.nz;
    r.sx = mask.sx;
    r.sy = mask.sy;
    r.sz = mask.sz;
    std::int64_t x0 = mask.nx, y0 = mask.ny, z0 = mask.nz, x1 = -1, y1 = -1, z1 = -1;
    for (std::int64_t z = 0; z < mask.nz; ++z)
        for (std::int64_t y = 0; y < mask.ny; ++y)
            for (std::int64_t x = 0; x < mask.nx; ++x)
                if (mask.at(x, y, z) != 0.0) {
                    x0 = std::min(x0, x);
                    y0 = std::min(y0, y);
                    z0 = std::min(z0, z);
                    x1 = std::max(x1, x);
                    y1 = std::max(y1, y);
                    z1 = std::max(z1, z);
                }
    if (x1 < 0) throw std::runtime_error("mask_tight_roi: empty mask");
    r.xmin = x0;
    r.xmax = x1 + 1;
    r.ymin = y0;
    r.ymax = y1 + 1;
    r.zmin = z0;
    r.zmax = z1;
    return r;
}

// Ground-truth ROI expanded the same way the detector output would be,
// standing in for detection during segmentation training and fold testing.
inline Roi3D simulated_detection_roi(const Volume& mask, const PipelineConfig& cfg) {
    Roi3D r = mask_tight_roi(mask);
    r.zmin -= cfg.roi_z_margin;
    r.zmax += cfg.roi_z_margin;
    return expand_and_clamp(r, cfg.margin_x_mm, cfg.margin_y_mm);
}

inline json roi_to_json(const Roi3D& r, double margin_x_mm, double margin_y_mm) {
    json j;
    j["zmin"] = r.zmin;
    j["zmax"] = r.zmax;
    j["xmin"] = r.xmin;
    j["xmax"] = r.xmax;
    j["ymin"] = r.ymin;
    j["ymax"] = r.ymax;
    j["margin_x_mm"] = margin_x_mm;
    j["margin_y_mm"] = margin_y_mm;
    j["spacing"] = {r.sx, r.sy, r.sz};
    j["source_extents"] = {r.src_nx, r.src_ny, r.src_nz};
    return j;
}

inline Roi3D roi_from_json(const json& j) {
    Roi3D r;
    r.zmin = j.at("zmin");
    r.zmax = j.at("zmax");
    r.xmin = j.at("xmin");
    r.xmax = j.at("xmax");
    r.ymin = j.at("ymin");
    r.ymax = j.at("ymax");
    r.sx = j.at("spacing")[0];
    r.sy = j.at("spacing")[1];
    r.sz = j.at("spacing")[2];
    r.src_nx = j.at("source_extents")[0];
    r.src_ny = j.at("source_extents")[1];
    r.src_nz = j.at("source_extents")[2];
    return r;
}

// --------------------------- sample assembly -------------------------------

struct SegSample {
    Tensor x;                          // [1,1,t,t]
    std::vector<std::int32_t> labels;  // t*t, {0,1}
};

inline Tensor slice_to_tensor(const Volume& v, std::int64_t z, double scale) {
    Tensor t({1, 1, v.ny, v.nx});
    const std::int64_t plane = v.nx * v.ny;
    for (std::int64_t i = 0; i < plane; ++i)
        t.data[static_cast<std::size_t>(i)] = static_cast<real_t>(v.voxels[static_cast<std::size_t>(z * plane + i)] * scale);
    return t;
}

inline std::vector<SegSample> make_seg_samples(const Dataset& d, const PipelineConfig& cfg) {
    const Roi3D roi = simulated_detection_roi(d.mask, cfg);
    const Volume img = resample_roi(d.image, roi, cfg.resample_xy);
    const Volume lab = resample_roi(d.mask, roi, cfg.resample_xy);
    std::vector<SegSample> out;
    for (std::int64_t z = 0; z < img.nz; ++z) {
        SegSample s;
        s.x = slice_to_tensor(img, z, cfg.input_scale);
        const std::int64_t plane = lab.nx * lab.ny;
        s.labels.resize(static_cast<std::size_t>(plane));
        for (std::int64_t i = 0; i < plane; ++i)
            s.labels[static_cast<std::size_t>(i)] = lab.voxels[static_cast<std::size_t>(z * plane + i)] != 0.0 ? 1 : 0;
        out.push_back(std::move(s));
    }
    return out;
}

struct DetSample {
    Tensor x;
    DetectionTargets truth;
};

inline std::vector<DetSample> make_det_samples(const Dataset& d, const PipelineConfig& cfg) {
    const auto boxes = mask_to_bboxes(d.mask);
    std::vector<DetSample> out;
    for (std::int64_t z = 0; z < d.image.nz; ++z) {
        DetSample s;
        s.x = slice_to_tensor(d.image, z, cfg.input_scale);
        std::vector<BBox2D> slice_boxes;
        for (const auto& b : boxes)
            if (b.z == z) slice_boxes.push_back(b);
        s.truth = rasterize_grid_labels(slice_boxes, cfg.cell_size, d.image.nx, d.image.ny);
        out.push_back(std::move(s));
    }
    return out;
}

// ------------------------------- training ----------------------------------

inline TrainLog train_segmenter(NetworkSpec& net, const std::vector<SegSample>& train,
                                const std::vector<SegSample>& val, const TrainConfig& cfg) {
    Graph& g = net.graph;
    if (!g.materialized()) g.materialize(cfg.seed);
    auto run = [&](std::size_t i, bool accumulate) {
        const SegSample& s = train[i];
        g.set_input(net.input_node, s.x);
        g.set_labels(net.loss_node, s.labels);
        g.forward();
        const double loss = static_cast<double>(g.loss());
        if (accumulate) g.backward();
        return loss;
    };
    auto eval = [&](std::size_t i) {
        const SegSample& s = val[i];
        g.set_input(net.input_node, s.x);
        g.set_labels(net.loss_node, s.labels);
        g.forward();
        return static_cast<double>(g.loss());
    };
    return train_loop(g, train.size(), val.size(), cfg, run, eval);
}

inline TrainLog train_detector(NetworkSpec& net, const std::vector<DetSample>& train,
                               const std::vector<DetSample>& val, const TrainConfig& cfg) {
    Graph& g = net.graph;
    if (!g.materialized()) g.materialize(cfg.seed);
    auto eval_loss = [&](const DetSample& s, DetectionLossGrads* grads) {
        g.set_input(net.input_node, s.x);
        g.forward();
        const DetectionTargets pred = targets_from_maps(g.node(net.coverage_node).out,
                                                        g.node(net.bbox_node).out, net.cell_size);
        return detection_loss(s.truth, pred, grads);
    };
    auto run = [&](std::size_t i, bool accumulate) {
        DetectionLossGrads grads;
        const double loss = static_cast<double>(eval_loss(train[i], accumulate ? &grads : nullptr));
        if (accumulate) {
            auto [dcov, dbox] = maps_from_grads(grads, train[i].truth.grid_h, train[i].truth.grid_w);
            g.backward({{net.coverage_node, &dcov}, {net.bbox_node, &dbox}});
        }
        return loss;
    };
    auto eval = [&](std::size_t i) { return static_cast<double>(eval_loss(val[i], nullptr)); };
    return train_loop(g, train.size(), val.size(), cfg, run, eval);
}

// ------------------------------ inference ----------------------------------

inline Volume segment_roi(NetworkSpec& net, const Volume& roi_image, const PipelineConfig& cfg) {
    Volume prob(roi_image.nx, roi_image.ny, roi_image.nz, ValueKind::probability);
    prob.sx = roi_image.sx;
    prob.sy = roi_image.sy;
    prob.sz = roi_image.sz;
    prob.ox = roi_image.ox;
    prob.oy = roi_image.oy;
    prob.oz = roi_image.oz;
    const std::int64_t plane = roi_image.nx * roi_image.ny;
    for (std::int64_t z = 0; z < roi_image.nz; ++z) {
        const Tensor fg = forward_probability(net, slice_to_tensor(roi_image, z, cfg.input_scale));
        for (std::int64_t i = 0; i < plane; ++i)
            prob.voxels[static_cast<std::size_t>(z * plane + i)] = static_cast<double>(fg.data[static_cast<std::size_t>(i)]);
    }
    return prob;
}

struct DetectionResult {
    std::vector<std::vector<BBox2D>> slice_boxes;
    std::vector<std::pair<std::int64_t, std::int64_t>> intervals;  // all qualifying z runs
    std::optional<Roi3D> roi;                                      // largest, expanded and clamped
};

inline DetectionResult detect_volume(NetworkSpec& net, const Volume& image, const PipelineConfig& cfg) {
    if (net.name != ArchName::DETECTOR) throw std::invalid_argument("detect_volume: not a detector network");
    if (image.nx % net.cell_size != 0 || image.ny % net.cell_size != 0)
        throw std::invalid_argument("detect_volume: extents " + std::to_string(image.nx) + "x" +
                                    std::to_string(image.ny) + " not divisible by cell size " +
                                    std::to_string(net.cell_size));
    DetectionResult res;
    Graph& g = net.graph;
    std::vector<bool> present(static_cast<std::size_t>(image.nz), false);
    for (std::int64_t z = 0; z < image.nz; ++z) {
        g.set_input(net.input_node, slice_to_tensor(image, z, cfg.input_scale));
        g.forward();
        const DetectionTargets pred = targets_from_maps(g.node(net.coverage_node).out,
                                                        g.node(net.bbox_node).out, net.cell_size);
        auto boxes = decode_candidates(pred, cfg.coverage_threshold, z);
        present[static_cast<std::size_t>(z)] = !boxes.empty();
        res.slice_boxes.push_back(std::move(boxes));
    }
    res.intervals = reconstruct_roi_z(present, cfg.run_length);
    if (res.intervals.empty()) return res;

    // keep the interval with the most slices (earlier start on ties)
    std::size_t best = 0;
    for (std::size_t i = 1; i < res.intervals.size(); ++i) {
        const auto len = [&](std::size_t j) { return res.intervals[j].second - res.intervals[j].first + 1; };
        if (len(i) > len(best)) best = i;
    }
    Roi3D roi;
    roi.zmin = res.intervals[best].first;
    roi.zmax = res.intervals[best].second;
    roi.src_nx = image.nx;
    roi.src_ny = image.ny;
    roi.src_nz = image.nz;
    roi.sx = image.sx;
    roi.sy = image.sy;
    roi.sz = image.sz;
    double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
    for (std::int64_t z = roi.zmin; z <= roi.zmax; ++z)
        for (const auto& b : res.slice_boxes[static_cast<std::size_t>(z)]) {
            x0 = std::min(x0, b.xmin);
            y0 = std::min(y0, b.ymin);
            x1 = std::max(x1, b.xmax);
            y1 = std::max(y1, b.ymax);
        }
    roi.xmin = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(x0)));
    roi.ymin = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(y0)));
    roi.xmax = std::min<std::int64_t>(image.nx, static_cast<std::int64_t>(std::ceil(x1)));
    roi.ymax = std::min<std::int64_t>(image.ny, static_cast<std::int64_t>(std::ceil(y1)));
    res.roi = expand_and_clamp(roi, cfg.margin_x_mm, cfg.margin_y_mm);
    return res;
}

inline Volume postprocess_probability(const Volume& prob, const PipelineConfig& cfg,
                                      KmeansResult* km_out = nullptr) {
    const Volume smoothed = cfg.smooth ? smooth_z(prob) : prob;
    KmeansResult km = kmeans_1d(smoothed.voxels, cfg.kmeans_k, 100);
    Volume mask = binarize_clusters(km, smoothed, cfg.policy);
    if (km_out) *km_out = std::move(km);
    return largest_component(mask, cfg.connectivity);
}

struct End2EndResult {
    bool found_roi = false;
    Roi3D roi;
    Volume mask;  // source-space binary mask
    std::optional<MetricsReport> report;
};

inline End2EndResult run_end2end(NetworkSpec& detector, NetworkSpec& segmenter, const Volume& image,
                                 const Volume* truth, const PipelineConfig& cfg) {
    End2EndResult out;
    DetectionResult det = detect_volume(detector, image, cfg);
    if (!det.roi) return out;
    out.found_roi = true;
    out.roi = *det.roi;
    const Volume roi_img = resample_roi(image, out.roi, cfg.resample_xy);
    const Volume prob = segment_roi(segmenter, roi_img, cfg);
    const Volume roi_mask = postprocess_probability(prob, cfg);
    out.mask = mask_to_source(roi_mask, out.roi);
    if (truth) out.report = overlap_report(out.mask, *truth);
    return out;
}

// ------------------------- cross-validation runs ---------------------------

inline int pipe_threads(int folds) {
    const char* env = std::getenv("PIPE_THREADS");
    int cap = env ? std::atoi(env) : static_cast<int>(std::thread::hardware_concurrency());
    if (cap < 1) cap = 1;
    return std::min(cap, folds);
}

struct FoldOutcome {
    bool diverged = false;
    std::vector<std::string> test_ids;
    std::vector<MetricsReport> reports;  // segmentation crossval
    std::vector<double> fnr;             // detection crossval
    TrainLog log;
};

struct CrossvalResult {
    FoldPlan plan;
    std::vector<FoldOutcome> folds;
    std::vector<std::string> diverged_folds;
    AggregateReport aggregate_report;  // segmentation only
    double fnr_mean = 0, fnr_std = 0;  // detection only
};

// Trains one segmentation architecture per fold on ground-truth-ROI slices
// and evaluates the full post-processing chain on the held-out phantoms.
inline CrossvalResult run_crossval_seg(const std::vector<Dataset>& datasets, ArchName arch,
                                       const TrainConfig& tcfg, const PipelineConfig& pcfg, int fold_count,
                                       std::uint64_t seed, const std::string& outdir) {
    namespace fs = std::filesystem;
    fs::create_directories(outdir);
    CrossvalResult res;
    res.plan = make_folds(datasets.size(), fold_count, seed);
    res.folds.resize(static_cast<std::size_t>(fold_count));

    auto run_fold = [&](int fold) {
        FoldOutcome& fo = res.folds[static_cast<std::size_t>(fold)];
        std::vector<SegSample> pool;
        for (std::size_t id : res.plan.train_ids(fold)) {
            auto s = make_seg_samples(datasets[id], pcfg);
            for (auto& e : s) pool.push_back(std::move(e));
        }
        const auto is_val = validation_mask(pool.size(), derive_seed(seed, "fold" + std::to_string(fold)));
        std::vector<SegSample> train, val;
        for (std::size_t i = 0; i < pool.size(); ++i)
            (is_val[i] ? val : train).push_back(std::move(pool[i]));

        ArchConfig acfg;
        acfg.scale = pcfg.scale;
        acfg.num_classes = pcfg.num_classes;
        NetworkSpec net = build_arch(arch, acfg);
        TrainConfig fold_cfg = tcfg;
        fold_cfg.seed = derive_seed(seed, std::string(arch_name_str(arch)) + "/fold" + std::to_string(fold));
        try {
            fo.log = train_segmenter(net, train, val, fold_cfg);
        } catch (const DivergenceError&) {
            fo.diverged = true;
            return;
        }
        const std::string stem =
            (fs::path(outdir) / ("seg_" + std::string(arch_name_str(arch)) + "_fold" + std::to_string(fold))).string();
        save_checkpoint(net.graph, stem + ".ckpt");
        fo.log.to_csv(stem + "_loss.csv");

        for (std::size_t id : res.plan.test_ids(fold)) {
            const Dataset& d = datasets[id];
            const Roi3D roi = simulated_detection_roi(d.mask, pcfg);
            const Volume roi_img = resample_roi(d.image, roi, pcfg.resample_xy);
            const Volume prob = segment_roi(net, roi_img, pcfg);
            const Volume roi_mask = postprocess_probability(prob, pcfg);
            const Volume mask = mask_to_source(roi_mask, roi);
            fo.test_ids.push_back(d.id);
            fo.reports.push_back(overlap_report(mask, d.mask));
        }
    };

    const int workers = pipe_threads(fold_count);
    if (workers <= 1) {
        for (int f = 0; f < fold_count; ++f) run_fold(f);
    } else {
        std::vector<std::thread> pool;
        std::atomic<int> next{0};
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&]() {
                for (int f = next.fetch_add(1); f < fold_count; f = next.fetch_add(1)) run_fold(f);
            });
        for (auto& t : pool) t.join();
    }

    std::vector<MetricsReport> all;
    std::vector<std::string> ids;
    for (int f = 0; f < fold_count; ++f) {
        const auto& fo = res.folds[static_cast<std::size_t>(f)];
        if (fo.diverged) {
            res.diverged_folds.push_back("fold" + std::to_string(f));
            continue;
        }
        for (std::size_t i = 0; i < fo.reports.size(); ++i) {
            all.push_back(fo.reports[i]);
            ids.push_back(fo.test_ids[i]);
        }
    }
    if (!all.empty()) {
        res.aggregate_report = aggregate(all);
        reports_to_csv((fs::path(outdir) / ("crossval_" + std::string(arch_name_str(arch)) + ".csv")).string(),
                       ids, all);
        json j;
        j["arch"] = arch_name_str(arch);
        j["datasets"] = ids.size();
        j["diverged_folds"] = res.diverged_folds;
        const char* names[6] = {"total_overlap", "jaccard", "dice", "fn", "fp", "rvd"};
        for (int i = 0; i < 6; ++i) {
            j["mean"][names[i]] = res.aggregate_report.mean[static_cast<std::size_t>(i)];
            j["std"][names[i]] = res.aggregate_report.stddev[static_cast<std::size_t>(i)];
        }
        std::ofstream os(fs::path(outdir) / ("crossval_" + std::string(arch_name_str(arch)) + ".json"));
        os << j.dump(2) << "\n";
    }
    return res;
}

// Detection cross-validation: slice FNR of the reconstructed ROI against the
// mean observer interval of each held-out phantom.
inline CrossvalResult run_crossval_detect(const std::vector<Dataset>& datasets, const TrainConfig& tcfg,
                                          const PipelineConfig& pcfg, int fold_count, std::uint64_t seed,
                                          const std::string& outdir) {
    namespace fs = std::filesystem;
    fs::create_directories(outdir);
    CrossvalResult res;
    res.plan = make_folds(datasets.size(), fold_count, seed);
    res.folds.resize(static_cast<std::size_t>(fold_count));

    auto run_fold = [&](int fold) {
        FoldOutcome& fo = res.folds[static_cast<std::size_t>(fold)];
        std::vector<DetSample> pool;
        for (std::size_t id : res.plan.train_ids(fold)) {
            auto s = make_det_samples(datasets[id], pcfg);
            for (auto& e : s) pool.push_back(std::move(e));
        }
        const auto is_val = validation_mask(pool.size(), derive_seed(seed, "detfold" + std::to_string(fold)));
        std::vector<DetSample> train, val;
        for (std::size_t i = 0; i < pool.size(); ++i)
            (is_val[i] ? val : train).push_back(std::move(pool[i]));

        ArchConfig acfg;
        acfg.scale = pcfg.scale;
        NetworkSpec net = build_detector(pcfg.cell_size, acfg);
        TrainConfig fold_cfg = tcfg;
        fold_cfg.seed = derive_seed(seed, "DETECTOR/fold" + std::to_string(fold));
        try {
            fo.log = train_detector(net, train, val, fold_cfg);
        } catch (const DivergenceError&) {
            fo.diverged = true;
            return;
        }
        const std::string stem = (fs::path(outdir) / ("det_fold" + std::to_string(fold))).string();
        save_checkpoint(net.graph, stem + ".ckpt");
        fo.log.to_csv(stem + "_loss.csv");

        for (std::size_t id : res.plan.test_ids(fold)) {
            const Dataset& d = datasets[id];
            const DetectionResult det = detect_volume(net, d.image, pcfg);
            const ObserverStats obs = observer_stats(d.observers);
            const double fnr = detection_slice_fnr(det.roi.has_value(), det.roi ? det.roi->zmin : 0,
                                                   det.roi ? det.roi->zmax : 0, obs.reference_zmin,
                                                   obs.reference_zmax);
            fo.test_ids.push_back(d.id);
            fo.fnr.push_back(fnr);
        }
    };

    const int workers = pipe_threads(fold_count);
    if (workers <= 1) {
        for (int f = 0; f < fold_count; ++f) run_fold(f);
    } else {
        std::vector<std::thread> pool;
        std::atomic<int> next{0};
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&]() {
                for (int f = next.fetch_add(1); f < fold_count; f = next.fetch_add(1)) run_fold(f);
            });
        for (auto& t : pool) t.join();
    }

    std::vector<double> fnrs;
    json rows = json::array();
    for (int f = 0; f < fold_count; ++f) {
        const auto& fo = res.folds[static_cast<std::size_t>(f)];
        if (fo.diverged) {
            res.diverged_folds.push_back("fold" + std::to_string(f));
            continue;
        }
        for (std::size_t i = 0; i < fo.fnr.size(); ++i) {
            fnrs.push_back(fo.fnr[i]);
            rows.push_back({{"dataset", fo.test_ids[i]}, {"fold", f}, {"fnr", fo.fnr[i]}});
        }
    }
    if (!fnrs.empty()) std::tie(res.fnr_mean, res.fnr_std) = mean_sample_std(fnrs);
    json j;
    j["rows"] = rows;
    j["fnr_mean"] = res.fnr_mean;
    j["fnr_std"] = res.fnr_std;
    j["diverged_folds"] = res.diverged_folds;
    std::ofstream os(fs::path(outdir) / "crossval_detect.json");
    os << j.dump(2) << "\n";
    return res;
}

// ------------------------- diagnostic overlays -----------------------------

// Truth contours green, predicted contours red (yellow where they agree).
inline void write_overlays(const Volume& image, const Volume* truth, const Volume& pred,
                           const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    double lo = 1e300, hi = -1e300;
    for (double v : image.voxels) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double range = hi > lo ? hi - lo : 1.0;
    auto contour = [](const Volume& m, std::int64_t x, std::int64_t y, std::int64_t z) {
        if (m.at(x, y, z) == 0.0) return false;
        if (x == 0 || y == 0 || x == m.nx - 1 || y == m.ny - 1) return true;
        return m.at(x - 1, y, z) == 0.0 || m.at(x + 1, y, z) == 0.0 || m.at(x, y - 1, z) == 0.0 ||
               m.at(x, y + 1, z) == 0.0;
    };
    for (std::int64_t z = 0; z < image.nz; ++z) {
        std::vector<unsigned char> rgb(static_cast<std::size_t>(image.nx * image.ny * 3));
        for (std::int64_t y = 0; y < image.ny; ++y)
            for (std::int64_t x = 0; x < image.nx; ++x) {
                const auto g = static_cast<unsigned char>(
                    std::clamp((image.at(x, y, z) - lo) / range, 0.0, 1.0) * 255.0);
                unsigned char r = g, gg = g, b = g;
                if (truth && contour(*truth, x, y, z)) {
                    r = 0;
                    gg = 255;
                    b = 0;
                }
                if (contour(pred, x, y, z)) {
                    r = 255;
                    b = 0;
                    if (!(truth && contour(*truth, x, y, z))) gg = 0;
                }
                const std::size_t o = static_cast<std::size_t>((y * image.nx + x) * 3);
                rgb[o] = r;
                rgb[o + 1] = gg;
                rgb[o + 2] = b;
            }
        char name[32];
        std::snprintf(name, sizeof(name), "overlay_%03lld.png", static_cast<long long>(z));
        write_png_rgb((fs::path(dir) / name).string(), image.nx, image.ny, rgb);
    }
}

// ------------------------------ run manifest -------------------------------

inline std::uint64_t file_fingerprint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("fingerprint: cannot open " + path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (is) {
        is.read(buf, sizeof(buf));
        h = fnv1a64(buf, static_cast<std::size_t>(is.gcount()), h);
    }
    return h;
}

// Records what a CLI command consumed and produced; sufficient to re-run the
// command bit-identically (timestamps are informational only).
struct RunManifest {
    std::string command;
    std::vector<std::string> argv;
    std::uint64_t seed = 0;
    std::string out_dir;
    std::string started, finished;
    std::vector<std::string> config_paths;
    std::vector<std::pair<std::string, std::uint64_t>> inputs;
    std::vector<std::pair<std::string, std::uint64_t>> outputs;

    void add_input(const std::string& p) { inputs.emplace_back(p, file_fingerprint(p)); }
    void add_output(const std::string& p) { outputs.emplace_back(p, file_fingerprint(p)); }

    void save(const std::string& path) const {
        json j;
        j["command"] = command;
        j["argv"] = argv;
        j["seed"] = seed;
        j["out_dir"] = out_dir;
        j["timestamps"] = {{"started", started}, {"finished", finished}};
        j["configs"] = config_paths;
        auto files = [](const std::vector<std::pair<std::string, std::uint64_t>>& v) {
            json a = json::array();
            char hex[32];
            for (const auto& [p, h] : v) {
                std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
                a.push_back({{"path", p}, {"fnv1a64", hex}});
            }
            return a;
        };
        j["inputs"] = files(inputs);
        j["outputs"] = files(outputs);
        std::ofstream os(path);
        if (!os) throw std::runtime_error("manifest: cannot write " + path);
        os << j.dump(2) << "\n";
    }
};

}  // namespace tseg
