// Command-line front end for the detection + segmentation pipeline.
// Exit codes: 0 success, 2 no region of interest, 3 config error,
// 4 numeric divergence during training.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tseg/gradcheck.hpp"
#include "tseg/pipeline.hpp"

namespace fs = std::filesystem;
using namespace tseg;

namespace {

std::string now_utc() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct CommonOpts {
    std::string out;
    std::uint64_t seed = 1;
    std::string config;
    PipelineConfig pipe;
    std::string policy = "drop_lowest";
    std::string scale = "desk";
    bool no_smooth = false;

    void apply() {
        pipe.policy = binarize_policy_from_string(policy);
        pipe.scale = scale == "paper" ? Scale::paper : Scale::desk;
        if (scale != "desk" && scale != "paper") throw CLI::ValidationError("--scale must be desk or paper");
        pipe.smooth = !no_smooth;
    }
};

void add_pipeline_flags(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--out", o.out, "output directory")->required();
    cmd->add_option("--seed", o.seed, "master seed");
    cmd->add_option("--config", o.config, "key=value config file");
    cmd->add_option("--policy", o.policy, "binarization policy: drop_lowest|keep_highest");
    cmd->add_option("--connectivity", o.pipe.connectivity, "component connectivity: 6|26");
    cmd->add_option("--margin-x-mm", o.pipe.margin_x_mm, "ROI x margin per border [mm]");
    cmd->add_option("--margin-y-mm", o.pipe.margin_y_mm, "ROI y margin per border [mm]");
    cmd->add_option("--run-length", o.pipe.run_length, "contiguous-slice run length for the z rule");
    cmd->add_option("--threshold", o.pipe.coverage_threshold, "coverage decision threshold");
    cmd->add_option("--resample-xy", o.pipe.resample_xy, "ROI resample target extent");
    cmd->add_option("--cell-size", o.pipe.cell_size, "detector grid cell size [px]");
    cmd->add_option("--input-scale", o.pipe.input_scale, "intensity-to-input scaling");
    cmd->add_option("--roi-z-margin", o.pipe.roi_z_margin, "slices added around the truth span");
    cmd->add_option("--kmeans-k", o.pipe.kmeans_k, "number of clusters");
    cmd->add_option("--scale", o.scale, "network scale: desk|paper");
    cmd->add_flag("--no-smooth", o.no_smooth, "skip the z-direction Gaussian");
}

RunManifest make_manifest(const std::string& command, const std::vector<std::string>& argv,
                          const CommonOpts& o) {
    RunManifest m;
    m.command = command;
    m.argv = argv;
    m.seed = o.seed;
    m.out_dir = o.out;
    m.started = now_utc();
    if (!o.config.empty()) m.config_paths.push_back(o.config);
    return m;
}

void finish_manifest(RunManifest& m) {
    m.finished = now_utc();
    m.save((fs::path(m.out_dir) / "manifest.json").string());
}

TrainConfig load_train_config(const CommonOpts& o, OptimizerKind def_opt, double def_lr, double def_momentum,
                              double def_wd, int def_batch, int def_accum, int def_epochs,
                              LrSchedule def_sched) {
    TrainConfig c;
    c.optimizer = def_opt;
    c.learning_rate = def_lr;
    c.momentum = def_momentum;
    c.weight_decay = def_wd;
    c.batch_size = def_batch;
    c.batch_accumulation = def_accum;
    c.epochs = def_epochs;
    c.schedule = def_sched;
    if (!o.config.empty()) c = train_config_from_file(o.config);
    c.seed = o.seed;
    return c;
}

// Paper-table defaults per architecture: SGD 1e-3 / 0.9 / 1e-5 for all
// segmentation nets, batch 2 + accumulation 2 for FCN rows, batch 4 for the
// HED rows; step decay gamma 0.1, 100 epochs.
TrainConfig seg_train_defaults(ArchName arch, const CommonOpts& o) {
    const bool fcn = arch == ArchName::FCN14 || arch == ArchName::FCN26 || arch == ArchName::FCN46;
    return load_train_config(o, OptimizerKind::sgd, 1e-3, 0.9, 1e-5, fcn ? 2 : 4, fcn ? 2 : 1, 100,
                             LrSchedule{LrSchedule::Kind::step, 0.1, 33});
}

// Detector desk defaults: ADAM 1e-4, exponential decay gamma 0.99, batch 10.
TrainConfig det_train_defaults(const CommonOpts& o) {
    return load_train_config(o, OptimizerKind::adam, 1e-4, 0.0, 0.0, 10, 1, 40,
                             LrSchedule{LrSchedule::Kind::exponential, 0.99, 1});
}

std::vector<Dataset> load_data(const std::string& dir, const std::string& ids_csv) {
    std::vector<Dataset> all = load_dataset_dir(dir);
    if (ids_csv.empty()) return all;
    std::vector<Dataset> out;
    std::string cur;
    std::istringstream is(ids_csv);
    while (std::getline(is, cur, ',')) {
        bool found = false;
        for (auto& d : all)
            if (d.id == cur) {
                out.push_back(std::move(d));
                found = true;
                break;
            }
        if (!found) throw std::runtime_error("dataset id '" + cur + "' not found under " + dir);
    }
    return out;
}

NetworkSpec load_segmenter(const std::string& arch_name, const CommonOpts& o, const std::string& ckpt) {
    ArchConfig acfg;
    acfg.scale = o.pipe.scale;
    acfg.num_classes = o.pipe.num_classes;
    NetworkSpec net = build_arch(arch_from_string(arch_name), acfg);
    net.graph.materialize(o.seed);
    load_checkpoint(net.graph, ckpt);
    return net;
}

NetworkSpec load_detector(const CommonOpts& o, const std::string& ckpt) {
    ArchConfig acfg;
    acfg.scale = o.pipe.scale;
    NetworkSpec net = build_detector(o.pipe.cell_size, acfg);
    net.graph.materialize(o.seed);
    load_checkpoint(net.graph, ckpt);
    return net;
}

int dispatch(const std::vector<std::string>& args);

// ------------------------------ subcommands --------------------------------

int cmd_gen_phantom(const CommonOpts& o, int count, const std::vector<std::string>& argv) {
    RunManifest m = make_manifest("gen-phantom", argv, o);
    fs::create_directories(o.out);
    PhantomSpec base;
    if (!o.config.empty()) base = phantom_spec_from_file(o.config);
    for (int i = 0; i < count; ++i) {
        PhantomSpec spec = base;
        Rng vary(derive_seed(o.seed, "vary" + std::to_string(i)));
        spec.seed = derive_seed(o.seed, "phantom" + std::to_string(i));
        const std::int64_t span = (base.thrombus_zmax - base.thrombus_zmin) +
                                  static_cast<std::int64_t>(std::llround(vary.uniform(-2.0, 4.0)));
        spec.thrombus_zmin = base.thrombus_zmin + static_cast<std::int64_t>(std::llround(vary.uniform(-3.0, 3.0)));
        spec.thrombus_zmax = std::min(spec.nz - 2, spec.thrombus_zmin + std::max<std::int64_t>(span, 16));
        spec.lumen_radius = base.lumen_radius + vary.uniform(-0.8, 0.8);
        spec.outer_radius = base.outer_radius + vary.uniform(-1.2, 1.2);
        spec.validate();
        PhantomOutput ph = generate_phantom(spec);
        Dataset d;
        char id[32];
        std::snprintf(id, sizeof(id), "phantom_%02d", i);
        d.id = id;
        d.image = std::move(ph.image);
        d.mask = std::move(ph.mask);
        d.observers = std::move(ph.observers);
        save_dataset(d, o.out);
        for (const char* suffix : {".mhd", ".raw", "_mask.mhd", "_mask.raw", "_observers.json"})
            m.add_output((fs::path(o.out) / (d.id + std::string(suffix))).string());
    }
    finish_manifest(m);
    std::cout << "wrote " << count << " phantoms to " << o.out << "\n";
    return 0;
}

int cmd_train_seg(const CommonOpts& o, const std::string& data, const std::string& ids,
                  const std::string& arch_name, const std::vector<std::string>& argv) {
    RunManifest m = make_manifest("train-seg", argv, o);
    fs::create_directories(o.out);
    const ArchName arch = arch_from_string(arch_name);
    const TrainConfig tcfg = seg_train_defaults(arch, o);
    auto datasets = load_data(data, ids);

    std::vector<SegSample> pool;
    for (const auto& d : datasets) {
        auto s = make_seg_samples(d, o.pipe);
        for (auto& e : s) pool.push_back(std::move(e));
    }
    const auto is_val = validation_mask(pool.size(), derive_seed(o.seed, "train-seg"));
    std::vector<SegSample> train, val;
    for (std::size_t i = 0; i < pool.size(); ++i) (is_val[i] ? val : train).push_back(std::move(pool[i]));

    ArchConfig acfg;
    acfg.scale = o.pipe.scale;
    acfg.num_classes = o.pipe.num_classes;
    NetworkSpec net = build_arch(arch, acfg);
    const TrainLog log = train_segmenter(net, train, val, tcfg);

    const std::string stem = (fs::path(o.out) / ("seg_" + arch_name)).string();
    save_checkpoint(net.graph, stem + ".ckpt");
    log.to_csv(stem + "_loss.csv");
    std::ofstream sum(stem + "_summary.txt");
    sum << graph_summary(net);
    for (const char* suffix : {".ckpt", ".ckpt.bin", "_loss.csv", "_summary.txt"}) m.add_output(stem + suffix);
    finish_manifest(m);
    std::cout << "trained " << arch_name << " on " << train.size() << " slices (" << val.size()
              << " validation); final train loss " << log.rows.back().train_loss << "\n";
    return 0;
}

int cmd_train_detect(const CommonOpts& o, const std::string& data, const std::string& ids,
                     const std::vector<std::string>& argv) {
    RunManifest m = make_manifest("train-detect", argv, o);
    fs::create_directories(o.out);
    const TrainConfig tcfg = det_train_defaults(o);
    auto datasets = load_data(data, ids);
    std::vector<DetSample> pool;
    for (const auto& d : datasets) {
        auto s = make_det_samples(d, o.pipe);
        for (auto& e : s) pool.push_back(std::move(e));
    }
    const auto is_val = validation_mask(pool.size(), derive_seed(o.seed, "train-detect"));
    std::vector<DetSample> train, val;
    for (std::size_t i = 0; i < pool.size(); ++i) (is_val[i] ? val : train).push_back(std::move(pool[i]));

    ArchConfig acfg;
    acfg.scale = o.pipe.scale;
    NetworkSpec net = build_detector(o.pipe.cell_size, acfg);
    const TrainLog log = train_detector(net, train, val, tcfg);

    const std::string stem = (fs::path(o.out) / "detector").string();
    save_checkpoint(net.graph, stem + ".ckpt");
    log.to_csv(stem + "_loss.csv");
    std::ofstream sum(stem + "_summary.txt");
    sum << graph_summary(net);
    for (const char* suffix : {".ckpt", ".ckpt.bin", "_loss.csv", "_summary.txt"}) m.add_output(stem + suffix);
    finish_manifest(m);
    std::cout << "trained detector on " << train.size() << " slices; final train loss "
              << log.rows.back().train_loss << "\n";
    return 0;
}

int cmd_detect(const CommonOpts& o, const std::string& image_path, const std::string& ckpt,
               const std::vector<std::string>& argv) {
    RunManifest m = make_manifest("detect", argv, o);
    fs::create_directories(o.out);
    m.add_input(image_path);
    m.add_input(ckpt);
    const Volume image = read_volume(image_path);
    NetworkSpec net = load_detector(o, ckpt);
    const DetectionResult det = detect_volume(net, image, o.pipe);

    json boxes = json::array();
    for (std::size_t z = 0; z < det.slice_boxes.size(); ++z)
        for (const auto& b : det.slice_boxes[z])
            boxes.push_back({{"z", b.z}, {"xmin", b.xmin}, {"ymin", b.ymin}, {"xmax", b.xmax},
                             {"ymax", b.ymax}, {"score", b.score}});
    std::ofstream bf(fs::path(o.out) / "boxes.json");
    bf << boxes.dump(2) << "\n";
    m.add_output((fs::path(o.out) / "boxes.json").string());

    if (!det.roi) {
        finish_manifest(m);
        std::cerr << "no region of interest: no run of " << o.pipe.run_length
                  << " contiguous candidate slices\n";
        return 2;
    }
    std::ofstream rf(fs::path(o.out) / "roi.json");
    rf << roi_to_json(*det.roi, o.pipe.margin_x_mm, o.pipe.margin_y_mm).dump(2) << "\n";
    m.add_output((fs::path(o.out) / "roi.json").string());
    finish_manifest(m);
    std::cout << "roi z " << det.roi->zmin << ".." << det.roi->zmax << ", x " << det.roi->xmin << ".."
              << det.roi->xmax << ", y " << det.roi->ymin << ".." << det.roi->ymax << "\n";
    return 0;
}

int cmd_segment(const CommonOpts& o, const std::string& image_path, const std::string& roi_path,
                const std::string& ckpt, const std::string& arch_name, const std::vector<std::string>& argv) {
    RunManifest m = make_manifest("segment", argv, o);
    fs::create_directories(o.out);
    m.add_input(image_path);
    m.add_input(roi_path);
    m.add_input(ckpt);
    const Volume image = read_volume(image_path);
    std::ifstream rf(roi_path);
    if (!rf) throw std::runtime_error("cannot open roi " + roi_path);
    json rj;
    rf >> rj;
    const Roi3D roi = roi_from_json(rj);
    NetworkSpec net = load_segmenter(arch_name, o, ckpt);
    const Volume roi_img = resample_roi(image, roi, o.pipe.resample_xy);
    const Volume prob = segment_roi(net, roi_img, o.pipe);
    write_volume(prob, (fs::path(o.out) / "probability.mhd").string());
    m.add_output((fs::path(o.out) / "probability.mhd").string());
    m.add_output((fs::path(o.out) / "probability.raw").string());
    finish_manifest(m);
    std::cout << "wrote probability volume (" << prob.nx << "x" << prob.ny << "x" << prob.nz << ")\n";
    return 0;
}

int cmd_postproc(const CommonOpts& o, const std::string& prob_path, const std::vector<std::string>& argv) {
    RunManifest m = make_manifest("postproc", argv, o);
    fs::create_directories(o.out);
    m.add_input(prob_path);
    const Volume prob = read_volume(prob_path);
    KmeansResult km;
    const Volume mask = postprocess_probability(prob, o.pipe, &km);
    write_volume(mask, (fs::path(o.out) / "mask.mhd").string());
    m.add_output((fs::path(o.out) / "mask.mhd").string());
    m.add_output((fs::path(o.out) / "mask.raw").string());
    finish_manifest(m);
    if (!km.warning.empty()) std::cerr << "warning: " << km.warning << "\n";
    std::cout << "k-means centroids:";
    for (double c : km.centroids) std::cout << " " << c;
    std::cout << "\n";
    return 0;
}

int cmd_evaluate(const CommonOpts& o, const std::string& pred_path, const std::string& truth_path,
                 const std::vector<std::string>& argv) {
    RunManifest m = make_manifest("evaluate", argv, o);
    fs::create_directories(o.out);
    m.add_input(pred_path);
    m.add_input(truth_path);
    const Volume pred = read_volume(pred_path);
    const Volume truth = read_volume(truth_path);
    const MetricsReport r = overlap_report(pred, truth);
    reports_to_csv((fs::path(o.out) / "report.csv").string(), {fs::path(pred_path).stem().string()}, {r});
    m.add_output((fs::path(o.out) / "report.csv").string());
    finish_manifest(m);
    if (!r.diagnostic.empty()) std::cerr << "warning: " << r.diagnostic << "\n";
    std::printf("total_overlap %.4f jaccard %.4f dice %.4f fn %.4f fp %.4f rvd %.4f\n", r.total_overlap,
                r.jaccard, r.dice, r.fn_rate, r.fp_rate, r.relative_volume_diff);
    return 0;
}

int cmd_crossval(const CommonOpts& o, const std::string& data, const std::string& arch_name,
                 const std::string& task, int folds, const std::vector<std::string>& argv) {
    RunManifest m = make_manifest("crossval", argv, o);
    fs::create_directories(o.out);
    auto datasets = load_data(data, "");
    if (task == "seg") {
        const ArchName arch = arch_from_string(arch_name);
        const TrainConfig tcfg = seg_train_defaults(arch, o);
        const CrossvalResult res = run_crossval_seg(datasets, arch, tcfg, o.pipe, folds, o.seed, o.out);
        for (int f = 0; f < folds; ++f) {
            const std::string stem =
                (fs::path(o.out) / ("seg_" + arch_name + "_fold" + std::to_string(f))).string();
            if (!res.folds[static_cast<std::size_t>(f)].diverged)
                for (const char* suffix : {".ckpt", ".ckpt.bin", "_loss.csv"}) m.add_output(stem + suffix);
        }
        m.add_output((fs::path(o.out) / ("crossval_" + arch_name + ".csv")).string());
        m.add_output((fs::path(o.out) / ("crossval_" + arch_name + ".json")).string());
        finish_manifest(m);
        if (!res.diverged_folds.empty()) {
            std::cerr << "warning: diverged folds:";
            for (const auto& f : res.diverged_folds) std::cerr << " " << f;
            std::cerr << "\n";
        }
        std::printf("aggregate dice %.4f +- %.4f, rvd %.4f\n", res.aggregate_report.mean[2],
                    res.aggregate_report.stddev[2], res.aggregate_report.mean[5]);
        return res.diverged_folds.empty() ? 0 : 4;
    }
    if (task != "detect") throw CLI::ValidationError("--task must be seg or detect");
    const TrainConfig tcfg = det_train_defaults(o);
    const CrossvalResult res = run_crossval_detect(datasets, tcfg, o.pipe, folds, o.seed, o.out);
    for (int f = 0; f < folds; ++f) {
        const std::string stem = (fs::path(o.out) / ("det_fold" + std::to_string(f))).string();
        if (!res.folds[static_cast<std::size_t>(f)].diverged)
            for (const char* suffix : {".ckpt", ".ckpt.bin", "_loss.csv"}) m.add_output(stem + suffix);
    }
    m.add_output((fs::path(o.out) / "crossval_detect.json").string());
    finish_manifest(m);
    std::printf("mean detection slice FNR %.4f +- %.4f\n", res.fnr_mean, res.fnr_std);
    return res.diverged_folds.empty() ? 0 : 4;
}

int cmd_end2end(const CommonOpts& o, const std::string& image_path, const std::string& truth_path,
                const std::string& det_ckpt, const std::string& seg_ckpt, const std::string& arch_name,
                bool overlays, const std::vector<std::string>& argv) {
    RunManifest m = make_manifest("end2end", argv, o);
    fs::create_directories(o.out);
    m.add_input(image_path);
    m.add_input(det_ckpt);
    m.add_input(seg_ckpt);
    if (!truth_path.empty()) m.add_input(truth_path);
    const Volume image = read_volume(image_path);
    Volume truth;
    if (!truth_path.empty()) truth = read_volume(truth_path);
    NetworkSpec det = load_detector(o, det_ckpt);
    NetworkSpec seg = load_segmenter(arch_name, o, seg_ckpt);
    const End2EndResult res = run_end2end(det, seg, image, truth_path.empty() ? nullptr : &truth, o.pipe);
    if (!res.found_roi) {
        finish_manifest(m);
        std::cerr << "no region of interest detected\n";
        return 2;
    }
    write_volume(res.mask, (fs::path(o.out) / "mask.mhd").string());
    std::ofstream rf(fs::path(o.out) / "roi.json");
    rf << roi_to_json(res.roi, o.pipe.margin_x_mm, o.pipe.margin_y_mm).dump(2) << "\n";
    m.add_output((fs::path(o.out) / "mask.mhd").string());
    m.add_output((fs::path(o.out) / "mask.raw").string());
    m.add_output((fs::path(o.out) / "roi.json").string());
    if (res.report) {
        reports_to_csv((fs::path(o.out) / "report.csv").string(), {fs::path(image_path).stem().string()},
                       {*res.report});
        m.add_output((fs::path(o.out) / "report.csv").string());
        std::printf("dice %.4f rvd %.4f\n", res.report->dice, res.report->relative_volume_diff);
    }
    if (overlays)
        write_overlays(image, truth_path.empty() ? nullptr : &truth, res.mask,
                       (fs::path(o.out) / "overlays").string());
    finish_manifest(m);
    return 0;
}

int cmd_rerun(const std::string& manifest_path, const std::string& out) {
    std::ifstream is(manifest_path);
    if (!is) throw std::runtime_error("cannot open manifest " + manifest_path);
    json j;
    is >> j;
    std::vector<std::string> argv = j.at("argv").get<std::vector<std::string>>();
    if (argv.empty()) throw std::runtime_error("manifest holds no argv");
    if (argv[0] == "rerun") throw std::runtime_error("refusing to re-run a rerun manifest");
    for (std::size_t i = 0; i + 1 < argv.size(); ++i)
        if (argv[i] == "--out") argv[i + 1] = out;
    return dispatch(argv);
}

// ------------------------------- dispatch ----------------------------------

int dispatch(const std::vector<std::string>& args) {
    CLI::App app{"detection + segmentation pipeline for volumetric phantom studies"};
    app.require_subcommand(1);

    CommonOpts o;
    int count = 12;
    int folds = 4;
    std::string data, ids, arch = "MODIFIED_HED", task = "seg";
    std::string image, truth, prob, pred, roi, ckpt, det_ckpt, seg_ckpt, manifest_path, rerun_out;
    bool overlays = false;

    auto* gen = app.add_subcommand("gen-phantom", "generate synthetic phantom volumes");
    add_pipeline_flags(gen, o);
    gen->add_option("--count", count, "number of phantoms");

    auto* tseg_cmd = app.add_subcommand("train-seg", "train a segmentation network");
    add_pipeline_flags(tseg_cmd, o);
    tseg_cmd->add_option("--data", data, "dataset directory")->required();
    tseg_cmd->add_option("--ids", ids, "comma-separated dataset ids (default: all)");
    tseg_cmd->add_option("--arch", arch, "FCN14|FCN26|FCN46|HED|MODIFIED_HED");

    auto* tdet = app.add_subcommand("train-detect", "train the grid detector");
    add_pipeline_flags(tdet, o);
    tdet->add_option("--data", data, "dataset directory")->required();
    tdet->add_option("--ids", ids, "comma-separated dataset ids (default: all)");

    auto* det = app.add_subcommand("detect", "run detection on a volume");
    add_pipeline_flags(det, o);
    det->add_option("--image", image, "volume header (.mhd)")->required();
    det->add_option("--checkpoint", ckpt, "detector checkpoint")->required();

    auto* seg = app.add_subcommand("segment", "segment a detected region of interest");
    add_pipeline_flags(seg, o);
    seg->add_option("--image", image, "volume header (.mhd)")->required();
    seg->add_option("--roi", roi, "roi.json from detect")->required();
    seg->add_option("--checkpoint", ckpt, "segmentation checkpoint")->required();
    seg->add_option("--arch", arch, "architecture of the checkpoint");

    auto* post = app.add_subcommand("postproc", "binarize a probability volume");
    add_pipeline_flags(post, o);
    post->add_option("--prob", prob, "probability volume (.mhd)")->required();

    auto* eval = app.add_subcommand("evaluate", "compare a mask against ground truth");
    add_pipeline_flags(eval, o);
    eval->add_option("--pred", pred, "predicted mask (.mhd)")->required();
    eval->add_option("--truth", truth, "truth mask (.mhd)")->required();

    auto* cv = app.add_subcommand("crossval", "k-fold cross-validation");
    add_pipeline_flags(cv, o);
    cv->add_option("--data", data, "dataset directory")->required();
    cv->add_option("--arch", arch, "segmentation architecture");
    cv->add_option("--task", task, "seg|detect");
    cv->add_option("--folds", folds, "fold count");

    auto* e2e = app.add_subcommand("end2end", "full pipeline on one volume");
    add_pipeline_flags(e2e, o);
    e2e->add_option("--image", image, "volume header (.mhd)")->required();
    e2e->add_option("--truth", truth, "truth mask (.mhd), enables the report");
    e2e->add_option("--det-checkpoint", det_ckpt, "detector checkpoint")->required();
    e2e->add_option("--seg-checkpoint", seg_ckpt, "segmentation checkpoint")->required();
    e2e->add_option("--arch", arch, "architecture of the segmentation checkpoint");
    e2e->add_flag("--overlays", overlays, "write per-slice contour overlays (PNG)");

    auto* rr = app.add_subcommand("rerun", "re-execute a command from its manifest");
    rr->add_option("--manifest", manifest_path, "manifest.json of a previous run")->required();
    rr->add_option("--out", rerun_out, "new output directory")->required();

    std::vector<std::string> argv_copy = args;
    try {
        std::vector<const char*> cargs;
        cargs.push_back("thromboseg");
        for (const auto& a : args) cargs.push_back(a.c_str());
        app.parse(static_cast<int>(cargs.size()), cargs.data());
        o.apply();
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 3;
    }

    if (gen->parsed()) return cmd_gen_phantom(o, count, argv_copy);
    if (tseg_cmd->parsed()) return cmd_train_seg(o, data, ids, arch, argv_copy);
    if (tdet->parsed()) return cmd_train_detect(o, data, ids, argv_copy);
    if (det->parsed()) return cmd_detect(o, image, ckpt, argv_copy);
    if (seg->parsed()) return cmd_segment(o, image, roi, ckpt, arch, argv_copy);
    if (post->parsed()) return cmd_postproc(o, prob, argv_copy);
    if (eval->parsed()) return cmd_evaluate(o, pred, truth, argv_copy);
    if (cv->parsed()) return cmd_crossval(o, data, arch, task, folds, argv_copy);
    if (e2e->parsed()) return cmd_end2end(o, image, truth, det_ckpt, seg_ckpt, arch, overlays, argv_copy);
    if (rr->parsed()) return cmd_rerun(manifest_path, rerun_out);
    return 3;
}

}  // namespace

int main(int argc, char** argv) {
    setenv("OPENBLAS_NUM_THREADS", "1", 0);
    std::vector<std::string> args(argv + 1, argv + argc);
    try {
        return dispatch(args);
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const CLI::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
