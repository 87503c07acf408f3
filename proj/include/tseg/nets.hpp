#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "tseg/graph.hpp"

namespace tseg {

enum class ArchName { FCN14, FCN26, FCN46, HED, MODIFIED_HED, DETECTOR };
enum class Scale { paper, desk };

inline const char* arch_name_str(ArchName a) {
    switch (a) {
        case ArchName::FCN14: return "FCN14";
        case ArchName::FCN26: return "FCN26";
        case ArchName::FCN46: return "FCN46";
        case ArchName::HED: return "HED";
        case ArchName::MODIFIED_HED: return "MODIFIED_HED";
        case ArchName::DETECTOR: return "DETECTOR";
    }
    return "?";
}

inline ArchName arch_from_string(const std::string& s) {
    if (s == "FCN14") return ArchName::FCN14;
    if (s == "FCN26") return ArchName::FCN26;
    if (s == "FCN46") return ArchName::FCN46;
    if (s == "HED") return ArchName::HED;
    if (s == "MODIFIED_HED") return ArchName::MODIFIED_HED;
    if (s == "DETECTOR") return ArchName::DETECTOR;
    throw std::invalid_argument("unknown architecture '" + s + "'");
}

struct ArchConfig {
    Scale scale = Scale::desk;
    int input_channels = -1;  // -1: per-scale default (desk 1, paper 3)
    int num_classes = 2;
    std::int64_t hed_padding = 35;  // HED keeps a reduced initial padding
    int channels() const { return input_channels >= 0 ? input_channels : (scale == Scale::desk ? 1 : 3); }
};

struct NetworkSpec {
    ArchName name = ArchName::MODIFIED_HED;
    Scale scale = Scale::desk;
    int input_channels = 1;
    int num_classes = 2;
    Graph graph;
    int input_node = -1;
    int score_node = -1;  // per-class score map (segmentation nets)
    int loss_node = -1;
    int coverage_node = -1, bbox_node = -1;  // detector heads
    int skip_count = 0;
    std::vector<int> side_nodes;
    FuseMode fuse_mode = FuseMode::concat;
    std::int64_t cell_size = 0;

    bool is_segmenter() const { return name != ArchName::DETECTOR; }
};

inline std::int64_t param_count(const NetworkSpec& net) { return net.graph.param_count(); }
inline std::string graph_summary(const NetworkSpec& net) { return net.graph.summary(); }

namespace detail {

struct TrunkCfg {
    std::vector<std::int64_t> widths;
    std::vector<int> convs;
    std::int64_t fc_ch;
    std::int64_t fc6_kernel;
    std::int64_t ref_extent;  // reference input extent used to fix crop offsets
};

inline TrunkCfg trunk_cfg(Scale s) {
    if (s == Scale::desk) return {{8, 16, 32, 64, 64}, {1, 1, 1, 1, 1}, 64, 3, 64};
    return {{64, 128, 256, 512, 512}, {2, 2, 3, 3, 3}, 4096, 7, 512};
}

// Node id plus the traced spatial extent at the reference input size.
struct Traced {
    int id;
    std::int64_t e;
};

struct TrunkOut {
    std::vector<Traced> stage_out;  // post-relu output of each stage's last conv
    std::vector<Traced> pool_out;   // output of pool i (after stage i)
    Traced last;                    // deepest node
};

// VGG-style stack of 3x3 conv stages; `initial_padding` applies to the very
// first convolution, all others use padding 1. A pool follows stage i for
// i < num_pools.
inline TrunkOut build_trunk(Graph& g, const TrunkCfg& cfg, std::int64_t in_ch, std::int64_t initial_padding,
                            int num_pools, int input_node) {
    TrunkOut out;
    Traced cur{input_node, cfg.ref_extent};
    std::int64_t ch = in_ch;
    for (int s = 0; s < 5; ++s) {
        for (int c = 0; c < cfg.convs[static_cast<std::size_t>(s)]; ++c) {
            const std::string nm = "conv" + std::to_string(s + 1) + "_" + std::to_string(c + 1);
            const std::int64_t pad = (s == 0 && c == 0) ? initial_padding : 1;
            const int conv = g.add_conv2d(nm, cur.id, ch, cfg.widths[static_cast<std::size_t>(s)], 3, 1, pad);
            const int act = g.add_relu("relu" + std::to_string(s + 1) + "_" + std::to_string(c + 1), conv);
            cur = {act, cur.e + 2 * pad - 2};
            ch = cfg.widths[static_cast<std::size_t>(s)];
        }
        out.stage_out.push_back(cur);
        if (s < num_pools) {
            const int p = g.add_maxpool2d("pool" + std::to_string(s + 1), cur.id, 2, 2);
            cur = {p, (cur.e - 2) / 2 + 1};
            out.pool_out.push_back(cur);
        }
    }
    out.last = cur;
    return out;
}

inline std::int64_t hed_side_stride(int stage, int num_pools) {
    std::int64_t s = 1;
    for (int i = 0; i < stage && i < num_pools; ++i) s *= 2;
    return s;
}

}  // namespace detail

// HED: single-stream trunk with a side output from the last convolution of
// every stage; no pooling after stage 5. Sides are upsampled by their own
// transposed convolution, cropped to the input extents and fused by channel
// concatenation plus a 1x1 convolution.
inline NetworkSpec build_hed(const ArchConfig& cfg) {
    const detail::TrunkCfg tc = detail::trunk_cfg(cfg.scale);
    const int num_pools = cfg.scale == Scale::desk ? 3 : 4;
    const std::int64_t k_cls = cfg.num_classes;

    NetworkSpec net;
    net.name = ArchName::HED;
    net.scale = cfg.scale;
    net.input_channels = cfg.channels();
    net.num_classes = static_cast<int>(k_cls);
    net.fuse_mode = FuseMode::concat;
    Graph& g = net.graph;
    net.input_node = g.add_input("image");
    auto trunk = detail::build_trunk(g, tc, net.input_channels, cfg.hed_padding, num_pools, net.input_node);

    std::vector<int> crops;
    for (int s = 0; s < 5; ++s) {
        const std::int64_t stride = detail::hed_side_stride(s, num_pools);
        const std::int64_t kk = 2 * stride + 2;
        const auto src = trunk.stage_out[static_cast<std::size_t>(s)];
        const int dsn = g.add_conv2d("dsn" + std::to_string(s + 1), src.id,
                                     tc.widths[static_cast<std::size_t>(s)], k_cls, 1, 1, 0,
                                     ParamInit::zeros);
        const int up = g.add_transposed_conv2d("up" + std::to_string(s + 1), dsn, k_cls, k_cls, kk, stride, 0);
        const std::int64_t big = (src.e - 1) * stride + kk;
        const std::int64_t off = (big - tc.ref_extent) / 2;
        const int crop = g.add_crop_align("crop" + std::to_string(s + 1), up, net.input_node, off);
        crops.push_back(crop);
        net.side_nodes.push_back(crop);
    }
    const int fuse = g.add_fuse("fuse", crops, FuseMode::concat);
    net.score_node = g.add_conv2d("fuse_conv", fuse, 5 * k_cls, k_cls, 1, 1, 0, ParamInit::averaging);
    net.loss_node = g.add_softmax_loss("loss", net.score_node);
    return net;
}

// The proposed variant: the first two side outputs are removed, the initial
// padding is dropped, crops use a fixed 1-pixel offset and the remaining
// sides are fused by an element-wise maximum.
inline NetworkSpec build_modified_hed(const ArchConfig& cfg) {
    const detail::TrunkCfg tc = detail::trunk_cfg(cfg.scale);
    const int num_pools = cfg.scale == Scale::desk ? 3 : 4;
    const std::int64_t k_cls = cfg.num_classes;

    NetworkSpec net;
    net.name = ArchName::MODIFIED_HED;
    net.scale = cfg.scale;
    net.input_channels = cfg.channels();
    net.num_classes = static_cast<int>(k_cls);
    net.fuse_mode = FuseMode::eltwise_max;
    Graph& g = net.graph;
    net.input_node = g.add_input("image");
    auto trunk = detail::build_trunk(g, tc, net.input_channels, 0, num_pools, net.input_node);

    std::vector<int> crops;
    for (int s = 2; s < 5; ++s) {
        const std::int64_t stride = detail::hed_side_stride(s, num_pools);
        const std::int64_t kk = 2 * stride + 2;
        const auto src = trunk.stage_out[static_cast<std::size_t>(s)];
        const int dsn = g.add_conv2d("dsn" + std::to_string(s + 1), src.id,
                                     tc.widths[static_cast<std::size_t>(s)], k_cls, 1, 1, 0,
                                     ParamInit::zeros);
        const int up = g.add_transposed_conv2d("up" + std::to_string(s + 1), dsn, k_cls, k_cls, kk, stride, 0);
        const std::int64_t big = (src.e - 1) * stride + kk;
        if (big < tc.ref_extent + 1)
            throw std::logic_error("modified HED: side " + std::to_string(s + 1) +
                                   " too small for the 1-pixel crop offset");
        const int crop = g.add_crop_align("crop" + std::to_string(s + 1), up, net.input_node, 1);
        crops.push_back(crop);
        net.side_nodes.push_back(crop);
    }
    net.score_node = g.add_fuse("fuse", crops, FuseMode::eltwise_max);
    net.loss_node = g.add_softmax_loss("loss", net.score_node);
    return net;
}

// FCN family. The numeric suffix is the stride of the last transposed
// convolution; FCN14/26/46 carry 0/1/2 skip connections taken after pooling
// stages. Deeper variants pool further down before the score head, skip maps
// are pooled onto the head's grid, aligned by cropping and fused by a 1x1
// convolution over the concatenated class maps.
inline NetworkSpec build_fcn(int variant, const ArchConfig& cfg) {
    if (variant != 14 && variant != 26 && variant != 46)
        throw std::invalid_argument("build_fcn: unsupported variant " + std::to_string(variant) +
                                    " (expected 14, 26 or 46)");
    const detail::TrunkCfg tc = detail::trunk_cfg(cfg.scale);
    const int num_pools = variant == 14 ? 3 : variant == 26 ? 4 : 5;
    const std::int64_t k_cls = cfg.num_classes;

    NetworkSpec net;
    net.name = variant == 14 ? ArchName::FCN14 : variant == 26 ? ArchName::FCN26 : ArchName::FCN46;
    net.scale = cfg.scale;
    net.input_channels = cfg.channels();
    net.num_classes = static_cast<int>(k_cls);
    net.skip_count = variant == 14 ? 0 : variant == 26 ? 1 : 2;
    net.fuse_mode = FuseMode::concat;
    Graph& g = net.graph;
    net.input_node = g.add_input("image");
    auto trunk = detail::build_trunk(g, tc, net.input_channels, 35, num_pools, net.input_node);

    // dense head on the deepest map
    const int fc6 = g.add_conv2d("fc6", trunk.last.id, tc.widths[4], tc.fc_ch, tc.fc6_kernel, 1, 0);
    const int relu6 = g.add_relu("relu6", fc6);
    const int fc7 = g.add_conv2d("fc7", relu6, tc.fc_ch, tc.fc_ch, 1, 1, 0);
    const int relu7 = g.add_relu("relu7", fc7);
    detail::Traced head{g.add_conv2d("score_fr", relu7, tc.fc_ch, k_cls, 1, 1, 0, ParamInit::zeros),
                        trunk.last.e - (tc.fc6_kernel - 1)};

    // skip connections, pooled down to the head grid
    std::vector<int> fused = {head.id};
    struct Skip {
        int pool_index;   // i-th pool output (0-based)
        std::int64_t win;  // pooling factor down to the head grid
    };
    std::vector<Skip> skips;
    if (variant == 26) skips = {{2, 2}};
    if (variant == 46) skips = {{3, 2}, {2, 4}};
    for (std::size_t i = 0; i < skips.size(); ++i) {
        const auto src = trunk.pool_out[static_cast<std::size_t>(skips[i].pool_index)];
        const std::int64_t ch = tc.widths[static_cast<std::size_t>(skips[i].pool_index)];
        const std::string suffix = std::to_string(skips[i].pool_index + 1);
        const int score = g.add_conv2d("score_pool" + suffix, src.id, ch, k_cls, 1, 1, 0, ParamInit::zeros);
        const int pooled = g.add_maxpool2d("downpool" + suffix, score, skips[i].win, skips[i].win);
        const std::int64_t pe = (src.e - skips[i].win) / skips[i].win + 1;
        if (pe < head.e + 1)
            throw std::logic_error("build_fcn: skip " + suffix + " grid too small to crop");
        fused.push_back(g.add_crop_align("crop_pool" + suffix, pooled, head.id, 1));
    }
    if (!skips.empty()) {
        const int cat = g.add_fuse("fuse", fused, FuseMode::concat);
        head.id = g.add_conv2d("fuse_conv", cat, static_cast<std::int64_t>(fused.size()) * k_cls, k_cls, 1,
                               1, 0, ParamInit::averaging);
    }

    const std::int64_t up_stride = variant;
    const std::int64_t up_kernel = 2 * variant;
    const int up = g.add_transposed_conv2d("upscore", head.id, k_cls, k_cls, up_kernel, up_stride, 0);
    const std::int64_t big = (head.e - 1) * up_stride + up_kernel;
    const std::int64_t off = (big - tc.ref_extent) / 2;
    net.score_node = g.add_crop_align("score", up, net.input_node, off);
    net.loss_node = g.add_softmax_loss("loss", net.score_node);
    return net;
}

// Grid detector: a fully convolutional trunk downsampling by exactly
// cell_size, with a coverage head (1 channel) and a corner head (4 channels:
// x1,y1,x2,y2 relative to each cell origin).
inline NetworkSpec build_detector(std::int64_t cell_size, const ArchConfig& cfg) {
    if (cell_size < 2 || (cell_size & (cell_size - 1)) != 0)
        throw std::invalid_argument("build_detector: cell_size must be a power of two >= 2");
    std::int64_t pools = 0;
    for (std::int64_t c = cell_size; c > 1; c /= 2) ++pools;
    const bool desk = cfg.scale == Scale::desk;
    std::vector<std::int64_t> widths;
    for (std::int64_t i = 0; i < pools; ++i) {
        const std::int64_t base = desk ? 8 : 64;
        widths.push_back(std::min<std::int64_t>(base << i, desk ? 64 : 512));
    }

    NetworkSpec net;
    net.name = ArchName::DETECTOR;
    net.scale = cfg.scale;
    net.input_channels = cfg.channels();
    net.num_classes = 1;
    net.cell_size = cell_size;
    Graph& g = net.graph;
    net.input_node = g.add_input("image");
    int cur = net.input_node;
    std::int64_t ch = net.input_channels;
    for (std::int64_t s = 0; s < pools; ++s) {
        const std::string nm = std::to_string(s + 1);
        const int conv = g.add_conv2d("conv" + nm, cur, ch, widths[static_cast<std::size_t>(s)], 3, 1, 1);
        const int act = g.add_relu("relu" + nm, conv);
        cur = g.add_maxpool2d("pool" + nm, act, 2, 2);
        ch = widths[static_cast<std::size_t>(s)];
    }
    const int neck = g.add_conv2d("neck", cur, ch, ch, 3, 1, 1);
    const int neck_act = g.add_relu("neck_relu", neck);
    net.coverage_node = g.add_conv2d("coverage", neck_act, ch, 1, 1, 1, 0, ParamInit::zeros);
    net.bbox_node = g.add_conv2d("bbox", neck_act, ch, 4, 1, 1, 0, ParamInit::zeros);
    return net;
}

inline NetworkSpec build_arch(ArchName a, const ArchConfig& cfg, std::int64_t cell_size = 16) {
    switch (a) {
        case ArchName::FCN14: return build_fcn(14, cfg);
        case ArchName::FCN26: return build_fcn(26, cfg);
        case ArchName::FCN46: return build_fcn(46, cfg);
        case ArchName::HED: return build_hed(cfg);
        case ArchName::MODIFIED_HED: return build_modified_hed(cfg);
        case ArchName::DETECTOR: return build_detector(cell_size, cfg);
    }
    throw std::invalid_argument("build_arch: unknown architecture");
}

// Runs a segmentation net on one 2-d slice and returns the per-pixel
// foreground probability map (softmax class 1).
inline Tensor forward_probability(NetworkSpec& net, const Tensor& slice2d) {
    if (!net.is_segmenter())
        throw std::invalid_argument("forward_probability: network '" + std::string(arch_name_str(net.name)) +
                                    "' is a detector, not a segmentation net");
    Tensor x;
    if (slice2d.ndim() == 2) {
        x = Tensor({1, 1, slice2d.shape[0], slice2d.shape[1]}, slice2d.data);
    } else {
        require_4d(slice2d, "forward_probability");
        x = slice2d;
    }
    if (x.shape[1] != net.input_channels)
        throw std::invalid_argument("forward_probability: expected " + std::to_string(net.input_channels) +
                                    " input channels");
    net.graph.set_input(net.input_node, std::move(x));
    net.graph.forward();
    const Tensor probs = softmax_probabilities(net.graph.node(net.score_node).out);
    const std::int64_t h = probs.shape[2], w = probs.shape[3];
    Tensor fg({h, w});
    const std::int64_t plane = h * w;
    std::copy(probs.data.begin() + plane, probs.data.begin() + 2 * plane, fg.data.begin());
    return fg;
}

// Structural diff between two specs; one line per difference.
inline std::vector<std::string> graph_diff(const NetworkSpec& a, const NetworkSpec& b) {
    std::vector<std::string> out;
    auto names = [](const Graph& g) {
        std::vector<std::string> v;
        for (int i = 0; i < g.size(); ++i) v.push_back(g.node(i).name);
        return v;
    };
    const auto an = names(a.graph), bn = names(b.graph);
    auto has = [](const std::vector<std::string>& v, const std::string& s) {
        return std::find(v.begin(), v.end(), s) != v.end();
    };
    for (const auto& n : an)
        if (!has(bn, n)) out.push_back("only in A: " + n);
    for (const auto& n : bn)
        if (!has(an, n)) out.push_back("only in B: " + n);
    for (const auto& n : an) {
        if (!has(bn, n)) continue;
        const LayerNode& x = a.graph.node(a.graph.find(n));
        const LayerNode& y = b.graph.node(b.graph.find(n));
        if (x.kind != y.kind) {
            out.push_back(n + ": kind " + node_kind_name(x.kind) + " vs " + node_kind_name(y.kind));
            continue;
        }
        if (x.kernel != y.kernel || x.stride != y.stride || x.window != y.window)
            out.push_back(n + ": geometry differs");
        if (x.padding != y.padding)
            out.push_back(n + ": padding " + std::to_string(x.padding) + " vs " + std::to_string(y.padding));
        if (x.offset != y.offset)
            out.push_back(n + ": offset " + std::to_string(x.offset) + " vs " + std::to_string(y.offset));
        if (x.kind == NodeKind::fuse && x.fuse_mode != y.fuse_mode)
            out.push_back(n + ": fuse mode differs");
        if (x.weight_shape != y.weight_shape) out.push_back(n + ": weight shape differs");
    }
    return out;
}

}  // namespace tseg
