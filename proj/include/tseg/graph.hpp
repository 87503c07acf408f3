#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tseg/ops.hpp"
#include "tseg/tensor.hpp"

namespace tseg {

enum class NodeKind { input, conv2d, transposed_conv2d, maxpool2d, relu, crop_align, fuse, softmax_loss };

inline const char* node_kind_name(NodeKind k) {
    switch (k) {
        case NodeKind::input: return "input";
        case NodeKind::conv2d: return "conv2d";
        case NodeKind::transposed_conv2d: return "transposed_conv2d";
        case NodeKind::maxpool2d: return "maxpool2d";
        case NodeKind::relu: return "relu";
        case NodeKind::crop_align: return "crop_align";
        case NodeKind::fuse: return "fuse";
        case NodeKind::softmax_loss: return "softmax_loss";
    }
    return "?";
}

enum class ParamInit { he_uniform, zeros, bilinear, averaging };

struct LayerNode {
    std::string name;
    NodeKind kind = NodeKind::input;
    std::vector<int> inputs;

    // hyperparameters (meaning depends on kind)
    std::int64_t kernel = 0;
    std::int64_t stride = 1;
    std::int64_t padding = 0;
    std::int64_t window = 0;
    std::int64_t offset = 0;
    FuseMode fuse_mode = FuseMode::concat;

    // parameters; data stays empty until Graph::materialize()
    Shape weight_shape, bias_shape;
    ParamInit weight_init = ParamInit::he_uniform;
    Tensor weight, bias;

    // runtime state
    Tensor out;
    Tensor out_grad;
    std::vector<std::int32_t> argmax;
    std::vector<std::int32_t> labels;  // softmax_loss only
    bool labels_set = false;
    real_t loss_value = 0;
    std::vector<real_t> scratch, scratch2;

    std::int64_t param_count() const { return numel_of_or0(weight_shape) + numel_of_or0(bias_shape); }

private:
    static std::int64_t numel_of_or0(const Shape& s) { return s.empty() ? 0 : numel_of(s); }
};

// A DAG of layer nodes in topological (insertion) order. Single-threaded per
// instance; independent instances may run concurrently.
class Graph {
public:
    int add_input(const std::string& name) {
        LayerNode n;
        n.name = name;
        n.kind = NodeKind::input;
        return push(std::move(n));
    }

    int add_conv2d(const std::string& name, int input, std::int64_t in_ch, std::int64_t out_ch,
                   std::int64_t kernel, std::int64_t stride, std::int64_t padding,
                   ParamInit init = ParamInit::he_uniform, bool with_bias = true) {
        LayerNode n;
        n.name = name;
        n.kind = NodeKind::conv2d;
        n.inputs = {check_ref(input)};
        n.kernel = kernel;
        n.stride = stride;
        n.padding = padding;
        n.weight_shape = {out_ch, in_ch, kernel, kernel};
        if (with_bias) n.bias_shape = {out_ch};
        n.weight_init = init;
        return push(std::move(n));
    }

    int add_transposed_conv2d(const std::string& name, int input, std::int64_t in_ch, std::int64_t out_ch,
                              std::int64_t kernel, std::int64_t stride, std::int64_t padding,
                              ParamInit init = ParamInit::bilinear) {
        LayerNode n;
        n.name = name;
        n.kind = NodeKind::transposed_conv2d;
        n.inputs = {check_ref(input)};
        n.kernel = kernel;
        n.stride = stride;
        n.padding = padding;
        n.weight_shape = {in_ch, out_ch, kernel, kernel};
        n.weight_init = init;
        return push(std::move(n));
    }

    int add_maxpool2d(const std::string& name, int input, std::int64_t window, std::int64_t stride) {
        LayerNode n;
        n.name = name;
        n.kind = NodeKind::maxpool2d;
        n.inputs = {check_ref(input)};
        n.window = window;
        n.stride = stride;
        return push(std::move(n));
    }

    int add_relu(const std::string& name, int input) {
        LayerNode n;
        n.name = name;
        n.kind = NodeKind::relu;
        n.inputs = {check_ref(input)};
        return push(std::move(n));
    }

    // Crops `big` to the spatial extents of `target`, starting at (offset, offset).
    int add_crop_align(const std::string& name, int big, int target, std::int64_t offset) {
        LayerNode n;
        n.name = name;
        n.kind = NodeKind::crop_align;
        n.inputs = {check_ref(big), check_ref(target)};
        n.offset = offset;
        return push(std::move(n));
    }

    int add_fuse(const std::string& name, std::vector<int> inputs, FuseMode mode) {
        LayerNode n;
        n.name = name;
        n.kind = NodeKind::fuse;
        for (int i : inputs) check_ref(i);
        n.inputs = std::move(inputs);
        n.fuse_mode = mode;
        return push(std::move(n));
    }

    int add_softmax_loss(const std::string& name, int scores) {
        LayerNode n;
        n.name = name;
        n.kind = NodeKind::softmax_loss;
        n.inputs = {check_ref(scores)};
        return push(std::move(n));
    }

    LayerNode& node(int i) { return nodes_.at(static_cast<std::size_t>(i)); }
    const LayerNode& node(int i) const { return nodes_.at(static_cast<std::size_t>(i)); }
    int size() const { return static_cast<int>(nodes_.size()); }

    int find(const std::string& name) const {
        for (int i = 0; i < size(); ++i)
            if (nodes_[static_cast<std::size_t>(i)].name == name) return i;
        throw std::invalid_argument("graph: no node named '" + name + "'");
    }

    std::int64_t param_count() const {
        std::int64_t n = 0;
        for (const auto& nd : nodes_) n += nd.param_count();
        return n;
    }

    // Creates parameter storage and runs the deterministic initializers.
    void materialize(std::uint64_t seed) {
        for (int i = 0; i < size(); ++i) {
            LayerNode& nd = nodes_[static_cast<std::size_t>(i)];
            if (nd.weight_shape.empty()) continue;
            Rng rng(derive_seed(seed, nd.name));
            nd.weight = init_weight(nd, rng);
            nd.weight.ensure_grad();
            if (!nd.bias_shape.empty()) {
                nd.bias = Tensor::zeros(nd.bias_shape);
                nd.bias.ensure_grad();
            }
        }
        materialized_ = true;
    }
    bool materialized() const { return materialized_; }

    void set_input(int node_id, Tensor value) {
        LayerNode& nd = node(node_id);
        if (nd.kind != NodeKind::input) throw std::invalid_argument("set_input: node is not an input");
        nd.out = std::move(value);
    }

    void set_labels(int loss_node, std::vector<std::int32_t> labels) {
        LayerNode& nd = node(loss_node);
        if (nd.kind != NodeKind::softmax_loss) throw std::invalid_argument("set_labels: node is not a loss");
        nd.labels = std::move(labels);
        nd.labels_set = true;
    }

    void forward() {
        if (!materialized_) throw std::logic_error("graph: materialize() before forward()");
        for (auto& nd : nodes_) forward_node(nd);
    }

    void zero_grads() {
        for (auto& nd : nodes_) {
            if (!nd.weight.data.empty()) {
                nd.weight.ensure_grad();
                nd.weight.zero_grad();
            }
            if (!nd.bias.data.empty()) {
                nd.bias.ensure_grad();
                nd.bias.zero_grad();
            }
        }
    }

    // Reverse-mode accumulation. Softmax-loss nodes with labels seed
    // themselves with dL/dL = 1; additional output gradients may be supplied
    // for graphs whose loss lives outside (e.g. the detection loss).
    void backward(const std::vector<std::pair<int, const Tensor*>>& external_seeds = {}) {
        validate_acyclic();
        for (auto& nd : nodes_) {
            nd.out_grad = Tensor(nd.out.shape.empty() ? Shape{1} : nd.out.shape);
        }
        bool seeded = false;
        for (auto& nd : nodes_) {
            if (nd.kind == NodeKind::softmax_loss && nd.labels_set) {
                nd.out_grad.data[0] = 1;
                seeded = true;
            }
        }
        for (const auto& [id, g] : external_seeds) {
            LayerNode& nd = node(id);
            if (g->shape != nd.out.shape)
                throw std::invalid_argument("backward: seed shape " + shape_str(g->shape) +
                                            " != node output " + shape_str(nd.out.shape));
            for (std::size_t i = 0; i < g->data.size(); ++i) nd.out_grad.data[i] += g->data[i];
            seeded = true;
        }
        if (!seeded) throw std::logic_error("backward: nothing to seed (no loss labels, no external seeds)");
        for (int i = size() - 1; i >= 0; --i) backward_node(nodes_[static_cast<std::size_t>(i)]);
    }

    std::vector<std::pair<std::string, Tensor*>> params() {
        std::vector<std::pair<std::string, Tensor*>> out;
        for (auto& nd : nodes_) {
            if (!nd.weight.data.empty()) out.emplace_back(nd.name + ".weight", &nd.weight);
            if (!nd.bias.data.empty()) out.emplace_back(nd.name + ".bias", &nd.bias);
        }
        return out;
    }

    real_t loss() const {
        for (const auto& nd : nodes_)
            if (nd.kind == NodeKind::softmax_loss && nd.labels_set) return nd.loss_value;
        throw std::logic_error("graph: no evaluated loss node");
    }

    std::string summary() const {
        std::ostringstream os;
        os << std::left << std::setw(22) << "node" << std::setw(19) << "kind" << std::setw(18) << "shape"
           << "params\n";
        for (const auto& nd : nodes_) {
            std::string shp = !nd.out.shape.empty() ? shape_str(nd.out.shape)
                              : !nd.weight_shape.empty() ? shape_str(nd.weight_shape)
                                                         : "-";
            os << std::left << std::setw(22) << nd.name << std::setw(19) << node_kind_name(nd.kind)
               << std::setw(18) << shp << nd.param_count() << "\n";
        }
        os << "total params: " << param_count() << "\n";
        return os.str();
    }

private:
    std::vector<LayerNode> nodes_;
    bool materialized_ = false;

    int push(LayerNode n) {
        for (const auto& e : nodes_)
            if (e.name == n.name) throw std::invalid_argument("graph: duplicate node name '" + n.name + "'");
        nodes_.push_back(std::move(n));
        return size() - 1;
    }

    int check_ref(int i) const {
        if (i < 0 || i >= size())
            throw std::invalid_argument("graph: input reference " + std::to_string(i) +
                                        " must point to an existing earlier node");
        return i;
    }

    void validate_acyclic() const {
        for (int i = 0; i < size(); ++i)
            for (int j : nodes_[static_cast<std::size_t>(i)].inputs)
                if (j >= i)
                    throw std::logic_error("graph: cycle detected at node '" +
                                           nodes_[static_cast<std::size_t>(i)].name + "'");
    }

    Tensor init_weight(const LayerNode& nd, Rng& rng) const {
        switch (nd.weight_init) {
            case ParamInit::zeros:
                return Tensor::zeros(nd.weight_shape);
            case ParamInit::he_uniform: {
                const std::int64_t fan_in = nd.weight_shape[1] * nd.weight_shape[2] * nd.weight_shape[3];
                const real_t a = static_cast<real_t>(std::sqrt(6.0 / static_cast<double>(fan_in)));
                return Tensor::uniform(nd.weight_shape, rng, -a, a);
            }
            case ParamInit::bilinear: {
                // Channel-diagonal bilinear upsampling kernel for [A,B,k,k].
                Tensor w = Tensor::zeros(nd.weight_shape);
                const std::int64_t a = nd.weight_shape[0], b = nd.weight_shape[1], k = nd.weight_shape[2];
                const double c = (static_cast<double>(k) - 1.0) / 2.0;
                for (std::int64_t i = 0; i < a; ++i) {
                    if (i >= b) break;
                    for (std::int64_t ky = 0; ky < k; ++ky)
                        for (std::int64_t kx = 0; kx < k; ++kx) {
                            const double fy = std::max(0.0, 1.0 - std::abs(ky - c) / nd.stride);
                            const double fx = std::max(0.0, 1.0 - std::abs(kx - c) / nd.stride);
                            w.data[static_cast<std::size_t>(((i * b + i) * k + ky) * k + kx)] =
                                static_cast<real_t>(fy * fx);
                        }
                }
                return w;
            }
            case ParamInit::averaging: {
                // 1x1 fuse conv over a concat of m groups of out_ch channels.
                Tensor w = Tensor::zeros(nd.weight_shape);
                const std::int64_t co = nd.weight_shape[0], ci = nd.weight_shape[1];
                if (ci % co != 0) throw std::logic_error("averaging init: in channels not a multiple of out");
                const real_t v = static_cast<real_t>(co) / static_cast<real_t>(ci);
                for (std::int64_t o = 0; o < co; ++o)
                    for (std::int64_t i = 0; i < ci; ++i)
                        if (i % co == o)
                            w.data[static_cast<std::size_t>(o * ci * nd.weight_shape[2] * nd.weight_shape[3] +
                                                            i * nd.weight_shape[2] * nd.weight_shape[3])] = v;
                return w;
            }
        }
        throw std::logic_error("init_weight: unknown init");
    }

    void forward_node(LayerNode& nd) {
        switch (nd.kind) {
            case NodeKind::input:
                if (nd.out.data.empty()) throw std::logic_error("graph: input '" + nd.name + "' not set");
                break;
            case NodeKind::conv2d:
                nd.out = conv2d_forward(in(nd, 0).out, nd.weight, nd.bias.data.empty() ? nullptr : &nd.bias,
                                        nd.stride, nd.padding, nd.scratch);
                break;
            case NodeKind::transposed_conv2d:
                nd.out = transposed_conv2d_forward(in(nd, 0).out, nd.weight, nd.stride, nd.padding, nd.scratch);
                break;
            case NodeKind::maxpool2d:
                nd.out = maxpool2d_forward(in(nd, 0).out, nd.window, nd.stride, nd.argmax);
                break;
            case NodeKind::relu:
                nd.out = relu_forward(in(nd, 0).out);
                break;
            case NodeKind::crop_align: {
                const Tensor& tgt = in(nd, 1).out;
                nd.out = crop_align_forward(in(nd, 0).out, tgt.shape[2], tgt.shape[3], nd.offset);
                break;
            }
            case NodeKind::fuse: {
                std::vector<const Tensor*> xs;
                xs.reserve(nd.inputs.size());
                for (int i : nd.inputs) xs.push_back(&node(i).out);
                nd.out = nd.fuse_mode == FuseMode::eltwise_max ? fuse_eltwise_max_forward(xs, nd.argmax)
                                                               : fuse_concat_forward(xs);
                break;
            }
            case NodeKind::softmax_loss: {
                if (!nd.labels_set) break;  // inference pass
                nd.loss_value = softmax_multinomial_loss(in(nd, 0).out, nd.labels, nullptr);
                nd.out = Tensor({1}, {nd.loss_value});
                break;
            }
        }
    }

    void backward_node(LayerNode& nd) {
        switch (nd.kind) {
            case NodeKind::input:
                break;
            case NodeKind::conv2d: {
                LayerNode& x = in(nd, 0);
                conv2d_backward(x.out, nd.weight, nd.out_grad, nd.stride, nd.padding,
                                x.out_grad.data.data(), &nd.weight,
                                nd.bias.data.empty() ? nullptr : &nd.bias, nd.scratch, nd.scratch2);
                break;
            }
            case NodeKind::transposed_conv2d: {
                LayerNode& x = in(nd, 0);
                transposed_conv2d_backward(x.out, nd.weight, nd.out_grad, nd.stride, nd.padding,
                                           x.out_grad.data.data(), &nd.weight, nd.scratch);
                break;
            }
            case NodeKind::maxpool2d: {
                LayerNode& x = in(nd, 0);
                maxpool2d_backward(x.out, nd.out_grad, nd.argmax, x.out_grad.data.data());
                break;
            }
            case NodeKind::relu: {
                LayerNode& x = in(nd, 0);
                relu_backward(x.out, nd.out_grad, x.out_grad.data.data());
                break;
            }
            case NodeKind::crop_align: {
                LayerNode& x = in(nd, 0);
                crop_align_backward(x.out, nd.out_grad, nd.offset, x.out_grad.data.data());
                break;
            }
            case NodeKind::fuse: {
                if (nd.fuse_mode == FuseMode::eltwise_max) {
                    for (std::size_t i = 0; i < nd.out_grad.data.size(); ++i) {
                        LayerNode& src = node(nd.inputs[static_cast<std::size_t>(nd.argmax[i])]);
                        src.out_grad.data[i] += nd.out_grad.data[i];
                    }
                } else {
                    const std::int64_t n = nd.out.shape[0], plane = nd.out.shape[2] * nd.out.shape[3];
                    const std::int64_t ctot = nd.out.shape[1];
                    for (std::int64_t b = 0; b < n; ++b) {
                        std::int64_t coff = 0;
                        for (int id : nd.inputs) {
                            LayerNode& src = node(id);
                            const std::int64_t c = src.out.shape[1];
                            const real_t* g = nd.out_grad.data.data() + (b * ctot + coff) * plane;
                            real_t* dst = src.out_grad.data.data() + b * c * plane;
                            for (std::int64_t i = 0; i < c * plane; ++i) dst[i] += g[i];
                            coff += c;
                        }
                    }
                }
                break;
            }
            case NodeKind::softmax_loss: {
                if (!nd.labels_set) break;
                LayerNode& x = in(nd, 0);
                const real_t seed = nd.out_grad.data[0];
                if (seed == real_t(1)) {
                    softmax_multinomial_loss(x.out, nd.labels, x.out_grad.data.data());
                } else if (seed != real_t(0)) {
                    Tensor tmp(x.out.shape);
                    softmax_multinomial_loss(x.out, nd.labels, tmp.data.data());
                    for (std::size_t i = 0; i < tmp.data.size(); ++i) x.out_grad.data[i] += seed * tmp.data[i];
                }
                break;
            }
        }
    }

    LayerNode& in(LayerNode& nd, int slot) { return node(nd.inputs[static_cast<std::size_t>(slot)]); }
};

// ------------------------- checkpoint persistence --------------------------
// Text manifest of (name, shape) lines plus a raw little-endian 64-bit-real
// payload file, parameters concatenated in manifest order.

namespace detail {
inline void write_f64_le(std::ofstream& os, double v) {
    static_assert(sizeof(double) == 8);
    unsigned char b[8];
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}
inline double read_f64_le(std::ifstream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
}
}  // namespace detail

inline void save_named_tensors(const std::string& path,
                               const std::vector<std::pair<std::string, const Tensor*>>& items) {
    std::ofstream mf(path);
    if (!mf) throw std::runtime_error("checkpoint: cannot write " + path);
    std::ofstream bf(path + ".bin", std::ios::binary);
    if (!bf) throw std::runtime_error("checkpoint: cannot write " + path + ".bin");
    for (const auto& [name, t] : items) {
        mf << name;
        for (auto d : t->shape) mf << " " << d;
        mf << "\n";
        for (real_t v : t->data) detail::write_f64_le(bf, static_cast<double>(v));
    }
}

inline std::vector<std::pair<std::string, Tensor>> load_named_tensors(const std::string& path) {
    std::ifstream mf(path);
    if (!mf) throw std::runtime_error("checkpoint: cannot read " + path);
    std::ifstream bf(path + ".bin", std::ios::binary);
    if (!bf) throw std::runtime_error("checkpoint: cannot read " + path + ".bin");
    std::vector<std::pair<std::string, Tensor>> out;
    std::string line;
    while (std::getline(mf, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string name;
        ls >> name;
        Shape shape;
        std::int64_t d;
        while (ls >> d) shape.push_back(d);
        if (name.empty() || shape.empty())
            throw std::runtime_error("checkpoint: malformed manifest line '" + line + "' in " + path);
        Tensor t(shape);
        for (auto& v : t.data) {
            v = static_cast<real_t>(detail::read_f64_le(bf));
            if (!bf) throw std::runtime_error("checkpoint: payload " + path + ".bin truncated");
        }
        out.emplace_back(std::move(name), std::move(t));
    }
    bf.peek();
    if (!bf.eof()) throw std::runtime_error("checkpoint: payload " + path + ".bin larger than manifest");
    return out;
}

inline void save_checkpoint(Graph& g, const std::string& path) {
    std::vector<std::pair<std::string, const Tensor*>> items;
    for (auto& [name, t] : g.params()) items.emplace_back(name, t);
    save_named_tensors(path, items);
}

inline void load_checkpoint(Graph& g, const std::string& path) {
    auto stored = load_named_tensors(path);
    auto live = g.params();
    if (stored.size() != live.size())
        throw std::runtime_error("checkpoint: " + path + " holds " + std::to_string(stored.size()) +
                                 " parameters, graph expects " + std::to_string(live.size()));
    for (std::size_t i = 0; i < live.size(); ++i) {
        if (stored[i].first != live[i].first || stored[i].second.shape != live[i].second->shape)
            throw std::runtime_error("checkpoint: mismatch at entry '" + stored[i].first +
                                     "' (graph has '" + live[i].first + "' " +
                                     shape_str(live[i].second->shape) + ")");
        live[i].second->data = std::move(stored[i].second.data);
    }
}

}  // namespace tseg
