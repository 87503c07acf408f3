#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tseg/graph.hpp"

namespace tseg {

enum class OptimizerKind { sgd, adam };

struct LrSchedule {
    enum class Kind { step, exponential };
    Kind kind = Kind::step;
    double gamma = 0.1;
    int period = 33;
};

struct TrainConfig {
    OptimizerKind optimizer = OptimizerKind::sgd;
    double learning_rate = 1e-3;
    double momentum = 0.9;
    double weight_decay = 1e-5;
    int batch_size = 4;
    int batch_accumulation = 1;
    int epochs = 100;
    LrSchedule schedule;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 1;

    void validate() const {
        if (learning_rate <= 0) throw std::invalid_argument("train config: learning_rate must be > 0");
        if (momentum < 0 || momentum >= 1) throw std::invalid_argument("train config: momentum must be in [0,1)");
        if (weight_decay < 0) throw std::invalid_argument("train config: weight_decay must be >= 0");
        if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
        if (batch_accumulation < 1) throw std::invalid_argument("train config: batch_accumulation must be >= 1");
        if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
    }
};

inline double schedule_lr(double base_lr, int epoch, const LrSchedule& s) {
    if (epoch < 0) throw std::invalid_argument("schedule_lr: epoch must be >= 0");
    if (s.kind == LrSchedule::Kind::step) return base_lr * std::pow(s.gamma, epoch / s.period);
    return base_lr * std::pow(s.gamma, epoch);
}

// Plain-text key=value parser shared by train and phantom configs.
inline std::vector<std::pair<std::string, std::string>> parse_kv_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path);
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    while (std::getline(is, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw std::runtime_error("config: malformed line '" + line + "' in " + path);
        out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return out;
}

inline TrainConfig train_config_from_file(const std::string& path) {
    TrainConfig c;
    for (const auto& [k, v] : parse_kv_file(path)) {
        if (k == "optimizer") {
            if (v == "sgd") c.optimizer = OptimizerKind::sgd;
            else if (v == "adam") c.optimizer = OptimizerKind::adam;
            else throw std::runtime_error("config: unknown optimizer '" + v + "'");
        } else if (k == "learning_rate" || k == "lr") c.learning_rate = std::stod(v);
        else if (k == "momentum") c.momentum = std::stod(v);
        else if (k == "weight_decay") c.weight_decay = std::stod(v);
        else if (k == "batch_size") c.batch_size = std::stoi(v);
        else if (k == "batch_accumulation") c.batch_accumulation = std::stoi(v);
        else if (k == "epochs") c.epochs = std::stoi(v);
        else if (k == "lr_schedule") {
            if (v == "step") c.schedule.kind = LrSchedule::Kind::step;
            else if (v == "exponential") c.schedule.kind = LrSchedule::Kind::exponential;
            else throw std::runtime_error("config: unknown lr_schedule '" + v + "'");
        } else if (k == "gamma") c.schedule.gamma = std::stod(v);
        else if (k == "period") c.schedule.period = std::stoi(v);
        else if (k == "seed") c.seed = static_cast<std::uint64_t>(std::stoull(v));
        else throw std::runtime_error("config: unknown key '" + k + "' in " + path);
    }
    c.validate();
    return c;
}

// Optimizer state; one slot per parameter in Graph::params() order.
struct OptimState {
    std::vector<std::vector<real_t>> m;  // sgd velocity / adam first moment
    std::vector<std::vector<real_t>> v;  // adam second moment
    std::int64_t step_count = 0;

    void init(const std::vector<std::pair<std::string, Tensor*>>& params, OptimizerKind kind) {
        m.clear();
        v.clear();
        for (auto& [name, t] : params) m.emplace_back(t->data.size(), real_t(0));
        if (kind == OptimizerKind::adam)
            for (auto& [name, t] : params) v.emplace_back(t->data.size(), real_t(0));
        step_count = 0;
    }

    void save(const std::string& path, const std::vector<std::pair<std::string, Tensor*>>& params) const {
        std::vector<std::pair<std::string, const Tensor*>> items;
        Tensor step({1}, {static_cast<real_t>(step_count)});
        items.emplace_back("#step", &step);
        std::vector<Tensor> holders;
        holders.reserve(m.size() + v.size());
        for (std::size_t i = 0; i < m.size(); ++i)
            holders.emplace_back(Shape{static_cast<std::int64_t>(m[i].size())}, m[i]);
        for (std::size_t i = 0; i < v.size(); ++i)
            holders.emplace_back(Shape{static_cast<std::int64_t>(v[i].size())}, v[i]);
        std::size_t h = 0;
        for (std::size_t i = 0; i < m.size(); ++i) items.emplace_back(params[i].first + "#m", &holders[h++]);
        for (std::size_t i = 0; i < v.size(); ++i) items.emplace_back(params[i].first + "#v", &holders[h++]);
        save_named_tensors(path, items);
    }

    void load(const std::string& path, const std::vector<std::pair<std::string, Tensor*>>& params,
              OptimizerKind kind) {
        auto stored = load_named_tensors(path);
        init(params, kind);
        std::size_t idx = 0;
        if (stored.empty() || stored[idx].first != "#step")
            throw std::runtime_error("optimizer state: missing #step in " + path);
        step_count = static_cast<std::int64_t>(stored[idx++].second.data[0]);
        for (std::size_t i = 0; i < m.size(); ++i, ++idx) {
            if (idx >= stored.size() || stored[idx].first != params[i].first + "#m")
                throw std::runtime_error("optimizer state: mismatch at '" + params[i].first + "#m'");
            m[i] = stored[idx].second.data;
        }
        for (std::size_t i = 0; i < v.size(); ++i, ++idx) {
            if (idx >= stored.size() || stored[idx].first != params[i].first + "#v")
                throw std::runtime_error("optimizer state: mismatch at '" + params[i].first + "#v'");
            v[i] = stored[idx].second.data;
        }
    }
};

inline void sgd_step(const std::vector<std::pair<std::string, Tensor*>>& params, OptimState& st,
                     double lr, const TrainConfig& cfg) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i].second;
        if (p.grad.size() != p.data.size())
            throw std::runtime_error("sgd_step: parameter '" + params[i].first + "' has no gradient");
        auto& vel = st.m[i];
        for (std::size_t j = 0; j < p.data.size(); ++j) {
            vel[j] = static_cast<real_t>(cfg.momentum) * vel[j] +
                     (p.grad[j] + static_cast<real_t>(cfg.weight_decay) * p.data[j]);
            p.data[j] -= static_cast<real_t>(lr) * vel[j];
        }
    }
    ++st.step_count;
}

inline void adam_step(const std::vector<std::pair<std::string, Tensor*>>& params, OptimState& st,
                      double lr, const TrainConfig& cfg) {
    const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
    const std::int64_t t = st.step_count + 1;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i].second;
        if (p.grad.size() != p.data.size())
            throw std::runtime_error("adam_step: parameter '" + params[i].first + "' has no gradient");
        auto& m = st.m[i];
        auto& v = st.v[i];
        for (std::size_t j = 0; j < p.data.size(); ++j) {
            const double g = static_cast<double>(p.grad[j]) + cfg.weight_decay * static_cast<double>(p.data[j]);
            m[j] = static_cast<real_t>(b1 * m[j] + (1.0 - b1) * g);
            v[j] = static_cast<real_t>(b2 * v[j] + (1.0 - b2) * g * g);
            const double mhat = static_cast<double>(m[j]) / bc1;
            const double vhat = static_cast<double>(v[j]) / bc2;
            p.data[j] -= static_cast<real_t>(lr * mhat / (std::sqrt(vhat) + cfg.adam_eps));
        }
    }
    ++st.step_count;
}

inline void optimizer_step(const std::vector<std::pair<std::string, Tensor*>>& params, OptimState& st,
                           double lr, const TrainConfig& cfg) {
    if (cfg.optimizer == OptimizerKind::sgd)
        sgd_step(params, st, lr, cfg);
    else
        adam_step(params, st, lr, cfg);
}

struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainLog {
    struct Row {
        int epoch;
        double train_loss;
        double val_loss;
        double lr;
    };
    std::vector<Row> rows;

    void to_csv(const std::string& path) const {
        std::ofstream os(path);
        if (!os) throw std::runtime_error("train log: cannot write " + path);
        os << "epoch,train_loss,val_loss,lr\n";
        char buf[160];
        for (const auto& r : rows) {
            std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g\n", r.epoch, r.train_loss, r.val_loss, r.lr);
            os << buf;
        }
    }
};

// Generic epoch loop shared by the segmentation and detection trainers.
// `run_sample(i, accumulate)` runs forward (and backward when accumulate)
// for training sample i and returns its loss; `eval_sample(i)` is
// forward-only on the validation set. Gradients are averaged over each
// effective batch of batch_size * batch_accumulation samples.
inline TrainLog train_loop(Graph& g, std::size_t train_count, std::size_t val_count,
                           const TrainConfig& cfg,
                           const std::function<double(std::size_t, bool)>& run_sample,
                           const std::function<double(std::size_t)>& eval_sample) {
    cfg.validate();
    if (train_count == 0) throw std::invalid_argument("train: empty training set");
    auto params = g.params();
    OptimState st;
    st.init(params, cfg.optimizer);
    TrainLog log;
    std::vector<std::size_t> order(train_count);
    for (std::size_t i = 0; i < train_count; ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = schedule_lr(cfg.learning_rate, epoch, cfg.schedule);
        Rng shuffle_rng(derive_seed(cfg.seed, "epoch" + std::to_string(epoch)));
        shuffle(order, shuffle_rng);

        double epoch_loss = 0.0;
        std::size_t iterations = 0;
        std::size_t pos = 0;
        while (pos < train_count) {
            g.zero_grads();
            std::size_t group_samples = 0;
            for (int acc = 0; acc < cfg.batch_accumulation && pos < train_count; ++acc) {
                double iter_loss = 0.0;
                std::size_t batch_n = 0;
                for (int b = 0; b < cfg.batch_size && pos < train_count; ++b, ++pos) {
                    iter_loss += run_sample(order[pos], true);
                    ++batch_n;
                }
                group_samples += batch_n;
                epoch_loss += iter_loss / static_cast<double>(batch_n);
                ++iterations;
            }
            // average accumulated gradients over the effective batch
            const real_t inv = real_t(1) / static_cast<real_t>(group_samples);
            for (auto& [name, p] : params)
                for (auto& gv : p->grad) gv *= inv;
            optimizer_step(params, st, lr, cfg);
        }
        epoch_loss /= static_cast<double>(iterations);

        double val_loss = 0.0;
        if (val_count > 0) {
            for (std::size_t i = 0; i < val_count; ++i) val_loss += eval_sample(i);
            val_loss /= static_cast<double>(val_count);
        }
        if (!std::isfinite(epoch_loss) || !std::isfinite(val_loss))
            throw DivergenceError("training diverged at epoch " + std::to_string(epoch) +
                                  " (non-finite loss)");
        log.rows.push_back({epoch, epoch_loss, val_loss, lr});
    }
    return log;
}

}  // namespace tseg
