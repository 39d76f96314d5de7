#pragma once

// Thin layer structs over graph ops, Kaiming-style init, and Adam.

#include <cmath>
#include <map>

#include "segface/core/graph.hpp"

namespace segface {

inline Tensor kaiming_uniform(Rng& rng, std::vector<int> shape, int fan_in, float gain = 1.0f) {
    Tensor t(std::move(shape));
    float bound = gain * std::sqrt(6.0f / static_cast<float>(fan_in));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
    return t;
}

// Registry every model derives from; drives the optimizer and checkpoints.
class ParamSet {
public:
    Param& add(const std::string& name, Tensor init) {
        params_.push_back(std::make_unique<Param>(name, std::move(init)));
        return *params_.back();
    }
    std::vector<Param*> all() {
        std::vector<Param*> v;
        v.reserve(params_.size());
        for (auto& p : params_) v.push_back(p.get());
        return v;
    }
    Param* find(const std::string& name) {
        for (auto& p : params_)
            if (p->name == name) return p.get();
        return nullptr;
    }
    void zero_grads() {
        for (auto& p : params_) p->zero_grad();
    }
    int64_t count() const {
        int64_t n = 0;
        for (auto& p : params_) n += p->value.numel();
        return n;
    }

private:
    std::vector<std::unique_ptr<Param>> params_;
};

struct Conv2d {
    Param* w = nullptr;
    Param* b = nullptr;
    int stride = 1, pad = -1;

    Conv2d() = default;
    Conv2d(ParamSet& ps, const std::string& name, Rng& rng, int cin, int cout, int k,
           int stride_ = 1, int pad_ = -1, float gain = 1.4f)
        : stride(stride_), pad(pad_ < 0 ? k / 2 : pad_) {
        w = &ps.add(name + ".w", kaiming_uniform(rng, {cout, cin, k, k}, cin * k * k, gain));
        b = &ps.add(name + ".b", Tensor({cout}));
    }
    Node* operator()(Graph& g, Node* x) const {
        return conv2d(g, x, g.param(*w), g.param(*b), stride, pad);
    }
    Node* frozen(Graph& g, Node* x) const {
        return conv2d(g, x, g.frozen(*w), g.frozen(*b), stride, pad);
    }
};

struct ConvT2d {
    Param* w = nullptr;
    Param* b = nullptr;
    int stride = 2, pad = 1;

    ConvT2d() = default;
    ConvT2d(ParamSet& ps, const std::string& name, Rng& rng, int cin, int cout, int k = 4,
            int stride_ = 2, int pad_ = 1, float gain = 1.4f)
        : stride(stride_), pad(pad_) {
        w = &ps.add(name + ".w", kaiming_uniform(rng, {cin, cout, k, k}, cin * k * k, gain));
        b = &ps.add(name + ".b", Tensor({cout}));
    }
    Node* operator()(Graph& g, Node* x) const {
        return conv_transpose2d(g, x, g.param(*w), g.param(*b), stride, pad);
    }
    Node* frozen(Graph& g, Node* x) const {
        return conv_transpose2d(g, x, g.frozen(*w), g.frozen(*b), stride, pad);
    }
};

struct Linear {
    Param* w = nullptr;
    Param* b = nullptr;

    Linear() = default;
    Linear(ParamSet& ps, const std::string& name, Rng& rng, int in, int out, float gain = 1.4f) {
        w = &ps.add(name + ".w", kaiming_uniform(rng, {out, in}, in, gain));
        b = &ps.add(name + ".b", Tensor({out}));
    }
    Node* operator()(Graph& g, Node* x) const {
        return linear(g, x, g.param(*w), g.param(*b));
    }
    Node* frozen(Graph& g, Node* x) const {
        return linear(g, x, g.frozen(*w), g.frozen(*b));
    }
};

struct InstanceNorm {
    Param* gamma = nullptr;
    Param* beta = nullptr;

    InstanceNorm() = default;
    InstanceNorm(ParamSet& ps, const std::string& name, int channels) {
        gamma = &ps.add(name + ".gamma", Tensor::full({channels}, 1.0f));
        beta = &ps.add(name + ".beta", Tensor({channels}));
    }
    Node* operator()(Graph& g, Node* x) const {
        return instance_norm(g, x, g.param(*gamma), g.param(*beta));
    }
    Node* frozen(Graph& g, Node* x) const {
        return instance_norm(g, x, g.frozen(*gamma), g.frozen(*beta));
    }
};

struct AdamConfig {
    float lr = 1e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 0.0f;
};

class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    void step(const std::vector<Param*>& params) {
        ++t_;
        const float bc1 = 1.0f - std::pow(cfg_.beta1, static_cast<float>(t_));
        const float bc2 = 1.0f - std::pow(cfg_.beta2, static_cast<float>(t_));
        for (Param* p : params) {
            for (int64_t i = 0; i < p->value.numel(); ++i) {
                float gr = p->grad[i] + cfg_.weight_decay * p->value[i];
                float m = cfg_.beta1 * p->adam_m[i] + (1.0f - cfg_.beta1) * gr;
                float v = cfg_.beta2 * p->adam_v[i] + (1.0f - cfg_.beta2) * gr * gr;
                p->adam_m[i] = m;
                p->adam_v[i] = v;
                float mh = m / bc1;
                float vh = v / bc2;
                p->value[i] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
            }
        }
    }

    int64_t steps() const { return t_; }
    AdamConfig& config() { return cfg_; }

private:
    AdamConfig cfg_;
    int64_t t_ = 0;
};

}  // namespace segface
