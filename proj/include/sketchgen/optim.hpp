#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace sketchgen {

struct AdamConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    // Snap parameters and moments onto the float32 grid after each step so
    // checkpoint serialization (float32 payloads) is lossless and a
    // save/load/resume run matches an uninterrupted one bit for bit.
    bool round_state_to_f32 = true;
};

// Per-parameter first/second moment buffers plus the shared step counter.
struct AdamState {
    AdamConfig config;
    long long step_count = 0;
    std::vector<std::vector<double>> m;  // one buffer per parameter, same shape
    std::vector<std::vector<double>> v;
};

// Standard bias-corrected Adam. Parameters are registered once; their order
// is fixed and the moment buffers are keyed by that order.
class Adam {
public:
    explicit Adam(AdamConfig config = {}) { state_.config = config; }

    void register_params(const std::vector<Tensor>& params) {
        for (const Tensor& p : params) add_param(p);
    }

    void add_param(const Tensor& p) {
        params_.push_back(p);
        state_.m.emplace_back(p.data().size(), 0.0);
        state_.v.emplace_back(p.data().size(), 0.0);
    }

    // One update over all registered parameters, reading each tensor's grad.
    // Gradients are left untouched; call zero_grads() between steps.
    void step() {
        state_.step_count += 1;
        const AdamConfig& c = state_.config;
        const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state_.step_count));
        const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state_.step_count));
        for (size_t pi = 0; pi < params_.size(); ++pi) {
            Tensor& p = params_[pi];
            const std::vector<double>& g = p.grad();
            std::vector<double>& m = state_.m[pi];
            std::vector<double>& v = state_.v[pi];
            if (g.size() != m.size())
                throw contract_error("Adam::step: gradient size changed for parameter " +
                                     std::to_string(pi));
            for (size_t i = 0; i < m.size(); ++i) {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                p.data()[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
            }
            if (c.round_state_to_f32) {
                p.round_to_f32();
                for (double& x : m) x = static_cast<double>(static_cast<float>(x));
                for (double& x : v) x = static_cast<double>(static_cast<float>(x));
            }
        }
    }

    void zero_grads() {
        for (Tensor& p : params_) p.zero_grad();
    }

    AdamState& state() { return state_; }
    const AdamState& state() const { return state_; }
    std::vector<Tensor>& params() { return params_; }

private:
    std::vector<Tensor> params_;
    AdamState state_;
};

// Single-shot functional form: applies one Adam update to `params` given
// matching `grads`, mutating `state` in place.
inline void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
                      AdamState& state) {
    if (params.size() != grads.size())
        throw contract_error("adam_step: params/grads count mismatch");
    if (state.m.empty()) {
        for (const Tensor& p : params) {
            state.m.emplace_back(p.data().size(), 0.0);
            state.v.emplace_back(p.data().size(), 0.0);
        }
    }
    state.step_count += 1;
    const AdamConfig& c = state.config;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step_count));
    for (size_t pi = 0; pi < params.size(); ++pi) {
        if (params[pi].shape() != grads[pi].shape())
            throw contract_error("adam_step: shape mismatch at parameter " + std::to_string(pi) +
                                 ": " + shape_str(params[pi].shape()) + " vs " +
                                 shape_str(grads[pi].shape()));
        const std::vector<double>& g = grads[pi].data();
        std::vector<double>& m = state.m[pi];
        std::vector<double>& v = state.v[pi];
        for (size_t i = 0; i < m.size(); ++i) {
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
            params[pi].data()[i] -= c.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + c.eps);
        }
        if (c.round_state_to_f32) {
            params[pi].round_to_f32();
            for (double& x : m) x = static_cast<double>(static_cast<float>(x));
            for (double& x : v) x = static_cast<double>(static_cast<float>(x));
        }
    }
}

}  // namespace sketchgen
