#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace sketchgen {

// Named traversal of a module's trainable tensors. The visit order is fixed
// by construction; checkpointing sorts names separately.
using ParamVisitor = std::function<void(const std::string&, Tensor&)>;

inline Tensor init_randn(Shape shape, Rng& rng, double stddev, bool trainable = true) {
    Tensor t = Tensor::randn(std::move(shape), rng, stddev, trainable);
    t.round_to_f32();
    return t;
}

struct Linear {
    Tensor w;  // [in x out]
    Tensor b;  // [out]

    Linear() = default;

    Linear(int in, int out, Rng& rng, double stddev = -1.0) {
        if (stddev < 0.0) stddev = 1.0 / std::sqrt(static_cast<double>(in));
        w = init_randn({in, out}, rng, stddev);
        b = Tensor::zeros({out}, true);
    }

    static Linear zero_init(int in, int out) {
        Linear l;
        l.w = Tensor::zeros({in, out}, true);
        l.b = Tensor::zeros({out}, true);
        return l;
    }

    Tensor operator()(const Tensor& x) const { return add_row_broadcast(matmul(x, w), b); }

    void visit_params(const std::string& prefix, const ParamVisitor& f) {
        f(prefix + ".w", w);
        f(prefix + ".b", b);
    }

    void set_trainable(bool t) {
        w.set_requires_grad(t);
        b.set_requires_grad(t);
    }
};

struct Conv2d {
    Tensor w;  // [out x in x kh x kw]
    Tensor b;  // [out]
    int stride = 1;
    int pad = 0;

    Conv2d() = default;

    Conv2d(int in_ch, int out_ch, int k, int stride_, int pad_, Rng& rng)
        : stride(stride_), pad(pad_) {
        const double stddev = 1.0 / std::sqrt(static_cast<double>(in_ch * k * k));
        w = init_randn({out_ch, in_ch, k, k}, rng, stddev);
        b = Tensor::zeros({out_ch}, true);
    }

    Tensor operator()(const Tensor& x) const { return conv2d(x, w, b, stride, pad); }

    void visit_params(const std::string& prefix, const ParamVisitor& f) {
        f(prefix + ".w", w);
        f(prefix + ".b", b);
    }

    void set_trainable(bool t) {
        w.set_requires_grad(t);
        b.set_requires_grad(t);
    }
};

// Flat snapshot of a parameter set, for frozen-weights assertions.
inline std::vector<double> snapshot_params(const std::function<void(const ParamVisitor&)>& visit) {
    std::vector<double> out;
    visit([&](const std::string&, Tensor& t) {
        out.insert(out.end(), t.data().begin(), t.data().end());
    });
    return out;
}

}  // namespace sketchgen
