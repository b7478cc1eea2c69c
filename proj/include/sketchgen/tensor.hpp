#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "random.hpp"

namespace sketchgen {

using Shape = std::vector<int>;

inline long long numel_of(const Shape& s) {
    long long n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first touched
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;  // scatters this node's grad into parents

    long long numel() const { return static_cast<long long>(data.size()); }

    std::vector<double>& ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
        return grad;
    }
};

}  // namespace detail

// Dense tensor handle over a shared autodiff node. Values are doubles in
// row-major order; reductions accumulate in double as well. Copying a Tensor
// copies the handle, not the buffer.
class Tensor {
public:
    Tensor() : n_(std::make_shared<detail::Node>()) {}

    explicit Tensor(std::shared_ptr<detail::Node> n) : n_(std::move(n)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), 0.0, requires_grad);
    }

    static Tensor filled(Shape shape, double value, bool requires_grad = false) {
        auto n = std::make_shared<detail::Node>();
        n->data.assign(static_cast<size_t>(numel_of(shape)), value);
        n->shape = std::move(shape);
        n->requires_grad = requires_grad;
        return Tensor(n);
    }

    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false) {
        if (numel_of(shape) != static_cast<long long>(data.size()))
            throw contract_error("Tensor::from_data: shape " + shape_str(shape) +
                                 " does not match data length " + std::to_string(data.size()));
        auto n = std::make_shared<detail::Node>();
        n->shape = std::move(shape);
        n->data = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(n);
    }

    static Tensor scalar(double value, bool requires_grad = false) {
        return from_data({1}, {value}, requires_grad);
    }

    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (double& v : t.data()) v = stddev * rng.normal();
        return t;
    }

    const Shape& shape() const { return n_->shape; }
    long long numel() const { return n_->numel(); }
    int dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(n_->shape.size()); }

    std::vector<double>& data() { return n_->data; }
    const std::vector<double>& data() const { return n_->data; }

    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool b) { n_->requires_grad = b; }

    std::vector<double>& grad() { return n_->ensure_grad(); }
    const std::vector<double>& grad_const() const { return n_->ensure_grad(); }

    void zero_grad() {
        if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), 0.0);
    }

    // Scalar extraction; the tensor must hold exactly one value.
    double value() const {
        if (numel() != 1)
            throw contract_error("Tensor::value: tensor is not scalar, shape " +
                                 shape_str(n_->shape));
        return n_->data[0];
    }

    // Deep copy with no graph history.
    Tensor detached() const {
        auto n = std::make_shared<detail::Node>();
        n->shape = n_->shape;
        n->data = n_->data;
        return Tensor(n);
    }

    // Snap every value onto the float32 grid. Trainable state lives on this
    // grid so float32 serialization round-trips losslessly.
    void round_to_f32() {
        for (double& v : n_->data) v = static_cast<double>(static_cast<float>(v));
    }

    std::shared_ptr<detail::Node> node() const { return n_; }

private:
    std::shared_ptr<detail::Node> n_;
};

inline bool all_finite(const Tensor& t) {
    for (double v : t.data())
        if (!std::isfinite(v)) return false;
    return true;
}

namespace detail {

inline Tensor make_op(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                      std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    bool rg = false;
    for (const Tensor& t : inputs) rg = rg || t.requires_grad();
    if (rg) {
        n->requires_grad = true;
        n->parents.reserve(inputs.size());
        for (const Tensor& t : inputs) n->parents.push_back(t.node());
        n->backprop = std::move(backprop);
    }
    return Tensor(n);
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw contract_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
}

// Dot product with eight independent accumulator lanes and a fixed summation
// tree. The lane split lets the compiler vectorize what a strict serial
// reduction cannot, while the result stays deterministic for a given n.
inline double dot_lanes(const double* __restrict a, const double* __restrict b, int n) {
    double lane[8] = {0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
    int j = 0;
    for (; j + 8 <= n; j += 8)
        for (int l = 0; l < 8; ++l) lane[l] += a[j + l] * b[j + l];
    double tail = 0.0;
    for (; j < n; ++j) tail += a[j] * b[j];
    return (((lane[0] + lane[1]) + (lane[2] + lane[3])) +
            ((lane[4] + lane[5]) + (lane[6] + lane[7]))) +
           tail;
}

inline double sum_lanes(const double* __restrict a, int n) {
    double lane[8] = {0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
    int j = 0;
    for (; j + 8 <= n; j += 8)
        for (int l = 0; l < 8; ++l) lane[l] += a[j + l];
    double tail = 0.0;
    for (; j < n; ++j) tail += a[j];
    return (((lane[0] + lane[1]) + (lane[2] + lane[3])) +
            ((lane[4] + lane[5]) + (lane[6] + lane[7]))) +
           tail;
}

// Runs f(0..n-1), in parallel only when the operation is big enough to pay
// for thread dispatch. Each index is computed wholly by one thread with a
// fixed interior order, so results do not depend on the thread count.
template <typename F>
inline void par_for(int n, long long work, const F& f) {
#ifdef _OPENMP
    if (work > 262144 && n > 1) {
#pragma omp parallel for schedule(static)
        for (int i = 0; i < n; ++i) f(i);
        return;
    }
#endif
    for (int i = 0; i < n; ++i) f(i);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Reverse-mode differentiation. Gradients accumulate additively: repeated
// backward calls (or a parameter reached through several paths) sum up.
// ---------------------------------------------------------------------------
inline void backward(const Tensor& loss) {
    if (loss.numel() != 1)
        throw contract_error("backward: loss must be scalar, got shape " +
                             shape_str(loss.shape()));
    detail::Node* root = loss.node().get();
    if (!root->requires_grad) return;  // constant graph, nothing reachable

    // Iterative post-order DFS over the requires_grad subgraph.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    struct Frame {
        detail::Node* n;
        size_t next;
    };
    std::vector<Frame> stack;
    stack.push_back({root, 0});
    seen.insert(root);
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.n->parents.size()) {
            detail::Node* p = f.n->parents[f.next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }

    // Interior gradients are scratch state for this pass; only leaves
    // accumulate across repeated backward calls.
    for (detail::Node* n : order)
        if (n->backprop && !n->grad.empty()) std::fill(n->grad.begin(), n->grad.end(), 0.0);

    root->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backprop) {
            n->ensure_grad();
            n->backprop(*n);
        }
    }
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------
inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<double> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    auto an = a.node(), bn = b.node();
    return detail::make_op(a.shape(), std::move(out), {a, b}, [an, bn](detail::Node& self) {
        if (an->requires_grad) {
            auto& g = an->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            auto& g = bn->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<double> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    auto an = a.node(), bn = b.node();
    return detail::make_op(a.shape(), std::move(out), {a, b}, [an, bn](detail::Node& self) {
        if (an->requires_grad) {
            auto& g = an->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            auto& g = bn->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<double> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    auto an = a.node(), bn = b.node();
    return detail::make_op(a.shape(), std::move(out), {a, b}, [an, bn](detail::Node& self) {
        if (an->requires_grad) {
            auto& g = an->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->data[i];
        }
        if (bn->requires_grad) {
            auto& g = bn->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->data[i];
        }
    });
}

inline Tensor add_scalar(const Tensor& a, double s) {
    std::vector<double> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + s;
    auto an = a.node();
    return detail::make_op(a.shape(), std::move(out), {a}, [an](detail::Node& self) {
        if (!an->requires_grad) return;
        auto& g = an->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

inline Tensor mul_scalar(const Tensor& a, double s) {
    std::vector<double> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
    auto an = a.node();
    return detail::make_op(a.shape(), std::move(out), {a}, [an, s](detail::Node& self) {
        if (!an->requires_grad) return;
        auto& g = an->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
    });
}

inline Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

inline Tensor abs_t(const Tensor& a) {
    std::vector<double> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(a.data()[i]);
    auto an = a.node();
    return detail::make_op(a.shape(), std::move(out), {a}, [an](detail::Node& self) {
        if (!an->requires_grad) return;
        auto& g = an->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) {
            double x = an->data[i];
            double s = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);  // subgradient 0 at 0
            g[i] += self.grad[i] * s;
        }
    });
}

inline Tensor relu(const Tensor& a) {
    std::vector<double> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
    auto an = a.node();
    return detail::make_op(a.shape(), std::move(out), {a}, [an](detail::Node& self) {
        if (!an->requires_grad) return;
        auto& g = an->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i)
            if (an->data[i] > 0.0) g[i] += self.grad[i];
    });
}

inline Tensor tanh_t(const Tensor& a) {
    std::vector<double> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.data()[i]);
    auto an = a.node();
    return detail::make_op(a.shape(), std::move(out), {a}, [an](detail::Node& self) {
        if (!an->requires_grad) return;
        auto& g = an->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) {
            double y = self.data[i];
            g[i] += self.grad[i] * (1.0 - y * y);
        }
    });
}

inline Tensor sigmoid(const Tensor& a) {
    std::vector<double> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-a.data()[i]));
    auto an = a.node();
    return detail::make_op(a.shape(), std::move(out), {a}, [an](detail::Node& self) {
        if (!an->requires_grad) return;
        auto& g = an->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) {
            double y = self.data[i];
            g[i] += self.grad[i] * y * (1.0 - y);
        }
    });
}

inline Tensor gelu(const Tensor& a) {
    constexpr double kInvSqrt2 = 0.7071067811865475244;
    constexpr double kInvSqrt2Pi = 0.3989422804014326779;
    std::vector<double> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) {
        double x = a.data()[i];
        out[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    }
    auto an = a.node();
    return detail::make_op(a.shape(), std::move(out), {a}, [an](detail::Node& self) {
        if (!an->requires_grad) return;
        auto& g = an->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) {
            double x = an->data[i];
            double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            g[i] += self.grad[i] * (cdf + x * pdf);
        }
    });
}

// Constant copy; gradients do not flow past it.
inline Tensor detach(const Tensor& a) { return a.detached(); }

// ---------------------------------------------------------------------------
// Matrix ops (rank-2)
// ---------------------------------------------------------------------------
inline void check_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2)
        throw contract_error(std::string(op) + ": expected rank-2 tensor, got " +
                             shape_str(t.shape()));
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    check_rank2(a, "matmul");
    check_rank2(b, "matmul");
    const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2)
        throw contract_error("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
    const double* A = a.data().data();
    const double* B = b.data().data();
    const long long work = static_cast<long long>(m) * k * n;
    // Each output row is accumulated in fixed k order by exactly one thread.
    detail::par_for(m, work, [&](int i) {
        double* orow = out.data() + static_cast<size_t>(i) * n;
        const double* arow = A + static_cast<size_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            const double* brow = B + static_cast<size_t>(kk) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    });
    auto an = a.node(), bn = b.node();
    return detail::make_op({m, n}, std::move(out), {a, b},
                           [an, bn, m, k, n, work](detail::Node& self) {
        const double* G = self.grad.data();
        if (an->requires_grad) {
            double* gA = an->ensure_grad().data();
            const double* B = bn->data.data();
            detail::par_for(m, work, [&](int i) {
                const double* grow = G + static_cast<size_t>(i) * n;
                double* garow = gA + static_cast<size_t>(i) * k;
                for (int kk = 0; kk < k; ++kk)
                    garow[kk] += detail::dot_lanes(grow, B + static_cast<size_t>(kk) * n, n);
            });
        }
        if (bn->requires_grad) {
            double* gB = bn->ensure_grad().data();
            const double* A = an->data.data();
            for (int i = 0; i < m; ++i) {
                const double* arow = A + static_cast<size_t>(i) * k;
                const double* grow = G + static_cast<size_t>(i) * n;
                for (int kk = 0; kk < k; ++kk) {
                    const double av = arow[kk];
                    double* gbrow = gB + static_cast<size_t>(kk) * n;
                    for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                }
            }
        }
    });
}

inline Tensor transpose2d(const Tensor& a) {
    check_rank2(a, "transpose2d");
    const int m = a.dim(0), n = a.dim(1);
    std::vector<double> out(a.data().size());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<size_t>(j) * m + i] = a.data()[static_cast<size_t>(i) * n + j];
    auto an = a.node();
    return detail::make_op({n, m}, std::move(out), {a}, [an, m, n](detail::Node& self) {
        if (!an->requires_grad) return;
        auto& g = an->ensure_grad();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                g[static_cast<size_t>(i) * n + j] += self.grad[static_cast<size_t>(j) * m + i];
    });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (numel_of(shape) != a.numel())
        throw contract_error("reshape: element count mismatch, " + shape_str(a.shape()) +
                             " -> " + shape_str(shape));
    std::vector<double> out = a.data();
    auto an = a.node();
    return detail::make_op(std::move(shape), std::move(out), {a}, [an](detail::Node& self) {
        if (!an->requires_grad) return;
        auto& g = an->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

inline Tensor slice_cols(const Tensor& a, int col0, int count) {
    check_rank2(a, "slice_cols");
    const int m = a.dim(0), n = a.dim(1);
    if (col0 < 0 || count <= 0 || col0 + count > n)
        throw contract_error("slice_cols: range [" + std::to_string(col0) + ", " +
                             std::to_string(col0 + count) + ") outside width " +
                             std::to_string(n));
    std::vector<double> out(static_cast<size_t>(m) * count);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < count; ++j)
            out[static_cast<size_t>(i) * count + j] =
                a.data()[static_cast<size_t>(i) * n + col0 + j];
    auto an = a.node();
    return detail::make_op({m, count}, std::move(out), {a},
                           [an, m, n, col0, count](detail::Node& self) {
                               if (!an->requires_grad) return;
                               auto& g = an->ensure_grad();
                               for (int i = 0; i < m; ++i)
                                   for (int j = 0; j < count; ++j)
                                       g[static_cast<size_t>(i) * n + col0 + j] +=
                                           self.grad[static_cast<size_t>(i) * count + j];
                           });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw contract_error("concat_cols: no inputs");
    const int m = parts[0].dim(0);
    int n = 0;
    for (const Tensor& p : parts) {
        check_rank2(p, "concat_cols");
        if (p.dim(0) != m) throw contract_error("concat_cols: row count mismatch");
        n += p.dim(1);
    }
    std::vector<double> out(static_cast<size_t>(m) * n);
    int off = 0;
    for (const Tensor& p : parts) {
        const int w = p.dim(1);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j)
                out[static_cast<size_t>(i) * n + off + j] =
                    p.data()[static_cast<size_t>(i) * w + j];
        off += w;
    }
    std::vector<std::shared_ptr<detail::Node>> nodes;
    std::vector<int> widths;
    for (const Tensor& p : parts) {
        nodes.push_back(p.node());
        widths.push_back(p.dim(1));
    }
    return detail::make_op({m, n}, std::move(out), parts,
                           [nodes, widths, m, n](detail::Node& self) {
                               int off = 0;
                               for (size_t pi = 0; pi < nodes.size(); ++pi) {
                                   const int w = widths[pi];
                                   if (nodes[pi]->requires_grad) {
                                       auto& g = nodes[pi]->ensure_grad();
                                       for (int i = 0; i < m; ++i)
                                           for (int j = 0; j < w; ++j)
                                               g[static_cast<size_t>(i) * w + j] +=
                                                   self.grad[static_cast<size_t>(i) * n + off + j];
                                   }
                                   off += w;
                               }
                           });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw contract_error("concat_rows: no inputs");
    const int n = parts[0].dim(1);
    int m = 0;
    for (const Tensor& p : parts) {
        check_rank2(p, "concat_rows");
        if (p.dim(1) != n) throw contract_error("concat_rows: column count mismatch");
        m += p.dim(0);
    }
    std::vector<double> out;
    out.reserve(static_cast<size_t>(m) * n);
    for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    std::vector<std::shared_ptr<detail::Node>> nodes;
    std::vector<int> rows;
    for (const Tensor& p : parts) {
        nodes.push_back(p.node());
        rows.push_back(p.dim(0));
    }
    return detail::make_op({m, n}, std::move(out), parts, [nodes, rows, n](detail::Node& self) {
        size_t off = 0;
        for (size_t pi = 0; pi < nodes.size(); ++pi) {
            const size_t count = static_cast<size_t>(rows[pi]) * n;
            if (nodes[pi]->requires_grad) {
                auto& g = nodes[pi]->ensure_grad();
                for (size_t i = 0; i < count; ++i) g[i] += self.grad[off + i];
            }
            off += count;
        }
    });
}

// Rank-1 concatenation, used to build conditioning vectors.
inline Tensor concat_flat(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw contract_error("concat_flat: no inputs");
    long long total = 0;
    for (const Tensor& p : parts) total += p.numel();
    std::vector<double> out;
    out.reserve(static_cast<size_t>(total));
    for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    std::vector<std::shared_ptr<detail::Node>> nodes;
    for (const Tensor& p : parts) nodes.push_back(p.node());
    return detail::make_op({static_cast<int>(total)}, std::move(out), parts,
                           [nodes](detail::Node& self) {
                               size_t off = 0;
                               for (const auto& pn : nodes) {
                                   const size_t count = pn->data.size();
                                   if (pn->requires_grad) {
                                       auto& g = pn->ensure_grad();
                                       for (size_t i = 0; i < count; ++i)
                                           g[i] += self.grad[off + i];
                                   }
                                   off += count;
                               }
                           });
}

// Adds vector v (numel == columns) to every row of a.
inline Tensor add_row_broadcast(const Tensor& a, const Tensor& v) {
    check_rank2(a, "add_row_broadcast");
    const int m = a.dim(0), n = a.dim(1);
    if (v.numel() != n)
        throw contract_error("add_row_broadcast: vector length " + std::to_string(v.numel()) +
                             " != columns " + std::to_string(n));
    std::vector<double> out(a.data().size());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<size_t>(i) * n + j] =
                a.data()[static_cast<size_t>(i) * n + j] + v.data()[j];
    auto an = a.node(), vn = v.node();
    return detail::make_op(a.shape(), std::move(out), {a, v}, [an, vn, m, n](detail::Node& self) {
        if (an->requires_grad) {
            auto& g = an->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (vn->requires_grad) {
            auto& g = vn->ensure_grad();
            for (int j = 0; j < n; ++j) {
                double acc = 0.0;
                for (int i = 0; i < m; ++i) acc += self.grad[static_cast<size_t>(i) * n + j];
                g[j] += acc;
            }
        }
    });
}

// Multiplies every row of a elementwise by vector v (numel == columns).
inline Tensor mul_row_broadcast(const Tensor& a, const Tensor& v) {
    check_rank2(a, "mul_row_broadcast");
    const int m = a.dim(0), n = a.dim(1);
    if (v.numel() != n)
        throw contract_error("mul_row_broadcast: vector length " + std::to_string(v.numel()) +
                             " != columns " + std::to_string(n));
    std::vector<double> out(a.data().size());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<size_t>(i) * n + j] =
                a.data()[static_cast<size_t>(i) * n + j] * v.data()[j];
    auto an = a.node(), vn = v.node();
    return detail::make_op(a.shape(), std::move(out), {a, v}, [an, vn, m, n](detail::Node& self) {
        if (an->requires_grad) {
            auto& g = an->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    g[static_cast<size_t>(i) * n + j] +=
                        self.grad[static_cast<size_t>(i) * n + j] * vn->data[j];
        }
        if (vn->requires_grad) {
            auto& g = vn->ensure_grad();
            for (int j = 0; j < n; ++j) {
                double acc = 0.0;
                for (int i = 0; i < m; ++i)
                    acc += self.grad[static_cast<size_t>(i) * n + j] *
                           an->data[static_cast<size_t>(i) * n + j];
                g[j] += acc;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Row-wise softmax family
// ---------------------------------------------------------------------------
inline Tensor softmax_rows(const Tensor& a) {
    check_rank2(a, "softmax_rows");
    const int m = a.dim(0), n = a.dim(1);
    std::vector<double> out(a.data().size());
    for (int i = 0; i < m; ++i) {
        const double* row = a.data().data() + static_cast<size_t>(i) * n;
        double* orow = out.data() + static_cast<size_t>(i) * n;
        double mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < n; ++j) {
            orow[j] = std::exp(row[j] - mx);
            sum += orow[j];
        }
        for (int j = 0; j < n; ++j) orow[j] /= sum;
    }
    auto an = a.node();
    return detail::make_op(a.shape(), std::move(out), {a}, [an, m, n](detail::Node& self) {
        if (!an->requires_grad) return;
        auto& g = an->ensure_grad();
        for (int i = 0; i < m; ++i) {
            const double* p = self.data.data() + static_cast<size_t>(i) * n;
            const double* go = self.grad.data() + static_cast<size_t>(i) * n;
            double dot = 0.0;
            for (int j = 0; j < n; ++j) dot += go[j] * p[j];
            for (int j = 0; j < n; ++j) g[static_cast<size_t>(i) * n + j] += p[j] * (go[j] - dot);
        }
    });
}

inline Tensor log_softmax_rows(const Tensor& a) {
    check_rank2(a, "log_softmax_rows");
    const int m = a.dim(0), n = a.dim(1);
    std::vector<double> out(a.data().size());
    for (int i = 0; i < m; ++i) {
        const double* row = a.data().data() + static_cast<size_t>(i) * n;
        double* orow = out.data() + static_cast<size_t>(i) * n;
        double mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < n; ++j) sum += std::exp(row[j] - mx);
        const double lse = mx + std::log(sum);
        for (int j = 0; j < n; ++j) orow[j] = row[j] - lse;
    }
    auto an = a.node();
    return detail::make_op(a.shape(), std::move(out), {a}, [an, m, n](detail::Node& self) {
        if (!an->requires_grad) return;
        auto& g = an->ensure_grad();
        for (int i = 0; i < m; ++i) {
            const double* y = self.data.data() + static_cast<size_t>(i) * n;
            const double* go = self.grad.data() + static_cast<size_t>(i) * n;
            double gsum = 0.0;
            for (int j = 0; j < n; ++j) gsum += go[j];
            for (int j = 0; j < n; ++j)
                g[static_cast<size_t>(i) * n + j] += go[j] - std::exp(y[j]) * gsum;
        }
    });
}

// Fused scaled dot-product attention over `heads` column groups: per head,
// softmax(scale * Q_h K_h^T) V_h, with the probabilities kept for backward.
// One graph node instead of a dozen per-head matmuls.
inline Tensor attention_heads(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                              double scale) {
    check_rank2(q, "attention_heads");
    check_rank2(k, "attention_heads");
    check_rank2(v, "attention_heads");
    const int n = q.dim(0), w = q.dim(1), m = k.dim(0);
    if (k.dim(1) != w || v.dim(1) != w || v.dim(0) != m)
        throw contract_error("attention_heads: Q " + shape_str(q.shape()) + ", K " +
                             shape_str(k.shape()) + ", V " + shape_str(v.shape()) +
                             " do not line up");
    if (heads < 1 || w % heads != 0)
        throw contract_error("attention_heads: width not divisible by heads");
    const int dh = w / heads;

    std::vector<double> probs(static_cast<size_t>(heads) * n * m);
    std::vector<double> out(static_cast<size_t>(n) * w, 0.0);
    const double* Q = q.data().data();
    const double* K = k.data().data();
    const double* V = v.data().data();
    for (int hh = 0; hh < heads; ++hh) {
        const int off = hh * dh;
        double* ph = probs.data() + static_cast<size_t>(hh) * n * m;
        for (int i = 0; i < n; ++i) {
            const double* qrow = Q + static_cast<size_t>(i) * w + off;
            double* prow = ph + static_cast<size_t>(i) * m;
            double mx = -std::numeric_limits<double>::infinity();
            for (int j = 0; j < m; ++j) {
                prow[j] = scale *
                          detail::dot_lanes(qrow, K + static_cast<size_t>(j) * w + off, dh);
                mx = std::max(mx, prow[j]);
            }
            double sum = 0.0;
            for (int j = 0; j < m; ++j) {
                prow[j] = std::exp(prow[j] - mx);
                sum += prow[j];
            }
            const double inv = 1.0 / sum;
            for (int j = 0; j < m; ++j) prow[j] *= inv;
            double* orow = out.data() + static_cast<size_t>(i) * w + off;
            for (int j = 0; j < m; ++j) {
                const double p = prow[j];
                const double* vrow = V + static_cast<size_t>(j) * w + off;
                for (int d = 0; d < dh; ++d) orow[d] += p * vrow[d];
            }
        }
    }

    auto qn = q.node(), kn = k.node(), vn = v.node();
    return detail::make_op(
        {n, w}, std::move(out), {q, k, v},
        [qn, kn, vn, heads, scale, n, m, w, dh,
         probs = std::move(probs)](detail::Node& self) {
            const double* G = self.grad.data();
            const double* Q = qn->data.data();
            const double* K = kn->data.data();
            const double* V = vn->data.data();
            double* gq = qn->requires_grad ? qn->ensure_grad().data() : nullptr;
            double* gk = kn->requires_grad ? kn->ensure_grad().data() : nullptr;
            double* gv = vn->requires_grad ? vn->ensure_grad().data() : nullptr;
            std::vector<double> gp(static_cast<size_t>(m)), gs(static_cast<size_t>(m));
            for (int hh = 0; hh < heads; ++hh) {
                const int off = hh * dh;
                const double* ph = probs.data() + static_cast<size_t>(hh) * n * m;
                for (int i = 0; i < n; ++i) {
                    const double* grow = G + static_cast<size_t>(i) * w + off;
                    const double* prow = ph + static_cast<size_t>(i) * m;
                    double dot_pg = 0.0;
                    for (int j = 0; j < m; ++j) {
                        gp[static_cast<size_t>(j)] = detail::dot_lanes(
                            grow, V + static_cast<size_t>(j) * w + off, dh);
                        dot_pg += gp[static_cast<size_t>(j)] * prow[j];
                    }
                    for (int j = 0; j < m; ++j)
                        gs[static_cast<size_t>(j)] =
                            prow[j] * (gp[static_cast<size_t>(j)] - dot_pg);
                    if (gq) {
                        double* gqrow = gq + static_cast<size_t>(i) * w + off;
                        for (int j = 0; j < m; ++j) {
                            const double c = gs[static_cast<size_t>(j)] * scale;
                            const double* krow = K + static_cast<size_t>(j) * w + off;
                            for (int d = 0; d < dh; ++d) gqrow[d] += c * krow[d];
                        }
                    }
                    if (gk) {
                        const double* qrow = Q + static_cast<size_t>(i) * w + off;
                        for (int j = 0; j < m; ++j) {
                            const double c = gs[static_cast<size_t>(j)] * scale;
                            double* gkrow = gk + static_cast<size_t>(j) * w + off;
                            for (int d = 0; d < dh; ++d) gkrow[d] += c * qrow[d];
                        }
                    }
                    if (gv) {
                        for (int j = 0; j < m; ++j) {
                            const double p = prow[j];
                            double* gvrow = gv + static_cast<size_t>(j) * w + off;
                            for (int d = 0; d < dh; ++d) gvrow[d] += p * grow[d];
                        }
                    }
                }
            }
        });
}

// Row-wise standardization (no affine part); mean/variance in double.
inline Tensor layer_norm_rows(const Tensor& a, double eps = 1e-5) {
    check_rank2(a, "layer_norm_rows");
    const int m = a.dim(0), n = a.dim(1);
    std::vector<double> out(a.data().size());
    std::vector<double> inv_std(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) {
        const double* row = a.data().data() + static_cast<size_t>(i) * n;
        double mean = 0.0;
        for (int j = 0; j < n; ++j) mean += row[j];
        mean /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) {
            const double d = row[j] - mean;
            var += d * d;
        }
        var /= n;
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<size_t>(i)] = inv;
        double* orow = out.data() + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) orow[j] = (row[j] - mean) * inv;
    }
    auto an = a.node();
    return detail::make_op(a.shape(), std::move(out), {a},
                           [an, m, n, inv_std](detail::Node& self) {
                               if (!an->requires_grad) return;
                               auto& g = an->ensure_grad();
                               for (int i = 0; i < m; ++i) {
                                   const double* y = self.data.data() + static_cast<size_t>(i) * n;
                                   const double* go = self.grad.data() + static_cast<size_t>(i) * n;
                                   double gmean = 0.0, gymean = 0.0;
                                   for (int j = 0; j < n; ++j) {
                                       gmean += go[j];
                                       gymean += go[j] * y[j];
                                   }
                                   gmean /= n;
                                   gymean /= n;
                                   const double inv = inv_std[static_cast<size_t>(i)];
                                   for (int j = 0; j < n; ++j)
                                       g[static_cast<size_t>(i) * n + j] +=
                                           inv * (go[j] - gmean - y[j] * gymean);
                               }
                           });
}

// ---------------------------------------------------------------------------
// Lookup / gather
// ---------------------------------------------------------------------------
inline Tensor embedding_rows(const Tensor& table, const std::vector<int>& indices) {
    check_rank2(table, "embedding_rows");
    const int v = table.dim(0), d = table.dim(1);
    std::vector<double> out(indices.size() * static_cast<size_t>(d));
    for (size_t i = 0; i < indices.size(); ++i) {
        const int idx = indices[i];
        if (idx < 0 || idx >= v)
            throw contract_error("embedding_rows: index " + std::to_string(idx) +
                                 " outside table of " + std::to_string(v) + " rows");
        std::copy_n(table.data().data() + static_cast<size_t>(idx) * d, d,
                    out.data() + i * static_cast<size_t>(d));
    }
    auto tn = table.node();
    return detail::make_op({static_cast<int>(indices.size()), d}, std::move(out), {table},
                           [tn, indices, d](detail::Node& self) {
                               if (!tn->requires_grad) return;
                               auto& g = tn->ensure_grad();
                               for (size_t i = 0; i < indices.size(); ++i) {
                                   const size_t src = i * static_cast<size_t>(d);
                                   const size_t dst =
                                       static_cast<size_t>(indices[i]) * static_cast<size_t>(d);
                                   for (int j = 0; j < d; ++j) g[dst + j] += self.grad[src + j];
                               }
                           });
}

// Picks a[rows[t], cols[t]] for each t; rank-1 result.
inline Tensor gather_rc(const Tensor& a, const std::vector<int>& rows,
                        const std::vector<int>& cols) {
    check_rank2(a, "gather_rc");
    if (rows.size() != cols.size()) throw contract_error("gather_rc: rows/cols length mismatch");
    const int m = a.dim(0), n = a.dim(1);
    std::vector<double> out(rows.size());
    for (size_t t = 0; t < rows.size(); ++t) {
        if (rows[t] < 0 || rows[t] >= m || cols[t] < 0 || cols[t] >= n)
            throw contract_error("gather_rc: index (" + std::to_string(rows[t]) + ", " +
                                 std::to_string(cols[t]) + ") outside " + shape_str(a.shape()));
        out[t] = a.data()[static_cast<size_t>(rows[t]) * n + cols[t]];
    }
    auto an = a.node();
    return detail::make_op({static_cast<int>(rows.size())}, std::move(out), {a},
                           [an, rows, cols, n](detail::Node& self) {
                               if (!an->requires_grad) return;
                               auto& g = an->ensure_grad();
                               for (size_t t = 0; t < rows.size(); ++t)
                                   g[static_cast<size_t>(rows[t]) * n + cols[t]] += self.grad[t];
                           });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------
inline Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    auto an = a.node();
    return detail::make_op({1}, {s}, {a}, [an](detail::Node& self) {
        if (!an->requires_grad) return;
        auto& g = an->ensure_grad();
        const double go = self.grad[0];
        for (size_t i = 0; i < g.size(); ++i) g[i] += go;
    });
}

inline Tensor mean_all(const Tensor& a) {
    if (a.numel() == 0) throw contract_error("mean_all: empty tensor");
    double s = 0.0;
    for (double v : a.data()) s += v;
    const double inv = 1.0 / static_cast<double>(a.numel());
    auto an = a.node();
    return detail::make_op({1}, {s * inv}, {a}, [an, inv](detail::Node& self) {
        if (!an->requires_grad) return;
        auto& g = an->ensure_grad();
        const double go = self.grad[0] * inv;
        for (size_t i = 0; i < g.size(); ++i) g[i] += go;
    });
}

// ---------------------------------------------------------------------------
// Image-space ops (rank-3 tensors, CxHxW)
// ---------------------------------------------------------------------------
inline void check_rank3(const Tensor& t, const char* op) {
    if (t.rank() != 3)
        throw contract_error(std::string(op) + ": expected rank-3 (CxHxW) tensor, got " +
                             shape_str(t.shape()));
}

// Convolution via an im2col patch matrix: every inner loop is a contiguous
// multiply-accumulate, forward and backward. The patch matrix is rebuilt in
// the backward pass rather than kept alive with the graph.
namespace detail {

inline std::vector<double> im2col(const double* x, int ci, int h, int wd, int kh, int kw,
                                  int stride, int pad, int oh, int ow) {
    const int patch = ci * kh * kw;
    std::vector<double> col(static_cast<size_t>(oh) * ow * patch, 0.0);
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            double* dst = col.data() + (static_cast<size_t>(oy) * ow + ox) * patch;
            const int iy0 = oy * stride - pad;
            const int ix0 = ox * stride - pad;
            for (int ic = 0; ic < ci; ++ic) {
                const double* xc = x + static_cast<size_t>(ic) * h * wd;
                for (int ky = 0; ky < kh; ++ky) {
                    const int iy = iy0 + ky;
                    double* drow = dst + (static_cast<size_t>(ic) * kh + ky) * kw;
                    if (iy < 0 || iy >= h) continue;  // stays zero
                    const double* xrow = xc + static_cast<size_t>(iy) * wd;
                    for (int kx = 0; kx < kw; ++kx) {
                        const int ix = ix0 + kx;
                        if (ix >= 0 && ix < wd) drow[kx] = xrow[ix];
                    }
                }
            }
        }
    }
    return col;
}

}  // namespace detail

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    check_rank3(x, "conv2d");
    if (w.rank() != 4) throw contract_error("conv2d: weight must be rank-4 (OxIxKhxKw)");
    const int ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const int co = w.dim(0), wi = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    if (wi != ci)
        throw contract_error("conv2d: input channels " + std::to_string(ci) +
                             " != weight channels " + std::to_string(wi));
    if (b.numel() != co) throw contract_error("conv2d: bias length != output channels");
    if (stride < 1) throw contract_error("conv2d: stride must be >= 1");
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (wd + 2 * pad - kw) / stride + 1;
    if (oh <= 0 || ow <= 0) throw contract_error("conv2d: output would be empty");
    const int patch = ci * kh * kw;
    const int cells = oh * ow;

    const std::vector<double> col =
        detail::im2col(x.data().data(), ci, h, wd, kh, kw, stride, pad, oh, ow);
    std::vector<double> out(static_cast<size_t>(co) * cells);
    const double* W = w.data().data();  // already laid out as [co x patch]
    const double* B = b.data().data();
    const long long work = static_cast<long long>(co) * cells * patch;
    detail::par_for(co, work, [&](int oc) {
        const double* wrow = W + static_cast<size_t>(oc) * patch;
        double* orow = out.data() + static_cast<size_t>(oc) * cells;
        for (int p = 0; p < cells; ++p)
            orow[p] = B[oc] + detail::dot_lanes(wrow, col.data() + static_cast<size_t>(p) * patch,
                                                patch);
    });

    auto xn = x.node(), wn = w.node(), bn = b.node();
    return detail::make_op(
        {co, oh, ow}, std::move(out), {x, w, b},
        [xn, wn, bn, ci, h, wd, co, kh, kw, oh, ow, stride, pad, patch, cells,
         work](detail::Node& self) {
            const double* G = self.grad.data();
            if (bn->requires_grad) {
                auto& gb = bn->ensure_grad();
                for (int oc = 0; oc < co; ++oc)
                    gb[oc] += detail::sum_lanes(G + static_cast<size_t>(oc) * cells, cells);
            }
            if (!wn->requires_grad && !xn->requires_grad) return;
            const std::vector<double> col =
                detail::im2col(xn->data.data(), ci, h, wd, kh, kw, stride, pad, oh, ow);
            if (wn->requires_grad) {
                auto& gw = wn->ensure_grad();
                detail::par_for(co, work, [&](int oc) {
                    double* gwrow = gw.data() + static_cast<size_t>(oc) * patch;
                    const double* grow = G + static_cast<size_t>(oc) * cells;
                    for (int p = 0; p < cells; ++p) {
                        const double gv = grow[p];
                        const double* crow = col.data() + static_cast<size_t>(p) * patch;
                        for (int k = 0; k < patch; ++k) gwrow[k] += gv * crow[k];
                    }
                });
            }
            if (xn->requires_grad) {
                // gradient of the patch matrix, then scatter back to the image
                std::vector<double> gcol(static_cast<size_t>(cells) * patch, 0.0);
                const double* W = wn->data.data();
                detail::par_for(cells, work, [&](int p) {
                    double* grow_col = gcol.data() + static_cast<size_t>(p) * patch;
                    for (int oc = 0; oc < co; ++oc) {
                        const double gv = G[static_cast<size_t>(oc) * cells + p];
                        const double* wrow = W + static_cast<size_t>(oc) * patch;
                        for (int k = 0; k < patch; ++k) grow_col[k] += gv * wrow[k];
                    }
                });
                auto& gx = xn->ensure_grad();
                for (int oy = 0; oy < oh; ++oy) {
                    for (int ox = 0; ox < ow; ++ox) {
                        const double* src =
                            gcol.data() + (static_cast<size_t>(oy) * ow + ox) * patch;
                        const int iy0 = oy * stride - pad;
                        const int ix0 = ox * stride - pad;
                        for (int ic = 0; ic < ci; ++ic) {
                            double* gxc = gx.data() + static_cast<size_t>(ic) * h * wd;
                            for (int ky = 0; ky < kh; ++ky) {
                                const int iy = iy0 + ky;
                                if (iy < 0 || iy >= h) continue;
                                const double* srow =
                                    src + (static_cast<size_t>(ic) * kh + ky) * kw;
                                double* gxrow = gxc + static_cast<size_t>(iy) * wd;
                                for (int kx = 0; kx < kw; ++kx) {
                                    const int ix = ix0 + kx;
                                    if (ix >= 0 && ix < wd) gxrow[ix] += srow[kx];
                                }
                            }
                        }
                    }
                }
            }
        });
}

inline Tensor upsample_nearest2x(const Tensor& x) {
    check_rank3(x, "upsample_nearest2x");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    std::vector<double> out(static_cast<size_t>(c) * 4 * h * w);
    for (int ic = 0; ic < c; ++ic)
        for (int y = 0; y < 2 * h; ++y)
            for (int xx = 0; xx < 2 * w; ++xx)
                out[(static_cast<size_t>(ic) * 2 * h + y) * 2 * w + xx] =
                    x.data()[(static_cast<size_t>(ic) * h + y / 2) * w + xx / 2];
    auto xn = x.node();
    return detail::make_op({c, 2 * h, 2 * w}, std::move(out), {x},
                           [xn, c, h, w](detail::Node& self) {
                               if (!xn->requires_grad) return;
                               auto& g = xn->ensure_grad();
                               for (int ic = 0; ic < c; ++ic)
                                   for (int y = 0; y < 2 * h; ++y)
                                       for (int xx = 0; xx < 2 * w; ++xx)
                                           g[(static_cast<size_t>(ic) * h + y / 2) * w + xx / 2] +=
                                               self.grad[(static_cast<size_t>(ic) * 2 * h + y) *
                                                             2 * w +
                                                         xx];
                           });
}

// Non-overlapping kxk mean pooling; k must divide both spatial dims.
inline Tensor avg_pool2d(const Tensor& x, int k) {
    check_rank3(x, "avg_pool2d");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (k < 1 || h % k != 0 || w % k != 0)
        throw contract_error("avg_pool2d: window " + std::to_string(k) +
                             " does not divide " + shape_str(x.shape()));
    const int oh = h / k, ow = w / k;
    const double inv = 1.0 / (k * k);
    std::vector<double> out(static_cast<size_t>(c) * oh * ow);
    for (int ic = 0; ic < c; ++ic)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double acc = 0.0;
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx)
                        acc += x.data()[(static_cast<size_t>(ic) * h + oy * k + ky) * w +
                                        ox * k + kx];
                out[(static_cast<size_t>(ic) * oh + oy) * ow + ox] = acc * inv;
            }
    auto xn = x.node();
    return detail::make_op({c, oh, ow}, std::move(out), {x},
                           [xn, c, h, w, k, oh, ow, inv](detail::Node& self) {
                               if (!xn->requires_grad) return;
                               auto& g = xn->ensure_grad();
                               for (int ic = 0; ic < c; ++ic)
                                   for (int oy = 0; oy < oh; ++oy)
                                       for (int ox = 0; ox < ow; ++ox) {
                                           const double gv =
                                               self.grad[(static_cast<size_t>(ic) * oh + oy) * ow +
                                                         ox] *
                                               inv;
                                           for (int ky = 0; ky < k; ++ky)
                                               for (int kx = 0; kx < k; ++kx)
                                                   g[(static_cast<size_t>(ic) * h + oy * k + ky) *
                                                         w +
                                                     ox * k + kx] += gv;
                                       }
                           });
}

// Mean over the spatial dims of a CxHxW tensor; rank-1 [C] result.
inline Tensor mean_hw(const Tensor& x) {
    check_rank3(x, "mean_hw");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const double inv = 1.0 / (static_cast<double>(h) * w);
    std::vector<double> out(static_cast<size_t>(c));
    for (int ic = 0; ic < c; ++ic) {
        double acc = 0.0;
        const double* plane = x.data().data() + static_cast<size_t>(ic) * h * w;
        for (int p = 0; p < h * w; ++p) acc += plane[p];
        out[static_cast<size_t>(ic)] = acc * inv;
    }
    auto xn = x.node();
    return detail::make_op({c}, std::move(out), {x}, [xn, c, h, w, inv](detail::Node& self) {
        if (!xn->requires_grad) return;
        auto& g = xn->ensure_grad();
        for (int ic = 0; ic < c; ++ic) {
            const double gv = self.grad[static_cast<size_t>(ic)] * inv;
            double* plane = g.data() + static_cast<size_t>(ic) * h * w;
            for (int p = 0; p < h * w; ++p) plane[p] += gv;
        }
    });
}

// CxHxW -> (H*W)xC: one row per spatial cell. Inverse below.
inline Tensor chw_to_rows(const Tensor& x) {
    check_rank3(x, "chw_to_rows");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int p = h * w;
    std::vector<double> out(static_cast<size_t>(p) * c);
    for (int ic = 0; ic < c; ++ic)
        for (int q = 0; q < p; ++q)
            out[static_cast<size_t>(q) * c + ic] = x.data()[static_cast<size_t>(ic) * p + q];
    auto xn = x.node();
    return detail::make_op({p, c}, std::move(out), {x}, [xn, c, p](detail::Node& self) {
        if (!xn->requires_grad) return;
        auto& g = xn->ensure_grad();
        for (int ic = 0; ic < c; ++ic)
            for (int q = 0; q < p; ++q)
                g[static_cast<size_t>(ic) * p + q] += self.grad[static_cast<size_t>(q) * c + ic];
    });
}

inline Tensor rows_to_chw(const Tensor& rows, int h, int w) {
    check_rank2(rows, "rows_to_chw");
    const int p = rows.dim(0), c = rows.dim(1);
    if (p != h * w)
        throw contract_error("rows_to_chw: row count " + std::to_string(p) + " != " +
                             std::to_string(h) + "*" + std::to_string(w));
    std::vector<double> out(static_cast<size_t>(c) * p);
    for (int ic = 0; ic < c; ++ic)
        for (int q = 0; q < p; ++q)
            out[static_cast<size_t>(ic) * p + q] = rows.data()[static_cast<size_t>(q) * c + ic];
    auto rn = rows.node();
    return detail::make_op({c, h, w}, std::move(out), {rows}, [rn, c, p](detail::Node& self) {
        if (!rn->requires_grad) return;
        auto& g = rn->ensure_grad();
        for (int ic = 0; ic < c; ++ic)
            for (int q = 0; q < p; ++q)
                g[static_cast<size_t>(q) * c + ic] += self.grad[static_cast<size_t>(ic) * p + q];
    });
}

// ---------------------------------------------------------------------------
// Gradient verification: central differences against the analytic gradient.
// Returns max over elements of |g_analytic - g_fd| / max(1, |g_fd|).
// ---------------------------------------------------------------------------
inline double finite_diff_check(const std::function<Tensor()>& f, Tensor& x, double h) {
    if (h <= 0.0) throw contract_error("finite_diff_check: h must be positive");
    const bool old_rg = x.requires_grad();
    x.set_requires_grad(true);
    x.zero_grad();
    backward(f());
    std::vector<double> analytic = x.grad();

    x.set_requires_grad(false);  // value-only evaluation while perturbing
    double worst = 0.0;
    for (size_t i = 0; i < x.data().size(); ++i) {
        const double saved = x.data()[i];
        x.data()[i] = saved + h;
        const double fp = f().value();
        x.data()[i] = saved - h;
        const double fm = f().value();
        x.data()[i] = saved;
        const double g_fd = (fp - fm) / (2.0 * h);
        const double err = std::fabs(analytic[i] - g_fd) / std::max(1.0, std::fabs(g_fd));
        worst = std::max(worst, err);
    }
    x.set_requires_grad(old_rg);
    return worst;
}

inline double finite_diff_check(const std::function<Tensor(Tensor&)>& f, Tensor& x, double h) {
    return finite_diff_check(std::function<Tensor()>([&]() { return f(x); }), x, h);
}

}  // namespace sketchgen
