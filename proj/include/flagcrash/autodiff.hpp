#pragma once

// Dense reverse-mode automatic differentiation over 2-D double tensors.
//
// Every operation whose inputs require gradients records a node holding its
// parents and a backward rule; `backward` walks the recorded graph in reverse
// topological order. Graphs are rebuilt on every forward pass and freed when
// the last tensor referencing them goes away.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "flagcrash/error.hpp"

namespace flagcrash::ad {

struct Node {
    std::size_t rows = 0, cols = 0;
    std::vector<double> value;
    std::vector<double> grad;  // empty until a gradient arrives
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;  // reads self.grad, accumulates into parents

    double* grad_buffer() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
        return grad.data();
    }
};

namespace detail {
inline thread_local bool grad_enabled = true;
}

// Disables graph recording for its lifetime (inference, frozen models).
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_enabled) { detail::grad_enabled = false; }
    ~NoGradGuard() { detail::grad_enabled = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

class Tensor {
public:
    Tensor() = default;

    Tensor(std::size_t rows, std::size_t cols, std::vector<double> data, bool requires_grad = false)
        : node_(std::make_shared<Node>()) {
        if (data.size() != rows * cols)
            throw ShapeError("tensor data has " + std::to_string(data.size()) + " entries, shape needs " + std::to_string(rows * cols));
        node_->rows = rows;
        node_->cols = cols;
        node_->value = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false) {
        return Tensor(rows, cols, std::vector<double>(rows * cols, 0.0), requires_grad);
    }
    static Tensor scalar(double v, bool requires_grad = false) { return Tensor(1, 1, {v}, requires_grad); }
    static Tensor row(std::vector<double> v, bool requires_grad = false) {
        const auto n = v.size();
        return Tensor(1, n, std::move(v), requires_grad);
    }

    bool defined() const { return static_cast<bool>(node_); }
    std::size_t rows() const { return node_->rows; }
    std::size_t cols() const { return node_->cols; }
    std::size_t size() const { return node_->value.size(); }
    std::vector<std::size_t> shape() const { return {rows(), cols()}; }
    std::string shape_str() const { return "(" + std::to_string(rows()) + "x" + std::to_string(cols()) + ")"; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    std::span<const double> data() const { return node_->value; }
    std::span<double> mutable_data() { return node_->value; }
    double operator()(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
    double item() const {
        if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str());
        return node_->value[0];
    }

    // Gradient after backward; zeros when none has arrived.
    std::vector<double> grad() const { return node_->grad.empty() ? std::vector<double>(size(), 0.0) : node_->grad; }
    void zero_grad() { node_->grad.clear(); }

    Node& node() const { return *node_; }
    const std::shared_ptr<Node>& node_ptr() const { return node_; }

    // Copy of the values with no history.
    Tensor detach() const { return Tensor(rows(), cols(), node_->value, false); }

private:
    std::shared_ptr<Node> node_;
};

namespace detail {

// Result tensor wired to its parents when recording is on and any parent
// requires gradients.
inline Tensor make_result(std::size_t rows, std::size_t cols, std::vector<double> value, std::initializer_list<Tensor> inputs,
                          std::function<void(Node&)> backward) {
    Tensor out(rows, cols, std::move(value));
    if (!grad_enabled) return out;
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (!any) return out;
    auto& n = out.node();
    n.requires_grad = true;
    for (const auto& t : inputs) n.parents.push_back(t.node_ptr());
    n.backward = std::move(backward);
    return out;
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeError(std::string(op) + ": shapes " + a.shape_str() + " and " + b.shape_str() + " differ");
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) throw ShapeError("matmul: shapes " + a.shape_str() + " and " + b.shape_str() + " are incompatible");
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    std::vector<double> out(n * m, 0.0);
    const auto av = a.data(), bv = b.data();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double x = av[i * k + p];
            if (x == 0.0) continue;
            for (std::size_t j = 0; j < m; ++j) out[i * m + j] += x * bv[p * m + j];
        }
    return detail::make_result(n, m, std::move(out), {a, b}, [n, k, m](Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const auto& g = self.grad;
        if (pa.requires_grad) {
            double* ga = pa.grad_buffer();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < m; ++j) s += g[i * m + j] * pb.value[p * m + j];
                    ga[i * k + p] += s;
                }
        }
        if (pb.requires_grad) {
            double* gb = pb.grad_buffer();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double x = pa.value[i * k + p];
                    if (x == 0.0) continue;
                    for (std::size_t j = 0; j < m; ++j) gb[p * m + j] += x * g[i * m + j];
                }
        }
    });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("add", a, b);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return detail::make_result(a.rows(), a.cols(), std::move(out), {a, b}, [](Node& self) {
        for (auto& p : self.parents)
            if (p->requires_grad) {
                double* g = p->grad_buffer();
                for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
            }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("sub", a, b);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    return detail::make_result(a.rows(), a.cols(), std::move(out), {a, b}, [](Node& self) {
        const double sign[2] = {1.0, -1.0};
        for (int k = 0; k < 2; ++k)
            if (self.parents[k]->requires_grad) {
                double* g = self.parents[k]->grad_buffer();
                for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += sign[k] * self.grad[i];
            }
    });
}

inline Tensor scalar_mul(const Tensor& a, double s) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * a.data()[i];
    return detail::make_result(a.rows(), a.cols(), std::move(out), {a}, [s](Node& self) {
        double* g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += s * self.grad[i];
    });
}

// a * s for a 1x1 tensor s.
inline Tensor scale(const Tensor& a, const Tensor& s) {
    if (s.size() != 1) throw ShapeError("scale: factor must be 1x1, got " + s.shape_str());
    const double f = s.item();
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f * a.data()[i];
    return detail::make_result(a.rows(), a.cols(), std::move(out), {a, s}, [](Node& self) {
        auto& pa = *self.parents[0];
        auto& ps = *self.parents[1];
        if (pa.requires_grad) {
            double* g = pa.grad_buffer();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += ps.value[0] * self.grad[i];
        }
        if (ps.requires_grad) {
            double acc = 0.0;
            for (std::size_t i = 0; i < self.grad.size(); ++i) acc += pa.value[i] * self.grad[i];
            ps.grad_buffer()[0] += acc;
        }
    });
}

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("hadamard", a, b);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return detail::make_result(a.rows(), a.cols(), std::move(out), {a, b}, [](Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            double* g = pa.grad_buffer();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += pb.value[i] * self.grad[i];
        }
        if (pb.requires_grad) {
            double* g = pb.grad_buffer();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += pa.value[i] * self.grad[i];
        }
    });
}

inline Tensor relu(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, a.data()[i]);
    return detail::make_result(a.rows(), a.cols(), std::move(out), {a}, [](Node& self) {
        auto& p = *self.parents[0];
        double* g = p.grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (p.value[i] > 0.0) g[i] += self.grad[i];
    });
}

// n x c -> n x 1, summing each row.
inline Tensor row_sum(const Tensor& a) {
    const std::size_t n = a.rows(), c = a.cols();
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i] += a.data()[i * c + j];
    return detail::make_result(n, 1, std::move(out), {a}, [c](Node& self) {
        double* g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i];
    });
}

// n x c -> 1 x c, averaging over rows.
inline Tensor mean_rows(const Tensor& a) {
    const std::size_t n = a.rows(), c = a.cols();
    if (n == 0) throw ShapeError("mean_rows: tensor has no rows");
    std::vector<double> out(c, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j] += a.data()[i * c + j];
    for (auto& v : out) v /= static_cast<double>(n);
    return detail::make_result(1, c, std::move(out), {a}, [n, c](Node& self) {
        double* g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j] / static_cast<double>(n);
    });
}

// Row-wise mean within segments: rows with segment id s are averaged into
// output row s. Every segment must be non-empty.
inline Tensor segment_mean_rows(const Tensor& a, std::span<const std::size_t> segment, std::size_t n_segments) {
    const std::size_t n = a.rows(), c = a.cols();
    if (segment.size() != n) throw ShapeError("segment_mean_rows: " + std::to_string(segment.size()) + " segment ids for " + a.shape_str());
    std::vector<double> counts(n_segments, 0.0);
    for (auto s : segment) {
        if (s >= n_segments) throw ShapeError("segment_mean_rows: segment id out of range");
        counts[s] += 1.0;
    }
    for (auto cnt : counts)
        if (cnt == 0.0) throw ShapeError("segment_mean_rows: empty segment");
    std::vector<double> out(n_segments * c, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) out[segment[i] * c + j] += a.data()[i * c + j];
    for (std::size_t s = 0; s < n_segments; ++s)
        for (std::size_t j = 0; j < c; ++j) out[s * c + j] /= counts[s];
    std::vector<std::size_t> seg(segment.begin(), segment.end());
    return detail::make_result(n_segments, c, std::move(out), {a}, [seg = std::move(seg), counts = std::move(counts), c](Node& self) {
        double* g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < seg.size(); ++i)
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[seg[i] * c + j] / counts[seg[i]];
    });
}

// Output row r = input row index[r].
inline Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index) {
    const std::size_t c = a.cols();
    std::vector<double> out(index.size() * c);
    for (std::size_t r = 0; r < index.size(); ++r) {
        if (index[r] >= a.rows()) throw ShapeError("gather_rows: index out of range for " + a.shape_str());
        std::copy_n(a.data().begin() + static_cast<std::ptrdiff_t>(index[r] * c), c, out.begin() + static_cast<std::ptrdiff_t>(r * c));
    }
    std::vector<std::size_t> idx(index.begin(), index.end());
    return detail::make_result(index.size(), c, std::move(out), {a}, [idx = std::move(idx), c](Node& self) {
        double* g = self.parents[0]->grad_buffer();
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::size_t j = 0; j < c; ++j) g[idx[r] * c + j] += self.grad[r * c + j];
    });
}

// Output row index[r] accumulates input row r; output has n_rows rows.
inline Tensor scatter_add_rows(const Tensor& a, std::span<const std::size_t> index, std::size_t n_rows) {
    const std::size_t c = a.cols();
    if (index.size() != a.rows()) throw ShapeError("scatter_add_rows: " + std::to_string(index.size()) + " indices for " + a.shape_str());
    std::vector<double> out(n_rows * c, 0.0);
    for (std::size_t r = 0; r < index.size(); ++r) {
        if (index[r] >= n_rows) throw ShapeError("scatter_add_rows: index out of range");
        for (std::size_t j = 0; j < c; ++j) out[index[r] * c + j] += a.data()[r * c + j];
    }
    std::vector<std::size_t> idx(index.begin(), index.end());
    return detail::make_result(n_rows, c, std::move(out), {a}, [idx = std::move(idx), c](Node& self) {
        double* g = self.parents[0]->grad_buffer();
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::size_t j = 0; j < c; ++j) g[r * c + j] += self.grad[idx[r] * c + j];
    });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const std::size_t n = parts.front().rows();
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rows() != n) throw ShapeError("concat_cols: row counts differ (" + p.shape_str() + " vs " + parts.front().shape_str() + ")");
        total += p.cols();
    }
    std::vector<double> out(n * total);
    std::size_t offset = 0;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < p.cols(); ++j) out[i * total + offset + j] = p.data()[i * p.cols() + j];
        offset += p.cols();
        widths.push_back(p.cols());
    }
    Tensor result(n, total, std::move(out));
    if (!detail::grad_enabled) return result;
    bool any = false;
    for (const auto& p : parts) any = any || p.requires_grad();
    if (!any) return result;
    auto& node = result.node();
    node.requires_grad = true;
    for (const auto& p : parts) node.parents.push_back(p.node_ptr());
    node.backward = [widths = std::move(widths), n, total](Node& self) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
            auto& p = *self.parents[k];
            if (p.requires_grad) {
                double* g = p.grad_buffer();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < widths[k]; ++j) g[i * widths[k] + j] += self.grad[i * total + off + j];
            }
            off += widths[k];
        }
    };
    return result;
}

inline Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return detail::make_result(1, 1, {s}, {a}, [](Node& self) {
        double* g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < self.parents[0]->value.size(); ++i) g[i] += self.grad[0];
    });
}

inline Tensor squared_norm(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v * v;
    return detail::make_result(1, 1, {s}, {a}, [](Node& self) {
        auto& p = *self.parents[0];
        double* g = p.grad_buffer();
        for (std::size_t i = 0; i < p.value.size(); ++i) g[i] += 2.0 * p.value[i] * self.grad[0];
    });
}

// Populates grad on every node reachable from `loss` that requires it.
// Leaf gradients accumulate across calls until zero_grad.
inline void backward(const Tensor& loss) {
    if (loss.size() != 1) throw ShapeError("backward needs a scalar loss, got " + loss.shape_str());
    if (!loss.requires_grad()) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{&loss.node(), 0}};
    visited.insert(&loss.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    // Intermediate gradients are transient.
    for (Node* n : order)
        if (n->backward) n->grad.clear();
    loss.node().grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward && !(*it)->grad.empty()) (*it)->backward(**it);
}

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t step = 0;
    std::vector<std::vector<double>> m, v;
};

// One Adam update. Weight decay is decoupled: p <- p - lr * wd * p before the
// moment update is applied.
inline void adam_step(std::span<Tensor> params, double lr, double weight_decay, AdamState& state) {
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.size(), 0.0);
            state.v.emplace_back(p.size(), 0.0);
        }
    }
    if (state.m.size() != params.size()) throw ShapeError("adam_step: optimizer state does not match parameter list");
    ++state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& node = params[k].node();
        auto& m = state.m[k];
        auto& v = state.v[k];
        for (std::size_t i = 0; i < node.value.size(); ++i) {
            const double g = node.grad.empty() ? 0.0 : node.grad[i];
            node.value[i] -= lr * weight_decay * node.value[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            node.value[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + state.eps);
        }
    }
}

}  // namespace flagcrash::ad
