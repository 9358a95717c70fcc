#include "driftlab/gradcore/tape.hpp"

#include <algorithm>
#include <cmath>

#include "driftlab/gradcore/error.hpp"

namespace dlab {
namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ConfigError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                          shape_string(b.shape()));
}

void accumulate(Tensor& dst, std::span<const double> src, double scale = 1.0) {
    auto d = dst.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += scale * src[i];
}

double sigmoid(double x) {
    return 1.0 / (1.0 + std::exp(-x));
}

}  // namespace

NodeId Tape::push(std::vector<NodeId> inputs, Tensor value, BackwardFn backward) {
    Node n;
    n.owned = std::move(value);
    if (record_) {
        for (auto i : inputs) n.requires_grad = n.requires_grad || nodes_.at(i).requires_grad;
        if (n.requires_grad) {
            n.inputs = std::move(inputs);
            n.backward = std::move(backward);
        }
    }
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
}

NodeId Tape::constant(Tensor value) {
    return push({}, std::move(value), nullptr);
}

NodeId Tape::parameter(const Tensor& value, std::string name, bool trainable) {
    Node n;
    n.borrowed = &value;
    n.requires_grad = record_ && trainable;
    n.param_name = std::move(name);
    nodes_.push_back(std::move(n));
    const NodeId id = nodes_.size() - 1;
    param_nodes_.push_back(id);
    return id;
}

void Tape::bind(const ParamStore& params, const GroupSet& trainable) {
    for (const auto& p : params) parameter(p.value, p.name, trainable.contains(p.group));
}

NodeId Tape::param(std::string_view name) const {
    for (auto id : param_nodes_)
        if (nodes_[id].param_name == name) return id;
    throw ConfigError("parameter not bound on tape: " + std::string(name));
}

const Tensor& Tape::value(NodeId id) const {
    const Node& n = nodes_.at(id);
    return n.borrowed ? *n.borrowed : n.owned;
}

Tensor& Tape::grad(NodeId id) {
    Node& n = nodes_.at(id);
    if (!n.has_grad) {
        n.grad = Tensor(value(id).shape(), 0.0);
        n.has_grad = true;
    }
    return n.grad;
}

NodeId Tape::matmul(NodeId x, NodeId w) {
    const Tensor& xv = value(x);
    const Tensor& wv = value(w);
    if (wv.rank() != 2 || xv.cols() != wv.dim(0))
        throw ConfigError("matmul: shape mismatch " + shape_string(xv.shape()) + " x " + shape_string(wv.shape()));
    const std::size_t b = xv.rows(), k = wv.dim(0), n = wv.dim(1);
    Tensor out({b, n});
    gemm(xv.data(), b, k, wv.data(), n, out.data());
    return push({x, w}, std::move(out), [x, w, b, k, n](Tape& t, NodeId self) {
        const Tensor& dy = t.grad(self);
        if (t.requires_grad(x)) {
            const auto wt = transpose(t.value(w).data(), k, n);
            std::vector<double> dx(b * k);
            gemm(dy.data(), b, n, wt, k, dx);
            accumulate(t.grad(x), dx);
        }
        if (t.requires_grad(w)) {
            const auto xt = transpose(t.value(x).data(), b, k);
            std::vector<double> dw(k * n);
            gemm(xt, k, b, dy.data(), n, dw);
            accumulate(t.grad(w), dw);
        }
    });
}

NodeId Tape::add_bias(NodeId x, NodeId bias) {
    const Tensor& xv = value(x);
    const Tensor& bv = value(bias);
    if (bv.size() != xv.cols()) throw ConfigError("add_bias: bias length does not match columns");
    Tensor out = xv;
    const std::size_t rows = xv.rows(), cols = xv.cols();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bv[c];
    return push({x, bias}, std::move(out), [x, bias, rows, cols](Tape& t, NodeId self) {
        const Tensor& dy = t.grad(self);
        if (t.requires_grad(x)) accumulate(t.grad(x), dy.data());
        if (t.requires_grad(bias)) {
            Tensor& db = t.grad(bias);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) db[c] += dy[r * cols + c];
        }
    });
}

NodeId Tape::add(NodeId a, NodeId b) {
    require_same_shape(value(a), value(b), "add");
    Tensor out = value(a);
    accumulate(out, value(b).data());
    return push({a, b}, std::move(out), [a, b](Tape& t, NodeId self) {
        const Tensor& dy = t.grad(self);
        if (t.requires_grad(a)) accumulate(t.grad(a), dy.data());
        if (t.requires_grad(b)) accumulate(t.grad(b), dy.data());
    });
}

NodeId Tape::sub(NodeId a, NodeId b) {
    require_same_shape(value(a), value(b), "sub");
    Tensor out = value(a);
    accumulate(out, value(b).data(), -1.0);
    return push({a, b}, std::move(out), [a, b](Tape& t, NodeId self) {
        const Tensor& dy = t.grad(self);
        if (t.requires_grad(a)) accumulate(t.grad(a), dy.data());
        if (t.requires_grad(b)) accumulate(t.grad(b), dy.data(), -1.0);
    });
}

NodeId Tape::scale(NodeId x, double c) {
    Tensor out = value(x);
    for (auto& v : out.data()) v *= c;
    return push({x}, std::move(out), [x, c](Tape& t, NodeId self) {
        accumulate(t.grad(x), t.grad(self).data(), c);
    });
}

NodeId Tape::scale_rows(NodeId x, NodeId factors) {
    const Tensor& xv = value(x);
    const Tensor& fv = value(factors);
    const std::size_t rows = xv.rows(), cols = xv.cols();
    if (fv.size() != rows) throw ConfigError("scale_rows: one factor per row required");
    Tensor out = xv;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] *= fv[r];
    return push({x, factors}, std::move(out), [x, factors, rows, cols](Tape& t, NodeId self) {
        const Tensor& dy = t.grad(self);
        if (t.requires_grad(x)) {
            const Tensor& f = t.value(factors);
            Tensor& dx = t.grad(x);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) dx[r * cols + c] += dy[r * cols + c] * f[r];
        }
        if (t.requires_grad(factors)) {
            const Tensor& xv = t.value(x);
            Tensor& df = t.grad(factors);
            for (std::size_t r = 0; r < rows; ++r) {
                double acc = 0.0;
                for (std::size_t c = 0; c < cols; ++c) acc += dy[r * cols + c] * xv[r * cols + c];
                df[r] += acc;
            }
        }
    });
}

NodeId Tape::silu(NodeId x) {
    Tensor out = value(x);
    for (auto& v : out.data()) v = v * sigmoid(v);
    return push({x}, std::move(out), [x](Tape& t, NodeId self) {
        const Tensor& dy = t.grad(self);
        const Tensor& xv = t.value(x);
        Tensor& dx = t.grad(x);
        for (std::size_t i = 0; i < dx.size(); ++i) {
            const double s = sigmoid(xv[i]);
            dx[i] += dy[i] * s * (1.0 + xv[i] * (1.0 - s));
        }
    });
}

NodeId Tape::relu(NodeId x) {
    Tensor out = value(x);
    for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
    return push({x}, std::move(out), [x](Tape& t, NodeId self) {
        const Tensor& dy = t.grad(self);
        const Tensor& xv = t.value(x);
        Tensor& dx = t.grad(x);
        for (std::size_t i = 0; i < dx.size(); ++i)
            if (xv[i] > 0.0) dx[i] += dy[i];
    });
}

NodeId Tape::gather_rows(NodeId table, std::vector<std::size_t> rows) {
    const Tensor& tv = value(table);
    const std::size_t width = tv.cols();
    Tensor out({rows.size(), width});
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] >= tv.rows()) throw ConfigError("gather_rows: row index out of range");
        std::copy_n(tv.row(rows[r]).begin(), width, out.row(r).begin());
    }
    return push({table}, std::move(out), [table, rows = std::move(rows), width](Tape& t, NodeId self) {
        const Tensor& dy = t.grad(self);
        Tensor& dt = t.grad(table);
        for (std::size_t r = 0; r < rows.size(); ++r)
            for (std::size_t c = 0; c < width; ++c) dt[rows[r] * width + c] += dy[r * width + c];
    });
}

NodeId Tape::weighted_row_mse(NodeId pred, NodeId target, std::vector<double> row_weights) {
    const Tensor& p = value(pred);
    const Tensor& y = value(target);
    require_same_shape(p, y, "weighted_row_mse");
    if (row_weights.size() != p.rows()) throw ConfigError("weighted_row_mse: one weight per row required");
    const std::size_t rows = p.rows(), cols = p.cols();
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            const double d = p[r * cols + c] - y[r * cols + c];
            s += d * d;
        }
        total += row_weights[r] * (s / static_cast<double>(cols));
    }
    return push({pred, target}, Tensor::scalar(total),
                [pred, target, w = std::move(row_weights), rows, cols](Tape& t, NodeId self) {
                    const double g = t.grad(self)[0];
                    const Tensor& p = t.value(pred);
                    const Tensor& y = t.value(target);
                    const bool gp = t.requires_grad(pred), gy = t.requires_grad(target);
                    for (std::size_t r = 0; r < rows; ++r) {
                        const double f = g * w[r] * 2.0 / static_cast<double>(cols);
                        for (std::size_t c = 0; c < cols; ++c) {
                            const double d = f * (p[r * cols + c] - y[r * cols + c]);
                            if (gp) t.grad(pred)[r * cols + c] += d;
                            if (gy) t.grad(target)[r * cols + c] -= d;
                        }
                    }
                });
}

NodeId Tape::softmax_cross_entropy(NodeId logits, std::vector<std::size_t> labels) {
    const Tensor& z = value(logits);
    const std::size_t rows = z.rows(), cols = z.cols();
    if (labels.size() != rows) throw ConfigError("softmax_cross_entropy: one label per row required");
    Tensor probs({rows, cols});
    double loss = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (labels[r] >= cols) throw ConfigError("softmax_cross_entropy: label out of range");
        const auto zr = z.row(r);
        const double m = *std::max_element(zr.begin(), zr.end());
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) s += std::exp(zr[c] - m);
        for (std::size_t c = 0; c < cols; ++c) probs[r * cols + c] = std::exp(zr[c] - m) / s;
        loss -= (zr[labels[r]] - m - std::log(s));
    }
    loss /= static_cast<double>(rows);
    return push({logits}, Tensor::scalar(loss),
                [logits, probs = std::move(probs), labels = std::move(labels), rows, cols](Tape& t, NodeId self) {
                    const double g = t.grad(self)[0] / static_cast<double>(rows);
                    Tensor& dz = t.grad(logits);
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < cols; ++c)
                            dz[r * cols + c] += g * (probs[r * cols + c] - (c == labels[r] ? 1.0 : 0.0));
                });
}

NodeId Tape::custom(std::vector<NodeId> inputs, Tensor value, BackwardFn backward) {
    return push(std::move(inputs), std::move(value), std::move(backward));
}

void Tape::backward(NodeId root) {
    if (value(root).size() != 1) throw ConfigError("backward: root must be a scalar");
    backward(root, Tensor::scalar(1.0).reshaped(value(root).shape()));
}

void Tape::backward(NodeId root, const Tensor& seed) {
    require_same_shape(value(root), seed, "backward seed");
    if (!record_) throw ConfigError("backward on a non-recording tape");
    accumulate(grad(root), seed.data());
    for (NodeId id = root + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (n.has_grad && n.requires_grad && n.backward) n.backward(*this, id);
    }
}

GradMap Tape::parameter_grads() const {
    GradMap out;
    for (auto id : param_nodes_) {
        const Node& n = nodes_[id];
        if (!n.requires_grad) continue;
        out.emplace(n.param_name, n.has_grad ? n.grad : Tensor(n.borrowed->shape(), 0.0));
    }
    return out;
}

void Tape::clear() {
    nodes_.clear();
    param_nodes_.clear();
}

}  // namespace dlab
