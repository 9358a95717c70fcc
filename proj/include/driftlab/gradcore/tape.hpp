#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "driftlab/gradcore/params.hpp"
#include "driftlab/gradcore/tensor.hpp"

namespace dlab {

using NodeId = std::size_t;

class Tape;
/// Backward rule: reads grad(self) and accumulates into the inputs' grads.
using BackwardFn = std::function<void(Tape&, NodeId self)>;

/// Reverse-mode recording of primitive tensor operations. A tape is built
/// for one forward pass and discarded; nothing persists between steps.
class Tape {
public:
    /// With record=false no backward closures are kept and nothing
    /// requires a gradient (inference mode).
    explicit Tape(bool record = true) : record_(record) {}

    NodeId constant(Tensor value);
    /// Binds an external tensor without copying. The tensor must outlive
    /// the tape. Trainable parameters are reported by parameter_grads().
    NodeId parameter(const Tensor& value, std::string name, bool trainable);
    /// Binds every parameter of a store; groups outside `trainable` are frozen.
    void bind(const ParamStore& params, const GroupSet& trainable);
    NodeId param(std::string_view name) const;

    NodeId matmul(NodeId x, NodeId w);
    NodeId add_bias(NodeId x, NodeId bias);
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId scale(NodeId x, double c);
    /// Multiplies row r of x by factors[r]; factors holds one value per row.
    NodeId scale_rows(NodeId x, NodeId factors);
    NodeId silu(NodeId x);
    NodeId relu(NodeId x);
    NodeId gather_rows(NodeId table, std::vector<std::size_t> rows);
    /// Scalar sum over rows r of weight[r] * mean_c (pred[r,c] - target[r,c])^2.
    NodeId weighted_row_mse(NodeId pred, NodeId target, std::vector<double> row_weights);
    /// Mean softmax cross-entropy of logits [B,C] against integer labels.
    NodeId softmax_cross_entropy(NodeId logits, std::vector<std::size_t> labels);

    /// Escape hatch for operations defined outside the tape.
    NodeId custom(std::vector<NodeId> inputs, Tensor value, BackwardFn backward);

    const Tensor& value(NodeId id) const;
    bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
    bool recording() const noexcept { return record_; }
    /// Gradient accumulator of a node, allocated as zeros on first use.
    Tensor& grad(NodeId id);
    bool has_grad(NodeId id) const { return nodes_.at(id).has_grad; }

    /// Seeds d(root)/d(root) = 1 for a scalar root and replays the tape.
    void backward(NodeId root);
    /// Seeds an arbitrary upstream gradient (vector-Jacobian product).
    void backward(NodeId root, const Tensor& seed);

    /// Exactly one entry per trainable parameter; untouched ones are zeros.
    GradMap parameter_grads() const;

    std::size_t size() const noexcept { return nodes_.size(); }
    void clear();

private:
    struct Node {
        Tensor owned;
        const Tensor* borrowed = nullptr;
        Tensor grad;
        bool has_grad = false;
        bool requires_grad = false;
        std::string param_name;
        std::vector<NodeId> inputs;
        BackwardFn backward;
    };

    NodeId push(std::vector<NodeId> inputs, Tensor value, BackwardFn backward);

    bool record_;
    std::vector<Node> nodes_;
    std::vector<NodeId> param_nodes_;
};

}  // namespace dlab
