#pragma once

#include <cstdint>

#include "driftlab/gradcore/params.hpp"

namespace dlab {

enum class OptimizerKind { sgd, adam };

struct OptimizerState {
    OptimizerKind kind = OptimizerKind::adam;
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t step = 0;
    GradMap first_moment;
    GradMap second_moment;
};

OptimizerState make_sgd(double learning_rate);
OptimizerState make_adam(double learning_rate);

/// Applies one update. Parameters without a gradient entry are untouched;
/// Adam moments for a parameter are created on its first gradient.
/// Throws NumericsError naming the parameter on a non-finite gradient and
/// ConfigError for gradients of unknown parameters.
void optimizer_step(OptimizerState& state, ParamStore& params, const GradMap& grads);

}  // namespace dlab
