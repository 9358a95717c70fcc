#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "driftlab/gradcore/params.hpp"
#include "driftlab/gradcore/tape.hpp"

namespace dlab {

struct GradCheckReport {
    /// max over probes of |analytic - central| / max(|analytic|, |central|, 1e-8)
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    /// Probes where both estimates are below `zero_gradient` are skipped.
    std::size_t skipped = 0;
    std::string worst_param;
};

/// Builds a scalar loss on a tape whose parameters are already bound.
using LossBuilder = std::function<NodeId(Tape&)>;

inline constexpr double kZeroGradient = 1e-7;

/// Compares reverse-mode gradients with central differences on `n_probes`
/// randomly chosen trainable scalars. Parameters are perturbed in place and
/// restored bit-exactly before returning.
GradCheckReport grad_check(ParamStore& params, const GroupSet& trainable, const LossBuilder& loss,
                           std::size_t n_probes, double h, std::uint64_t seed);

}  // namespace dlab
