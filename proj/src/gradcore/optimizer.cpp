#include "driftlab/gradcore/optimizer.hpp"

#include <cmath>

#include "driftlab/gradcore/error.hpp"

namespace dlab {

OptimizerState make_sgd(double learning_rate) {
    OptimizerState s;
    s.kind = OptimizerKind::sgd;
    s.learning_rate = learning_rate;
    return s;
}

OptimizerState make_adam(double learning_rate) {
    OptimizerState s;
    s.kind = OptimizerKind::adam;
    s.learning_rate = learning_rate;
    return s;
}

void optimizer_step(OptimizerState& state, ParamStore& params, const GradMap& grads) {
    for (const auto& [name, g] : grads) {
        if (!params.contains(name)) throw ConfigError("gradient for unknown parameter: " + name);
        if (g.shape() != params.value(name).shape()) throw ConfigError("gradient shape mismatch for " + name);
        if (!g.all_finite()) throw NumericsError("non-finite gradient for parameter " + name);
    }
    ++state.step;
    if (state.kind == OptimizerKind::sgd) {
        for (const auto& [name, g] : grads) {
            auto w = params.value(name).data();
            for (std::size_t i = 0; i < w.size(); ++i) w[i] -= state.learning_rate * g[i];
        }
        return;
    }
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (const auto& [name, g] : grads) {
        auto& m = state.first_moment.try_emplace(name, g.shape(), 0.0).first->second;
        auto& v = state.second_moment.try_emplace(name, g.shape(), 0.0).first->second;
        auto w = params.value(name).data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            w[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

}  // namespace dlab
