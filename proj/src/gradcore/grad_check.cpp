#include "driftlab/gradcore/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "driftlab/gradcore/error.hpp"
#include "driftlab/gradcore/rng.hpp"

namespace dlab {
namespace {

double evaluate(const ParamStore& params, const GroupSet& trainable, const LossBuilder& loss) {
    Tape tape(false);
    tape.bind(params, trainable);
    return tape.value(loss(tape))[0];
}

}  // namespace

GradCheckReport grad_check(ParamStore& params, const GroupSet& trainable, const LossBuilder& loss,
                           std::size_t n_probes, double h, std::uint64_t seed) {
    if (n_probes < 1) throw ConfigError("grad_check: n_probes must be >= 1");
    if (!(h > 0.0)) throw ConfigError("grad_check: h must be positive");

    Tape tape;
    tape.bind(params, trainable);
    tape.backward(loss(tape));
    const GradMap grads = tape.parameter_grads();

    std::vector<Parameter*> candidates;
    for (auto& p : params)
        if (trainable.contains(p.group)) candidates.push_back(&p);
    if (candidates.empty()) throw ConfigError("grad_check: no trainable parameters");

    GradCheckReport report;
    RngStream rng(seed, streams::probe);
    for (std::size_t probe = 0; probe < n_probes; ++probe) {
        Parameter& p = *candidates[static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(candidates.size()) - 1))];
        const auto idx = static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(p.value.size()) - 1));
        const double original = p.value[idx];
        p.value[idx] = original + h;
        const double up = evaluate(params, trainable, loss);
        p.value[idx] = original - h;
        const double down = evaluate(params, trainable, loss);
        p.value[idx] = original;

        const double central = (up - down) / (2.0 * h);
        const double analytic = grads.at(p.name)[idx];
        if (std::max(std::abs(analytic), std::abs(central)) < kZeroGradient) {
            ++report.skipped;
            continue;
        }
        const double rel = std::abs(analytic - central) / std::max({std::abs(analytic), std::abs(central), 1e-8});
        ++report.checked;
        if (rel > report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_param = p.name;
        }
    }
    return report;
}

}  // namespace dlab
