#include "driftlab/diffusion/schedule.hpp"

#include <string>

#include "driftlab/gradcore/error.hpp"

namespace dlab {

NoiseSchedule make_schedule(int steps, double beta_start, double beta_end) {
    if (steps < 1) throw ConfigError("schedule needs at least one step");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw ConfigError("schedule requires 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.beta_start_ = beta_start;
    s.beta_end_ = beta_end;
    const auto n = static_cast<std::size_t>(steps);
    s.beta_.resize(n);
    s.alpha_.resize(n);
    s.alpha_bar_.resize(n);
    s.weight_.assign(n, 1.0);
    double running = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double frac = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
        s.beta_[i] = beta_start + (beta_end - beta_start) * frac;
        s.alpha_[i] = 1.0 - s.beta_[i];
        running *= s.alpha_[i];
        s.alpha_bar_[i] = running;
    }
    return s;
}

std::size_t NoiseSchedule::index(int t) const {
    check_timestep(t);
    return static_cast<std::size_t>(t - 1);
}

void NoiseSchedule::check_timestep(int t) const {
    if (t < 1 || t > steps())
        throw ConfigError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
}

nlohmann::json NoiseSchedule::to_json() const {
    return {{"T", steps()}, {"beta_start", beta_start_}, {"beta_end", beta_end_}, {"kind", "linear"}};
}

NoiseSchedule NoiseSchedule::from_json(const nlohmann::json& j) {
    return make_schedule(j.at("T").get<int>(), j.at("beta_start").get<double>(), j.at("beta_end").get<double>());
}

}  // namespace dlab
