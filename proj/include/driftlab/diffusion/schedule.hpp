#pragma once

#include <vector>

#include <nlohmann/json.hpp>

namespace dlab {

/// Linear-beta DDPM schedule. Timesteps are 1-based: t in [1, T].
class NoiseSchedule {
public:
    NoiseSchedule() = default;

    int steps() const noexcept { return static_cast<int>(beta_.size()); }
    double beta_start() const noexcept { return beta_start_; }
    double beta_end() const noexcept { return beta_end_; }

    double beta(int t) const { return beta_.at(index(t)); }
    double alpha(int t) const { return alpha_.at(index(t)); }
    double alpha_bar(int t) const { return alpha_bar_.at(index(t)); }
    /// Per-step loss weight (uniform).
    double weight(int t) const { return weight_.at(index(t)); }

    const std::vector<double>& betas() const noexcept { return beta_; }
    const std::vector<double>& alpha_bars() const noexcept { return alpha_bar_; }

    void check_timestep(int t) const;

    nlohmann::json to_json() const;
    static NoiseSchedule from_json(const nlohmann::json& j);

    friend NoiseSchedule make_schedule(int steps, double beta_start, double beta_end);

private:
    std::size_t index(int t) const;

    double beta_start_ = 0.0;
    double beta_end_ = 0.0;
    std::vector<double> beta_;
    std::vector<double> alpha_;
    std::vector<double> alpha_bar_;
    std::vector<double> weight_;
};

/// Throws ConfigError unless steps >= 1 and 0 < beta_start <= beta_end < 1.
NoiseSchedule make_schedule(int steps, double beta_start, double beta_end);

}  // namespace dlab
