#pragma once

#include <cstdint>
#include <span>
#include <string>

#include <nlohmann/json.hpp>

#include "driftlab/gradcore/grad_check.hpp"
#include "driftlab/gradcore/params.hpp"
#include "driftlab/gradcore/tape.hpp"

namespace dlab {

/// Token vocabulary layout: [0, base_tokens) are base classes, then
/// rare_tokens reserve tokens for new concepts, then one null token.
struct DenoiserConfig {
    std::size_t height = 16;
    std::size_t width = 16;
    std::size_t channels = 3;
    std::size_t hidden = 256;
    std::size_t blocks = 3;
    std::size_t time_features = 64;
    std::size_t embed_dim = 64;
    std::size_t base_tokens = 12;
    std::size_t rare_tokens = 16;
    int timesteps = 200;

    std::size_t image_dim() const noexcept { return height * width * channels; }
    std::size_t vocab_size() const noexcept { return base_tokens + rare_tokens + 1; }
    int null_token() const noexcept { return static_cast<int>(base_tokens + rare_tokens); }
    int rare_token(std::size_t i) const;

    nlohmann::json to_json() const;
    static DenoiserConfig from_json(const nlohmann::json& j);
    friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

/// Conditional noise predictor eps(x_t, token, t): a residual MLP trunk
/// whose blocks each receive a learned projection of sinusoidal time
/// features (time_proj) and of the token embedding (cond_proj). A scalar
/// time-dependent gate adds x_t itself to the output, so the narrow trunk
/// only has to model the low-rank image part of the noise estimate.
class DenoiserModel {
public:
    DenoiserModel() = default;
    DenoiserModel(DenoiserConfig config, ParamStore params);

    /// Randomly initialised model; deterministic in `seed`.
    static DenoiserModel create(const DenoiserConfig& config, std::uint64_t seed);

    const DenoiserConfig& config() const noexcept { return config_; }
    ParamStore& params() noexcept { return params_; }
    const ParamStore& params() const noexcept { return params_; }

    /// Groups that receive gradients. Everything else is frozen.
    const GroupSet& trainable() const noexcept { return trainable_; }
    void set_trainable(GroupSet groups) { trainable_ = std::move(groups); }

    void check_token(int token) const;
    void check_timestep(int t) const;

    /// Records the forward pass of a [B, D] batch on a tape whose
    /// parameters were bound from params().
    NodeId forward(Tape& tape, NodeId x, std::span<const int> tokens, std::span<const int> timesteps) const;

    /// Inference-only forward pass.
    Tensor predict(const Tensor& x, std::span<const int> tokens, std::span<const int> timesteps) const;

    std::string hash() const { return params_.hash(); }

private:
    DenoiserConfig config_;
    ParamStore params_;
    GroupSet trainable_ = all_groups();
};

/// Sinusoidal features of integer timesteps, [B, features].
Tensor time_features(std::span<const int> timesteps, std::size_t features);

struct ForwardBackward {
    Tensor prediction;
    GradMap gradients;
};

/// Prediction for one image plus the vector-Jacobian product of
/// `output_grad` with respect to every trainable parameter.
ForwardBackward forward_backward(const DenoiserModel& model, const Tensor& input, int cond_id, int t,
                                 const Tensor& output_grad);

/// Gradient check of the denoising loss on a fixed random batch.
GradCheckReport grad_check(DenoiserModel& model, std::size_t n_probes, double h, std::uint64_t seed = 7);

}  // namespace dlab
