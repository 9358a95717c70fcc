#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "driftlab/diffusion/denoiser.hpp"
#include "driftlab/diffusion/image_io.hpp"
#include "driftlab/diffusion/schedule.hpp"

namespace dlab {

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, elementwise.
Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& s);

/// w_t * mean((eps - eps_theta(x_t, cond, t))^2) for one image already in
/// model space.
double denoise_loss(const DenoiserModel& model, const Tensor& x0, int cond_id, int t, const Tensor& eps,
                    const NoiseSchedule& s);

/// Batched variant recorded on a tape: rows of x0/eps are [B, D]; the
/// result is sum_r row_weight[r] * w_t * mean_c(err^2).
NodeId denoise_loss_node(Tape& tape, const DenoiserModel& model, const Tensor& x0, const Tensor& eps,
                         std::span<const int> tokens, std::span<const int> timesteps, const NoiseSchedule& s,
                         std::vector<double> row_weights);

enum class SamplerKind { ddim, ddpm };
std::string_view to_string(SamplerKind k) noexcept;
SamplerKind parse_sampler(std::string_view s);

struct GenerationRequest {
    int cond_id = 0;
    std::uint64_t seed = 0;
    SamplerKind sampler = SamplerKind::ddim;
    int steps = 50;
};

/// Strided timesteps tau_1 < ... < tau_steps = T.
std::vector<int> sampling_timesteps(int total, int steps);

/// Seed-derived initial noise x_T (stream sampler_base).
Tensor initial_noise(std::uint64_t seed, std::size_t dim);
/// Ancestral noise injected at timestep t (stream sampler_base + t). It
/// depends only on (seed, t), never on the model.
Tensor ancestral_noise(std::uint64_t seed, int t, std::size_t dim);

/// Reverse process; returns a [H, W, C] image clamped to [0, 1] at the end.
Tensor sample(const DenoiserModel& model, const GenerationRequest& req, const NoiseSchedule& s);

/// Same results as calling sample() per request, evaluated in batches.
std::vector<Tensor> sample_batch(const DenoiserModel& model, std::span<const GenerationRequest> reqs,
                                 const NoiseSchedule& s, std::size_t chunk = 256);

struct DenoiserTrainConfig {
    int steps = 3000;
    std::size_t batch = 64;
    double learning_rate = 1e-3;
    /// Cosine decay from learning_rate down to this fraction of it.
    double final_lr_fraction = 0.1;
    /// Probability of replacing a label with the null token.
    double cond_dropout = 0.1;
    std::uint64_t seed = 0;
    int window = 200;

    nlohmann::json to_json() const;
    static DenoiserTrainConfig from_json(const nlohmann::json& j);
};

struct TrainLog {
    std::vector<double> step_losses;
    /// Mean loss per consecutive window of `window` steps.
    std::vector<double> window_means;
};

/// Trains on labelled images whose labels are base-class tokens.
TrainLog train_denoiser(DenoiserModel& model, const NoiseSchedule& s, std::span<const LabeledImage> data,
                        const DenoiserTrainConfig& cfg);

/// Checkpoint with meta {kind: "denoiser", config, schedule}.
void save_denoiser(const std::filesystem::path& path, const DenoiserModel& model, const NoiseSchedule& s,
                   nlohmann::json extra = nlohmann::json::object());
struct LoadedDenoiser {
    DenoiserModel model;
    NoiseSchedule schedule;
    nlohmann::json meta;
};
LoadedDenoiser load_denoiser(const std::filesystem::path& path);

}  // namespace dlab
