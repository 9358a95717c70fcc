#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "driftlab/diffusion/diffusion.hpp"

namespace dlab {

/// Fixed (t_i, eps_i) pairs shared by every model, class and image of one
/// experiment so that error differences come from the model alone.
struct EvalNoiseSet {
    std::uint64_t seed = 0;
    std::vector<int> timesteps;
    std::vector<Tensor> eps;

    std::size_t size() const noexcept { return timesteps.size(); }
};

/// Timesteps uniform in [ceil(lo_frac T), floor(hi_frac T)].
EvalNoiseSet make_eval_noise(std::size_t count, std::size_t dim, const NoiseSchedule& s, std::uint64_t seed,
                             double lo_frac = 0.2, double hi_frac = 0.8);

struct ClassPosterior {
    std::vector<int> tokens;
    std::vector<double> probabilities;
    std::vector<double> mean_errors;

    /// Highest probability; ties go to the lowest token id.
    int argmax() const;
};

/// softmax(-E_j) where E_j averages per-pixel squared denoising error over
/// every pair of the noise set.
ClassPosterior class_posterior(const DenoiserModel& model, const Tensor& image, std::span<const int> candidates,
                               const EvalNoiseSet& noise, const NoiseSchedule& s);

/// Softmax of negated errors; invariant to adding a constant to all errors.
std::vector<double> posterior_from_errors(std::span<const double> mean_errors);

struct Stage {
    int extra_trials = 0;
    int keep = 1;
};

struct StageConfig {
    std::vector<Stage> stages;

    static StageConfig defaults() { return {{{8, 6}, {32, 1}}}; }
    int total_trials() const noexcept;
    nlohmann::json to_json() const;
    static StageConfig from_json(const nlohmann::json& j);
};

struct StagedResult {
    int predicted = 0;
    /// Survivors after each stage.
    std::vector<std::vector<int>> survivors;
};

/// Successive pruning: each stage adds `extra_trials` noise pairs to the
/// running mean error of the surviving classes and keeps the `keep` lowest.
StagedResult classify_staged(const DenoiserModel& model, const Tensor& image, std::span<const int> candidates,
                             const StageConfig& stages, const EvalNoiseSet& noise, const NoiseSchedule& s);

struct DatasetEval {
    double overall = 0.0;
    std::map<int, double> per_class;
    std::map<int, std::size_t> counts;
    std::vector<int> predictions;

    nlohmann::json to_json() const;
    static DatasetEval from_json(const nlohmann::json& j);
};

/// Classes listed in `candidates` but absent from the data are skipped with
/// a warning on stderr.
DatasetEval eval_dataset(const DenoiserModel& model, std::span<const LabeledImage> data,
                         std::span<const int> candidates, const StageConfig& stages, const EvalNoiseSet& noise,
                         const NoiseSchedule& s);

struct WorstDrop {
    double drop = 0.0;
    int token = 0;
};

/// max over classes of base - adapted accuracy (negative when every class
/// improved). ConfigError when the class sets differ.
WorstDrop worst_class_drop(const DatasetEval& base, const DatasetEval& adapted);

}  // namespace dlab
