#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

#include <nlohmann/json.hpp>

#include "driftlab/diffusion/image_io.hpp"
#include "driftlab/gradcore/params.hpp"
#include "driftlab/metrics/kernel_metrics.hpp"

namespace dlab {

struct EmbedderConfig {
    std::size_t input_dim = 768;
    std::size_t hidden = 256;
    std::size_t embed_dim = 64;
    std::size_t classes = 12;
    int steps = 1500;
    std::size_t batch = 64;
    double learning_rate = 1e-3;
    /// Std of Gaussian pixel noise (model space) added to training inputs.
    double augment_noise = 0.05;
    double target_accuracy = 0.95;
    std::uint64_t seed = 0;

    nlohmann::json to_json() const;
    static EmbedderConfig from_json(const nlohmann::json& j);
};

/// Small image classifier 768 -> 256 -> 64 -> classes. The embedding is the
/// 64-wide layer before its ReLU. Once frozen the weights never change.
class FeatureEmbedder {
public:
    static FeatureEmbedder create(const EmbedderConfig& cfg);

    const EmbedderConfig& config() const noexcept { return cfg_; }
    const ParamStore& params() const noexcept { return params_; }
    bool frozen() const noexcept { return frozen_; }
    std::size_t dim() const noexcept { return cfg_.embed_dim; }
    /// SHA-256 of the training manifest (config, data digest, accuracy).
    const std::string& manifest_hash() const noexcept { return manifest_hash_; }
    const nlohmann::json& manifest() const noexcept { return manifest_; }

    /// One row per image; images are [H, W, 3] in [0, 1].
    FeatureMatrix embed(std::span<const Tensor> images) const;
    std::vector<int> classify(std::span<const Tensor> images) const;
    double accuracy(std::span<const LabeledImage> data) const;

    /// Trains on `train`, reports accuracy on `test`, then freezes.
    /// ConvergenceError when test accuracy stays below target_accuracy.
    double fit(std::span<const LabeledImage> train, std::span<const LabeledImage> test);

    void save(const std::filesystem::path& path) const;
    static FeatureEmbedder load(const std::filesystem::path& path);

private:
    Tensor forward(std::span<const Tensor> images, bool logits) const;

    EmbedderConfig cfg_;
    ParamStore params_;
    bool frozen_ = false;
    nlohmann::json manifest_ = nlohmann::json::object();
    std::string manifest_hash_;
};

}  // namespace dlab
