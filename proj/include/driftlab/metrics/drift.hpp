#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "driftlab/diffusion/diffusion.hpp"
#include "driftlab/metrics/embedder.hpp"

namespace dlab {

/// Cosine similarity clamped to [-1, 1]. Bitwise-equal vectors give exactly
/// 1; a zero vector against anything else gives 0.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

struct SamplerConfig {
    SamplerKind sampler = SamplerKind::ddim;
    int steps = 50;
    nlohmann::json to_json() const;
};

/// Seed-matched similarities between two models' generations, one entry
/// per (cond, seed) pair.
struct SimilarityDistribution {
    std::vector<int> conds;
    std::vector<std::uint64_t> seeds;
    std::vector<double> values;

    double mean() const;
    /// Linear interpolation between order statistics, q in [0, 1].
    double quantile(double q) const;
    double median() const { return quantile(0.5); }
    /// Counts over `bins` equal bins spanning [lo, 1].
    std::vector<std::size_t> histogram(std::size_t bins, double lo = -1.0) const;
    nlohmann::json summary() const;
};

SimilarityDistribution similarity_from_embeddings(const FeatureMatrix& a, const FeatureMatrix& b);

/// Generates every (cond, seed) pair under both models with the same
/// sampler and compares embeddings.
SimilarityDistribution similarity_distribution(const DenoiserModel& base, const DenoiserModel& adapted,
                                               const NoiseSchedule& schedule, std::span<const int> conds,
                                               std::span<const std::uint64_t> seeds,
                                               const FeatureEmbedder& embedder, const SamplerConfig& sampler = {});

/// Mean over unordered pairs of (1 - cosine similarity). ConfigError for
/// fewer than two rows.
double diversity_from_embeddings(const FeatureMatrix& e);

/// Diversity of n_seeds generations for one condition, seeds seed_base..
double diversity_score(const DenoiserModel& model, const NoiseSchedule& schedule, int cond, std::size_t n_seeds,
                       const FeatureEmbedder& embedder, const SamplerConfig& sampler = {},
                       std::uint64_t seed_base = 0);

/// Mean cosine similarity between every generation and every reference
/// (e.g. concept shots) in embedding space.
double mean_cross_similarity(const FeatureMatrix& generated, const FeatureMatrix& reference);

/// Builds requests for every (cond, seed) pair, conds outermost.
std::vector<GenerationRequest> make_requests(std::span<const int> conds, std::span<const std::uint64_t> seeds,
                                             const SamplerConfig& sampler);

}  // namespace dlab
