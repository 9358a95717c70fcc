#pragma once

#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "driftlab/customize/customize.hpp"
#include "driftlab/harness/store.hpp"
#include "driftlab/metrics/color.hpp"
#include "driftlab/metrics/drift.hpp"
#include "driftlab/metrics/embedder.hpp"
#include "driftlab/synthworld/world.hpp"
#include "driftlab/zeroshot/classifier.hpp"

namespace dlab {

struct PipelineConfig {
    WorldConfig world;
    DenoiserConfig model;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    DenoiserTrainConfig base_train;
    std::uint64_t base_seed = 0;
    EmbedderConfig embedder;
    std::size_t eval_noise_count = 64;
    std::uint64_t eval_noise_seed = 99;
    StageConfig stages = StageConfig::defaults();
    SamplerConfig sampler;
    std::uint64_t buffer_seed = 777;
    HistogramGrid grid;

    nlohmann::json to_json() const;
    static PipelineConfig from_json(const nlohmann::json& j);
};

/// Per-request embeddings plus one chromaticity histogram per condition.
struct GenerationStats {
    std::vector<int> conds;
    std::vector<std::uint64_t> seeds;
    /// Rows in cond-major order: conds[0] x seeds, conds[1] x seeds, ...
    FeatureMatrix embeddings;
    std::vector<ChromaticityHistogram> histograms;

    FeatureMatrix condition_embeddings(std::size_t cond_index) const;
};

/// Resumable stage graph over an artifact store. Every stage is keyed by
/// the hash of its inputs and is computed at most once per store.
class Pipeline {
public:
    /// With allow_base_training=false a missing base model raises
    /// DependencyError("train-base") instead of training one.
    Pipeline(ArtifactStore store, PipelineConfig cfg, bool allow_base_training = true);

    const PipelineConfig& config() const noexcept { return cfg_; }
    const ArtifactStore& store() const noexcept { return store_; }

    const ConceptWorld& world();
    const NoiseSchedule& schedule() const noexcept { return schedule_; }
    nlohmann::json base_key() const;
    bool base_ready() const;
    const DenoiserModel& base();
    std::filesystem::path base_path() const;
    const FeatureEmbedder& embedder();
    const EvalNoiseSet& eval_noise();

    PriorBuffer buffer(int concept_id, std::size_t n, int sample_steps = 50);
    nlohmann::json adapted_key(int concept_id, const CustomizeConfig& cfg) const;
    DenoiserModel adapted(int concept_id, const CustomizeConfig& cfg);
    std::filesystem::path adapted_path(int concept_id, const CustomizeConfig& cfg) const;

    /// Zero-shot evaluation on the held-out base-class test set.
    DatasetEval evaluate(const DenoiserModel& model);
    /// Generates every (cond, seed) pair with the configured sampler.
    GenerationStats generate(const DenoiserModel& model, std::span<const int> conds,
                             std::span<const std::uint64_t> seeds);
    /// Embeddings only, for an arbitrary request list.
    FeatureMatrix embed_requests(const DenoiserModel& model, std::span<const GenerationRequest> reqs);

    std::vector<int> base_classes();

private:
    ArtifactStore store_;
    PipelineConfig cfg_;
    bool allow_base_training_;
    NoiseSchedule schedule_;
    std::optional<ConceptWorld> world_;
    std::optional<DenoiserModel> base_;
    std::optional<FeatureEmbedder> embedder_;
    std::optional<EvalNoiseSet> noise_;
};

}  // namespace dlab
