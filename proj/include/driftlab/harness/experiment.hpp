#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "driftlab/harness/pipeline.hpp"

namespace dlab {

enum class ExperimentKind {
    global_drift,
    semantic_drift,
    appearance_drift,
    local_drift,
    buffer_ablation,
    diversity,
    concept_scaling
};
std::string_view to_string(ExperimentKind k) noexcept;
ExperimentKind parse_experiment_kind(std::string_view s);

struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::semantic_drift;
    /// Concept ids; empty means every concept of the world.
    std::vector<int> concepts;
    std::vector<Method> methods = {Method::plain, Method::prior, Method::dc, Method::dc_no_prior};
    std::vector<ParamScope> scopes = {ParamScope::all, ParamScope::cond_subset};
    std::vector<std::uint64_t> run_seeds = {0, 1, 2};
    /// Template for every customization run; method, scope and seed are
    /// overwritten from the matrix. A set lambda applies to every method.
    CustomizeConfig customize;

    std::size_t images_per_condition = 200;
    std::uint64_t appearance_seed_base = 100'000;
    std::size_t probe_requests = 200;
    std::uint64_t probe_seed_base = 50'000;
    std::size_t fidelity_samples = 50;
    std::uint64_t fidelity_seed_base = 70'000;
    std::size_t neighbor_k = 3;
    std::vector<std::size_t> buffer_sizes = {0, 10, 50, 100, 200};
    std::size_t diversity_seeds = 16;
    std::uint64_t diversity_seed_base = 90'000;
    std::vector<std::size_t> concept_counts = {1, 2, 4};

    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);
    void validate() const;
};

/// One adapted model (or the base) and its scalar results.
struct ModelRow {
    std::string label;
    int concept_id = 0;
    std::string concept_name;
    std::string method;
    std::string scope;
    std::uint64_t seed = 0;
    std::string model_hash;
    std::optional<double> accuracy;
    std::optional<double> accuracy_delta;
    std::optional<double> worst_drop;
    std::optional<int> worst_class;
    std::map<int, double> per_class;
    std::map<std::string, double> metrics;
};

/// Seed-matched similarity values of one adapted model against the base.
struct SimilarityRow {
    std::string label;
    int concept_id = 0;
    std::string method;
    std::string scope;
    std::uint64_t seed = 0;
    std::vector<int> conds;
    std::vector<double> values;
};

/// Per-condition metrics; label "control" marks base-vs-base on disjoint seeds.
struct ConditionRow {
    std::string label;
    int concept_id = -1;
    std::string method;
    std::string scope;
    std::uint64_t seed = 0;
    int condition = 0;
    std::map<std::string, double> metrics;
};

struct SweepRow {
    std::string parameter;
    std::string method;
    std::string scope;
    double value = 0.0;
    std::vector<double> per_run;
    double mean = 0.0;
};

inline constexpr int kReportSchemaVersion = 1;

struct DriftReport {
    int schema_version = kReportSchemaVersion;
    std::string experiment_id;
    std::string kind;
    nlohmann::json config;
    std::string config_hash;
    nlohmann::json provenance;
    std::optional<double> base_accuracy;
    std::map<int, double> base_per_class;
    std::vector<ModelRow> models;
    std::vector<SimilarityRow> similarity;
    std::vector<ConditionRow> conditions;
    std::vector<SweepRow> sweeps;
    std::vector<std::string> notes;

    nlohmann::json to_json() const;
    static DriftReport from_json(const nlohmann::json& j);
};

/// Runs every stage the experiment kind needs (reusing completed ones) and
/// assembles the report. The report is also stored under the "report" stage.
DriftReport run_experiment(Pipeline& pipeline, const ExperimentConfig& cfg);

struct ProbeConfig {
    std::vector<int> conditions = {0, 1, 2, 3, 4};
    std::size_t seeds_per_condition = 20;
    std::uint64_t seed_base = 60'000;
    std::size_t probe_images = 100;
};

struct CompareSummary {
    std::string base_hash;
    std::string adapted_hash;
    double mean_similarity = 0.0;
    double base_accuracy = 0.0;
    double adapted_accuracy = 0.0;
    double accuracy_delta = 0.0;
    double cdi = 0.0;
    double control_cdi = 0.0;
    nlohmann::json to_json() const;
};

/// Quick diagnostic between two checkpoints: seed-matched similarity, a
/// zero-shot accuracy probe and mean per-condition CDI next to a
/// base-vs-base control on disjoint seeds.
/// ConfigError when the architectures differ.
CompareSummary compare_models(const std::filesystem::path& base_ckpt, const std::filesystem::path& adapted_ckpt,
                              Pipeline& pipeline, const ProbeConfig& probe = {});
CompareSummary compare_models(const DenoiserModel& base, const DenoiserModel& adapted, Pipeline& pipeline,
                              const ProbeConfig& probe = {});

}  // namespace dlab
