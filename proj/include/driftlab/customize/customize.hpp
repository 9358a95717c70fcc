#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "driftlab/diffusion/diffusion.hpp"
#include "driftlab/gradcore/rng.hpp"
#include "driftlab/synthworld/world.hpp"

namespace dlab {

enum class Method { plain, prior, dc, dc_no_prior };
std::string_view to_string(Method m) noexcept;
/// Accepts "dc_no_prior" and the CLI spelling "dc-no-prior".
Method parse_method(std::string_view s);

enum class ParamScope { all, cond_subset };
std::string_view to_string(ParamScope s) noexcept;
/// Accepts "cond" and "cond_subset".
ParamScope parse_scope(std::string_view s);
GroupSet trainable_groups(ParamScope s);

/// Base-model generations of the concept's superclass token.
struct PriorBuffer {
    std::vector<Tensor> images;
    int cond_id = 0;
    std::vector<std::uint64_t> seeds;
    std::string base_hash;
    int sample_steps = 50;

    std::size_t size() const noexcept { return images.size(); }
    nlohmann::json manifest() const;
};

/// n DDIM samples of `superclass_token` under seeds seed .. seed+n-1.
PriorBuffer build_prior_buffer(const DenoiserModel& base, const NoiseSchedule& s, int superclass_token, std::size_t n,
                               std::uint64_t seed, int sample_steps = 50);

struct CustomizeConfig {
    Method method = Method::dc;
    ParamScope scope = ParamScope::all;
    /// Defaults to 1 for prior, 10 for dc / dc_no_prior, 0 for plain.
    std::optional<double> lambda;
    int steps = 500;
    double learning_rate = 1e-4;
    std::size_t batch_size = 1;
    std::size_t buffer_size = 200;
    std::uint64_t seed = 0;
    int buffer_sample_steps = 50;
    /// Std-dev of the noise added to the superclass embedding when the
    /// concept token is initialised.
    double token_init_noise = 0.01;

    double effective_lambda() const;
    /// Empty buffers are only valid for plain finetuning.
    bool needs_buffer() const noexcept { return method != Method::plain; }
    void validate() const;
    nlohmann::json to_json() const;
    /// A null or missing "lambda" leaves the method default in place.
    static CustomizeConfig from_json(const nlohmann::json& j);
};

/// Frozen pre-customization parameters.
class FrozenBaseHandle {
public:
    explicit FrozenBaseHandle(const DenoiserModel& base) : base_(&base), hash_(base.hash()) {}
    const DenoiserModel& model() const noexcept { return *base_; }
    const std::string& hash() const noexcept { return hash_; }
    /// Throws std::logic_error if the base parameters were modified.
    void verify_unchanged() const;

private:
    const DenoiserModel* base_;
    std::string hash_;
};

/// One training example in model space ([-1, 1]) with its token.
struct TokenizedImage {
    Tensor x0;
    int token = 0;
};

struct LossTerms {
    double shot = 0.0;
    double prior = 0.0;
    double distill = 0.0;
    double total = 0.0;
};

/// Combines per-term squared errors by method:
///   plain        shot
///   prior        shot + lambda * prior
///   dc           shot + prior + lambda * distill
///   dc_no_prior  shot + lambda * distill
LossTerms combine_loss_terms(Method method, double lambda, double shot, double prior, double distill);

/// Noise draws of one step, consumed in the order t, eps, t', eps' so that
/// every method sees identical draws for the same rng state.
struct StepNoise {
    std::vector<int> shot_t;
    Tensor shot_eps;
    std::vector<int> prior_t;
    Tensor prior_eps;
};
StepNoise draw_step_noise(RngStream& rng, std::size_t shot_rows, std::size_t prior_rows, std::size_t dim,
                          const NoiseSchedule& s);

/// Evaluates the customization objective on given batches (no update).
/// ConfigError when prior_batch is empty for a non-plain method.
LossTerms customization_loss(const DenoiserModel& model, const FrozenBaseHandle& base,
                             std::span<const TokenizedImage> shot_batch, std::span<const TokenizedImage> prior_batch,
                             const CustomizeConfig& cfg, const NoiseSchedule& s, RngStream& rng);

struct TrainingLogRow {
    int step = 0;
    double shot = 0.0;
    double prior = 0.0;
    double distill = 0.0;
};

struct CustomizationResult {
    DenoiserModel model;
    std::vector<TrainingLogRow> log;
};

std::string training_log_csv(std::span<const TrainingLogRow> rows);

/// Finetunes a copy of `base` on the concept shots. The base model is never
/// mutated; groups outside the scope stay bit-identical.
CustomizationResult run_customization(const DenoiserModel& base, const NoiseSchedule& s, const ConceptSpec& spec,
                                      std::span<const LabeledImage> shots, const PriorBuffer& buffer,
                                      const CustomizeConfig& cfg);

}  // namespace dlab
