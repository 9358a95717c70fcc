#include "driftlab/customize/customize.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "driftlab/gradcore/error.hpp"
#include "driftlab/gradcore/optimizer.hpp"

namespace dlab {

std::string_view to_string(Method m) noexcept {
    switch (m) {
        case Method::plain: return "plain";
        case Method::prior: return "prior";
        case Method::dc: return "dc";
        case Method::dc_no_prior: return "dc_no_prior";
    }
    return "plain";
}

Method parse_method(std::string_view s) {
    if (s == "plain") return Method::plain;
    if (s == "prior") return Method::prior;
    if (s == "dc") return Method::dc;
    if (s == "dc_no_prior" || s == "dc-no-prior") return Method::dc_no_prior;
    throw ConfigError("unknown customization method: " + std::string(s));
}

std::string_view to_string(ParamScope s) noexcept {
    return s == ParamScope::all ? "all" : "cond_subset";
}

ParamScope parse_scope(std::string_view s) {
    if (s == "all") return ParamScope::all;
    if (s == "cond" || s == "cond_subset") return ParamScope::cond_subset;
    throw ConfigError("unknown parameter scope: " + std::string(s));
}

GroupSet trainable_groups(ParamScope s) {
    if (s == ParamScope::all) return all_groups();
    return {ParamGroup::cond_embed, ParamGroup::cond_proj};
}

nlohmann::json PriorBuffer::manifest() const {
    return {{"cond_id", cond_id}, {"size", images.size()}, {"seeds", seeds}, {"base_hash", base_hash},
            {"sample_steps", sample_steps}, {"sampler", "ddim"}};
}

PriorBuffer build_prior_buffer(const DenoiserModel& base, const NoiseSchedule& s, int superclass_token, std::size_t n,
                               std::uint64_t seed, int sample_steps) {
    base.check_token(superclass_token);
    PriorBuffer buf;
    buf.cond_id = superclass_token;
    buf.base_hash = base.hash();
    buf.sample_steps = sample_steps;
    std::vector<GenerationRequest> reqs;
    for (std::size_t i = 0; i < n; ++i) {
        buf.seeds.push_back(seed + i);
        reqs.push_back({superclass_token, seed + i, SamplerKind::ddim, sample_steps});
    }
    if (n > 0) buf.images = sample_batch(base, reqs, s);
    return buf;
}

double CustomizeConfig::effective_lambda() const {
    if (lambda) return *lambda;
    switch (method) {
        case Method::plain: return 0.0;
        case Method::prior: return 1.0;
        case Method::dc:
        case Method::dc_no_prior: return 10.0;
    }
    return 0.0;
}

void CustomizeConfig::validate() const {
    if (effective_lambda() < 0.0) throw ConfigError("lambda must be non-negative");
    if (steps < 0) throw ConfigError("steps must be non-negative");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (needs_buffer() && buffer_size == 0)
        throw ConfigError(std::string(to_string(method)) + " needs a non-empty prior buffer");
}

nlohmann::json CustomizeConfig::to_json() const {
    return {{"method", to_string(method)},
            {"scope", to_string(scope)},
            {"lambda", effective_lambda()},
            {"steps", steps},
            {"learning_rate", learning_rate},
            {"batch_size", batch_size},
            {"buffer_size", buffer_size},
            {"seed", seed},
            {"buffer_sample_steps", buffer_sample_steps},
            {"token_init_noise", token_init_noise}};
}

CustomizeConfig CustomizeConfig::from_json(const nlohmann::json& j) {
    CustomizeConfig c;
    c.method = parse_method(j.at("method").get<std::string>());
    c.scope = parse_scope(j.at("scope").get<std::string>());
    if (j.contains("lambda") && !j.at("lambda").is_null()) c.lambda = j.at("lambda").get<double>();
    c.steps = j.at("steps");
    c.learning_rate = j.at("learning_rate");
    c.batch_size = j.at("batch_size");
    c.buffer_size = j.at("buffer_size");
    c.seed = j.at("seed");
    c.buffer_sample_steps = j.at("buffer_sample_steps");
    c.token_init_noise = j.at("token_init_noise");
    return c;
}

void FrozenBaseHandle::verify_unchanged() const {
    if (base_->hash() != hash_) throw std::logic_error("frozen base model was mutated during customization");
}

LossTerms combine_loss_terms(Method method, double lambda, double shot, double prior, double distill) {
    LossTerms t{shot, prior, distill, 0.0};
    switch (method) {
        case Method::plain: t.total = shot; break;
        case Method::prior: t.total = shot + lambda * prior; break;
        case Method::dc: t.total = shot + prior + lambda * distill; break;
        case Method::dc_no_prior: t.total = shot + lambda * distill; break;
    }
    return t;
}

StepNoise draw_step_noise(RngStream& rng, std::size_t shot_rows, std::size_t prior_rows, std::size_t dim,
                          const NoiseSchedule& s) {
    StepNoise n;
    n.shot_eps = Tensor({std::max<std::size_t>(shot_rows, 1), dim});
    for (std::size_t r = 0; r < shot_rows; ++r) {
        n.shot_t.push_back(static_cast<int>(rng.uniform_int(1, s.steps())));
        for (std::size_t j = 0; j < dim; ++j) n.shot_eps[r * dim + j] = rng.normal();
    }
    n.prior_eps = Tensor({std::max<std::size_t>(prior_rows, 1), dim});
    for (std::size_t r = 0; r < prior_rows; ++r) {
        n.prior_t.push_back(static_cast<int>(rng.uniform_int(1, s.steps())));
        for (std::size_t j = 0; j < dim; ++j) n.prior_eps[r * dim + j] = rng.normal();
    }
    return n;
}

namespace {

struct Assembled {
    NodeId loss = 0;
    LossTerms terms;
};

/// Records the objective on `tape` (parameters of `model` already bound).
Assembled assemble(Tape& tape, const DenoiserModel& model, const DenoiserModel& base,
                   std::span<const TokenizedImage> shots, std::span<const TokenizedImage> priors, Method method,
                   double lambda, const StepNoise& noise, const NoiseSchedule& s) {
    const std::size_t d = model.config().image_dim();
    const std::size_t ns = shots.size();
    const std::size_t np = method == Method::plain ? 0 : priors.size();
    const std::size_t rows = ns + np;
    Tensor xt({rows, d}), eps_target({rows, d}), distill_target({rows, d});
    std::vector<int> tokens(rows), ts(rows);
    std::vector<double> w_main(rows, 0.0), w_distill(rows, 0.0);

    auto fill = [&](std::size_t r, const TokenizedImage& ex, int t, std::span<const double> eps) {
        if (ex.x0.size() != d) throw ConfigError("customization image size does not match the model");
        const double ab = s.alpha_bar(t);
        const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
        for (std::size_t j = 0; j < d; ++j) {
            xt[r * d + j] = a * ex.x0[j] + b * eps[j];
            eps_target[r * d + j] = eps[j];
        }
        tokens[r] = ex.token;
        ts[r] = t;
    };
    for (std::size_t i = 0; i < ns; ++i) fill(i, shots[i], noise.shot_t.at(i), noise.shot_eps.row(i));
    for (std::size_t i = 0; i < np; ++i) fill(ns + i, priors[i], noise.prior_t.at(i), noise.prior_eps.row(i));

    const double prior_weight = method == Method::prior ? lambda : (method == Method::dc ? 1.0 : 0.0);
    const double distill_weight = (method == Method::dc || method == Method::dc_no_prior) ? lambda : 0.0;
    for (std::size_t i = 0; i < ns; ++i) w_main[i] = s.weight(ts[i]) / static_cast<double>(ns);
    for (std::size_t i = 0; i < np; ++i) {
        const double w = s.weight(ts[ns + i]) / static_cast<double>(np);
        w_main[ns + i] = prior_weight * w;
        w_distill[ns + i] = distill_weight * w;
    }

    if (np > 0) {
        Tensor prior_xt({np, d});
        std::copy(xt.data().begin() + static_cast<std::ptrdiff_t>(ns * d), xt.data().end(), prior_xt.data().begin());
        const Tensor frozen = base.predict(prior_xt, std::span(tokens).subspan(ns), std::span(ts).subspan(ns));
        std::copy(frozen.data().begin(), frozen.data().end(), distill_target.data().begin() + static_cast<std::ptrdiff_t>(ns * d));
    }

    const NodeId pred = model.forward(tape, tape.constant(std::move(xt)), tokens, ts);
    const Tensor& p = tape.value(pred);
    double shot = 0.0, prior = 0.0, distill = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        double e = 0.0, dd = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double a = eps_target[r * d + j] - p[r * d + j];
            const double b = distill_target[r * d + j] - p[r * d + j];
            e += a * a;
            dd += b * b;
        }
        const double w = s.weight(ts[r]);
        if (r < ns) {
            shot += w * e / static_cast<double>(d * ns);
        } else {
            prior += w * e / static_cast<double>(d * np);
            distill += w * dd / static_cast<double>(d * np);
        }
    }

    Assembled out;
    out.terms = combine_loss_terms(method, lambda, shot, prior, distill);
    out.loss = tape.weighted_row_mse(pred, tape.constant(std::move(eps_target)), std::move(w_main));
    if (distill_weight > 0.0 && np > 0)
        out.loss = tape.add(out.loss, tape.weighted_row_mse(pred, tape.constant(std::move(distill_target)),
                                                            std::move(w_distill)));
    return out;
}

}  // namespace

LossTerms customization_loss(const DenoiserModel& model, const FrozenBaseHandle& base,
                             std::span<const TokenizedImage> shot_batch, std::span<const TokenizedImage> prior_batch,
                             const CustomizeConfig& cfg, const NoiseSchedule& s, RngStream& rng) {
    if (shot_batch.empty()) throw ConfigError("customization_loss: empty shot batch");
    if (cfg.needs_buffer() && prior_batch.empty())
        throw ConfigError(std::string(to_string(cfg.method)) + " requires a non-empty prior batch");
    const std::size_t d = model.config().image_dim();
    const StepNoise noise = draw_step_noise(rng, shot_batch.size(), prior_batch.size(), d, s);
    Tape tape(false);
    tape.bind(model.params(), {});
    return assemble(tape, model, base.model(), shot_batch, prior_batch, cfg.method, cfg.effective_lambda(), noise, s)
        .terms;
}

std::string training_log_csv(std::span<const TrainingLogRow> rows) {
    std::ostringstream os;
    os.precision(17);
    os << "step,shot_loss,prior_loss,distill_loss\n";
    for (const auto& r : rows) os << r.step << ',' << r.shot << ',' << r.prior << ',' << r.distill << '\n';
    return os.str();
}

CustomizationResult run_customization(const DenoiserModel& base, const NoiseSchedule& s, const ConceptSpec& spec,
                                      std::span<const LabeledImage> shots, const PriorBuffer& buffer,
                                      const CustomizeConfig& cfg) {
    cfg.validate();
    const auto& c = base.config();
    if (spec.rare_token < static_cast<int>(c.base_tokens) || spec.rare_token >= c.null_token())
        throw TokenError("concept token " + std::to_string(spec.rare_token) + " is not a reserve token");
    if (shots.empty()) throw ConfigError("customization needs at least one shot");
    if (cfg.needs_buffer() && buffer.size() == 0)
        throw ConfigError(std::string(to_string(cfg.method)) + " needs a non-empty prior buffer");
    if (buffer.size() > 0 && buffer.base_hash != base.hash())
        throw ConfigError("prior buffer was generated by a different base checkpoint");

    const FrozenBaseHandle frozen(base);
    const GroupSet trainable = trainable_groups(cfg.scope);
    GroupSet frozen_groups;
    for (auto g : all_groups())
        if (!trainable.contains(g)) frozen_groups.insert(g);

    CustomizationResult result{base, {}};
    DenoiserModel& model = result.model;
    model.set_trainable(trainable);
    const std::string frozen_before = model.params().hash(frozen_groups);
    if (cfg.steps == 0) return result;

    {
        RngStream init(cfg.seed, streams::token_init);
        Tensor& table = model.params().value("cond_embed");
        const std::size_t e = table.cols();
        const auto src = static_cast<std::size_t>(spec.superclass);
        const auto dst = static_cast<std::size_t>(spec.rare_token);
        for (std::size_t j = 0; j < e; ++j) table[dst * e + j] = table[src * e + j] + cfg.token_init_noise * init.normal();
    }

    std::vector<TokenizedImage> shot_data, prior_data;
    for (const auto& sh : shots) shot_data.push_back({to_model_space(sh.image).reshaped({sh.image.size()}), spec.rare_token});
    for (const auto& img : buffer.images) prior_data.push_back({to_model_space(img).reshaped({img.size()}), buffer.cond_id});

    RngStream rng(cfg.seed, streams::train);
    OptimizerState opt = make_adam(cfg.learning_rate);
    const std::size_t d = c.image_dim();
    const double lambda = cfg.effective_lambda();
    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<TokenizedImage> shot_batch, prior_batch;
        for (std::size_t b = 0; b < cfg.batch_size; ++b)
            shot_batch.push_back(shot_data[static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(shot_data.size()) - 1))]);
        if (cfg.needs_buffer())
            for (std::size_t b = 0; b < cfg.batch_size; ++b)
                prior_batch.push_back(
                    prior_data[static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(prior_data.size()) - 1))]);
        const StepNoise noise = draw_step_noise(rng, shot_batch.size(), prior_batch.size(), d, s);

        Tape tape;
        tape.bind(model.params(), trainable);
        const Assembled a = assemble(tape, model, base, shot_batch, prior_batch, cfg.method, lambda, noise, s);
        tape.backward(a.loss);
        optimizer_step(opt, model.params(), tape.parameter_grads());
        result.log.push_back({step, a.terms.shot, a.terms.prior, a.terms.distill});
    }

    if (model.params().hash(frozen_groups) != frozen_before)
        throw std::logic_error("frozen parameter groups changed during customization");
    frozen.verify_unchanged();
    return result;
}

}  // namespace dlab
