#include "driftlab/diffusion/diffusion.hpp"

#include <cmath>
#include <map>
#include <numbers>

#include "driftlab/gradcore/checkpoint.hpp"
#include "driftlab/gradcore/error.hpp"
#include "driftlab/gradcore/optimizer.hpp"
#include "driftlab/gradcore/rng.hpp"

namespace dlab {

Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& s) {
    if (x0.shape() != eps.shape())
        throw ConfigError("q_sample: x0 " + shape_string(x0.shape()) + " vs eps " + shape_string(eps.shape()));
    const double ab = s.alpha_bar(t);
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    Tensor out(x0.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
    return out;
}

NodeId denoise_loss_node(Tape& tape, const DenoiserModel& model, const Tensor& x0, const Tensor& eps,
                         std::span<const int> tokens, std::span<const int> timesteps, const NoiseSchedule& s,
                         std::vector<double> row_weights) {
    if (x0.shape() != eps.shape()) throw ConfigError("denoise_loss: x0 and eps shapes differ");
    const std::size_t rows = x0.rows(), cols = x0.cols();
    if (timesteps.size() != rows) throw ConfigError("denoise_loss: one timestep per row required");
    Tensor xt({rows, cols});
    for (std::size_t r = 0; r < rows; ++r) {
        const double ab = s.alpha_bar(timesteps[r]);
        const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
        for (std::size_t c = 0; c < cols; ++c) xt[r * cols + c] = a * x0[r * cols + c] + b * eps[r * cols + c];
        row_weights.at(r) *= s.weight(timesteps[r]);
    }
    const NodeId pred = model.forward(tape, tape.constant(std::move(xt)), tokens, timesteps);
    return tape.weighted_row_mse(pred, tape.constant(eps), std::move(row_weights));
}

double denoise_loss(const DenoiserModel& model, const Tensor& x0, int cond_id, int t, const Tensor& eps,
                    const NoiseSchedule& s) {
    const std::size_t d = x0.size();
    Tape tape(false);
    tape.bind(model.params(), {});
    const int tok[] = {cond_id};
    const int ts[] = {t};
    if (x0.shape() != eps.shape()) throw ConfigError("denoise_loss: x0 and eps shapes differ");
    const NodeId loss = denoise_loss_node(tape, model, x0.reshaped({1, d}), eps.reshaped({1, d}), tok, ts, s, {1.0});
    return tape.value(loss)[0];
}

std::string_view to_string(SamplerKind k) noexcept {
    return k == SamplerKind::ddim ? "ddim" : "ddpm";
}

SamplerKind parse_sampler(std::string_view s) {
    if (s == "ddim") return SamplerKind::ddim;
    if (s == "ddpm") return SamplerKind::ddpm;
    throw ConfigError("unknown sampler: " + std::string(s));
}

std::vector<int> sampling_timesteps(int total, int steps) {
    if (steps < 1) throw ConfigError("sampler needs at least one step");
    if (steps > total)
        throw ConfigError("sampler steps " + std::to_string(steps) + " exceed schedule length " + std::to_string(total));
    std::vector<int> out;
    for (int i = 1; i <= steps; ++i)
        out.push_back(static_cast<int>((static_cast<std::int64_t>(i) * total) / steps));
    return out;
}

Tensor initial_noise(std::uint64_t seed, std::size_t dim) {
    RngStream rng(seed, streams::sampler_base);
    Tensor out({dim});
    for (auto& v : out.data()) v = rng.normal();
    return out;
}

Tensor ancestral_noise(std::uint64_t seed, int t, std::size_t dim) {
    RngStream rng(seed, streams::sampler_base + static_cast<std::uint64_t>(t));
    Tensor out({dim});
    for (auto& v : out.data()) v = rng.normal();
    return out;
}

namespace {

void sample_group(const DenoiserModel& model, std::span<const GenerationRequest> reqs, const NoiseSchedule& s,
                  std::span<Tensor> out) {
    const auto& c = model.config();
    const std::size_t d = c.image_dim(), n = reqs.size();
    const SamplerKind kind = reqs.front().sampler;
    const auto taus = sampling_timesteps(s.steps(), reqs.front().steps);

    Tensor x({n, d});
    std::vector<int> tokens(n);
    for (std::size_t r = 0; r < n; ++r) {
        model.check_token(reqs[r].cond_id);
        tokens[r] = reqs[r].cond_id;
        const Tensor z = initial_noise(reqs[r].seed, d);
        std::copy(z.data().begin(), z.data().end(), x.row(r).begin());
    }
    for (std::size_t i = taus.size(); i-- > 0;) {
        const int t = taus[i];
        const int prev = i == 0 ? 0 : taus[i - 1];
        const double ab = s.alpha_bar(t);
        const double ab_prev = prev == 0 ? 1.0 : s.alpha_bar(prev);
        const std::vector<int> ts(n, t);
        const Tensor eps = model.predict(x, tokens, ts);
        double sigma = 0.0;
        if (kind == SamplerKind::ddpm && prev > 0)
            sigma = std::sqrt((1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev));
        const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
        for (std::size_t r = 0; r < n; ++r) {
            const Tensor z = sigma > 0.0 ? ancestral_noise(reqs[r].seed, t, d) : Tensor();
            for (std::size_t j = 0; j < d; ++j) {
                const double e = eps[r * d + j];
                const double x0 = (x[r * d + j] - std::sqrt(1.0 - ab) * e) / std::sqrt(ab);
                double next = std::sqrt(ab_prev) * x0 + dir * e;
                if (sigma > 0.0) next += sigma * z[j];
                x[r * d + j] = next;
            }
        }
    }
    for (std::size_t r = 0; r < n; ++r) out[r] = from_model_space(x.row(r), c.height, c.width, c.channels);
}

}  // namespace

std::vector<Tensor> sample_batch(const DenoiserModel& model, std::span<const GenerationRequest> reqs,
                                 const NoiseSchedule& s, std::size_t chunk) {
    if (chunk == 0) throw ConfigError("sample_batch: chunk must be positive");
    std::vector<Tensor> out(reqs.size());
    // Group by sampler settings; order inside a group is preserved.
    std::map<std::pair<int, int>, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < reqs.size(); ++i) {
        sampling_timesteps(s.steps(), reqs[i].steps);
        groups[{static_cast<int>(reqs[i].sampler), reqs[i].steps}].push_back(i);
    }
    for (const auto& [key, idx] : groups) {
        for (std::size_t start = 0; start < idx.size(); start += chunk) {
            const std::size_t len = std::min(chunk, idx.size() - start);
            std::vector<GenerationRequest> part;
            for (std::size_t k = 0; k < len; ++k) part.push_back(reqs[idx[start + k]]);
            std::vector<Tensor> imgs(len);
            sample_group(model, part, s, imgs);
            for (std::size_t k = 0; k < len; ++k) out[idx[start + k]] = std::move(imgs[k]);
        }
    }
    return out;
}

Tensor sample(const DenoiserModel& model, const GenerationRequest& req, const NoiseSchedule& s) {
    return sample_batch(model, std::span(&req, 1), s).front();
}

nlohmann::json DenoiserTrainConfig::to_json() const {
    return {{"steps", steps},
            {"batch", batch},
            {"learning_rate", learning_rate},
            {"final_lr_fraction", final_lr_fraction},
            {"cond_dropout", cond_dropout},
            {"seed", seed},
            {"window", window}};
}

DenoiserTrainConfig DenoiserTrainConfig::from_json(const nlohmann::json& j) {
    DenoiserTrainConfig c;
    c.steps = j.at("steps");
    c.batch = j.at("batch");
    c.learning_rate = j.at("learning_rate");
    c.final_lr_fraction = j.at("final_lr_fraction");
    c.cond_dropout = j.at("cond_dropout");
    c.seed = j.at("seed");
    c.window = j.at("window");
    return c;
}

TrainLog train_denoiser(DenoiserModel& model, const NoiseSchedule& s, std::span<const LabeledImage> data,
                        const DenoiserTrainConfig& cfg) {
    if (data.empty()) throw ConfigError("train_denoiser: empty dataset");
    if (cfg.batch == 0 || cfg.window < 1) throw ConfigError("train_denoiser: batch and window must be positive");
    const auto& c = model.config();
    const std::size_t d = c.image_dim();
    RngStream rng(cfg.seed, streams::train);
    OptimizerState opt = make_adam(cfg.learning_rate);
    TrainLog log;
    double window_sum = 0.0;
    int window_count = 0;
    for (int step = 0; step < cfg.steps; ++step) {
        const double progress = cfg.steps > 1 ? static_cast<double>(step) / (cfg.steps - 1) : 0.0;
        opt.learning_rate = cfg.learning_rate *
                            (cfg.final_lr_fraction +
                             (1.0 - cfg.final_lr_fraction) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
        Tensor x0({cfg.batch, d}), eps({cfg.batch, d});
        std::vector<int> tokens(cfg.batch), ts(cfg.batch);
        for (std::size_t r = 0; r < cfg.batch; ++r) {
            const auto& ex = data[static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(data.size()) - 1))];
            if (ex.image.size() != d) throw ConfigError("training image size does not match the model");
            for (std::size_t j = 0; j < d; ++j) x0[r * d + j] = 2.0 * ex.image[j] - 1.0;
            tokens[r] = rng.uniform() < cfg.cond_dropout ? c.null_token() : ex.label;
            ts[r] = static_cast<int>(rng.uniform_int(1, s.steps()));
            for (std::size_t j = 0; j < d; ++j) eps[r * d + j] = rng.normal();
        }
        Tape tape;
        tape.bind(model.params(), model.trainable());
        const NodeId loss = denoise_loss_node(tape, model, x0, eps, tokens, ts, s,
                                              std::vector<double>(cfg.batch, 1.0 / static_cast<double>(cfg.batch)));
        tape.backward(loss);
        optimizer_step(opt, model.params(), tape.parameter_grads());
        const double l = tape.value(loss)[0];
        log.step_losses.push_back(l);
        window_sum += l;
        if (++window_count == cfg.window) {
            log.window_means.push_back(window_sum / window_count);
            window_sum = 0.0;
            window_count = 0;
        }
    }
    return log;
}

void save_denoiser(const std::filesystem::path& path, const DenoiserModel& model, const NoiseSchedule& s,
                   nlohmann::json extra) {
    Checkpoint ckpt;
    ckpt.meta = std::move(extra);
    ckpt.meta["kind"] = "denoiser";
    ckpt.meta["config"] = model.config().to_json();
    ckpt.meta["schedule"] = s.to_json();
    ckpt.params = model.params();
    save_checkpoint(path, ckpt);
}

LoadedDenoiser load_denoiser(const std::filesystem::path& path) {
    Checkpoint ckpt = load_checkpoint(path);
    if (ckpt.meta.value("kind", "") != "denoiser") throw ConfigError(path.string() + " is not a denoiser checkpoint");
    auto cfg = DenoiserConfig::from_json(ckpt.meta.at("config"));
    auto schedule = NoiseSchedule::from_json(ckpt.meta.at("schedule"));
    return {DenoiserModel(cfg, std::move(ckpt.params)), std::move(schedule), std::move(ckpt.meta)};
}

}  // namespace dlab
