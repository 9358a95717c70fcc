#include "driftlab/diffusion/denoiser.hpp"

#include <cmath>

#include "driftlab/gradcore/error.hpp"
#include "driftlab/gradcore/rng.hpp"

namespace dlab {
namespace {

std::string block_name(std::size_t b, const char* leaf) {
    return "block" + std::to_string(b) + "." + leaf;
}

Tensor normal_tensor(Shape shape, double stddev, RngStream& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = stddev * rng.normal();
    return t;
}

}  // namespace

int DenoiserConfig::rare_token(std::size_t i) const {
    if (i >= rare_tokens) throw TokenError("rare token index " + std::to_string(i) + " out of range");
    return static_cast<int>(base_tokens + i);
}

nlohmann::json DenoiserConfig::to_json() const {
    return {{"height", height},           {"width", width},           {"channels", channels},
            {"hidden", hidden},           {"blocks", blocks},         {"time_features", time_features},
            {"embed_dim", embed_dim},     {"base_tokens", base_tokens}, {"rare_tokens", rare_tokens},
            {"timesteps", timesteps}};
}

DenoiserConfig DenoiserConfig::from_json(const nlohmann::json& j) {
    DenoiserConfig c;
    c.height = j.at("height");
    c.width = j.at("width");
    c.channels = j.at("channels");
    c.hidden = j.at("hidden");
    c.blocks = j.at("blocks");
    c.time_features = j.at("time_features");
    c.embed_dim = j.at("embed_dim");
    c.base_tokens = j.at("base_tokens");
    c.rare_tokens = j.at("rare_tokens");
    c.timesteps = j.at("timesteps");
    return c;
}

DenoiserModel::DenoiserModel(DenoiserConfig config, ParamStore params)
    : config_(std::move(config)), params_(std::move(params)) {}

DenoiserModel DenoiserModel::create(const DenoiserConfig& c, std::uint64_t seed) {
    if (c.time_features % 2 != 0) throw ConfigError("time_features must be even");
    if (c.image_dim() == 0 || c.hidden == 0 || c.embed_dim == 0 || c.timesteps < 1)
        throw ConfigError("denoiser dimensions must be positive");
    RngStream rng(seed, streams::init);
    const double d = static_cast<double>(c.image_dim());
    const double h = static_cast<double>(c.hidden);
    ParamStore p;
    p.add("cond_embed", ParamGroup::cond_embed, normal_tensor({c.vocab_size(), c.embed_dim}, 1.0, rng));
    p.add("in.w", ParamGroup::trunk, normal_tensor({c.image_dim(), c.hidden}, 1.0 / std::sqrt(d), rng));
    p.add("in.b", ParamGroup::trunk, Tensor({c.hidden}));
    for (std::size_t b = 0; b < c.blocks; ++b) {
        p.add(block_name(b, "time.w"), ParamGroup::time_proj,
              normal_tensor({c.time_features, c.hidden}, 1.0 / std::sqrt(double(c.time_features)), rng));
        p.add(block_name(b, "time.b"), ParamGroup::time_proj, Tensor({c.hidden}));
        p.add(block_name(b, "cond.w"), ParamGroup::cond_proj,
              normal_tensor({c.embed_dim, c.hidden}, 1.0 / std::sqrt(double(c.embed_dim)), rng));
        p.add(block_name(b, "cond.b"), ParamGroup::cond_proj, Tensor({c.hidden}));
        p.add(block_name(b, "fc1.w"), ParamGroup::trunk, normal_tensor({c.hidden, c.hidden}, 1.0 / std::sqrt(h), rng));
        p.add(block_name(b, "fc1.b"), ParamGroup::trunk, Tensor({c.hidden}));
        p.add(block_name(b, "fc2.w"), ParamGroup::trunk, normal_tensor({c.hidden, c.hidden}, 0.2 / std::sqrt(h), rng));
        p.add(block_name(b, "fc2.b"), ParamGroup::trunk, Tensor({c.hidden}));
    }
    p.add("head.w", ParamGroup::trunk, normal_tensor({c.hidden, c.image_dim()}, 0.5 / std::sqrt(h), rng));
    p.add("head.b", ParamGroup::trunk, Tensor({c.image_dim()}));
    p.add("skip.w", ParamGroup::time_proj, Tensor({c.time_features, 1}));
    p.add("skip.b", ParamGroup::time_proj, Tensor({1}));
    return DenoiserModel(c, std::move(p));
}

void DenoiserModel::check_token(int token) const {
    if (token < 0 || token > config_.null_token()) throw TokenError("unknown conditioning token " + std::to_string(token));
}

void DenoiserModel::check_timestep(int t) const {
    if (t < 1 || t > config_.timesteps)
        throw ConfigError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(config_.timesteps) + "]");
}

Tensor time_features(std::span<const int> timesteps, std::size_t features) {
    const std::size_t half = features / 2;
    Tensor out({timesteps.size(), features});
    for (std::size_t r = 0; r < timesteps.size(); ++r) {
        for (std::size_t i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
            const double arg = static_cast<double>(timesteps[r]) * freq;
            out[r * features + i] = std::sin(arg);
            out[r * features + half + i] = std::cos(arg);
        }
    }
    return out;
}

NodeId DenoiserModel::forward(Tape& tape, NodeId x, std::span<const int> tokens, std::span<const int> timesteps) const {
    const Tensor& xv = tape.value(x);
    if (xv.rank() != 2 || xv.cols() != config_.image_dim())
        throw ConfigError("denoiser input must be [B, " + std::to_string(config_.image_dim()) + "], got " +
                          shape_string(xv.shape()));
    if (tokens.size() != xv.rows() || timesteps.size() != xv.rows())
        throw ConfigError("one token and one timestep per batch row required");
    std::vector<std::size_t> rows;
    rows.reserve(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        check_token(tokens[i]);
        check_timestep(timesteps[i]);
        rows.push_back(static_cast<std::size_t>(tokens[i]));
    }

    const NodeId tfeat = tape.constant(time_features(timesteps, config_.time_features));
    const NodeId cemb = tape.gather_rows(tape.param("cond_embed"), std::move(rows));
    NodeId h = tape.add_bias(tape.matmul(x, tape.param("in.w")), tape.param("in.b"));
    for (std::size_t b = 0; b < config_.blocks; ++b) {
        const NodeId te = tape.add_bias(tape.matmul(tfeat, tape.param(block_name(b, "time.w"))),
                                        tape.param(block_name(b, "time.b")));
        const NodeId ce = tape.add_bias(tape.matmul(cemb, tape.param(block_name(b, "cond.w"))),
                                        tape.param(block_name(b, "cond.b")));
        const NodeId u = tape.add(tape.add(h, te), ce);
        NodeId z = tape.add_bias(tape.matmul(tape.silu(u), tape.param(block_name(b, "fc1.w"))),
                                 tape.param(block_name(b, "fc1.b")));
        z = tape.add_bias(tape.matmul(tape.silu(z), tape.param(block_name(b, "fc2.w"))),
                          tape.param(block_name(b, "fc2.b")));
        h = tape.add(u, z);
    }
    const NodeId head = tape.add_bias(tape.matmul(tape.silu(h), tape.param("head.w")), tape.param("head.b"));
    const NodeId gate = tape.add_bias(tape.matmul(tfeat, tape.param("skip.w")), tape.param("skip.b"));
    return tape.add(head, tape.scale_rows(x, gate));
}

Tensor DenoiserModel::predict(const Tensor& x, std::span<const int> tokens, std::span<const int> timesteps) const {
    Tape tape(false);
    tape.bind(params_, {});
    const NodeId out = forward(tape, tape.constant(x), tokens, timesteps);
    return tape.value(out);
}

ForwardBackward forward_backward(const DenoiserModel& model, const Tensor& input, int cond_id, int t,
                                 const Tensor& output_grad) {
    const std::size_t d = model.config().image_dim();
    if (input.size() != d) throw ConfigError("input has " + std::to_string(input.size()) + " values, model expects " + std::to_string(d));
    if (output_grad.size() != d) throw ConfigError("output gradient shape mismatch");
    Tape tape;
    tape.bind(model.params(), model.trainable());
    const int tok[] = {cond_id};
    const int ts[] = {t};
    const NodeId out = model.forward(tape, tape.constant(input.reshaped({1, d})), tok, ts);
    tape.backward(out, output_grad.reshaped({1, d}));
    return {tape.value(out).reshaped(input.shape()), tape.parameter_grads()};
}

GradCheckReport grad_check(DenoiserModel& model, std::size_t n_probes, double h, std::uint64_t seed) {
    const auto& c = model.config();
    const std::size_t batch = 4, d = c.image_dim();
    RngStream rng(seed, streams::probe + 100);
    Tensor x({batch, d}), target({batch, d});
    for (auto& v : x.data()) v = rng.normal();
    for (auto& v : target.data()) v = rng.normal();
    std::vector<int> tokens, ts;
    for (std::size_t i = 0; i < batch; ++i) {
        tokens.push_back(static_cast<int>(rng.uniform_int(0, c.null_token())));
        ts.push_back(static_cast<int>(rng.uniform_int(1, c.timesteps)));
    }
    const LossBuilder loss = [&](Tape& tape) {
        const NodeId pred = model.forward(tape, tape.constant(x), tokens, ts);
        return tape.weighted_row_mse(pred, tape.constant(target), std::vector<double>(batch, 1.0));
    };
    return grad_check(model.params(), model.trainable(), loss, n_probes, h, seed);
}

}  // namespace dlab
