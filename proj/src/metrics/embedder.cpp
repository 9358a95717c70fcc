#include "driftlab/metrics/embedder.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "driftlab/gradcore/checkpoint.hpp"
#include "driftlab/gradcore/error.hpp"
#include "driftlab/gradcore/optimizer.hpp"
#include "driftlab/gradcore/rng.hpp"
#include "driftlab/gradcore/tape.hpp"

namespace dlab {

nlohmann::json EmbedderConfig::to_json() const {
    return {{"input_dim", input_dim}, {"hidden", hidden},     {"embed_dim", embed_dim},
            {"classes", classes},     {"steps", steps},       {"batch", batch},
            {"learning_rate", learning_rate}, {"augment_noise", augment_noise},
            {"target_accuracy", target_accuracy}, {"seed", seed}};
}

EmbedderConfig EmbedderConfig::from_json(const nlohmann::json& j) {
    EmbedderConfig c;
    c.input_dim = j.at("input_dim");
    c.hidden = j.at("hidden");
    c.embed_dim = j.at("embed_dim");
    c.classes = j.at("classes");
    c.steps = j.at("steps");
    c.batch = j.at("batch");
    c.learning_rate = j.at("learning_rate");
    c.augment_noise = j.at("augment_noise");
    c.target_accuracy = j.at("target_accuracy");
    c.seed = j.at("seed");
    return c;
}

namespace {

Tensor gaussian(Shape shape, double std, RngStream& rng) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = std * rng.normal();
    return t;
}

struct Layer {
    const char* w;
    const char* b;
};
constexpr Layer kLayers[] = {{"l1.w", "l1.b"}, {"l2.w", "l2.b"}, {"l3.w", "l3.b"}};

NodeId build(Tape& tape, NodeId x, bool logits) {
    NodeId h = tape.relu(tape.add_bias(tape.matmul(x, tape.param("l1.w")), tape.param("l1.b")));
    NodeId e = tape.add_bias(tape.matmul(h, tape.param("l2.w")), tape.param("l2.b"));
    if (!logits) return e;
    return tape.add_bias(tape.matmul(tape.relu(e), tape.param("l3.w")), tape.param("l3.b"));
}

Tensor stack_model_space(std::span<const Tensor> images, std::size_t dim) {
    Tensor x({images.size(), dim});
    for (std::size_t i = 0; i < images.size(); ++i) {
        const Tensor row = to_model_space(images[i]);
        if (row.size() != dim) throw ConfigError("embedder: image size does not match input_dim");
        std::copy(row.values().begin(), row.values().end(), x.row(i).begin());
    }
    return x;
}

}  // namespace

FeatureEmbedder FeatureEmbedder::create(const EmbedderConfig& cfg) {
    if (cfg.input_dim == 0 || cfg.hidden == 0 || cfg.embed_dim == 0 || cfg.classes < 2)
        throw ConfigError("embedder: invalid layer sizes");
    FeatureEmbedder e;
    e.cfg_ = cfg;
    RngStream rng(cfg.seed, streams::init);
    const std::size_t dims[] = {cfg.input_dim, cfg.hidden, cfg.embed_dim, cfg.classes};
    for (std::size_t l = 0; l < 3; ++l) {
        const double std = std::sqrt(2.0 / static_cast<double>(dims[l]));
        e.params_.add(kLayers[l].w, ParamGroup::trunk, gaussian({dims[l], dims[l + 1]}, std, rng));
        e.params_.add(kLayers[l].b, ParamGroup::trunk, Tensor({dims[l + 1]}));
    }
    return e;
}

Tensor FeatureEmbedder::forward(std::span<const Tensor> images, bool logits) const {
    Tape tape(false);
    tape.bind(params_, {});
    const NodeId out = build(tape, tape.constant(stack_model_space(images, cfg_.input_dim)), logits);
    return tape.value(out);
}

FeatureMatrix FeatureEmbedder::embed(std::span<const Tensor> images) const {
    FeatureMatrix m(static_cast<Eigen::Index>(images.size()), static_cast<Eigen::Index>(cfg_.embed_dim));
    constexpr std::size_t chunk = 256;
    for (std::size_t s = 0; s < images.size(); s += chunk) {
        const std::size_t n = std::min(chunk, images.size() - s);
        const Tensor e = forward(images.subspan(s, n), false);
        std::copy(e.values().begin(), e.values().end(), m.data() + s * cfg_.embed_dim);
    }
    return m;
}

std::vector<int> FeatureEmbedder::classify(std::span<const Tensor> images) const {
    std::vector<int> out;
    out.reserve(images.size());
    constexpr std::size_t chunk = 256;
    for (std::size_t s = 0; s < images.size(); s += chunk) {
        const std::size_t n = std::min(chunk, images.size() - s);
        const Tensor logits = forward(images.subspan(s, n), true);
        for (std::size_t r = 0; r < n; ++r) {
            const auto row = logits.row(r);
            out.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
        }
    }
    return out;
}

double FeatureEmbedder::accuracy(std::span<const LabeledImage> data) const {
    if (data.empty()) throw ConfigError("embedder: empty evaluation set");
    std::vector<Tensor> images;
    images.reserve(data.size());
    for (const auto& d : data) images.push_back(d.image);
    const auto pred = classify(images);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < data.size(); ++i) hit += pred[i] == data[i].label;
    return static_cast<double>(hit) / static_cast<double>(data.size());
}

double FeatureEmbedder::fit(std::span<const LabeledImage> train, std::span<const LabeledImage> test) {
    if (frozen_) throw ConfigError("embedder is frozen");
    if (train.empty()) throw ConfigError("embedder: empty training set");
    for (const auto& d : train)
        if (d.label < 0 || static_cast<std::size_t>(d.label) >= cfg_.classes)
            throw TokenError("embedder: training label " + std::to_string(d.label) + " out of range");

    std::vector<Tensor> rows;
    rows.reserve(train.size());
    for (const auto& d : train) rows.push_back(to_model_space(d.image));

    RngStream rng(cfg_.seed, streams::train);
    auto opt = make_adam(cfg_.learning_rate);
    for (int step = 0; step < cfg_.steps; ++step) {
        const double progress = static_cast<double>(step) / std::max(1, cfg_.steps);
        opt.learning_rate = cfg_.learning_rate * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
        Tensor x({cfg_.batch, cfg_.input_dim});
        std::vector<std::size_t> labels(cfg_.batch);
        for (std::size_t b = 0; b < cfg_.batch; ++b) {
            const auto idx = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(train.size()) - 1));
            labels[b] = static_cast<std::size_t>(train[idx].label);
            auto dst = x.row(b);
            const auto& src = rows[idx].values();
            for (std::size_t c = 0; c < cfg_.input_dim; ++c) dst[c] = src[c] + cfg_.augment_noise * rng.normal();
        }
        Tape tape;
        tape.bind(params_, all_groups());
        const NodeId loss = tape.softmax_cross_entropy(build(tape, tape.constant(std::move(x)), true), labels);
        tape.backward(loss);
        optimizer_step(opt, params_, tape.parameter_grads());
    }

    const double acc = test.empty() ? accuracy(train) : accuracy(test);
    std::string digest;
    for (const auto& d : train) digest += std::to_string(d.label) + ":" + std::to_string(d.seed) + ";";
    manifest_ = {{"config", cfg_.to_json()},
                 {"train_digest", sha256_hex(digest)},
                 {"train_count", train.size()},
                 {"test_count", test.size()},
                 {"accuracy", acc},
                 {"params", params_.hash()}};
    manifest_hash_ = sha256_hex(manifest_.dump());
    frozen_ = true;
    if (acc < cfg_.target_accuracy)
        throw ConvergenceError("embedder accuracy " + std::to_string(acc) + " below target", cfg_.target_accuracy - acc);
    return acc;
}

void FeatureEmbedder::save(const std::filesystem::path& path) const {
    Checkpoint ck;
    ck.meta = {{"kind", "embedder"}, {"config", cfg_.to_json()}, {"manifest", manifest_},
               {"manifest_hash", manifest_hash_}, {"frozen", frozen_}};
    ck.params = params_;
    save_checkpoint(path, ck);
}

FeatureEmbedder FeatureEmbedder::load(const std::filesystem::path& path) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.meta.value("kind", "") != "embedder") throw ConfigError("not an embedder checkpoint: " + path.string());
    FeatureEmbedder e = create(EmbedderConfig::from_json(ck.meta.at("config")));
    for (const auto& p : e.params_) {
        const Tensor& stored = ck.params.value(p.name);
        if (stored.shape() != p.value.shape()) throw ConfigError("embedder checkpoint shape mismatch for " + p.name);
    }
    e.params_ = std::move(ck.params);
    e.manifest_ = ck.meta.at("manifest");
    e.manifest_hash_ = ck.meta.at("manifest_hash");
    e.frozen_ = ck.meta.at("frozen");
    return e;
}

}  // namespace dlab
