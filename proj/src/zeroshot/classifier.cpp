#include "driftlab/zeroshot/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "driftlab/gradcore/error.hpp"
#include "driftlab/gradcore/rng.hpp"

namespace dlab {

EvalNoiseSet make_eval_noise(std::size_t count, std::size_t dim, const NoiseSchedule& s, std::uint64_t seed,
                             double lo_frac, double hi_frac) {
    const int lo = std::max(1, static_cast<int>(std::ceil(lo_frac * s.steps())));
    const int hi = std::max(lo, static_cast<int>(std::floor(hi_frac * s.steps())));
    EvalNoiseSet set;
    set.seed = seed;
    RngStream rng(seed, streams::eval_noise);
    for (std::size_t i = 0; i < count; ++i) {
        set.timesteps.push_back(static_cast<int>(rng.uniform_int(lo, hi)));
        Tensor e({dim});
        for (auto& v : e.data()) v = rng.normal();
        set.eps.push_back(std::move(e));
    }
    return set;
}

int ClassPosterior::argmax() const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < tokens.size(); ++i) {
        if (probabilities[i] > probabilities[best] ||
            (probabilities[i] == probabilities[best] && tokens[i] < tokens[best]))
            best = i;
    }
    return tokens.at(best);
}

std::vector<double> posterior_from_errors(std::span<const double> mean_errors) {
    std::vector<double> p(mean_errors.size());
    if (p.empty()) return p;
    const double m = *std::min_element(mean_errors.begin(), mean_errors.end());
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) total += p[i] = std::exp(-(mean_errors[i] - m));
    for (auto& v : p) v /= total;
    return p;
}

namespace {

/// Summed per-pixel mean squared error for each candidate over noise pairs
/// [first, first + count). One batched forward pass per call.
std::vector<double> error_sums(const DenoiserModel& model, const Tensor& image, std::span<const int> candidates,
                               const EvalNoiseSet& noise, std::size_t first, std::size_t count,
                               const NoiseSchedule& s) {
    const std::size_t d = model.config().image_dim();
    if (image.size() != d) throw ConfigError("image size does not match the model");
    const std::size_t rows = candidates.size() * count;
    Tensor xt({rows, d});
    std::vector<int> tokens(rows), ts(rows);
    for (std::size_t c = 0; c < candidates.size(); ++c) {
        model.check_token(candidates[c]);
        for (std::size_t k = 0; k < count; ++k) {
            const std::size_t r = c * count + k;
            const int t = noise.timesteps[first + k];
            const double ab = s.alpha_bar(t);
            const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
            const auto& eps = noise.eps[first + k];
            for (std::size_t j = 0; j < d; ++j) xt[r * d + j] = a * (2.0 * image[j] - 1.0) + b * eps[j];
            tokens[r] = candidates[c];
            ts[r] = t;
        }
    }
    const Tensor pred = model.predict(xt, tokens, ts);
    std::vector<double> sums(candidates.size(), 0.0);
    for (std::size_t c = 0; c < candidates.size(); ++c)
        for (std::size_t k = 0; k < count; ++k) {
            const std::size_t r = c * count + k;
            const auto& eps = noise.eps[first + k];
            double e = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double diff = eps[j] - pred[r * d + j];
                e += diff * diff;
            }
            sums[c] += e / static_cast<double>(d);
        }
    return sums;
}

}  // namespace

ClassPosterior class_posterior(const DenoiserModel& model, const Tensor& image, std::span<const int> candidates,
                               const EvalNoiseSet& noise, const NoiseSchedule& s) {
    if (candidates.empty()) throw ConfigError("class_posterior: no candidates");
    if (noise.size() == 0) throw ConfigError("class_posterior: empty noise set");
    ClassPosterior post;
    post.tokens.assign(candidates.begin(), candidates.end());
    const auto sums = error_sums(model, image, candidates, noise, 0, noise.size(), s);
    for (double v : sums) post.mean_errors.push_back(v / static_cast<double>(noise.size()));
    post.probabilities = posterior_from_errors(post.mean_errors);
    return post;
}

int StageConfig::total_trials() const noexcept {
    int n = 0;
    for (const auto& st : stages) n += st.extra_trials;
    return n;
}

nlohmann::json StageConfig::to_json() const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& st : stages) j.push_back({{"extra_trials", st.extra_trials}, {"keep", st.keep}});
    return j;
}

StageConfig StageConfig::from_json(const nlohmann::json& j) {
    StageConfig c;
    for (const auto& st : j) c.stages.push_back({st.at("extra_trials").get<int>(), st.at("keep").get<int>()});
    return c;
}

StagedResult classify_staged(const DenoiserModel& model, const Tensor& image, std::span<const int> candidates,
                             const StageConfig& stages, const EvalNoiseSet& noise, const NoiseSchedule& s) {
    if (candidates.empty()) throw ConfigError("classify_staged: no candidates");
    if (stages.stages.empty()) throw ConfigError("classify_staged: no stages");
    if (static_cast<std::size_t>(stages.total_trials()) > noise.size())
        throw ConfigError("stage trials exceed the noise set size");

    std::vector<int> alive(candidates.begin(), candidates.end());
    std::map<int, double> sums;
    std::size_t used = 0;
    StagedResult result;
    for (const auto& st : stages.stages) {
        if (st.extra_trials < 0) throw ConfigError("negative trial count");
        if (st.keep < 1 || static_cast<std::size_t>(st.keep) > alive.size())
            throw ConfigError("stage keeps " + std::to_string(st.keep) + " of " + std::to_string(alive.size()) +
                              " survivors");
        if (st.extra_trials > 0) {
            const auto add = error_sums(model, image, alive, noise, used, static_cast<std::size_t>(st.extra_trials), s);
            for (std::size_t i = 0; i < alive.size(); ++i) sums[alive[i]] += add[i];
            used += static_cast<std::size_t>(st.extra_trials);
        }
        std::vector<int> order = alive;
        // Every survivor has the same trial count, so sums order like means.
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            if (sums[a] != sums[b]) return sums[a] < sums[b];
            return a < b;
        });
        order.resize(static_cast<std::size_t>(st.keep));
        std::sort(order.begin(), order.end());
        alive = order;
        result.survivors.push_back(alive);
    }
    if (alive.size() == 1) {
        result.predicted = alive.front();
    } else {
        result.predicted = *std::min_element(alive.begin(), alive.end(), [&](int a, int b) {
            if (sums[a] != sums[b]) return sums[a] < sums[b];
            return a < b;
        });
    }
    return result;
}

nlohmann::json DatasetEval::to_json() const {
    nlohmann::json j;
    j["overall"] = overall;
    for (const auto& [k, v] : per_class) j["per_class"][std::to_string(k)] = v;
    for (const auto& [k, v] : counts) j["counts"][std::to_string(k)] = v;
    j["predictions"] = predictions;
    return j;
}

DatasetEval DatasetEval::from_json(const nlohmann::json& j) {
    DatasetEval e;
    e.overall = j.at("overall");
    for (const auto& [k, v] : j.at("per_class").items()) e.per_class[std::stoi(k)] = v.get<double>();
    for (const auto& [k, v] : j.at("counts").items()) e.counts[std::stoi(k)] = v.get<std::size_t>();
    e.predictions = j.value("predictions", std::vector<int>{});
    return e;
}

DatasetEval eval_dataset(const DenoiserModel& model, std::span<const LabeledImage> data,
                         std::span<const int> candidates, const StageConfig& stages, const EvalNoiseSet& noise,
                         const NoiseSchedule& s) {
    if (data.empty()) throw ConfigError("eval_dataset: empty data");
    std::map<int, std::size_t> correct;
    DatasetEval ev;
    std::size_t total_correct = 0;
    for (const auto& ex : data) {
        if (std::find(candidates.begin(), candidates.end(), ex.label) == candidates.end())
            throw ConfigError("label " + std::to_string(ex.label) + " not among candidates");
        const int pred = classify_staged(model, ex.image, candidates, stages, noise, s).predicted;
        ev.predictions.push_back(pred);
        ++ev.counts[ex.label];
        if (pred == ex.label) {
            ++correct[ex.label];
            ++total_correct;
        }
    }
    for (int c : candidates) {
        auto it = ev.counts.find(c);
        if (it == ev.counts.end()) {
            std::cerr << "warning: class " << c << " has no samples; excluded from per-class accuracy\n";
            continue;
        }
        ev.per_class[c] = static_cast<double>(correct[c]) / static_cast<double>(it->second);
    }
    ev.overall = static_cast<double>(total_correct) / static_cast<double>(data.size());
    return ev;
}

WorstDrop worst_class_drop(const DatasetEval& base, const DatasetEval& adapted) {
    if (base.per_class.empty()) throw ConfigError("worst_class_drop: empty evaluation");
    if (base.per_class.size() != adapted.per_class.size())
        throw ConfigError("worst_class_drop: class sets differ");
    WorstDrop worst{-std::numeric_limits<double>::infinity(), 0};
    for (const auto& [cls, acc] : base.per_class) {
        auto it = adapted.per_class.find(cls);
        if (it == adapted.per_class.end()) throw ConfigError("worst_class_drop: class sets differ");
        const double drop = acc - it->second;
        if (drop > worst.drop) worst = {drop, cls};
    }
    return worst;
}

}  // namespace dlab
