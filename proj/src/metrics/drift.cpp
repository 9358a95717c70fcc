#include "driftlab/metrics/drift.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "driftlab/gradcore/error.hpp"

namespace dlab {

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ConfigError("cosine similarity: length mismatch");
    if (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0) return 1.0;
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

nlohmann::json SamplerConfig::to_json() const { return {{"sampler", to_string(sampler)}, {"steps", steps}}; }

double SimilarityDistribution::mean() const {
    if (values.empty()) return 0.0;
    double s = 0.0;
    for (double v : values) s += v;
    return s / static_cast<double>(values.size());
}

double SimilarityDistribution::quantile(double q) const {
    if (values.empty()) throw DegenerateInputError("quantile of an empty distribution");
    std::vector<double> v = values;
    std::sort(v.begin(), v.end());
    const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::vector<std::size_t> SimilarityDistribution::histogram(std::size_t bins, double lo) const {
    if (bins == 0 || !(lo < 1.0)) throw ConfigError("histogram needs bins > 0 and lo < 1");
    std::vector<std::size_t> h(bins, 0);
    const double width = (1.0 - lo) / static_cast<double>(bins);
    for (double v : values) {
        const double k = std::floor((v - lo) / width);
        h[static_cast<std::size_t>(std::clamp(k, 0.0, static_cast<double>(bins - 1)))] += 1;
    }
    return h;
}

nlohmann::json SimilarityDistribution::summary() const {
    nlohmann::json j = {{"count", values.size()}, {"metric", "cosine-similarity"}};
    if (values.empty()) return j;
    j["mean"] = mean();
    j["min"] = quantile(0.0);
    j["q10"] = quantile(0.1);
    j["q25"] = quantile(0.25);
    j["median"] = median();
    j["q75"] = quantile(0.75);
    j["q90"] = quantile(0.9);
    j["max"] = quantile(1.0);
    return j;
}

SimilarityDistribution similarity_from_embeddings(const FeatureMatrix& a, const FeatureMatrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ConfigError("similarity: embedding shapes differ");
    SimilarityDistribution d;
    for (Eigen::Index r = 0; r < a.rows(); ++r)
        d.values.push_back(cosine_similarity(std::span(a.row(r).data(), static_cast<std::size_t>(a.cols())),
                                             std::span(b.row(r).data(), static_cast<std::size_t>(b.cols()))));
    return d;
}

std::vector<GenerationRequest> make_requests(std::span<const int> conds, std::span<const std::uint64_t> seeds,
                                             const SamplerConfig& sampler) {
    std::vector<GenerationRequest> reqs;
    reqs.reserve(conds.size() * seeds.size());
    for (int c : conds)
        for (auto s : seeds) reqs.push_back({c, s, sampler.sampler, sampler.steps});
    return reqs;
}

SimilarityDistribution similarity_distribution(const DenoiserModel& base, const DenoiserModel& adapted,
                                               const NoiseSchedule& schedule, std::span<const int> conds,
                                               std::span<const std::uint64_t> seeds,
                                               const FeatureEmbedder& embedder, const SamplerConfig& sampler) {
    const auto reqs = make_requests(conds, seeds, sampler);
    const auto img_a = sample_batch(base, reqs, schedule);
    const auto img_b = sample_batch(adapted, reqs, schedule);
    SimilarityDistribution d = similarity_from_embeddings(embedder.embed(img_a), embedder.embed(img_b));
    for (const auto& r : reqs) {
        d.conds.push_back(r.cond_id);
        d.seeds.push_back(r.seed);
    }
    return d;
}

double diversity_from_embeddings(const FeatureMatrix& e) {
    if (e.rows() < 2) throw ConfigError("diversity needs at least two samples");
    const auto cols = static_cast<std::size_t>(e.cols());
    double total = 0.0;
    std::size_t pairs = 0;
    for (Eigen::Index i = 0; i < e.rows(); ++i)
        for (Eigen::Index j = i + 1; j < e.rows(); ++j, ++pairs)
            total += 1.0 - cosine_similarity(std::span(e.row(i).data(), cols), std::span(e.row(j).data(), cols));
    return total / static_cast<double>(pairs);
}

double diversity_score(const DenoiserModel& model, const NoiseSchedule& schedule, int cond, std::size_t n_seeds,
                       const FeatureEmbedder& embedder, const SamplerConfig& sampler, std::uint64_t seed_base) {
    if (n_seeds < 2) throw ConfigError("diversity needs n_seeds >= 2");
    std::vector<std::uint64_t> seeds(n_seeds);
    for (std::size_t i = 0; i < n_seeds; ++i) seeds[i] = seed_base + i;
    const int conds[] = {cond};
    const auto images = sample_batch(model, make_requests(conds, seeds, sampler), schedule);
    return diversity_from_embeddings(embedder.embed(images));
}

double mean_cross_similarity(const FeatureMatrix& generated, const FeatureMatrix& reference) {
    if (generated.rows() == 0 || reference.rows() == 0) throw ConfigError("cross similarity of an empty set");
    if (generated.cols() != reference.cols()) throw ConfigError("cross similarity: dimension mismatch");
    const auto cols = static_cast<std::size_t>(generated.cols());
    double total = 0.0;
    for (Eigen::Index i = 0; i < generated.rows(); ++i)
        for (Eigen::Index j = 0; j < reference.rows(); ++j)
            total += cosine_similarity(std::span(generated.row(i).data(), cols),
                                       std::span(reference.row(j).data(), cols));
    return total / static_cast<double>(generated.rows() * reference.rows());
}

}  // namespace dlab
