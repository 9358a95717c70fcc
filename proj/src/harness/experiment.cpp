#include "driftlab/harness/experiment.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "driftlab/gradcore/checkpoint.hpp"
#include "driftlab/gradcore/error.hpp"
#include "driftlab/metrics/kernel_metrics.hpp"
#include "driftlab/metrics/transport.hpp"

namespace dlab {
namespace {

constexpr std::uint64_t kDisjointSeedOffset = 1'000'000;

struct KindName {
    ExperimentKind kind;
    std::string_view name;
};

constexpr KindName kKindNames[] = {
    {ExperimentKind::global_drift, "global-drift"},       {ExperimentKind::semantic_drift, "semantic-drift"},
    {ExperimentKind::appearance_drift, "appearance-drift"}, {ExperimentKind::local_drift, "local-drift"},
    {ExperimentKind::buffer_ablation, "buffer-ablation"}, {ExperimentKind::diversity, "diversity"},
    {ExperimentKind::concept_scaling, "concept-scaling"},
};

nlohmann::json int_map_json(const std::map<int, double>& m) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : m) j[std::to_string(k)] = v;
    return j;
}

std::map<int, double> int_map_from_json(const nlohmann::json& j) {
    std::map<int, double> m;
    for (const auto& [k, v] : j.items()) m[std::stoi(k)] = v.get<double>();
    return m;
}

template <class T>
nlohmann::json optional_json(const std::optional<T>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

template <class T>
std::optional<T> optional_from_json(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<T>();
}

double mean_of(std::span<const double> v) {
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::vector<std::uint64_t> seed_range(std::uint64_t base, std::size_t n) {
    std::vector<std::uint64_t> out(n);
    std::iota(out.begin(), out.end(), base);
    return out;
}

double histogram_distance(const ChromaticityHistogram& a, const ChromaticityHistogram& b) {
    const CdiConfig def;
    const auto& g = a.grid();
    if (g.bins_x <= def.exact_max_bins && g.bins_y <= def.exact_max_bins) return emd_exact(a, b).cost;
    return sinkhorn(a, b, def.sinkhorn).cost;
}

struct Run {
    int concept_id = 0;
    CustomizeConfig cfg;
    std::string label;
};

class Runner {
public:
    Runner(Pipeline& p, const ExperimentConfig& cfg) : p_(p), cfg_(cfg) {
        if (cfg_.concepts.empty()) {
            for (const auto& c : p_.world().concepts) concepts_.push_back(c.concept_id);
        } else {
            for (int id : cfg_.concepts) p_.world().concept_by_id(id);
            concepts_ = cfg_.concepts;
        }
        classes_ = p_.base_classes();
    }

    DriftReport run() {
        report_.kind = std::string(to_string(cfg_.kind));
        switch (cfg_.kind) {
            case ExperimentKind::semantic_drift: semantic(); break;
            case ExperimentKind::global_drift: global(); break;
            case ExperimentKind::appearance_drift: appearance(); break;
            case ExperimentKind::local_drift: local(); break;
            case ExperimentKind::buffer_ablation: buffer_ablation(); break;
            case ExperimentKind::diversity: diversity(); break;
            case ExperimentKind::concept_scaling: concept_scaling(); break;
        }
        return std::move(report_);
    }

private:
    Run make_run(int concept_id, Method method, ParamScope scope, std::uint64_t seed) const {
        Run r;
        r.concept_id = concept_id;
        r.cfg = cfg_.customize;
        r.cfg.method = method;
        r.cfg.scope = scope;
        r.cfg.seed = seed;
        const auto& spec = p_.world().concept_by_id(concept_id);
        r.label = spec.name + "/" + std::string(to_string(method)) + "/" + std::string(to_string(scope)) + "/s" +
                  std::to_string(seed);
        return r;
    }

    std::vector<Run> matrix(std::span<const int> concept_ids) const {
        std::vector<Run> out;
        for (int c : concept_ids)
            for (Method m : cfg_.methods)
                for (ParamScope s : cfg_.scopes)
                    for (std::uint64_t seed : cfg_.run_seeds) out.push_back(make_run(c, m, s, seed));
        return out;
    }

    ModelRow row_for(const Run& r, const DenoiserModel& model) const {
        ModelRow row;
        row.label = r.label;
        row.concept_id = r.concept_id;
        row.concept_name = p_.world().concept_by_id(r.concept_id).name;
        row.method = std::string(to_string(r.cfg.method));
        row.scope = std::string(to_string(r.cfg.scope));
        row.seed = r.cfg.seed;
        row.model_hash = model.hash();
        return row;
    }

    ModelRow base_row() {
        ModelRow row;
        row.label = "base";
        row.concept_id = -1;
        row.method = "base";
        row.model_hash = p_.base().hash();
        return row;
    }

    const DatasetEval& base_eval() {
        if (!base_eval_) {
            base_eval_ = p_.evaluate(p_.base());
            report_.base_accuracy = base_eval_->overall;
            report_.base_per_class = base_eval_->per_class;
        }
        return *base_eval_;
    }

    void fill_accuracy(ModelRow& row, const DenoiserModel& model) {
        const DatasetEval& b = base_eval();
        const DatasetEval ev = p_.evaluate(model);
        const WorstDrop wd = worst_class_drop(b, ev);
        row.accuracy = ev.overall;
        row.accuracy_delta = ev.overall - b.overall;
        row.worst_drop = wd.drop;
        row.worst_class = wd.token;
        row.per_class = ev.per_class;
    }

    const FeatureMatrix& shot_embeddings(int concept_id) {
        auto it = shot_emb_.find(concept_id);
        if (it != shot_emb_.end()) return it->second;
        std::vector<Tensor> shots;
        for (const auto& s : p_.world().shots.at(concept_id)) shots.push_back(s.image);
        return shot_emb_.emplace(concept_id, p_.embedder().embed(shots)).first->second;
    }

    /// Mean cosine of rare-token generations to the concept shots.
    double fidelity(const DenoiserModel& model, int concept_id) {
        const int token = p_.world().concept_by_id(concept_id).rare_token;
        const std::vector<int> conds = {token};
        const auto seeds = seed_range(cfg_.fidelity_seed_base, cfg_.fidelity_samples);
        const GenerationStats g = p_.generate(model, conds, seeds);
        return mean_cross_similarity(g.embeddings, shot_embeddings(concept_id));
    }

    void semantic() {
        ModelRow b = base_row();
        b.accuracy = base_eval().overall;
        b.accuracy_delta = 0.0;
        b.worst_drop = 0.0;
        b.per_class = base_eval().per_class;
        for (int c : concepts_)
            b.metrics["fidelity." + p_.world().concept_by_id(c).name] = fidelity(p_.base(), c);
        report_.models.push_back(std::move(b));
        for (const Run& r : matrix(concepts_)) {
            const DenoiserModel model = p_.adapted(r.concept_id, r.cfg);
            ModelRow row = row_for(r, model);
            fill_accuracy(row, model);
            row.metrics["fidelity"] = fidelity(model, r.concept_id);
            report_.models.push_back(std::move(row));
        }
    }

    std::vector<GenerationRequest> probe_requests() const {
        std::vector<GenerationRequest> out;
        for (std::size_t i = 0; i < cfg_.probe_requests; ++i) {
            GenerationRequest r;
            r.cond_id = classes_[i % classes_.size()];
            r.seed = cfg_.probe_seed_base + i;
            r.sampler = p_.config().sampler.sampler;
            r.steps = p_.config().sampler.steps;
            out.push_back(r);
        }
        return out;
    }

    void global() {
        const auto reqs = probe_requests();
        const FeatureMatrix base_emb = p_.embed_requests(p_.base(), reqs);
        report_.models.push_back(base_row());
        for (const Run& r : matrix(concepts_)) {
            const DenoiserModel model = p_.adapted(r.concept_id, r.cfg);
            const SimilarityDistribution dist = similarity_from_embeddings(base_emb, p_.embed_requests(model, reqs));
            ModelRow row = row_for(r, model);
            row.metrics["similarity_mean"] = dist.mean();
            row.metrics["similarity_median"] = dist.median();
            row.metrics["similarity_q10"] = dist.quantile(0.1);
            row.metrics["similarity_q90"] = dist.quantile(0.9);
            report_.models.push_back(std::move(row));
            SimilarityRow s;
            s.label = r.label;
            s.concept_id = r.concept_id;
            s.method = std::string(to_string(r.cfg.method));
            s.scope = std::string(to_string(r.cfg.scope));
            s.seed = r.cfg.seed;
            for (const auto& q : reqs) s.conds.push_back(q.cond_id);
            s.values = dist.values;
            report_.similarity.push_back(std::move(s));
        }
        report_.notes.push_back("global drift probe: " + std::to_string(reqs.size()) +
                                " mixed-condition requests cycling over the base classes; effects of heavy-tailed "
                                "prompt diversity are not observable at this scale");
    }

    static std::map<std::string, double> appearance_metrics(const GenerationStats& ref, const GenerationStats& other,
                                                            std::size_t c) {
        const FeatureMatrix a = ref.condition_embeddings(c), b = other.condition_embeddings(c);
        return {{"cdi", histogram_distance(ref.histograms[c], other.histograms[c])},
                {"kid", kid(a, b)},
                {"fid", fid(a, b)}};
    }

    void appearance() {
        const auto seeds_a = seed_range(cfg_.appearance_seed_base, cfg_.images_per_condition);
        const auto seeds_b = seed_range(cfg_.appearance_seed_base + kDisjointSeedOffset, cfg_.images_per_condition);
        const GenerationStats ref = p_.generate(p_.base(), classes_, seeds_a);
        const GenerationStats control = p_.generate(p_.base(), classes_, seeds_b);
        ModelRow b = base_row();
        std::map<std::string, std::vector<double>> control_vals;
        for (std::size_t c = 0; c < classes_.size(); ++c) {
            ConditionRow row;
            row.label = "control";
            row.method = "base";
            row.condition = classes_[c];
            row.metrics = appearance_metrics(ref, control, c);
            for (const auto& [k, v] : row.metrics) control_vals[k].push_back(v);
            report_.conditions.push_back(std::move(row));
        }
        for (const auto& [k, v] : control_vals) b.metrics["mean_" + k] = mean_of(v);
        report_.models.push_back(std::move(b));
        for (const Run& r : matrix(concepts_)) {
            const DenoiserModel model = p_.adapted(r.concept_id, r.cfg);
            const GenerationStats gen = p_.generate(model, classes_, seeds_b);
            ModelRow mrow = row_for(r, model);
            std::map<std::string, std::vector<double>> vals;
            for (std::size_t c = 0; c < classes_.size(); ++c) {
                ConditionRow row;
                row.label = r.label;
                row.concept_id = r.concept_id;
                row.method = mrow.method;
                row.scope = mrow.scope;
                row.seed = r.cfg.seed;
                row.condition = classes_[c];
                row.metrics = appearance_metrics(ref, gen, c);
                for (const auto& [k, v] : row.metrics) vals[k].push_back(v);
                report_.conditions.push_back(std::move(row));
            }
            for (const auto& [k, v] : vals) mrow.metrics["mean_" + k] = mean_of(v);
            report_.models.push_back(std::move(mrow));
        }
        report_.notes.push_back(std::to_string(cfg_.images_per_condition) +
                                " generated images per condition and model; the control compares two disjoint base "
                                "seed sets and adapted models use the second set");
    }

    void local() {
        const std::size_t per_class = std::max<std::size_t>(1, cfg_.probe_requests / classes_.size());
        const auto seeds = seed_range(cfg_.probe_seed_base, per_class);
        const GenerationStats ref = p_.generate(p_.base(), classes_, seeds);
        ModelRow b = base_row();
        b.accuracy = base_eval().overall;
        b.per_class = base_eval().per_class;
        report_.models.push_back(std::move(b));
        for (const Run& r : matrix(concepts_)) {
            const auto nb = superclass_neighbors(p_.world(), r.concept_id, cfg_.neighbor_k);
            const std::set<int> neighbors(nb.begin(), nb.end());
            const DenoiserModel model = p_.adapted(r.concept_id, r.cfg);
            ModelRow mrow = row_for(r, model);
            fill_accuracy(mrow, model);
            const GenerationStats gen = p_.generate(model, classes_, seeds);
            std::vector<double> nb_drop, other_drop, nb_sim, other_sim;
            for (std::size_t c = 0; c < classes_.size(); ++c) {
                const int cls = classes_[c];
                const double drop = base_eval().per_class.at(cls) - mrow.per_class.at(cls);
                const double sim =
                    similarity_from_embeddings(ref.condition_embeddings(c), gen.condition_embeddings(c)).mean();
                const bool is_nb = neighbors.contains(cls);
                (is_nb ? nb_drop : other_drop).push_back(drop);
                (is_nb ? nb_sim : other_sim).push_back(sim);
                ConditionRow row;
                row.label = r.label;
                row.concept_id = r.concept_id;
                row.method = mrow.method;
                row.scope = mrow.scope;
                row.seed = r.cfg.seed;
                row.condition = cls;
                row.metrics = {{"accuracy_drop", drop}, {"similarity", sim}, {"neighbor", is_nb ? 1.0 : 0.0}};
                report_.conditions.push_back(std::move(row));
            }
            mrow.metrics["neighbor_drop"] = mean_of(nb_drop);
            mrow.metrics["other_drop"] = mean_of(other_drop);
            mrow.metrics["neighbor_similarity"] = mean_of(nb_sim);
            mrow.metrics["other_similarity"] = mean_of(other_sim);
            report_.models.push_back(std::move(mrow));
        }
        report_.notes.push_back("neighbors are the top " + std::to_string(cfg_.neighbor_k) +
                                " base classes by recipe similarity to each concept");
    }

    void buffer_ablation() {
        std::vector<Method> methods;
        for (Method m : cfg_.methods)
            if (m != Method::plain) methods.push_back(m);
        if (methods.empty()) methods.push_back(Method::dc);
        const double base_acc = base_eval().overall;
        for (Method m : methods)
            for (ParamScope s : cfg_.scopes)
                for (std::size_t n : cfg_.buffer_sizes) {
                    SweepRow sw;
                    sw.parameter = "buffer_size";
                    sw.method = std::string(to_string(m));
                    sw.scope = std::string(to_string(s));
                    sw.value = static_cast<double>(n);
                    for (int c : concepts_)
                        for (std::uint64_t seed : cfg_.run_seeds) {
                            Run r = make_run(c, n == 0 ? Method::plain : m, s, seed);
                            r.cfg.buffer_size = n;
                            r.label += "/n" + std::to_string(n);
                            const DenoiserModel model = p_.adapted(c, r.cfg);
                            ModelRow row = row_for(r, model);
                            fill_accuracy(row, model);
                            row.metrics["buffer_size"] = static_cast<double>(n);
                            sw.per_run.push_back(*row.accuracy);
                            report_.models.push_back(std::move(row));
                        }
                    sw.mean = mean_of(sw.per_run);
                    report_.sweeps.push_back(std::move(sw));
                }
        report_.notes.push_back("buffer size 0 has no replay data and runs plain finetuning; base accuracy " +
                                nlohmann::json(base_acc).dump());
    }

    void diversity() {
        const auto seeds = seed_range(cfg_.diversity_seed_base, cfg_.diversity_seeds);
        const GenerationStats ref = p_.generate(p_.base(), classes_, seeds);
        ModelRow b = base_row();
        std::vector<double> vals;
        for (std::size_t c = 0; c < classes_.size(); ++c) {
            ConditionRow row;
            row.label = "base";
            row.method = "base";
            row.condition = classes_[c];
            row.metrics["diversity"] = diversity_from_embeddings(ref.condition_embeddings(c));
            vals.push_back(row.metrics["diversity"]);
            report_.conditions.push_back(std::move(row));
        }
        b.metrics["mean_diversity"] = mean_of(vals);
        report_.models.push_back(std::move(b));
        for (const Run& r : matrix(concepts_)) {
            const DenoiserModel model = p_.adapted(r.concept_id, r.cfg);
            const GenerationStats gen = p_.generate(model, classes_, seeds);
            ModelRow mrow = row_for(r, model);
            vals.clear();
            for (std::size_t c = 0; c < classes_.size(); ++c) {
                ConditionRow row;
                row.label = r.label;
                row.concept_id = r.concept_id;
                row.method = mrow.method;
                row.scope = mrow.scope;
                row.seed = r.cfg.seed;
                row.condition = classes_[c];
                row.metrics["diversity"] = diversity_from_embeddings(gen.condition_embeddings(c));
                vals.push_back(row.metrics["diversity"]);
                report_.conditions.push_back(std::move(row));
            }
            mrow.metrics["mean_diversity"] = mean_of(vals);
            const std::vector<int> token = {p_.world().concept_by_id(r.concept_id).rare_token};
            mrow.metrics["concept_diversity"] = diversity_from_embeddings(p_.generate(model, token, seeds).embeddings);
            report_.models.push_back(std::move(mrow));
        }
    }

    void concept_scaling() {
        std::map<std::tuple<int, Method, ParamScope, std::uint64_t>, double> delta;
        for (const Run& r : matrix(concepts_)) {
            const DenoiserModel model = p_.adapted(r.concept_id, r.cfg);
            ModelRow row = row_for(r, model);
            fill_accuracy(row, model);
            delta[{r.concept_id, r.cfg.method, r.cfg.scope, r.cfg.seed}] = *row.accuracy_delta;
            report_.models.push_back(std::move(row));
        }
        for (Method m : cfg_.methods)
            for (ParamScope s : cfg_.scopes)
                for (std::size_t k : cfg_.concept_counts) {
                    if (k > concepts_.size()) {
                        report_.notes.push_back("concept count " + std::to_string(k) + " skipped: only " +
                                                std::to_string(concepts_.size()) + " concepts configured");
                        continue;
                    }
                    SweepRow sw;
                    sw.parameter = "concepts";
                    sw.method = std::string(to_string(m));
                    sw.scope = std::string(to_string(s));
                    sw.value = static_cast<double>(k);
                    for (std::size_t i = 0; i < k; ++i)
                        for (std::uint64_t seed : cfg_.run_seeds) sw.per_run.push_back(delta.at({concepts_[i], m, s, seed}));
                    sw.mean = mean_of(sw.per_run);
                    report_.sweeps.push_back(std::move(sw));
                }
    }

    Pipeline& p_;
    const ExperimentConfig& cfg_;
    std::vector<int> concepts_;
    std::vector<int> classes_;
    DriftReport report_;
    std::optional<DatasetEval> base_eval_;
    std::map<int, FeatureMatrix> shot_emb_;
};

}  // namespace

std::string_view to_string(ExperimentKind k) noexcept {
    for (const auto& e : kKindNames)
        if (e.kind == k) return e.name;
    return "unknown";
}

ExperimentKind parse_experiment_kind(std::string_view s) {
    for (const auto& e : kKindNames) {
        if (e.name == s) return e.kind;
        std::string alt(e.name);
        std::replace(alt.begin(), alt.end(), '-', '_');
        if (alt == s) return e.kind;
    }
    throw ConfigError("unknown experiment kind: " + std::string(s));
}

nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json methods_j = nlohmann::json::array(), scopes_j = nlohmann::json::array();
    for (Method m : methods) methods_j.push_back(to_string(m));
    for (ParamScope s : scopes) scopes_j.push_back(to_string(s));
    nlohmann::json tmpl = customize.to_json();
    tmpl["lambda"] = customize.lambda ? nlohmann::json(*customize.lambda) : nlohmann::json(nullptr);
    return {{"kind", to_string(kind)},
            {"concepts", concepts},
            {"methods", methods_j},
            {"scopes", scopes_j},
            {"run_seeds", run_seeds},
            {"customize", tmpl},
            {"images_per_condition", images_per_condition},
            {"appearance_seed_base", appearance_seed_base},
            {"probe_requests", probe_requests},
            {"probe_seed_base", probe_seed_base},
            {"fidelity_samples", fidelity_samples},
            {"fidelity_seed_base", fidelity_seed_base},
            {"neighbor_k", neighbor_k},
            {"buffer_sizes", buffer_sizes},
            {"diversity_seeds", diversity_seeds},
            {"diversity_seed_base", diversity_seed_base},
            {"concept_counts", concept_counts}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    c.kind = parse_experiment_kind(j.at("kind").get<std::string>());
    c.concepts = j.at("concepts").get<std::vector<int>>();
    c.methods.clear();
    for (const auto& m : j.at("methods")) c.methods.push_back(parse_method(m.get<std::string>()));
    c.scopes.clear();
    for (const auto& s : j.at("scopes")) c.scopes.push_back(parse_scope(s.get<std::string>()));
    c.run_seeds = j.at("run_seeds").get<std::vector<std::uint64_t>>();
    c.customize = CustomizeConfig::from_json(j.at("customize"));
    c.images_per_condition = j.at("images_per_condition");
    c.appearance_seed_base = j.at("appearance_seed_base");
    c.probe_requests = j.at("probe_requests");
    c.probe_seed_base = j.at("probe_seed_base");
    c.fidelity_samples = j.at("fidelity_samples");
    c.fidelity_seed_base = j.at("fidelity_seed_base");
    c.neighbor_k = j.at("neighbor_k");
    c.buffer_sizes = j.at("buffer_sizes").get<std::vector<std::size_t>>();
    c.diversity_seeds = j.at("diversity_seeds");
    c.diversity_seed_base = j.at("diversity_seed_base");
    c.concept_counts = j.at("concept_counts").get<std::vector<std::size_t>>();
    return c;
}

void ExperimentConfig::validate() const {
    if (methods.empty()) throw ConfigError("experiment needs at least one method");
    if (scopes.empty()) throw ConfigError("experiment needs at least one parameter scope");
    if (run_seeds.empty()) throw ConfigError("experiment needs at least one run seed");
    if (images_per_condition < 2) throw ConfigError("images_per_condition must be >= 2");
    if (probe_requests == 0) throw ConfigError("probe_requests must be positive");
    if (fidelity_samples == 0) throw ConfigError("fidelity_samples must be positive");
    if (diversity_seeds < 2) throw ConfigError("diversity_seeds must be >= 2");
    if (buffer_sizes.empty()) throw ConfigError("buffer_sizes must not be empty");
    if (concept_counts.empty() || std::ranges::find(concept_counts, 0u) != concept_counts.end())
        throw ConfigError("concept_counts must be positive");
    if (std::set<int>(concepts.begin(), concepts.end()).size() != concepts.size())
        throw ConfigError("duplicate concept ids");
    CustomizeConfig probe = customize;
    probe.method = Method::plain;
    probe.validate();
}

nlohmann::json DriftReport::to_json() const {
    nlohmann::json models_j = nlohmann::json::array();
    for (const auto& m : models)
        models_j.push_back({{"label", m.label},
                            {"concept_id", m.concept_id},
                            {"concept_name", m.concept_name},
                            {"method", m.method},
                            {"scope", m.scope},
                            {"seed", m.seed},
                            {"model_hash", m.model_hash},
                            {"accuracy", optional_json(m.accuracy)},
                            {"accuracy_delta", optional_json(m.accuracy_delta)},
                            {"worst_drop", optional_json(m.worst_drop)},
                            {"worst_class", optional_json(m.worst_class)},
                            {"per_class", int_map_json(m.per_class)},
                            {"metrics", m.metrics}});
    nlohmann::json sim_j = nlohmann::json::array();
    for (const auto& s : similarity) {
        SimilarityDistribution d;
        d.values = s.values;
        sim_j.push_back({{"label", s.label},
                         {"concept_id", s.concept_id},
                         {"method", s.method},
                         {"scope", s.scope},
                         {"seed", s.seed},
                         {"conds", s.conds},
                         {"values", s.values},
                         {"summary", d.summary()}});
    }
    nlohmann::json cond_j = nlohmann::json::array();
    for (const auto& c : conditions)
        cond_j.push_back({{"label", c.label},
                          {"concept_id", c.concept_id},
                          {"method", c.method},
                          {"scope", c.scope},
                          {"seed", c.seed},
                          {"condition", c.condition},
                          {"metrics", c.metrics}});
    nlohmann::json sweep_j = nlohmann::json::array();
    for (const auto& s : sweeps)
        sweep_j.push_back({{"parameter", s.parameter},
                           {"method", s.method},
                           {"scope", s.scope},
                           {"value", s.value},
                           {"per_run", s.per_run},
                           {"mean", s.mean}});
    return {{"schema_version", schema_version},
            {"experiment_id", experiment_id},
            {"kind", kind},
            {"config", config},
            {"config_hash", config_hash},
            {"provenance", provenance},
            {"base_accuracy", optional_json(base_accuracy)},
            {"base_per_class", int_map_json(base_per_class)},
            {"models", models_j},
            {"similarity", sim_j},
            {"conditions", cond_j},
            {"sweeps", sweep_j},
            {"notes", notes}};
}

DriftReport DriftReport::from_json(const nlohmann::json& j) {
    DriftReport r;
    r.schema_version = j.at("schema_version");
    if (r.schema_version != kReportSchemaVersion)
        throw ConfigError("unsupported report schema version " + std::to_string(r.schema_version));
    r.experiment_id = j.at("experiment_id");
    r.kind = j.at("kind");
    r.config = j.at("config");
    r.config_hash = j.at("config_hash");
    r.provenance = j.at("provenance");
    r.base_accuracy = optional_from_json<double>(j, "base_accuracy");
    r.base_per_class = int_map_from_json(j.at("base_per_class"));
    for (const auto& m : j.at("models")) {
        ModelRow row;
        row.label = m.at("label");
        row.concept_id = m.at("concept_id");
        row.concept_name = m.at("concept_name");
        row.method = m.at("method");
        row.scope = m.at("scope");
        row.seed = m.at("seed");
        row.model_hash = m.at("model_hash");
        row.accuracy = optional_from_json<double>(m, "accuracy");
        row.accuracy_delta = optional_from_json<double>(m, "accuracy_delta");
        row.worst_drop = optional_from_json<double>(m, "worst_drop");
        row.worst_class = optional_from_json<int>(m, "worst_class");
        row.per_class = int_map_from_json(m.at("per_class"));
        row.metrics = m.at("metrics").get<std::map<std::string, double>>();
        r.models.push_back(std::move(row));
    }
    for (const auto& s : j.at("similarity")) {
        SimilarityRow row;
        row.label = s.at("label");
        row.concept_id = s.at("concept_id");
        row.method = s.at("method");
        row.scope = s.at("scope");
        row.seed = s.at("seed");
        row.conds = s.at("conds").get<std::vector<int>>();
        row.values = s.at("values").get<std::vector<double>>();
        r.similarity.push_back(std::move(row));
    }
    for (const auto& c : j.at("conditions")) {
        ConditionRow row;
        row.label = c.at("label");
        row.concept_id = c.at("concept_id");
        row.method = c.at("method");
        row.scope = c.at("scope");
        row.seed = c.at("seed");
        row.condition = c.at("condition");
        row.metrics = c.at("metrics").get<std::map<std::string, double>>();
        r.conditions.push_back(std::move(row));
    }
    for (const auto& s : j.at("sweeps")) {
        SweepRow row;
        row.parameter = s.at("parameter");
        row.method = s.at("method");
        row.scope = s.at("scope");
        row.value = s.at("value");
        row.per_run = s.at("per_run").get<std::vector<double>>();
        row.mean = s.at("mean");
        r.sweeps.push_back(std::move(row));
    }
    r.notes = j.at("notes").get<std::vector<std::string>>();
    return r;
}

DriftReport run_experiment(Pipeline& pipeline, const ExperimentConfig& cfg) {
    cfg.validate();
    const nlohmann::json full = {{"pipeline", pipeline.config().to_json()}, {"experiment", cfg.to_json()}};
    const auto path = pipeline.store().stage_dir("report", full) / "report.json";
    if (pipeline.store().complete("report", full))
        return DriftReport::from_json(nlohmann::json::parse(read_file(path)));

    if (!pipeline.base_ready()) pipeline.base();
    DriftReport report = Runner(pipeline, cfg).run();
    report.config = full;
    report.config_hash = config_hash(full);
    report.experiment_id = std::string(to_string(cfg.kind)) + "-" + report.config_hash.substr(0, 12);
    report.provenance = {{"pipeline_config_hash", config_hash(pipeline.config().to_json())},
                         {"world_manifest_hash", config_hash(pipeline.world().manifest())},
                         {"base_hash", pipeline.base().hash()},
                         {"embedder_manifest_hash", pipeline.embedder().manifest_hash()},
                         {"embedder_accuracy", pipeline.embedder().manifest().value("accuracy", 0.0)},
                         {"sampler", pipeline.config().sampler.to_json()},
                         {"eval_noise", {{"count", pipeline.config().eval_noise_count},
                                         {"seed", pipeline.config().eval_noise_seed}}}};
    pipeline.store().begin("report", full);
    write_file(path, report.to_json().dump(2) + "\n");
    pipeline.store().mark_complete("report", full);
    // Reload so that a fresh run and a resumed run return the same values.
    return DriftReport::from_json(nlohmann::json::parse(read_file(path)));
}

nlohmann::json CompareSummary::to_json() const {
    return {{"base_hash", base_hash},
            {"adapted_hash", adapted_hash},
            {"mean_similarity", mean_similarity},
            {"base_accuracy", base_accuracy},
            {"adapted_accuracy", adapted_accuracy},
            {"accuracy_delta", accuracy_delta},
            {"cdi", cdi},
            {"control_cdi", control_cdi}};
}

CompareSummary compare_models(const std::filesystem::path& base_ckpt, const std::filesystem::path& adapted_ckpt,
                              Pipeline& pipeline, const ProbeConfig& probe) {
    const LoadedDenoiser base = load_denoiser(base_ckpt);
    const LoadedDenoiser adapted = load_denoiser(adapted_ckpt);
    return compare_models(base.model, adapted.model, pipeline, probe);
}

CompareSummary compare_models(const DenoiserModel& base, const DenoiserModel& adapted, Pipeline& pipeline,
                              const ProbeConfig& probe) {
    if (base.config().to_json() != adapted.config().to_json())
        throw ConfigError("compare: checkpoint architectures differ");
    if (probe.conditions.empty() || probe.seeds_per_condition < 2 || probe.probe_images == 0)
        throw ConfigError("compare: probe needs conditions, >= 2 seeds and >= 1 image");
    CompareSummary out;
    out.base_hash = base.hash();
    out.adapted_hash = adapted.hash();

    const auto seeds_a = seed_range(probe.seed_base, probe.seeds_per_condition);
    const auto seeds_b = seed_range(probe.seed_base + kDisjointSeedOffset, probe.seeds_per_condition);
    const GenerationStats ref = pipeline.generate(base, probe.conditions, seeds_a);
    const GenerationStats matched = pipeline.generate(adapted, probe.conditions, seeds_a);
    out.mean_similarity = similarity_from_embeddings(ref.embeddings, matched.embeddings).mean();

    const GenerationStats control = pipeline.generate(base, probe.conditions, seeds_b);
    const GenerationStats drifted = pipeline.generate(adapted, probe.conditions, seeds_b);
    std::vector<double> cdis, controls;
    for (std::size_t c = 0; c < probe.conditions.size(); ++c) {
        cdis.push_back(histogram_distance(ref.histograms[c], drifted.histograms[c]));
        controls.push_back(histogram_distance(ref.histograms[c], control.histograms[c]));
    }
    out.cdi = mean_of(cdis);
    out.control_cdi = mean_of(controls);

    const auto& test = pipeline.world().test;
    const std::size_t n = std::min(probe.probe_images, test.size());
    std::vector<LabeledImage> subset;
    for (std::size_t i = 0; i < n; ++i) subset.push_back(test[i * test.size() / n]);
    const auto classes = pipeline.base_classes();
    const auto& cfg = pipeline.config();
    const DatasetEval eb =
        eval_dataset(base, subset, classes, cfg.stages, pipeline.eval_noise(), pipeline.schedule());
    const DatasetEval ea =
        eval_dataset(adapted, subset, classes, cfg.stages, pipeline.eval_noise(), pipeline.schedule());
    out.base_accuracy = eb.overall;
    out.adapted_accuracy = ea.overall;
    out.accuracy_delta = ea.overall - eb.overall;
    return out;
}

}  // namespace dlab
