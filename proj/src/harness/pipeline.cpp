#include "driftlab/harness/pipeline.hpp"

#include <chrono>

#include "driftlab/gradcore/checkpoint.hpp"
#include "driftlab/gradcore/error.hpp"

namespace dlab {
namespace {

nlohmann::json grid_json(const HistogramGrid& g) {
    return {{"bins_x", g.bins_x}, {"bins_y", g.bins_y}, {"x_min", g.x_min},
            {"x_max", g.x_max},   {"y_min", g.y_min},   {"y_max", g.y_max}};
}

HistogramGrid grid_from_json(const nlohmann::json& j) {
    HistogramGrid g;
    g.bins_x = j.at("bins_x");
    g.bins_y = j.at("bins_y");
    g.x_min = j.at("x_min");
    g.x_max = j.at("x_max");
    g.y_min = j.at("y_min");
    g.y_max = j.at("y_max");
    return g;
}

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

Tensor stack_images(std::span<const Tensor> images) {
    if (images.empty()) throw ConfigError("cannot stack an empty image list");
    Shape shape = images.front().shape();
    shape.insert(shape.begin(), images.size());
    std::vector<double> data;
    data.reserve(shape_size(shape));
    for (const auto& im : images) data.insert(data.end(), im.values().begin(), im.values().end());
    return Tensor(std::move(shape), std::move(data));
}

std::vector<Tensor> unstack_images(const Tensor& stacked) {
    Shape inner(stacked.shape().begin() + 1, stacked.shape().end());
    const std::size_t n = stacked.dim(0), len = shape_size(inner);
    std::vector<Tensor> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        out.emplace_back(inner, std::vector<double>(stacked.values().begin() + static_cast<std::ptrdiff_t>(i * len),
                                                    stacked.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * len)));
    return out;
}

}  // namespace

nlohmann::json PipelineConfig::to_json() const {
    return {{"world", world.to_json()},
            {"model", model.to_json()},
            {"beta_start", beta_start},
            {"beta_end", beta_end},
            {"base_train", base_train.to_json()},
            {"base_seed", base_seed},
            {"embedder", embedder.to_json()},
            {"eval_noise_count", eval_noise_count},
            {"eval_noise_seed", eval_noise_seed},
            {"stages", stages.to_json()},
            {"sampler", sampler.to_json()},
            {"buffer_seed", buffer_seed},
            {"grid", grid_json(grid)}};
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j) {
    PipelineConfig c;
    c.world = WorldConfig::from_json(j.at("world"));
    c.model = DenoiserConfig::from_json(j.at("model"));
    c.beta_start = j.at("beta_start");
    c.beta_end = j.at("beta_end");
    c.base_train = DenoiserTrainConfig::from_json(j.at("base_train"));
    c.base_seed = j.at("base_seed");
    c.embedder = EmbedderConfig::from_json(j.at("embedder"));
    c.eval_noise_count = j.at("eval_noise_count");
    c.eval_noise_seed = j.at("eval_noise_seed");
    c.stages = StageConfig::from_json(j.at("stages"));
    c.sampler.sampler = parse_sampler(j.at("sampler").at("sampler").get<std::string>());
    c.sampler.steps = j.at("sampler").at("steps");
    c.buffer_seed = j.at("buffer_seed");
    c.grid = grid_from_json(j.at("grid"));
    return c;
}

FeatureMatrix GenerationStats::condition_embeddings(std::size_t cond_index) const {
    const auto n = static_cast<Eigen::Index>(seeds.size());
    return embeddings.middleRows(static_cast<Eigen::Index>(cond_index) * n, n);
}

Pipeline::Pipeline(ArtifactStore store, PipelineConfig cfg, bool allow_base_training)
    : store_(std::move(store)),
      cfg_(std::move(cfg)),
      allow_base_training_(allow_base_training),
      schedule_(make_schedule(cfg_.model.timesteps, cfg_.beta_start, cfg_.beta_end)) {}

const ConceptWorld& Pipeline::world() {
    if (world_) return *world_;
    world_ = build_world(cfg_.world);
    const nlohmann::json key = {{"world", cfg_.world.to_json()}};
    if (!store_.complete("world", key)) {
        const auto dir = store_.begin("world", key);
        write_file(dir / "manifest.json", world_->manifest().dump(2) + "\n");
        store_.mark_complete("world", key);
    }
    return *world_;
}

std::vector<int> Pipeline::base_classes() {
    std::vector<int> out;
    for (const auto& c : world().classes) out.push_back(c.class_id);
    return out;
}

nlohmann::json Pipeline::base_key() const {
    return {{"world", cfg_.world.to_json()},
            {"model", cfg_.model.to_json()},
            {"schedule", {{"steps", cfg_.model.timesteps}, {"beta_start", cfg_.beta_start}, {"beta_end", cfg_.beta_end}}},
            {"train", cfg_.base_train.to_json()},
            {"seed", cfg_.base_seed}};
}

bool Pipeline::base_ready() const { return store_.complete("base", base_key()); }

std::filesystem::path Pipeline::base_path() const { return store_.stage_dir("base", base_key()) / "model.dlab"; }

const DenoiserModel& Pipeline::base() {
    if (base_) return *base_;
    const auto key = base_key();
    if (store_.complete("base", key)) {
        base_ = load_denoiser(base_path()).model;
        return *base_;
    }
    if (!allow_base_training_) throw DependencyError("train-base");
    const auto& w = world();
    const Stopwatch sw;
    DenoiserModel model = DenoiserModel::create(cfg_.model, cfg_.base_seed);
    const TrainLog log = train_denoiser(model, schedule_, w.train, cfg_.base_train);
    const auto dir = store_.begin("base", key);
    save_denoiser(dir / "model.dlab", model, schedule_, {{"train", cfg_.base_train.to_json()}});
    std::string csv = "window,mean_loss\n";
    for (std::size_t i = 0; i < log.window_means.size(); ++i)
        csv += std::to_string(i) + "," + nlohmann::json(log.window_means[i]).dump() + "\n";
    write_file(dir / "loss.csv", csv);
    store_.mark_complete("base", key);
    store_.record_timing("base", key, sw.seconds());
    base_ = std::move(model);
    return *base_;
}

const FeatureEmbedder& Pipeline::embedder() {
    if (embedder_) return *embedder_;
    const nlohmann::json key = {{"world", cfg_.world.to_json()}, {"embedder", cfg_.embedder.to_json()}};
    const auto path = store_.stage_dir("embedder", key) / "embedder.dlab";
    if (store_.complete("embedder", key)) {
        embedder_ = FeatureEmbedder::load(path);
        return *embedder_;
    }
    const auto& w = world();
    const Stopwatch sw;
    FeatureEmbedder e = FeatureEmbedder::create(cfg_.embedder);
    e.fit(w.train, w.test);
    store_.begin("embedder", key);
    e.save(path);
    store_.mark_complete("embedder", key);
    store_.record_timing("embedder", key, sw.seconds());
    embedder_ = std::move(e);
    return *embedder_;
}

const EvalNoiseSet& Pipeline::eval_noise() {
    if (!noise_) noise_ = make_eval_noise(cfg_.eval_noise_count, cfg_.model.image_dim(), schedule_, cfg_.eval_noise_seed);
    return *noise_;
}

PriorBuffer Pipeline::buffer(int concept_id, std::size_t n, int sample_steps) {
    const ConceptSpec& spec = world().concept_by_id(concept_id);
    const auto& base_model = base();
    const nlohmann::json key = {{"base", base_model.hash()},
                                {"superclass", spec.superclass},
                                {"n", n},
                                {"seed", cfg_.buffer_seed},
                                {"steps", sample_steps}};
    const auto dir = store_.stage_dir("buffer", key);
    if (store_.complete("buffer", key)) {
        PriorBuffer b;
        b.cond_id = spec.superclass;
        b.base_hash = base_model.hash();
        b.sample_steps = sample_steps;
        for (std::size_t i = 0; i < n; ++i) b.seeds.push_back(cfg_.buffer_seed + i);
        if (n > 0) b.images = unstack_images(load_checkpoint(dir / "images.dlab").params.value("images"));
        return b;
    }
    const Stopwatch sw;
    PriorBuffer b = build_prior_buffer(base_model, schedule_, spec.superclass, n, cfg_.buffer_seed, sample_steps);
    store_.begin("buffer", key);
    write_file(dir / "manifest.json", b.manifest().dump(2) + "\n");
    if (n > 0) {
        Checkpoint ck;
        ck.meta = {{"kind", "image-set"}, {"manifest", b.manifest()}};
        ck.params.add("images", ParamGroup::trunk, stack_images(b.images));
        save_checkpoint(dir / "images.dlab", ck);
        const std::size_t preview = std::min<std::size_t>(n, 25);
        write_png(dir / "preview.png", contact_sheet(std::span(b.images).first(preview), 5));
    }
    store_.mark_complete("buffer", key);
    store_.record_timing("buffer", key, sw.seconds());
    return b;
}

nlohmann::json Pipeline::adapted_key(int concept_id, const CustomizeConfig& cfg) const {
    return {{"base", config_hash(base_key())},
            {"concept_id", concept_id},
            {"customize", cfg.to_json()},
            {"buffer_seed", cfg_.buffer_seed}};
}

std::filesystem::path Pipeline::adapted_path(int concept_id, const CustomizeConfig& cfg) const {
    return store_.stage_dir("adapted", adapted_key(concept_id, cfg)) / "model.dlab";
}

DenoiserModel Pipeline::adapted(int concept_id, const CustomizeConfig& cfg) {
    world();
    const auto key = adapted_key(concept_id, cfg);
    if (store_.complete("adapted", key)) return load_denoiser(adapted_path(concept_id, cfg)).model;
    const ConceptSpec& spec = world().concept_by_id(concept_id);
    const PriorBuffer buf = cfg.needs_buffer() ? buffer(concept_id, cfg.buffer_size, cfg.buffer_sample_steps) : PriorBuffer{};
    const Stopwatch sw;
    CustomizationResult res = run_customization(base(), schedule_, spec, world().shots.at(concept_id), buf, cfg);
    const auto dir = store_.begin("adapted", key);
    save_denoiser(dir / "model.dlab", res.model, schedule_,
                  {{"customize", cfg.to_json()}, {"concept", spec.to_json()}, {"base_hash", base().hash()}});
    write_file(dir / "training_log.csv", training_log_csv(res.log));
    store_.mark_complete("adapted", key);
    store_.record_timing("adapted", key, sw.seconds());
    return std::move(res.model);
}

DatasetEval Pipeline::evaluate(const DenoiserModel& model) {
    const auto& w = world();
    std::string digest;
    for (const auto& im : w.test) digest += std::to_string(im.label) + ":" + std::to_string(im.seed) + ";";
    const nlohmann::json key = {{"model", model.hash()},
                                {"noise", {{"count", cfg_.eval_noise_count}, {"seed", cfg_.eval_noise_seed}}},
                                {"stages", cfg_.stages.to_json()},
                                {"test", sha256_hex(digest)}};
    const auto path = store_.stage_dir("eval", key) / "eval.json";
    if (store_.complete("eval", key)) return DatasetEval::from_json(nlohmann::json::parse(read_file(path)));
    const Stopwatch sw;
    const auto candidates = base_classes();
    DatasetEval ev = eval_dataset(model, w.test, candidates, cfg_.stages, eval_noise(), schedule_);
    store_.begin("eval", key);
    nlohmann::json out = ev.to_json();
    out["model_hash"] = model.hash();
    out["noise_seed"] = cfg_.eval_noise_seed;
    out["stages"] = cfg_.stages.to_json();
    write_file(path, out.dump(2) + "\n");
    store_.mark_complete("eval", key);
    store_.record_timing("eval", key, sw.seconds());
    return ev;
}

GenerationStats Pipeline::generate(const DenoiserModel& model, std::span<const int> conds,
                                   std::span<const std::uint64_t> seeds) {
    if (conds.empty() || seeds.empty()) throw ConfigError("generate: empty condition or seed list");
    const auto& emb = embedder();
    const nlohmann::json key = {{"model", model.hash()},
                                {"conds", std::vector<int>(conds.begin(), conds.end())},
                                {"seeds", std::vector<std::uint64_t>(seeds.begin(), seeds.end())},
                                {"sampler", cfg_.sampler.to_json()},
                                {"grid", grid_json(cfg_.grid)},
                                {"embedder", emb.manifest_hash()}};
    const auto dir = store_.stage_dir("samples", key);
    GenerationStats g;
    g.conds.assign(conds.begin(), conds.end());
    g.seeds.assign(seeds.begin(), seeds.end());
    if (store_.complete("samples", key)) {
        const Checkpoint ck = load_checkpoint(dir / "stats.dlab");
        const Tensor& e = ck.params.value("embeddings");
        g.embeddings = FeatureMatrix(static_cast<Eigen::Index>(e.dim(0)), static_cast<Eigen::Index>(e.dim(1)));
        std::copy(e.values().begin(), e.values().end(), g.embeddings.data());
        for (std::size_t c = 0; c < conds.size(); ++c) {
            const Tensor& h = ck.params.value("hist." + std::to_string(c));
            g.histograms.emplace_back(cfg_.grid, h.values());
        }
        return g;
    }
    const Stopwatch sw;
    const auto reqs = make_requests(conds, seeds, cfg_.sampler);
    const auto images = sample_batch(model, reqs, schedule_);
    g.embeddings = emb.embed(images);
    Checkpoint ck;
    ck.meta = {{"kind", "generation-stats"}, {"key", key}};
    ck.params.add("embeddings", ParamGroup::trunk,
                  Tensor({static_cast<std::size_t>(g.embeddings.rows()), static_cast<std::size_t>(g.embeddings.cols())},
                         std::vector<double>(g.embeddings.data(), g.embeddings.data() + g.embeddings.size())));
    for (std::size_t c = 0; c < conds.size(); ++c) {
        const auto set = std::span(images).subspan(c * seeds.size(), seeds.size());
        const ChromaticityHistogram h = chroma_histogram(set, cfg_.grid);
        std::vector<double> masses(h.masses().begin(), h.masses().end());
        ck.params.add("hist." + std::to_string(c), ParamGroup::trunk, Tensor({cfg_.grid.bins()}, masses));
        // Same construction as the reload path so fresh and resumed runs agree bit for bit.
        g.histograms.emplace_back(cfg_.grid, std::move(masses));
    }
    store_.begin("samples", key);
    save_checkpoint(dir / "stats.dlab", ck);
    std::vector<Tensor> preview;
    for (std::size_t c = 0; c < conds.size(); ++c)
        for (std::size_t s = 0; s < std::min<std::size_t>(seeds.size(), 8); ++s) preview.push_back(images[c * seeds.size() + s]);
    write_png(dir / "preview.png", contact_sheet(preview, std::min<std::size_t>(seeds.size(), 8)));
    store_.mark_complete("samples", key);
    store_.record_timing("samples", key, sw.seconds());
    return g;
}

FeatureMatrix Pipeline::embed_requests(const DenoiserModel& model, std::span<const GenerationRequest> reqs) {
    if (reqs.empty()) throw ConfigError("embed_requests: empty request list");
    const auto& emb = embedder();
    nlohmann::json list = nlohmann::json::array();
    for (const auto& r : reqs) list.push_back({r.cond_id, r.seed, to_string(r.sampler), r.steps});
    const nlohmann::json key = {{"model", model.hash()}, {"requests", list}, {"embedder", emb.manifest_hash()}};
    const auto path = store_.stage_dir("probe", key) / "embeddings.dlab";
    if (store_.complete("probe", key)) {
        const Tensor e = load_checkpoint(path).params.value("embeddings");
        FeatureMatrix m(static_cast<Eigen::Index>(e.dim(0)), static_cast<Eigen::Index>(e.dim(1)));
        std::copy(e.values().begin(), e.values().end(), m.data());
        return m;
    }
    const Stopwatch sw;
    FeatureMatrix m = emb.embed(sample_batch(model, reqs, schedule_));
    Checkpoint ck;
    ck.meta = {{"kind", "probe-embeddings"}, {"key", key}};
    ck.params.add("embeddings", ParamGroup::trunk,
                  Tensor({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                         std::vector<double>(m.data(), m.data() + m.size())));
    store_.begin("probe", key);
    save_checkpoint(path, ck);
    store_.mark_complete("probe", key);
    store_.record_timing("probe", key, sw.seconds());
    return m;
}

}  // namespace dlab
