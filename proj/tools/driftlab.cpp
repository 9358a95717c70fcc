// driftlab command-line interface.
//
// Every subcommand works against the artifact store at $DLAB_HOME (or
// --home). Options can also come from an INI file passed with --config;
// keys of a [section] apply to the subcommand of that name.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "driftlab/gradcore/checkpoint.hpp"
#include "driftlab/gradcore/error.hpp"
#include "driftlab/harness/experiment.hpp"
#include "driftlab/harness/report.hpp"

namespace fs = std::filesystem;
using namespace dlab;

namespace {

struct GlobalOptions {
    std::string home;
    std::string pipeline_json;
    int base_steps = -1;
    double base_lr = -1.0;
    std::uint64_t base_seed = 0;
    int sample_steps = -1;
};

struct MatrixOptions {
    std::vector<std::string> concepts;
    std::vector<std::string> methods;
    std::vector<std::string> scopes;
    std::vector<std::uint64_t> seeds;
    std::optional<double> lambda;
    int steps = -1;
    double lr = -1.0;
    std::size_t images = 0;
    std::size_t probe = 0;
    std::vector<std::size_t> buffer_sizes;
    std::vector<std::size_t> concept_counts;
    std::string out;
    std::vector<std::string> formats = {"csv", "json", "svg"};
};

PipelineConfig pipeline_config(const GlobalOptions& g) {
    PipelineConfig cfg;
    if (!g.pipeline_json.empty()) cfg = PipelineConfig::from_json(nlohmann::json::parse(read_file(g.pipeline_json)));
    if (g.base_steps > 0) cfg.base_train.steps = g.base_steps;
    if (g.base_lr > 0) cfg.base_train.learning_rate = g.base_lr;
    if (g.base_seed != 0) cfg.base_seed = g.base_seed;
    if (g.sample_steps > 0) cfg.sampler.steps = g.sample_steps;
    return cfg;
}

ArtifactStore store_for(const GlobalOptions& g) {
    return g.home.empty() ? ArtifactStore::from_env() : ArtifactStore(g.home);
}

/// Accepts a concept id or a concept name.
int resolve_concept(const ConceptWorld& world, const std::string& s) {
    for (const auto& c : world.concepts)
        if (c.name == s || std::to_string(c.concept_id) == s) return c.concept_id;
    throw TokenError("unknown concept: " + s);
}

void write_png_with_manifest(const fs::path& path, const Tensor& image, const nlohmann::json& manifest) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_png(path, image);
    fs::path side = path;
    side += ".json";
    write_file(side, manifest.dump(2) + "\n");
}

ExperimentConfig experiment_config(ExperimentKind kind, const MatrixOptions& m, Pipeline& p) {
    ExperimentConfig cfg;
    cfg.kind = kind;
    for (const auto& c : m.concepts) cfg.concepts.push_back(resolve_concept(p.world(), c));
    if (!m.methods.empty()) {
        cfg.methods.clear();
        for (const auto& s : m.methods) cfg.methods.push_back(parse_method(s));
    }
    if (!m.scopes.empty()) {
        cfg.scopes.clear();
        for (const auto& s : m.scopes) cfg.scopes.push_back(parse_scope(s));
    }
    if (!m.seeds.empty()) cfg.run_seeds = m.seeds;
    cfg.customize.lambda = m.lambda;
    if (m.steps > 0) cfg.customize.steps = m.steps;
    if (m.lr > 0) cfg.customize.learning_rate = m.lr;
    if (m.images > 0) cfg.images_per_condition = m.images;
    if (m.probe > 0) cfg.probe_requests = m.probe;
    if (!m.buffer_sizes.empty()) cfg.buffer_sizes = m.buffer_sizes;
    if (!m.concept_counts.empty()) cfg.concept_counts = m.concept_counts;
    return cfg;
}

void add_matrix_options(CLI::App* cmd, MatrixOptions& m) {
    cmd->add_option("--concepts", m.concepts, "Concept names or ids (default: all)")->delimiter(',');
    cmd->add_option("--methods", m.methods, "plain, prior, dc, dc_no_prior")->delimiter(',');
    cmd->add_option("--scopes", m.scopes, "all, cond_subset")->delimiter(',');
    cmd->add_option("--seeds", m.seeds, "Customization run seeds")->delimiter(',');
    cmd->add_option("--lambda", m.lambda, "Regularization weight for every method");
    cmd->add_option("--steps", m.steps, "Customization steps");
    cmd->add_option("--lr", m.lr, "Customization learning rate");
    cmd->add_option("--out", m.out, "Directory for rendered report files");
    cmd->add_option("--formats", m.formats, "csv, json, svg")->delimiter(',');
}

void print_report_summary(const DriftReport& r) {
    std::cout << "experiment " << r.experiment_id << "\n";
    if (r.base_accuracy) std::cout << "base accuracy " << *r.base_accuracy << "\n";
    for (const auto& m : r.models) {
        if (m.label == "base") continue;
        std::cout << m.label;
        if (m.accuracy) std::cout << "  acc " << *m.accuracy << "  delta " << *m.accuracy_delta << "  worst "
                                  << *m.worst_drop << " (class " << *m.worst_class << ")";
        for (const auto& [k, v] : m.metrics) std::cout << "  " << k << " " << v;
        std::cout << "\n";
    }
    for (const auto& s : r.sweeps)
        std::cout << s.parameter << "=" << s.value << " " << s.method << "/" << s.scope << " mean " << s.mean << "\n";
    for (const auto& n : r.notes) std::cout << "note: " << n << "\n";
}

void run_and_render(ExperimentKind kind, const GlobalOptions& g, const MatrixOptions& m) {
    Pipeline p(store_for(g), pipeline_config(g), /*allow_base_training=*/false);
    const DriftReport r = run_experiment(p, experiment_config(kind, m, p));
    print_report_summary(r);
    if (!m.out.empty())
        for (const auto& path : render_report(r, m.formats, m.out)) std::cout << "wrote " << path.string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"driftlab: forgetting and drift in customized diffusion models"};
    app.require_subcommand(1);
    app.set_config("--config", "", "INI file with [section] per subcommand");
    GlobalOptions g;
    app.add_option("--home", g.home, "Artifact store root (default $DLAB_HOME or ./dlab_home)");
    app.add_option("--pipeline", g.pipeline_json, "Pipeline config JSON");
    app.add_option("--base-steps", g.base_steps, "Base model training steps");
    app.add_option("--base-lr", g.base_lr, "Base model learning rate");
    app.add_option("--base-seed", g.base_seed, "Base model initialisation seed");
    app.add_option("--sample-steps", g.sample_steps, "DDIM steps for generation");

    // world build
    auto* world_cmd = app.add_subcommand("world", "Synthetic world");
    world_cmd->require_subcommand(1);
    auto* world_build = world_cmd->add_subcommand("build", "Build the world and export previews");
    std::string world_out = "world";
    world_build->add_option("--out", world_out, "Directory for manifest and preview PNGs");
    world_build->callback([&] {
        Pipeline p(store_for(g), pipeline_config(g));
        const auto& w = p.world();
        fs::create_directories(world_out);
        write_file(fs::path(world_out) / "manifest.json", w.manifest().dump(2) + "\n");
        std::vector<Tensor> grid;
        for (const auto& c : w.classes) {
            std::size_t taken = 0;
            for (const auto& im : w.test)
                if (im.label == c.class_id && taken < 8) {
                    grid.push_back(im.image);
                    ++taken;
                }
        }
        write_png_with_manifest(fs::path(world_out) / "classes.png", contact_sheet(grid, 8),
                                {{"kind", "base-classes"}, {"columns", 8}, {"rows", "class ids ascending"}});
        for (const auto& c : w.concepts) {
            std::vector<Tensor> shots;
            for (const auto& s : w.shots.at(c.concept_id)) shots.push_back(s.image);
            write_png_with_manifest(fs::path(world_out) / ("concept_" + c.name + ".png"),
                                    contact_sheet(shots, shots.size()), c.to_json());
        }
        std::cout << "world: " << w.classes.size() << " classes, " << w.concepts.size() << " concepts, "
                  << w.train.size() << " train / " << w.test.size() << " test images -> " << world_out << "\n";
    });

    // train-base
    auto* train_cmd = app.add_subcommand("train-base", "Train (or reuse) the base denoiser and embedder");
    train_cmd->callback([&] {
        Pipeline p(store_for(g), pipeline_config(g));
        const auto& base = p.base();
        p.embedder();
        std::cout << "base model " << base.hash() << "\n" << p.base_path().string() << "\n";
    });

    // customize
    auto* cust_cmd = app.add_subcommand("customize", "Adapt the base model to one concept");
    std::string cust_base, cust_concept, cust_out;
    CustomizeConfig cust;
    std::string cust_method = "dc", cust_scope = "all";
    std::optional<double> cust_lambda;
    cust_cmd->add_option("--base", cust_base, "Base checkpoint (default: the store's base model)");
    cust_cmd->add_option("--concept", cust_concept, "Concept name or id")->required();
    cust_cmd->add_option("--method", cust_method, "plain, prior, dc, dc_no_prior");
    cust_cmd->add_option("--scope", cust_scope, "all, cond_subset");
    cust_cmd->add_option("--lambda", cust_lambda, "Regularization weight");
    cust_cmd->add_option("--steps", cust.steps, "Training steps");
    cust_cmd->add_option("--lr", cust.learning_rate, "Learning rate");
    cust_cmd->add_option("--buffer", cust.buffer_size, "Prior buffer size");
    cust_cmd->add_option("--seed", cust.seed, "Run seed");
    cust_cmd->add_option("--out", cust_out, "Copy the adapted checkpoint here");
    cust_cmd->callback([&] {
        cust.method = parse_method(cust_method);
        cust.scope = parse_scope(cust_scope);
        cust.lambda = cust_lambda;
        cust.validate();
        Pipeline p(store_for(g), pipeline_config(g), false);
        const int concept_id = resolve_concept(p.world(), cust_concept);
        DenoiserModel model;
        fs::path stored;
        if (cust_base.empty()) {
            model = p.adapted(concept_id, cust);
            stored = p.adapted_path(concept_id, cust);
        } else {
            const LoadedDenoiser base = load_denoiser(cust_base);
            const ConceptSpec& spec = p.world().concept_by_id(concept_id);
            const PriorBuffer buf = cust.needs_buffer()
                                        ? build_prior_buffer(base.model, base.schedule, spec.superclass,
                                                             cust.buffer_size, p.config().buffer_seed,
                                                             cust.buffer_sample_steps)
                                        : PriorBuffer{};
            model = run_customization(base.model, base.schedule, spec, p.world().shots.at(concept_id), buf, cust)
                        .model;
            if (cust_out.empty()) cust_out = "adapted.dlab";
            save_denoiser(cust_out, model, base.schedule,
                          {{"customize", cust.to_json()}, {"concept", spec.to_json()}, {"base_hash", base.model.hash()}});
        }
        if (!cust_out.empty() && !stored.empty()) fs::copy_file(stored, cust_out, fs::copy_options::overwrite_existing);
        const ConceptSpec& spec = p.world().concept_by_id(concept_id);
        std::vector<GenerationRequest> reqs;
        for (std::uint64_t s = 0; s < 8; ++s) reqs.push_back({spec.rare_token, 70'000 + s, SamplerKind::ddim, 50});
        const auto imgs = sample_batch(model, reqs, p.schedule());
        const fs::path preview = fs::path(cust_out.empty() ? stored.parent_path().string() : cust_out + ".d") / "concept.png";
        write_png_with_manifest(preview, contact_sheet(imgs, 8),
                                {{"model_hash", model.hash()}, {"token", spec.rare_token}, {"seeds", "70000..70007"},
                                 {"sampler", "ddim"}, {"steps", 50}});
        std::cout << "adapted model " << model.hash() << "\n"
                  << (cust_out.empty() ? stored.string() : cust_out) << "\npreview " << preview.string() << "\n";
    });

    // eval / ablate
    MatrixOptions eval_opts;
    auto* eval_cmd = app.add_subcommand("eval", "Drift evaluations");
    eval_cmd->require_subcommand(1);
    struct Sub {
        const char* name;
        const char* help;
        ExperimentKind kind;
    };
    const Sub eval_subs[] = {{"semantic", "Zero-shot accuracy drift", ExperimentKind::semantic_drift},
                             {"appearance", "CDI / KID / FID per condition", ExperimentKind::appearance_drift},
                             {"local", "Drift on classes near the concept", ExperimentKind::local_drift},
                             {"global", "Seed-matched similarity distribution", ExperimentKind::global_drift}};
    for (const auto& s : eval_subs) {
        auto* c = eval_cmd->add_subcommand(s.name, s.help);
        add_matrix_options(c, eval_opts);
        if (s.kind == ExperimentKind::appearance_drift)
            c->add_option("--images", eval_opts.images, "Generated images per condition and model");
        if (s.kind == ExperimentKind::global_drift || s.kind == ExperimentKind::local_drift)
            c->add_option("--probe", eval_opts.probe, "Probe requests");
        const ExperimentKind kind = s.kind;
        c->callback([&, kind] { run_and_render(kind, g, eval_opts); });
    }
    MatrixOptions ablate_opts;
    auto* ablate_cmd = app.add_subcommand("ablate", "Ablations and sweeps");
    ablate_cmd->require_subcommand(1);
    const Sub ablate_subs[] = {{"buffer", "Prior buffer size sweep", ExperimentKind::buffer_ablation},
                               {"diversity", "Per-condition generation diversity", ExperimentKind::diversity},
                               {"scaling", "Mean drift against number of concepts", ExperimentKind::concept_scaling}};
    for (const auto& s : ablate_subs) {
        auto* c = ablate_cmd->add_subcommand(s.name, s.help);
        add_matrix_options(c, ablate_opts);
        if (s.kind == ExperimentKind::buffer_ablation)
            c->add_option("--sizes", ablate_opts.buffer_sizes, "Buffer sizes")->delimiter(',');
        if (s.kind == ExperimentKind::concept_scaling)
            c->add_option("--counts", ablate_opts.concept_counts, "Concept counts")->delimiter(',');
        const ExperimentKind kind = s.kind;
        c->callback([&, kind] { run_and_render(kind, g, ablate_opts); });
    }

    // report
    auto* report_cmd = app.add_subcommand("report", "Render a stored report.json");
    std::string report_in, report_out = "report";
    std::vector<std::string> report_formats = {"csv", "json", "svg"};
    report_cmd->add_option("input", report_in, "report.json")->required()->check(CLI::ExistingFile);
    report_cmd->add_option("--out", report_out, "Output directory");
    report_cmd->add_option("--formats", report_formats, "csv, json, svg")->delimiter(',');
    report_cmd->callback([&] {
        const DriftReport r = DriftReport::from_json(nlohmann::json::parse(read_file(report_in)));
        for (const auto& path : render_report(r, report_formats, report_out))
            std::cout << "wrote " << path.string() << "\n";
    });

    // compare
    auto* cmp_cmd = app.add_subcommand("compare", "Quick drift summary between two checkpoints");
    std::string cmp_base, cmp_adapted;
    ProbeConfig probe;
    cmp_cmd->add_option("base", cmp_base, "Base checkpoint")->required()->check(CLI::ExistingFile);
    cmp_cmd->add_option("adapted", cmp_adapted, "Adapted checkpoint")->required()->check(CLI::ExistingFile);
    cmp_cmd->add_option("--images", probe.probe_images, "Zero-shot probe images");
    cmp_cmd->add_option("--seeds", probe.seeds_per_condition, "Seeds per probe condition");
    cmp_cmd->callback([&] {
        Pipeline p(store_for(g), pipeline_config(g), false);
        const CompareSummary s = compare_models(cmp_base, cmp_adapted, p, probe);
        std::cout << s.to_json().dump(2) << "\n";
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const DependencyError& e) {
        std::cerr << "missing stage: " << e.stage() << " (run `driftlab train-base` first)\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
