#include <cmath>

#include <gtest/gtest.h>

#include "driftlab/customize/customize.hpp"
#include "driftlab/gradcore/error.hpp"
#include "support.hpp"

using namespace dlab;
using testutil::Gen;

namespace {

DenoiserModel affine_model(const DenoiserConfig& c, double gate, double head_bias) {
    DenoiserModel m = DenoiserModel::create(c, 1);
    for (auto& p : m.params())
        for (auto& v : p.value.data()) v = 0.0;
    m.params().value("skip.b")[0] = gate;
    for (auto& v : m.params().value("head.b").data()) v = head_bias;
    return m;
}

DenoiserConfig one_pixel() {
    DenoiserConfig c = testutil::tiny_denoiser();
    c.height = c.width = c.channels = 1;
    return c;
}

CustomizeConfig with(Method m, std::optional<double> lambda = std::nullopt) {
    CustomizeConfig c;
    c.method = m;
    c.lambda = lambda;
    return c;
}

struct TinySetup {
    DenoiserConfig cfg = testutil::tiny_denoiser();
    NoiseSchedule sched = make_schedule(cfg.timesteps, 1e-4, 0.02);
    DenoiserModel base = DenoiserModel::create(cfg, 21);
    ConceptSpec spec;
    std::vector<LabeledImage> shots;
    PriorBuffer buffer;

    TinySetup() {
        spec.concept_id = 0;
        spec.name = "tiny";
        spec.rare_token = 4;
        spec.superclass = 1;
        Gen g(5);
        for (int i = 0; i < 5; ++i) {
            Tensor img({4, 4, 3});
            for (auto& v : img.data()) v = g.uniform(0.6, 1.0);
            shots.push_back({img, spec.rare_token, static_cast<std::uint64_t>(i)});
        }
        buffer = build_prior_buffer(base, sched, spec.superclass, 8, 100, 5);
    }

    CustomizeConfig config(Method m, ParamScope scope, int steps) const {
        CustomizeConfig c;
        c.method = m;
        c.scope = scope;
        c.steps = steps;
        c.learning_rate = 1e-2;
        c.buffer_size = buffer.size();
        return c;
    }
};

}  // namespace

TEST(LossTerms, CombinationTable) {
    const double shot = 0.3, prior = 0.5, distill = 0.7, lambda = 2.0;
    EXPECT_DOUBLE_EQ(combine_loss_terms(Method::plain, lambda, shot, prior, distill).total, 0.3);
    EXPECT_DOUBLE_EQ(combine_loss_terms(Method::prior, lambda, shot, prior, distill).total, 0.3 + 2.0 * 0.5);
    EXPECT_DOUBLE_EQ(combine_loss_terms(Method::dc, lambda, shot, prior, distill).total, 0.3 + 0.5 + 2.0 * 0.7);
    EXPECT_DOUBLE_EQ(combine_loss_terms(Method::dc_no_prior, lambda, shot, prior, distill).total, 0.3 + 2.0 * 0.7);
}

TEST(Config, DefaultsParsingAndValidation) {
    EXPECT_EQ(with(Method::plain).effective_lambda(), 0.0);
    EXPECT_EQ(with(Method::prior).effective_lambda(), 1.0);
    EXPECT_EQ(with(Method::dc).effective_lambda(), 10.0);
    EXPECT_EQ(with(Method::dc_no_prior).effective_lambda(), 10.0);
    EXPECT_EQ(with(Method::dc, 3.0).effective_lambda(), 3.0);
    const CustomizeConfig d;
    EXPECT_EQ(d.steps, 500);
    EXPECT_EQ(d.learning_rate, 1e-4);
    EXPECT_EQ(d.batch_size, 1u);
    EXPECT_EQ(d.buffer_size, 200u);
    EXPECT_EQ(parse_method("dc-no-prior"), Method::dc_no_prior);
    EXPECT_EQ(parse_method("dc_no_prior"), Method::dc_no_prior);
    EXPECT_EQ(parse_scope("cond"), ParamScope::cond_subset);
    EXPECT_THROW(parse_method("bogus"), ConfigError);
    EXPECT_THROW(with(Method::dc, -1.0).validate(), ConfigError);
    EXPECT_EQ(trainable_groups(ParamScope::cond_subset), (GroupSet{ParamGroup::cond_embed, ParamGroup::cond_proj}));

    CustomizeConfig c = with(Method::prior, 0.25);
    c.steps = 17;
    c.seed = 9;
    const CustomizeConfig back = CustomizeConfig::from_json(c.to_json());
    EXPECT_EQ(back.to_json(), c.to_json());
    auto j = c.to_json();
    j["lambda"] = nullptr;
    EXPECT_EQ(CustomizeConfig::from_json(j).effective_lambda(), 1.0);
}

TEST(CustomizationLoss, HandEvaluatedOnePixelModel) {
    const DenoiserConfig c = one_pixel();
    const auto s = make_schedule(c.timesteps, 1e-4, 0.05);
    const double g = 0.3, b = 0.1, g0 = -0.2, b0 = 0.05;
    const DenoiserModel model = affine_model(c, g, b);
    const DenoiserModel base = affine_model(c, g0, b0);
    const FrozenBaseHandle frozen(base);
    const std::vector<TokenizedImage> shot{{Tensor({1}, 0.4), 4}};
    const std::vector<TokenizedImage> prior{{Tensor({1}, -0.6), 1}};

    for (Method m : {Method::plain, Method::prior, Method::dc, Method::dc_no_prior}) {
        const double lambda = 2.5;
        RngStream rng(42, 7), replay(42, 7);
        const StepNoise n = draw_step_noise(replay, 1, m == Method::plain ? 0 : 1, 1, s);
        const auto cfg = with(m, lambda);
        const LossTerms terms = customization_loss(model, frozen, shot, prior, cfg, s, rng);

        const double ab = s.alpha_bar(n.shot_t[0]);
        const double e = n.shot_eps[0];
        const double xt = std::sqrt(ab) * 0.4 + std::sqrt(1 - ab) * e;
        const double shot_term = std::pow(e - (b + g * xt), 2);
        EXPECT_NEAR(terms.shot, shot_term, 1e-12) << to_string(m);
        if (m == Method::plain) {
            EXPECT_NEAR(terms.total, shot_term, 1e-12);
            continue;
        }
        const double ab2 = s.alpha_bar(n.prior_t[0]);
        const double e2 = n.prior_eps[0];
        const double xt2 = std::sqrt(ab2) * -0.6 + std::sqrt(1 - ab2) * e2;
        const double prior_term = std::pow(e2 - (b + g * xt2), 2);
        const double distill_term = std::pow((b0 + g0 * xt2) - (b + g * xt2), 2);
        EXPECT_NEAR(terms.prior, prior_term, 1e-12);
        EXPECT_NEAR(terms.distill, distill_term, 1e-12);
        const double expected = m == Method::prior  ? shot_term + lambda * prior_term
                                : m == Method::dc   ? shot_term + prior_term + lambda * distill_term
                                                    : shot_term + lambda * distill_term;
        EXPECT_NEAR(terms.total, expected, 1e-12) << to_string(m);
    }
}

TEST(CustomizationLoss, DistillationVanishesAtInitialisation) {
    TinySetup t;
    const FrozenBaseHandle frozen(t.base);
    Gen g(6);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<TokenizedImage> shot{{g.tensor({t.cfg.image_dim()}), 4}};
        std::vector<TokenizedImage> prior{{g.tensor({t.cfg.image_dim()}), 1}, {g.tensor({t.cfg.image_dim()}), 1}};
        RngStream r1(trial, 2), r2(trial, 2), r3(trial, 2);
        const auto dc = customization_loss(t.base, frozen, shot, prior, with(Method::dc_no_prior), t.sched, r1);
        EXPECT_EQ(dc.distill, 0.0);
        EXPECT_EQ(dc.total, dc.shot);
        const auto off = customization_loss(t.base, frozen, shot, prior, with(Method::dc_no_prior, 0.0), t.sched, r2);
        const auto plain = customization_loss(t.base, frozen, shot, prior, with(Method::plain), t.sched, r3);
        EXPECT_EQ(off.total, plain.total);
    }
}

TEST(CustomizationLoss, EmptyPriorBatchRejectedForRegularisedMethods) {
    TinySetup t;
    const FrozenBaseHandle frozen(t.base);
    const std::vector<TokenizedImage> shot{{Tensor({t.cfg.image_dim()}), 4}};
    for (Method m : {Method::prior, Method::dc, Method::dc_no_prior}) {
        RngStream r(1, 2);
        EXPECT_THROW(customization_loss(t.base, frozen, shot, {}, with(m), t.sched, r), ConfigError);
    }
    RngStream r(1, 2);
    EXPECT_NO_THROW(customization_loss(t.base, frozen, shot, {}, with(Method::plain), t.sched, r));
}

TEST(PriorBuffer, EmptyReproducibleAndProvenanced) {
    TinySetup t;
    const auto empty = build_prior_buffer(t.base, t.sched, 1, 0, 0);
    EXPECT_EQ(empty.size(), 0u);
    const auto again = build_prior_buffer(t.base, t.sched, t.spec.superclass, 8, 100, 5);
    ASSERT_EQ(again.size(), 8u);
    for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(again.images[i], t.buffer.images[i]);
    EXPECT_EQ(again.base_hash, t.base.hash());
    EXPECT_EQ(again.cond_id, 1);
    EXPECT_EQ(again.seeds.front(), 100u);
    EXPECT_EQ(again.seeds.back(), 107u);
    EXPECT_EQ(again.manifest().at("base_hash"), t.base.hash());
    EXPECT_THROW(build_prior_buffer(t.base, t.sched, 99, 2, 0), TokenError);
}

TEST(RunCustomization, ZeroStepsIsIdentity) {
    TinySetup t;
    for (Method m : {Method::plain, Method::dc}) {
        const auto r = run_customization(t.base, t.sched, t.spec, t.shots, t.buffer, t.config(m, ParamScope::all, 0));
        EXPECT_EQ(r.model.hash(), t.base.hash());
        EXPECT_TRUE(r.log.empty());
    }
}

TEST(RunCustomization, CondSubsetFreezesTrunkAndTimeGroups) {
    TinySetup t;
    const std::string base_hash = t.base.hash();
    const GroupSet frozen{ParamGroup::trunk, ParamGroup::time_proj};
    for (Method m : {Method::plain, Method::prior, Method::dc, Method::dc_no_prior}) {
        const auto r = run_customization(t.base, t.sched, t.spec, t.shots, t.buffer, t.config(m, ParamScope::cond_subset, 30));
        EXPECT_EQ(r.model.params().hash(frozen), t.base.params().hash(frozen)) << to_string(m);
        EXPECT_NE(r.model.params().hash({ParamGroup::cond_proj}), t.base.params().hash({ParamGroup::cond_proj}));
        ASSERT_EQ(r.log.size(), 30u);
        EXPECT_EQ(r.log.back().step, 29);
        if (m == Method::plain) EXPECT_EQ(r.log.back().prior, 0.0);
    }
    EXPECT_EQ(t.base.hash(), base_hash);
    const auto all = run_customization(t.base, t.sched, t.spec, t.shots, t.buffer, t.config(Method::dc, ParamScope::all, 30));
    EXPECT_NE(all.model.params().hash({ParamGroup::trunk}), t.base.params().hash({ParamGroup::trunk}));
}

TEST(RunCustomization, ReproducibleAndSeedSensitive) {
    TinySetup t;
    auto cfg = t.config(Method::dc, ParamScope::all, 20);
    const auto a = run_customization(t.base, t.sched, t.spec, t.shots, t.buffer, cfg);
    const auto b = run_customization(t.base, t.sched, t.spec, t.shots, t.buffer, cfg);
    EXPECT_EQ(a.model.hash(), b.model.hash());
    EXPECT_EQ(training_log_csv(a.log), training_log_csv(b.log));
    cfg.seed = 1;
    EXPECT_NE(run_customization(t.base, t.sched, t.spec, t.shots, t.buffer, cfg).model.hash(), a.model.hash());
    EXPECT_EQ(training_log_csv(a.log).substr(0, 38), "step,shot_loss,prior_loss,distill_loss");
}

TEST(RunCustomization, RejectsInvalidInputs) {
    TinySetup t;
    EXPECT_THROW(run_customization(t.base, t.sched, t.spec, t.shots, PriorBuffer{}, t.config(Method::dc_no_prior, ParamScope::all, 5)),
                 ConfigError);
    ConceptSpec base_token = t.spec;
    base_token.rare_token = 2;
    EXPECT_THROW(run_customization(t.base, t.sched, base_token, t.shots, t.buffer, t.config(Method::dc, ParamScope::all, 5)),
                 TokenError);
    const DenoiserModel other = DenoiserModel::create(t.cfg, 99);
    const auto foreign = build_prior_buffer(other, t.sched, 1, 2, 0, 5);
    EXPECT_THROW(run_customization(t.base, t.sched, t.spec, t.shots, foreign, t.config(Method::dc, ParamScope::all, 5)),
                 ConfigError);
}

TEST(FrozenBase, DetectsMutation) {
    DenoiserModel m = DenoiserModel::create(testutil::tiny_denoiser(), 3);
    const FrozenBaseHandle h(m);
    EXPECT_NO_THROW(h.verify_unchanged());
    m.params().value("head.b")[0] += 1.0;
    EXPECT_THROW(h.verify_unchanged(), std::logic_error);
}

TEST(RunCustomization, ConceptFidelityRisesAboveBase) {
    // The rare token learns the shots' bright colour: samples move toward it.
    TinySetup t;
    auto mean_pixel = [&](const DenoiserModel& m) {
        double total = 0;
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const Tensor img = sample(m, {t.spec.rare_token, seed, SamplerKind::ddim, 10}, t.sched);
            for (double v : img.data()) total += v;
        }
        return total / (20.0 * static_cast<double>(t.cfg.image_dim()));
    };
    auto cfg = t.config(Method::plain, ParamScope::all, 300);
    const auto r = run_customization(t.base, t.sched, t.spec, t.shots, t.buffer, cfg);
    EXPECT_LT(std::abs(mean_pixel(r.model) - 0.8), std::abs(mean_pixel(t.base) - 0.8));
}
