#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "driftlab/gradcore/error.hpp"
#include "driftlab/metrics/drift.hpp"
#include "driftlab/metrics/transport.hpp"
#include "support.hpp"

using namespace dlab;
using testutil::Gen;

namespace {

Tensor flat(double r, double g, double b, std::size_t side = 4) {
    Tensor img({side, side, 3});
    for (std::size_t p = 0; p < side * side; ++p) {
        img[3 * p] = r;
        img[3 * p + 1] = g;
        img[3 * p + 2] = b;
    }
    return img;
}

HistogramGrid grid8() {
    HistogramGrid g;
    g.bins_x = g.bins_y = 8;
    return g;
}

ChromaticityHistogram random_hist(Gen& g, const HistogramGrid& grid) {
    return ChromaticityHistogram(grid, g.simplex(grid.bins(), 0.5));
}

std::vector<Chromaticity> pts(std::initializer_list<std::pair<double, double>> xs) {
    std::vector<Chromaticity> out;
    for (auto [x, y] : xs) out.push_back({x, y});
    return out;
}

FeatureMatrix rows(std::initializer_list<std::initializer_list<double>> rs) {
    FeatureMatrix m(static_cast<Eigen::Index>(rs.size()), static_cast<Eigen::Index>(rs.begin()->size()));
    Eigen::Index r = 0;
    for (const auto& row : rs) {
        Eigen::Index c = 0;
        for (double v : row) m(r, c++) = v;
        ++r;
    }
    return m;
}

FeatureMatrix random_features(Gen& g, Eigen::Index n, Eigen::Index d, double shift = 0.0) {
    FeatureMatrix m(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) m(i, j) = g.normal() + shift;
    return m;
}

}  // namespace

TEST(Color, ReferenceChromaticities) {
    const auto white = rgb_to_xy(flat(1, 1, 1, 1));
    ASSERT_EQ(white.points.size(), 1u);
    EXPECT_NEAR(white.points[0].x, 0.31273, 1e-3);
    EXPECT_NEAR(white.points[0].y, 0.32902, 1e-3);
    const auto red = rgb_to_xy(flat(1, 0, 0, 1));
    EXPECT_NEAR(red.points[0].x, 0.64, 1e-3);
    EXPECT_NEAR(red.points[0].y, 0.33, 1e-3);
    const auto blue = rgb_to_xy(flat(0, 0, 1, 1));
    EXPECT_NEAR(blue.points[0].x, 0.15, 1e-3);
    EXPECT_NEAR(blue.points[0].y, 0.06, 1e-3);
    const auto black = rgb_to_xy(flat(0, 0, 0, 2));
    EXPECT_TRUE(black.points.empty());
    EXPECT_EQ(black.dropped, 4u);
    EXPECT_NEAR(srgb_to_linear(0.5), 0.21404114048223255, 1e-12);
}

TEST(Histogram, PointMassHalvesAndIdempotence) {
    const std::vector<Tensor> red{flat(1, 0, 0)};
    const auto h = chroma_histogram(red);
    EXPECT_EQ(std::count_if(h.masses().begin(), h.masses().end(), [](double m) { return m > 0; }), 1);
    EXPECT_DOUBLE_EQ(*std::max_element(h.masses().begin(), h.masses().end()), 1.0);

    const std::vector<Tensor> mixed{flat(1, 0, 0), flat(0, 0, 1)};
    const auto hm = chroma_histogram(mixed);
    std::vector<double> nz;
    for (double m : hm.masses())
        if (m > 0) nz.push_back(m);
    ASSERT_EQ(nz.size(), 2u);
    EXPECT_NEAR(nz[0], 0.5, 1e-12);
    EXPECT_NEAR(nz[1], 0.5, 1e-12);

    Gen g(1);
    std::vector<Tensor> set;
    for (int i = 0; i < 5; ++i) {
        Tensor t({4, 4, 3});
        for (auto& v : t.data()) v = g.uniform();
        set.push_back(t);
    }
    std::vector<Tensor> doubled = set;
    doubled.insert(doubled.end(), set.begin(), set.end());
    const auto a = chroma_histogram(set), b = chroma_histogram(doubled);
    for (std::size_t i = 0; i < a.masses().size(); ++i) EXPECT_NEAR(a.masses()[i], b.masses()[i], 1e-15);
}

TEST(Histogram, MassIsConservedForRandomImages) {
    Gen g(2);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<Tensor> set;
        const int n = g.integer(1, 4);
        for (int i = 0; i < n; ++i) {
            Tensor t({5, 5, 3});
            for (auto& v : t.data()) v = g.uniform() < 0.2 ? 0.0 : g.uniform();
            set.push_back(t);
        }
        HistogramGrid grid;
        grid.bins_x = static_cast<std::size_t>(g.integer(2, 40));
        grid.bins_y = static_cast<std::size_t>(g.integer(2, 40));
        const auto h = chroma_histogram(set, grid);
        const double total = std::accumulate(h.masses().begin(), h.masses().end(), 0.0);
        EXPECT_NEAR(total, 1.0, 1e-12);
        for (double m : h.masses()) EXPECT_GE(m, 0.0);
        EXPECT_EQ(h.centers().size(), grid.bins());
    }
}

TEST(Histogram, ClampingDroppingAndDegenerateInput) {
    HistogramGrid narrow;
    narrow.x_max = 0.5;
    const std::vector<Tensor> red{flat(1, 0, 0)};
    const auto h = chroma_histogram(red, narrow);
    EXPECT_EQ(h.clamped(), 16u);
    EXPECT_NEAR(std::accumulate(h.masses().begin(), h.masses().end(), 0.0), 1.0, 1e-12);

    Tensor half = flat(0, 0, 0);
    for (std::size_t p = 0; p < 8; ++p) half[3 * p] = 1.0;
    const std::vector<Tensor> partly_black{half};
    EXPECT_EQ(chroma_histogram(partly_black).dropped(), 8u);

    const std::vector<Tensor> black{flat(0, 0, 0)};
    EXPECT_THROW(chroma_histogram(black), DegenerateInputError);
    const std::string csv = chroma_histogram(red, grid8()).to_csv();
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 8);
}

TEST(Transport, LinearProgramOracles) {
    struct Case {
        std::vector<double> a, b;
        std::vector<Chromaticity> pa, pb;
        double cost;
    };
    const std::vector<Case> cases{
        {{.1, .2, .3, .4},
         {.25, .25, .2, .2, .1},
         pts({{.1, .1}, {.5, .2}, {.3, .7}, {.6, .6}}),
         pts({{.2, .3}, {.7, .1}, {.4, .4}, {.1, .6}, {.5, .5}}),
         0.27424023081778476},
        {{.5, .5}, {.3, .3, .4}, pts({{0, 0}, {1, 0}}), pts({{0, 1}, {.5, .5}, {1, 1}}), 0.9121320343559642},
        {{.05, .15, .3, .2, .3},
         {.4, .1, .1, .4},
         pts({{.31, .33}, {.64, .33}, {.15, .06}, {.3, .6}, {.45, .4}}),
         pts({{.32, .34}, {.5, .35}, {.2, .2}, {.35, .5}}),
         0.17619925124819108},
    };
    for (const auto& c : cases) {
        const auto cost = euclidean_cost(c.pa, c.pb);
        const auto plan = transport_exact(c.a, c.b, cost);
        EXPECT_NEAR(plan.cost, c.cost, 1e-12);
        const auto sm = plan.source_marginal(c.a.size()), tm = plan.target_marginal(c.b.size());
        for (std::size_t i = 0; i < c.a.size(); ++i) EXPECT_NEAR(sm[i], c.a[i], 1e-12);
        for (std::size_t j = 0; j < c.b.size(); ++j) EXPECT_NEAR(tm[j], c.b[j], 1e-12);
        const auto sk = transport_sinkhorn(c.a, c.b, cost);
        EXPECT_GE(sk.cost, c.cost - 1e-9);
        EXPECT_LT((sk.cost - c.cost) / c.cost, 0.02);
    }
}

TEST(Transport, ClosedFormInstances) {
    HistogramGrid line;
    line.bins_x = 3;
    line.bins_y = 1;
    line.x_max = 0.6;
    const ChromaticityHistogram a(line, {0.5, 0.5, 0.0}), b(line, {0.0, 0.5, 0.5});
    EXPECT_NEAR(emd_exact(a, b).cost, 0.2, 1e-12);

    const auto g = grid8();
    std::vector<double> pa(g.bins(), 0.0), pb(g.bins(), 0.0);
    pa[3] = 1.0;
    pb[5 * 8 + 1] = 1.0;
    const Chromaticity ca = g.center(3), cb = g.center(41);
    EXPECT_NEAR(emd_exact({g, pa}, {g, pb}).cost, std::hypot(ca.x - cb.x, ca.y - cb.y), 1e-12);
    EXPECT_THROW(emd_exact({g, pa}, {line, {1, 0, 0}}), ConfigError);
}

TEST(Transport, ExactSolverIsAMetricOnRandomTriples) {
    Gen gen(3);
    const auto g = grid8();
    for (int trial = 0; trial < 200; ++trial) {
        const auto a = random_hist(gen, g), b = random_hist(gen, g), c = random_hist(gen, g);
        const double ab = emd_exact(a, b).cost, ba = emd_exact(b, a).cost;
        const double bc = emd_exact(b, c).cost, ac = emd_exact(a, c).cost;
        EXPECT_LT(emd_exact(a, a).cost, 1e-10);
        EXPECT_LT(std::abs(ab - ba), 1e-10);
        EXPECT_LE(ac, ab + bc + 1e-8);
        EXPECT_GE(ab, 0.0);
    }
}

TEST(Transport, SinkhornTracksExactFromAbove) {
    Gen gen(4);
    const auto g = grid8();
    for (int trial = 0; trial < 25; ++trial) {
        const auto a = random_hist(gen, g), b = random_hist(gen, g);
        const double exact = emd_exact(a, b).cost;
        const auto sk = sinkhorn(a, b);
        EXPECT_GE(sk.cost, exact - 1e-9);
        EXPECT_LT(std::abs(sk.cost - exact) / exact, 0.02);
        EXPECT_LT(std::abs(sk.cost - sinkhorn(b, a).cost), 1e-8);
        EXPECT_EQ(sk.solver, TransportSolver::sinkhorn);
        EXPECT_NEAR(sk.epsilon, 1e-3, 1e-15);
        const auto tm = sk.target_marginal(g.bins());
        for (std::size_t j = 0; j < g.bins(); ++j) EXPECT_NEAR(tm[j], b.masses()[j], 1e-9);
    }
    const auto a = random_hist(gen, g);
    EXPECT_LT(sinkhorn(a, a).cost, 1e-6);
}

TEST(Transport, SinkhornNewtonFinishMatchesScaling) {
    Gen gen(6);
    const auto g = grid8();
    SinkhornOptions early;
    early.newton_after = 10;
    for (int trial = 0; trial < 5; ++trial) {
        const auto a = random_hist(gen, g), b = random_hist(gen, g);
        const auto sk = sinkhorn(a, b), nt = sinkhorn(a, b, early);
        EXPECT_LT(nt.marginal_error, 1e-9);
        EXPECT_NEAR(nt.cost, sk.cost, 1e-8);
        EXPECT_LT(nt.iterations, sk.iterations);
    }
}

TEST(Transport, SinkhornReportsNonConvergence) {
    Gen gen(5);
    const auto g = grid8();
    const auto a = random_hist(gen, g), b = random_hist(gen, g);
    SinkhornOptions opts;
    opts.max_iter = 1;
    opts.level_iter = 1;
    opts.tol = 1e-15;
    try {
        sinkhorn(a, b, opts);
        FAIL() << "expected ConvergenceError";
    } catch (const ConvergenceError& e) {
        EXPECT_GT(e.last_error(), 0.0);
    }
}

TEST(Cdi, IdentityAndRedBlueDistance) {
    const std::vector<Tensor> red{flat(1, 0, 0), flat(1, 0, 0)}, blue{flat(0, 0, 1)};
    EXPECT_EQ(cdi(red, red), 0.0);
    const CdiConfig cfg;
    EXPECT_NEAR(cdi(red, blue), 0.5594639880585908, cfg.grid.bin_width());
    CdiConfig fine;
    fine.grid.bins_x = fine.grid.bins_y = 128;
    EXPECT_NEAR(cdi(red, blue, fine), 0.5594639880585908, fine.grid.bin_width());
    const std::vector<Tensor> black{flat(0, 0, 0)};
    EXPECT_THROW(cdi(red, black), DegenerateInputError);
}

TEST(Kid, ClosedFormAndIdentity) {
    const FeatureMatrix u = rows({{1, 0}, {1, 0}}), v = rows({{0, 2}, {0, 2}});
    EXPECT_NEAR(kid(u, v), 3.375 + 27.0 - 2.0, 1e-12);
    Gen g(6);
    const FeatureMatrix a = random_features(g, 30, 5);
    EXPECT_LT(std::abs(kid(a, a)), 1e-6);
    EXPECT_THROW(kid(rows({{1, 2}}), a), ConfigError);
    EXPECT_THROW(kid(random_features(g, 4, 3), a), ConfigError);
    EXPECT_NEAR(polynomial_kernel(Eigen::Vector2d(1, 0), Eigen::Vector2d(0, 2)), 1.0, 1e-15);
}

TEST(Kid, InvariantUnderSharedRotation) {
    Gen g(7);
    for (int trial = 0; trial < 20; ++trial) {
        const FeatureMatrix a = random_features(g, 12, 4), b = random_features(g, 15, 4, 0.5);
        Eigen::MatrixXd m = Eigen::MatrixXd::NullaryExpr(4, 4, [&] { return g.normal(); });
        const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(m).householderQ();
        const FeatureMatrix ra = a * q, rb = b * q;
        EXPECT_NEAR(kid(a, b), kid(ra, rb), 1e-10);
    }
}

TEST(Fid, IdentityShiftAndDiagonalClosedForm) {
    Gen g(8);
    const FeatureMatrix a = random_features(g, 40, 3);
    EXPECT_LT(std::abs(fid(a, a)), 1e-6);
    FeatureMatrix shifted = a;
    shifted.rowwise() += Eigen::RowVector3d(0.3, -0.4, 1.2);
    EXPECT_NEAR(fid(a, shifted), 0.09 + 0.16 + 1.44, 1e-6);

    // Axis-symmetric point sets have exactly diagonal sample covariance.
    for (int trial = 0; trial < 50; ++trial) {
        auto make = [&](double mx, double my, double sx, double sy) {
            return rows({{mx + sx, my}, {mx - sx, my}, {mx, my + sy}, {mx, my - sy}});
        };
        const double m1x = g.normal(), m1y = g.normal(), m2x = g.normal(), m2y = g.normal();
        const double s1x = g.uniform(0.1, 2), s1y = g.uniform(0.1, 2), s2x = g.uniform(0.1, 2), s2y = g.uniform(0.1, 2);
        const FeatureMatrix p = make(m1x, m1y, s1x, s1y), q = make(m2x, m2y, s2x, s2y);
        auto var = [](double s) { return 2 * s * s / 3.0 + kFidRegularizer; };
        const double expected = std::pow(m1x - m2x, 2) + std::pow(m1y - m2y, 2) +
                                std::pow(std::sqrt(var(s1x)) - std::sqrt(var(s2x)), 2) +
                                std::pow(std::sqrt(var(s1y)) - std::sqrt(var(s2y)), 2);
        EXPECT_NEAR(fid(p, q), expected, 1e-8);
    }
}

TEST(Similarity, CosineEdgeCases) {
    const std::vector<double> a{0.3, -1.7, 2.2}, z{0, 0, 0}, o{1.7, 0.3, 0.0};
    EXPECT_EQ(cosine_similarity(a, a), 1.0);
    EXPECT_EQ(cosine_similarity(a, z), 0.0);
    EXPECT_NEAR(cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{0, 1}), 0.0, 1e-15);
    const std::vector<double> neg{-0.3, 1.7, -2.2};
    EXPECT_EQ(cosine_similarity(a, neg), -1.0);
    Gen g(9);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> x(6), y(6);
        for (auto& v : x) v = g.normal(1e3);
        for (auto& v : y) v = g.normal(1e-3);
        const double c = cosine_similarity(x, y);
        EXPECT_LE(c, 1.0);
        EXPECT_GE(c, -1.0);
    }
}

TEST(Similarity, DistributionSummaries) {
    SimilarityDistribution d;
    d.values = {0.4, 0.1, 0.9, 0.6};
    EXPECT_NEAR(d.mean(), 0.5, 1e-15);
    EXPECT_NEAR(d.median(), 0.5, 1e-15);
    EXPECT_NEAR(d.quantile(0.0), 0.1, 1e-15);
    EXPECT_NEAR(d.quantile(1.0), 0.9, 1e-15);
    EXPECT_NEAR(d.quantile(1.0 / 3.0), 0.4, 1e-12);
    EXPECT_EQ(d.histogram(4, 0.0), (std::vector<std::size_t>{1, 1, 1, 1}));
    EXPECT_EQ(d.summary().at("median"), 0.5);
    SimilarityDistribution empty;
    EXPECT_THROW(empty.median(), DegenerateInputError);
}

TEST(Similarity, EmbeddingLevelHelpers) {
    const FeatureMatrix a = rows({{1, 0}, {0, 1}, {1, 1}});
    const auto same = similarity_from_embeddings(a, a);
    for (double v : same.values) EXPECT_EQ(v, 1.0);
    EXPECT_NEAR(diversity_from_embeddings(rows({{1, 0}, {0, 1}})), 1.0, 1e-15);
    EXPECT_EQ(diversity_from_embeddings(rows({{2, 3}, {2, 3}, {2, 3}})), 0.0);
    EXPECT_THROW(diversity_from_embeddings(rows({{1, 0}})), ConfigError);
    const double c = 1.0 / std::sqrt(2.0);
    EXPECT_NEAR(mean_cross_similarity(rows({{1, 0}, {0, 1}}), rows({{1, 1}})), c, 1e-15);
    EXPECT_THROW(similarity_from_embeddings(a, rows({{1, 0}})), ConfigError);

    const std::vector<int> conds{3, 5};
    const std::vector<std::uint64_t> seeds{7, 8, 9};
    const auto reqs = make_requests(conds, seeds, SamplerConfig{SamplerKind::ddim, 12});
    ASSERT_EQ(reqs.size(), 6u);
    EXPECT_EQ(reqs[2].cond_id, 3);
    EXPECT_EQ(reqs[2].seed, 9u);
    EXPECT_EQ(reqs[3].cond_id, 5);
    EXPECT_EQ(reqs[3].steps, 12);
}

namespace {

FeatureEmbedder tiny_embedder() {
    EmbedderConfig ec;
    ec.input_dim = 48;
    ec.hidden = 24;
    ec.embed_dim = 8;
    ec.classes = 4;
    ec.steps = 200;
    ec.target_accuracy = 0.0;
    FeatureEmbedder e = FeatureEmbedder::create(ec);
    Gen g(10);
    std::vector<LabeledImage> data;
    for (int label = 0; label < 4; ++label)
        for (int i = 0; i < 10; ++i) {
            Tensor img({4, 4, 3});
            for (auto& v : img.data()) v = std::clamp(0.25 * label + g.normal(0.05), 0.0, 1.0);
            data.push_back({img, label, 0});
        }
    e.fit(data, data);
    return e;
}

}  // namespace

TEST(Embedder, FrozenDeterministicAndPersistent) {
    const FeatureEmbedder e = tiny_embedder();
    EXPECT_TRUE(e.frozen());
    EXPECT_FALSE(e.manifest_hash().empty());
    const std::vector<Tensor> imgs{flat(0.2, 0.5, 0.9), flat(0.7, 0.1, 0.3)};
    const FeatureMatrix f = e.embed(imgs);
    EXPECT_EQ(f.rows(), 2);
    EXPECT_EQ(f.cols(), 8);
    EXPECT_EQ(f, e.embed(imgs));
    const auto dir = testutil::temp_dir("embedder");
    e.save(dir / "e.dlab");
    const FeatureEmbedder back = FeatureEmbedder::load(dir / "e.dlab");
    EXPECT_EQ(back.embed(imgs), f);
    EXPECT_EQ(back.manifest_hash(), e.manifest_hash());
    FeatureEmbedder copy = e;
    EXPECT_THROW(copy.fit({}, {}), ConfigError);
    const std::vector<Tensor> wrong{flat(0, 0, 0, 5)};
    EXPECT_THROW(e.embed(wrong), ConfigError);
}

TEST(Embedder, UnreachableTargetRaisesConvergenceError) {
    EmbedderConfig ec;
    ec.input_dim = 48;
    ec.hidden = 8;
    ec.embed_dim = 4;
    ec.classes = 2;
    ec.steps = 5;
    ec.target_accuracy = 1.01;
    FeatureEmbedder e = FeatureEmbedder::create(ec);
    const std::vector<LabeledImage> data{{flat(0.1, 0.1, 0.1), 0, 0}, {flat(0.9, 0.9, 0.9), 1, 0}};
    EXPECT_THROW(e.fit(data, data), ConvergenceError);
}

TEST(Similarity, ModelCopyIsIdenticalAndPerturbationDegradesMonotonically) {
    const FeatureEmbedder e = tiny_embedder();
    const auto c = testutil::tiny_denoiser();
    const auto s = make_schedule(c.timesteps, 1e-4, 0.02);
    const auto base = DenoiserModel::create(c, 41);
    const DenoiserModel copy(base.config(), base.params());
    const std::vector<int> conds{0, 1, 2, 3};
    std::vector<std::uint64_t> seeds(10);
    std::iota(seeds.begin(), seeds.end(), 0);
    const SamplerConfig sc{SamplerKind::ddim, 10};
    const auto same = similarity_distribution(base, copy, s, conds, seeds, e, sc);
    ASSERT_EQ(same.values.size(), 40u);
    for (double v : same.values) EXPECT_EQ(v, 1.0);

    auto perturbed = [&](double sigma) {
        DenoiserModel m = base;
        Gen g(11);
        for (auto& p : m.params())
            if (p.group == ParamGroup::trunk)
                for (auto& v : p.value.data()) v += sigma * g.normal();
        return m;
    };
    const double mild = similarity_distribution(base, perturbed(0.1), s, conds, seeds, e, sc).mean();
    const double strong = similarity_distribution(base, perturbed(0.5), s, conds, seeds, e, sc).mean();
    EXPECT_LT(mild, 1.0);
    EXPECT_GT(mild, strong);

    EXPECT_GE(diversity_score(base, s, 1, 6, e, sc), 0.0);
    EXPECT_EQ(diversity_score(base, s, 1, 6, e, sc), diversity_score(copy, s, 1, 6, e, sc));
}
