#include "driftlab/metrics/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Dense>

#include "driftlab/gradcore/error.hpp"

namespace dlab {

std::string_view to_string(TransportSolver s) noexcept {
    return s == TransportSolver::exact_flow ? "exact-flow" : "sinkhorn";
}

std::vector<double> TransportPlan::source_marginal(std::size_t n) const {
    std::vector<double> m(n, 0.0);
    for (const auto& f : flows) m.at(f.from) += f.mass;
    return m;
}

std::vector<double> TransportPlan::target_marginal(std::size_t n) const {
    std::vector<double> m(n, 0.0);
    for (const auto& f : flows) m.at(f.to) += f.mass;
    return m;
}

std::vector<double> euclidean_cost(std::span<const Chromaticity> a, std::span<const Chromaticity> b) {
    std::vector<double> c(a.size() * b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j) c[i * b.size() + j] = std::hypot(a[i].x - b[j].x, a[i].y - b[j].y);
    return c;
}

namespace {

void check_inputs(std::span<const double> a, std::span<const double> b, std::span<const double> cost) {
    if (a.empty() || b.empty()) throw ConfigError("transport: empty marginals");
    if (cost.size() != a.size() * b.size()) throw ConfigError("transport: cost matrix size mismatch");
    for (double v : a)
        if (!(v >= 0.0)) throw ConfigError("transport: negative or NaN mass");
    for (double v : b)
        if (!(v >= 0.0)) throw ConfigError("transport: negative or NaN mass");
    for (double v : cost)
        if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("transport: costs must be finite and non-negative");
}

std::vector<std::size_t> support(std::span<const double> m) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < m.size(); ++i)
        if (m[i] > 0.0) idx.push_back(i);
    return idx;
}

}  // namespace

TransportPlan transport_exact(std::span<const double> a, std::span<const double> b, std::span<const double> cost) {
    check_inputs(a, b, cost);
    const auto si = support(a), sj = support(b);
    if (si.empty() || sj.empty()) throw DegenerateInputError("transport: a marginal has no mass");
    const std::size_t n = si.size(), m = sj.size(), mfull = b.size();
    constexpr double inf = std::numeric_limits<double>::infinity();

    std::vector<double> c(n * m), flow(n * m, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) c[i * m + j] = cost[si[i] * mfull + sj[j]];
    std::vector<double> supply(n), demand(m);
    for (std::size_t i = 0; i < n; ++i) supply[i] = a[si[i]];
    for (std::size_t j = 0; j < m; ++j) demand[j] = b[sj[j]];
    const double total = std::max(std::accumulate(supply.begin(), supply.end(), 0.0),
                                  std::accumulate(demand.begin(), demand.end(), 0.0));
    const double tol = 1e-14 * total;

    // Reduced cost of arc u->v is c(u,v) + pot(u) - pot(v) >= 0.
    std::vector<double> pot_s(n, 0.0), pot_t(m, 0.0);
    std::vector<double> dist_s(n), dist_t(m);
    std::vector<char> done_s(n), done_t(m);
    std::vector<std::ptrdiff_t> pred_t(m), pred_s(n);

    for (;;) {
        bool any_supply = false;
        for (std::size_t i = 0; i < n; ++i) {
            dist_s[i] = supply[i] > tol ? 0.0 : inf;
            any_supply = any_supply || supply[i] > tol;
            pred_s[i] = -1;
            done_s[i] = 0;
        }
        if (!any_supply) break;
        std::fill(dist_t.begin(), dist_t.end(), inf);
        std::fill(done_t.begin(), done_t.end(), 0);
        std::fill(pred_t.begin(), pred_t.end(), -1);

        std::ptrdiff_t target = -1;
        double reach = inf;
        for (;;) {
            double best = inf;
            std::ptrdiff_t bi = -1;
            bool is_sink = false;
            for (std::size_t i = 0; i < n; ++i)
                if (!done_s[i] && dist_s[i] < best) best = dist_s[i], bi = static_cast<std::ptrdiff_t>(i), is_sink = false;
            for (std::size_t j = 0; j < m; ++j)
                if (!done_t[j] && dist_t[j] < best) best = dist_t[j], bi = static_cast<std::ptrdiff_t>(j), is_sink = true;
            if (bi < 0) break;
            const auto u = static_cast<std::size_t>(bi);
            if (is_sink) {
                done_t[u] = 1;
                if (demand[u] > tol) {
                    target = bi;
                    reach = best;
                    break;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    if (done_s[i] || flow[i * m + u] <= 0.0) continue;
                    const double rc = std::max(0.0, -c[i * m + u] + pot_t[u] - pot_s[i]);
                    if (best + rc < dist_s[i]) {
                        dist_s[i] = best + rc;
                        pred_s[i] = bi;
                    }
                }
            } else {
                done_s[u] = 1;
                for (std::size_t j = 0; j < m; ++j) {
                    if (done_t[j]) continue;
                    const double rc = std::max(0.0, c[u * m + j] + pot_s[u] - pot_t[j]);
                    if (best + rc < dist_t[j]) {
                        dist_t[j] = best + rc;
                        pred_t[j] = bi;
                    }
                }
            }
        }
        if (target < 0) break;  // remaining supply is rounding residue

        for (std::size_t i = 0; i < n; ++i) pot_s[i] += std::min(dist_s[i], reach);
        for (std::size_t j = 0; j < m; ++j) pot_t[j] += std::min(dist_t[j], reach);

        // Bottleneck along sink <- source <- sink <- ... <- root source.
        auto j = static_cast<std::size_t>(target);
        double delta = demand[j];
        for (;;) {
            const auto i = static_cast<std::size_t>(pred_t[j]);
            if (pred_s[i] < 0) {
                delta = std::min(delta, supply[i]);
                break;
            }
            const auto jp = static_cast<std::size_t>(pred_s[i]);
            delta = std::min(delta, flow[i * m + jp]);
            j = jp;
        }
        j = static_cast<std::size_t>(target);
        demand[j] -= delta;
        for (;;) {
            const auto i = static_cast<std::size_t>(pred_t[j]);
            flow[i * m + j] += delta;
            if (pred_s[i] < 0) {
                supply[i] -= delta;
                break;
            }
            const auto jp = static_cast<std::size_t>(pred_s[i]);
            flow[i * m + jp] -= delta;
            j = jp;
        }
    }

    TransportPlan plan;
    plan.solver = TransportSolver::exact_flow;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j)
            if (flow[i * m + j] > 0.0) {
                plan.flows.push_back({si[i], sj[j], flow[i * m + j]});
                plan.cost += flow[i * m + j] * c[i * m + j];
            }
    return plan;
}

namespace {

double log_sum_exp(std::span<const double> v) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double x : v) mx = std::max(mx, x);
    if (!std::isfinite(mx)) return mx;
    double s = 0.0;
    for (double x : v) s += std::exp(x - mx);
    return mx + std::log(s);
}

}  // namespace

TransportPlan transport_sinkhorn(std::span<const double> a_full, std::span<const double> b_full,
                                 std::span<const double> cost, const SinkhornOptions& opts) {
    check_inputs(a_full, b_full, cost);
    if (!(opts.epsilon > 0.0)) throw ConfigError("sinkhorn: epsilon must be positive");
    if (!(opts.anneal_factor > 0.0 && opts.anneal_factor < 1.0)) throw ConfigError("sinkhorn: anneal factor in (0,1)");
    if (!(opts.relaxation >= 1.0 && opts.relaxation < 2.0)) throw ConfigError("sinkhorn: relaxation in [1,2)");
    const auto si = support(a_full), sj = support(b_full);
    if (si.empty() || sj.empty()) throw DegenerateInputError("transport: a marginal has no mass");
    const std::size_t n = si.size(), m = sj.size(), mfull = b_full.size();

    std::vector<double> a(n), b(m), c(n * m);
    const double sa = std::accumulate(a_full.begin(), a_full.end(), 0.0);
    const double sb = std::accumulate(b_full.begin(), b_full.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) a[i] = a_full[si[i]] / sa;
    for (std::size_t j = 0; j < m; ++j) b[j] = b_full[sj[j]] / sb;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) c[i * m + j] = cost[si[i] * mfull + sj[j]];

    std::vector<double> f(n, 0.0), g(m, 0.0), buf(std::max(n, m));
    double eps = std::max(opts.epsilon, opts.epsilon_start);
    int total_iter = 0;
    double err = std::numeric_limits<double>::infinity();

    auto row_error = [&](double e) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double r = 0.0;
            for (std::size_t j = 0; j < m; ++j) r += std::exp((f[i] + g[j] - c[i * m + j]) / e);
            total += std::abs(r - a[i]);
        }
        return total;
    };
    auto update_g = [&](double e) {
        for (std::size_t j = 0; j < m; ++j) {
            for (std::size_t i = 0; i < n; ++i) buf[i] = (f[i] - c[i * m + j]) / e;
            g[j] = e * std::log(b[j]) - e * log_sum_exp(std::span(buf).first(n));
        }
    };
    auto iterate = [&](double e, double w) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < m; ++j) buf[j] = (g[j] - c[i * m + j]) / e;
            f[i] = (1.0 - w) * f[i] + w * (e * std::log(a[i]) - e * log_sum_exp(std::span(buf).first(m)));
        }
        update_g(e);
    };

    auto dual = [&](const std::vector<double>& fv, const std::vector<double>& gv, double e) {
        double lin = 0.0, mass = 0.0;
        for (std::size_t i = 0; i < n; ++i) lin += a[i] * fv[i];
        for (std::size_t j = 0; j < m; ++j) lin += b[j] * gv[j];
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) mass += std::exp((fv[i] + gv[j] - c[i * m + j]) / e);
        return lin - e * mass;
    };
    // Newton ascent on the dual with Levenberg damping; the last column potential is pinned.
    auto newton = [&](double e, int steps) {
        const Eigen::Index dim = static_cast<Eigen::Index>(n + m - 1);
        Eigen::MatrixXd h = Eigen::MatrixXd::Zero(dim, dim);
        Eigen::VectorXd grad(dim);
        std::vector<double> r(n), col(m), f1(n), g1(m);
        double damping = 1e-14;
        for (int step = 0; step < steps && err >= opts.tol; ++step) {
            h.setZero();
            std::fill(r.begin(), r.end(), 0.0);
            std::fill(col.begin(), col.end(), 0.0);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) {
                    const double pij = std::exp((f[i] + g[j] - c[i * m + j]) / e);
                    r[i] += pij;
                    col[j] += pij;
                    if (j + 1 < m) {
                        h(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(n + j)) = pij;
                        h(static_cast<Eigen::Index>(n + j), static_cast<Eigen::Index>(i)) = pij;
                    }
                }
            for (std::size_t i = 0; i < n; ++i) {
                h(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = r[i];
                grad(static_cast<Eigen::Index>(i)) = a[i] - r[i];
            }
            for (std::size_t j = 0; j + 1 < m; ++j) {
                h(static_cast<Eigen::Index>(n + j), static_cast<Eigen::Index>(n + j)) = col[j];
                grad(static_cast<Eigen::Index>(n + j)) = b[j] - col[j];
            }
            const double scale = *std::max_element(r.begin(), r.end());
            const double d0 = dual(f, g, e);
            bool moved = false;
            for (; damping <= 1.0 && !moved; damping *= 100.0) {
                Eigen::MatrixXd hd = h;
                hd.diagonal().array() += damping * scale;
                const Eigen::VectorXd dir = e * hd.ldlt().solve(grad);
                if (!dir.allFinite()) continue;
                const double slope = grad.dot(dir);
                for (double t = 1.0; t > 1e-3 && !moved; t *= 0.5) {
                    for (std::size_t i = 0; i < n; ++i) f1[i] = f[i] + t * dir(static_cast<Eigen::Index>(i));
                    for (std::size_t j = 0; j < m; ++j)
                        g1[j] = g[j] + (j + 1 < m ? t * dir(static_cast<Eigen::Index>(n + j)) : 0.0);
                    moved = dual(f1, g1, e) >= d0 + 1e-4 * t * slope - 1e-15 * std::abs(d0);
                }
                if (moved) break;
            }
            if (!moved) return;
            damping = std::max(1e-14, damping * 0.01);
            f.swap(f1);
            g.swap(g1);
            update_g(e);
            ++total_iter;
            err = row_error(e);
        }
    };
    auto scale_until = [&](double e, int cap, double target) {
        for (int it = 0; it < cap; ++it) {
            iterate(e, opts.relaxation);
            ++total_iter;
            if (it % 10 == 9 || it == cap - 1) {
                err = row_error(e);
                if (err < target) return;
            }
        }
    };

    const bool newton_eligible = n + m <= static_cast<std::size_t>(std::max(0, opts.newton_max_support));
    for (;;) {
        if (eps > opts.epsilon) {
            scale_until(eps, opts.level_iter, std::max(opts.tol, 1e-6));
            eps = std::max(opts.epsilon, eps * opts.anneal_factor);
            continue;
        }
        if (!newton_eligible || opts.newton_after >= opts.max_iter) {
            scale_until(eps, opts.max_iter, opts.tol);
            break;
        }
        scale_until(eps, opts.newton_after, opts.tol);
        if (err >= opts.tol) newton(eps, 50);
        if (err >= opts.tol) scale_until(eps, opts.max_iter - opts.newton_after, opts.tol);
        break;
    }
    if (!(err < opts.tol))
        throw ConvergenceError("sinkhorn did not reach marginal tolerance", err);

    // Round onto the exact marginals (Altschuler, Weed & Rigollet).
    std::vector<double> p(n * m);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) p[i * m + j] = std::exp((f[i] + g[j] - c[i * m + j]) / eps);
    for (std::size_t i = 0; i < n; ++i) {
        double r = 0.0;
        for (std::size_t j = 0; j < m; ++j) r += p[i * m + j];
        const double s = r > a[i] ? a[i] / r : 1.0;
        for (std::size_t j = 0; j < m; ++j) p[i * m + j] *= s;
    }
    for (std::size_t j = 0; j < m; ++j) {
        double col = 0.0;
        for (std::size_t i = 0; i < n; ++i) col += p[i * m + j];
        const double s = col > b[j] ? b[j] / col : 1.0;
        for (std::size_t i = 0; i < n; ++i) p[i * m + j] *= s;
    }
    std::vector<double> er(n), ec(m);
    double er_total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double r = 0.0;
        for (std::size_t j = 0; j < m; ++j) r += p[i * m + j];
        er[i] = std::max(0.0, a[i] - r);
        er_total += er[i];
    }
    for (std::size_t j = 0; j < m; ++j) {
        double col = 0.0;
        for (std::size_t i = 0; i < n; ++i) col += p[i * m + j];
        ec[j] = std::max(0.0, b[j] - col);
    }
    if (er_total > 0.0)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) p[i * m + j] += er[i] * ec[j] / er_total;

    TransportPlan plan;
    plan.solver = TransportSolver::sinkhorn;
    plan.epsilon = eps;
    plan.iterations = total_iter;
    plan.marginal_error = err;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j)
            if (p[i * m + j] > 0.0) {
                plan.flows.push_back({si[i], sj[j], p[i * m + j]});
                plan.cost += p[i * m + j] * c[i * m + j];
            }
    return plan;
}

namespace {

struct Pruned {
    std::vector<double> a, b, cost;
    std::vector<std::size_t> ia, ib;
};

/// Restricts the dense problem to bins with mass so the cost matrix stays
/// small on sparse histograms.
Pruned prune(const ChromaticityHistogram& a, const ChromaticityHistogram& b) {
    if (!(a.grid() == b.grid())) throw ConfigError("histogram grids differ");
    Pruned p;
    std::vector<Chromaticity> ca, cb;
    for (std::size_t i = 0; i < a.masses().size(); ++i)
        if (a.masses()[i] > 0.0) p.a.push_back(a.masses()[i]), p.ia.push_back(i), ca.push_back(a.centers()[i]);
    for (std::size_t j = 0; j < b.masses().size(); ++j)
        if (b.masses()[j] > 0.0) p.b.push_back(b.masses()[j]), p.ib.push_back(j), cb.push_back(b.centers()[j]);
    if (p.a.empty() || p.b.empty()) throw DegenerateInputError("histogram has no mass");
    p.cost = euclidean_cost(ca, cb);
    return p;
}

TransportPlan unprune(TransportPlan plan, const Pruned& p) {
    for (auto& f : plan.flows) {
        f.from = p.ia[f.from];
        f.to = p.ib[f.to];
    }
    return plan;
}

}  // namespace

TransportPlan emd_exact(const ChromaticityHistogram& a, const ChromaticityHistogram& b) {
    const Pruned p = prune(a, b);
    return unprune(transport_exact(p.a, p.b, p.cost), p);
}

TransportPlan sinkhorn(const ChromaticityHistogram& a, const ChromaticityHistogram& b, const SinkhornOptions& opts) {
    const Pruned p = prune(a, b);
    return unprune(transport_sinkhorn(p.a, p.b, p.cost, opts), p);
}

double cdi(std::span<const Tensor> set_a, std::span<const Tensor> set_b, const CdiConfig& cfg) {
    const auto ha = chroma_histogram(set_a, cfg.grid);
    const auto hb = chroma_histogram(set_b, cfg.grid);
    if (cfg.grid.bins_x <= cfg.exact_max_bins && cfg.grid.bins_y <= cfg.exact_max_bins) return emd_exact(ha, hb).cost;
    return sinkhorn(ha, hb, cfg.sinkhorn).cost;
}

}  // namespace dlab
