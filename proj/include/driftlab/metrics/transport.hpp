#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "driftlab/metrics/color.hpp"

namespace dlab {

enum class TransportSolver { exact_flow, sinkhorn };
std::string_view to_string(TransportSolver s) noexcept;

struct Flow {
    std::size_t from = 0;
    std::size_t to = 0;
    double mass = 0.0;
};

struct TransportPlan {
    TransportSolver solver = TransportSolver::exact_flow;
    std::vector<Flow> flows;
    double cost = 0.0;
    /// Sinkhorn only.
    double epsilon = 0.0;
    int iterations = 0;
    /// L1 marginal violation of the plan before rounding (Sinkhorn).
    double marginal_error = 0.0;

    std::vector<double> source_marginal(std::size_t n) const;
    std::vector<double> target_marginal(std::size_t m) const;
};

/// Dense ground cost between two point sets, row-major [a.size(), b.size()].
std::vector<double> euclidean_cost(std::span<const Chromaticity> a, std::span<const Chromaticity> b);

/// Minimum-cost transportation between mass vectors a (n) and b (m) with
/// a row-major n x m cost. Zero-mass entries are pruned; flows use the
/// original indices. Successive shortest paths with Dijkstra on reduced
/// costs over the dense bipartite residual graph.
TransportPlan transport_exact(std::span<const double> a, std::span<const double> b, std::span<const double> cost);

struct SinkhornOptions {
    double epsilon = 1e-3;        ///< final regularisation
    double epsilon_start = 1.0;   ///< annealing starts here
    double anneal_factor = 0.5;   ///< epsilon multiplier between levels
    int max_iter = 200000;        ///< iterations at the final epsilon
    int level_iter = 500;         ///< iteration cap per intermediate level
    double tol = 1e-9;            ///< L1 marginal error target
    double relaxation = 1.5;      ///< over-relaxation of the row update, in [1, 2)
    int newton_after = 2000;      ///< final-level iterations before switching to Newton on the dual
    int newton_max_support = 512; ///< largest n + m of nonzero bins eligible for Newton
};

/// Log-domain entropic transport with epsilon annealing, then rounded onto
/// the exact marginals; the reported cost is that of the rounded plan.
/// Small problems that stall at the final epsilon finish with damped Newton
/// steps on the dual.
/// ConvergenceError carrying the last marginal error on failure.
TransportPlan transport_sinkhorn(std::span<const double> a, std::span<const double> b, std::span<const double> cost,
                                 const SinkhornOptions& opts = {});

/// W1 with Euclidean ground cost between bin centers. ConfigError on grid
/// mismatch.
TransportPlan emd_exact(const ChromaticityHistogram& a, const ChromaticityHistogram& b);
TransportPlan sinkhorn(const ChromaticityHistogram& a, const ChromaticityHistogram& b, const SinkhornOptions& opts = {});

struct CdiConfig {
    HistogramGrid grid;
    /// Exact flow up to this many bins per axis, Sinkhorn beyond.
    std::size_t exact_max_bins = 64;
    SinkhornOptions sinkhorn;
};

/// Color drift index: W1 between the chromaticity densities of two image sets.
double cdi(std::span<const Tensor> set_a, std::span<const Tensor> set_b, const CdiConfig& cfg = {});

}  // namespace dlab
