#pragma once

#include <Eigen/Dense>

namespace dlab {

/// Feature sets are row-major: one sample per row.
using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// (u.v / d + 1)^3
double polynomial_kernel(const Eigen::Ref<const Eigen::VectorXd>& u, const Eigen::Ref<const Eigen::VectorXd>& v);

/// Unbiased squared MMD with the cubic polynomial kernel. Diagonal terms are
/// excluded from the within-set sums; for equal set sizes the cross term
/// also skips i == j, so two copies of one set give exactly zero.
/// ConfigError on fewer than 2 rows or a dimension mismatch.
double kid(const FeatureMatrix& a, const FeatureMatrix& b);

inline constexpr double kFidRegularizer = 1e-6;

/// Frechet distance between Gaussian fits. Covariances get +1e-6 I; the
/// square root comes from the eigendecomposition of S Sb S with S = sqrt(Sa).
/// NumericsError when a matrix is not PSD after regularisation.
double fid(const FeatureMatrix& a, const FeatureMatrix& b);

struct GaussianFit {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};
GaussianFit gaussian_fit(const FeatureMatrix& x);
double frechet_distance(const GaussianFit& a, const GaussianFit& b);

}  // namespace dlab
