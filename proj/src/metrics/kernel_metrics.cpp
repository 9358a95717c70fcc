#include "driftlab/metrics/kernel_metrics.hpp"

#include <cmath>

#include "driftlab/gradcore/error.hpp"

namespace dlab {

double polynomial_kernel(const Eigen::Ref<const Eigen::VectorXd>& u, const Eigen::Ref<const Eigen::VectorXd>& v) {
    const double k = u.dot(v) / static_cast<double>(u.size()) + 1.0;
    return k * k * k;
}

namespace {

void check_pair(const FeatureMatrix& a, const FeatureMatrix& b, Eigen::Index min_rows, const char* what) {
    if (a.rows() < min_rows || b.rows() < min_rows)
        throw ConfigError(std::string(what) + ": each set needs at least " + std::to_string(min_rows) + " vectors");
    if (a.cols() != b.cols() || a.cols() == 0) throw ConfigError(std::string(what) + ": feature dimensions differ");
    if (!a.allFinite() || !b.allFinite()) throw NumericsError(std::string(what) + ": non-finite features");
}

Eigen::MatrixXd cubic_gram(const FeatureMatrix& x, const FeatureMatrix& y) {
    Eigen::MatrixXd k = (x * y.transpose()) / static_cast<double>(x.cols());
    k.array() += 1.0;
    return k.array().cube().matrix();
}

double off_diagonal_mean(const Eigen::MatrixXd& k) {
    const double n = static_cast<double>(k.rows());
    return (k.sum() - k.trace()) / (n * (n - 1.0));
}

}  // namespace

double kid(const FeatureMatrix& a, const FeatureMatrix& b) {
    check_pair(a, b, 2, "kid");
    const double kaa = off_diagonal_mean(cubic_gram(a, a));
    const double kbb = off_diagonal_mean(cubic_gram(b, b));
    const Eigen::MatrixXd kab = cubic_gram(a, b);
    const double cross = a.rows() == b.rows() ? off_diagonal_mean(kab) : kab.mean();
    return kaa + kbb - 2.0 * cross;
}

GaussianFit gaussian_fit(const FeatureMatrix& x) {
    if (x.rows() < 2) throw ConfigError("gaussian fit needs at least 2 samples");
    GaussianFit g;
    g.mean = x.colwise().mean().transpose();
    const Eigen::MatrixXd centered = x.rowwise() - g.mean.transpose();
    g.cov = centered.transpose() * centered / static_cast<double>(x.rows() - 1);
    return g;
}

namespace {

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, const char* what) {
    const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    if (es.info() != Eigen::Success) throw NumericsError(std::string("fid: eigendecomposition failed for ") + what);
    Eigen::VectorXd ev = es.eigenvalues();
    const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (ev(i) < -1e-9 * scale) throw NumericsError(std::string("fid: ") + what + " is not positive semidefinite");
        ev(i) = std::sqrt(std::max(0.0, ev(i)));
    }
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const GaussianFit& a, const GaussianFit& b) {
    const auto d = a.mean.size();
    if (b.mean.size() != d) throw ConfigError("fid: feature dimensions differ");
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(d, d);
    const Eigen::MatrixXd sa = a.cov + kFidRegularizer * eye;
    const Eigen::MatrixXd sb = b.cov + kFidRegularizer * eye;
    const Eigen::MatrixXd root_a = psd_sqrt(sa, "covariance");
    const Eigen::MatrixXd cross = psd_sqrt(root_a * sb * root_a, "covariance product");
    return (a.mean - b.mean).squaredNorm() + sa.trace() + sb.trace() - 2.0 * cross.trace();
}

double fid(const FeatureMatrix& a, const FeatureMatrix& b) {
    check_pair(a, b, 2, "fid");
    return frechet_distance(gaussian_fit(a), gaussian_fit(b));
}

}  // namespace dlab
