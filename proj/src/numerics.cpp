#include "obsnet/numerics.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

namespace obsnet {

void ToleranceConfig::validate() const {
    auto ok = [](double t) { return t > 0.0 && t < 1e-3; };
    if (!ok(rank_rel_tol) || !ok(eig_cluster_tol) || !ok(unit_circle_tol)) {
        throw std::invalid_argument("ToleranceConfig: tolerances must lie in (0, 1e-3)");
    }
}

void require_finite(const Matrix& M, const char* what) {
    if (!M.allFinite()) {
        throw std::invalid_argument(std::string(what) + ": entries must be finite");
    }
}

double Spectrum::spectral_radius() const {
    double r = 0.0;
    for (Eigen::Index i = 0; i < eigenvalues.size(); ++i) {
        r = std::max(r, std::abs(eigenvalues(i)));
    }
    return r;
}

std::vector<EigenCluster> Spectrum::unstable_clusters(double unit_circle_tol) const {
    std::vector<EigenCluster> out;
    for (const auto& c : clusters) {
        if (std::abs(c.value) >= 1.0 - unit_circle_tol) out.push_back(c);
    }
    return out;
}

namespace {

// Single-linkage grouping: eigenvalues within tol of each other share a
// cluster (transitively).
std::vector<EigenCluster> cluster_eigenvalues(const VectorC& ev, double tol) {
    const int k = static_cast<int>(ev.size());
    std::vector<int> parent(k);
    std::iota(parent.begin(), parent.end(), 0);
    std::function<int(int)> find = [&](int a) {
        while (parent[a] != a) a = parent[a] = parent[parent[a]];
        return a;
    };
    for (int i = 0; i < k; ++i) {
        for (int j = i + 1; j < k; ++j) {
            if (std::abs(ev(i) - ev(j)) <= tol) parent[find(i)] = find(j);
        }
    }
    std::vector<std::vector<int>> groups(k);
    for (int i = 0; i < k; ++i) groups[find(i)].push_back(i);

    std::vector<EigenCluster> clusters;
    for (auto& g : groups) {
        if (g.empty()) continue;
        Complex mean(0, 0);
        for (int idx : g) mean += ev(idx);
        mean /= static_cast<double>(g.size());
        clusters.push_back(EigenCluster{mean, std::move(g)});
    }
    std::sort(clusters.begin(), clusters.end(), [](const EigenCluster& a, const EigenCluster& b) {
        if (a.value.real() != b.value.real()) return a.value.real() < b.value.real();
        return a.value.imag() < b.value.imag();
    });
    return clusters;
}

template <typename Mat>
int rank_impl(const Mat& M, const ToleranceConfig& cfg) {
    if (M.rows() == 0 || M.cols() == 0) return 0;
    Eigen::JacobiSVD<Mat> svd(M);
    const auto& s = svd.singularValues();
    if (s.size() == 0) return 0;
    const double thresh = cfg.rank_rel_tol * s(0) * static_cast<double>(std::max(M.rows(), M.cols()));
    int r = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        if (s(i) > thresh) ++r;
    }
    return r;
}

template <typename Mat>
Mat null_basis_impl(const Mat& M, const ToleranceConfig& cfg) {
    Eigen::JacobiSVD<Mat> svd(M, Eigen::ComputeFullV);
    const auto& s = svd.singularValues();
    const double smax = s.size() ? s(0) : 0.0;
    const double thresh = cfg.rank_rel_tol * smax * static_cast<double>(std::max(M.rows(), M.cols()));
    int r = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        if (s(i) > thresh) ++r;
    }
    return svd.matrixV().rightCols(M.cols() - r);
}

}  // namespace

Spectrum eig(const Matrix& M, const ToleranceConfig& cfg) {
    cfg.validate();
    if (M.rows() != M.cols()) {
        throw std::invalid_argument("eig: matrix must be square");
    }
    require_finite(M, "eig");

    Eigen::EigenSolver<Matrix> solver(M, /*computeEigenvectors=*/true);
    if (solver.info() != Eigen::Success) {
        throw std::runtime_error("eig: eigen routine did not converge");
    }

    Spectrum sp;
    sp.eigenvalues   = solver.eigenvalues();
    sp.right_vectors = solver.eigenvectors();
    sp.cluster_tol   = cfg.eig_cluster_tol * std::max(M.norm(), 1e-300);
    sp.clusters      = cluster_eigenvalues(sp.eigenvalues, sp.cluster_tol);
    return sp;
}

Vector eig_symmetric(const Matrix& M) {
    if (M.rows() != M.cols()) {
        throw std::invalid_argument("eig_symmetric: matrix must be square");
    }
    Eigen::SelfAdjointEigenSolver<Matrix> solver(M, Eigen::EigenvaluesOnly);
    if (solver.info() != Eigen::Success) {
        throw std::runtime_error("eig_symmetric: eigen routine did not converge");
    }
    return solver.eigenvalues();
}

int rank(const Matrix& M, const ToleranceConfig& cfg) { return rank_impl(M, cfg); }
int rank(const MatrixC& M, const ToleranceConfig& cfg) { return rank_impl(M, cfg); }

Matrix null_basis(const Matrix& M, const ToleranceConfig& cfg) { return null_basis_impl(M, cfg); }
MatrixC null_basis(const MatrixC& M, const ToleranceConfig& cfg) { return null_basis_impl(M, cfg); }

namespace {

template <typename Mat>
Mat kron_impl(const Mat& a, const Mat& b) {
    Mat out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
        }
    }
    return out;
}

}  // namespace

Matrix kron(const Matrix& a, const Matrix& b) { return kron_impl(a, b); }
MatrixC kron(const MatrixC& a, const MatrixC& b) { return kron_impl(a, b); }

}  // namespace obsnet
