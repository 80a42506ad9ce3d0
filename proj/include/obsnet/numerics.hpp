#pragma once

#include <Eigen/Dense>

#include <complex>
#include <vector>

namespace obsnet {

using Matrix  = Eigen::MatrixXd;
using Vector  = Eigen::VectorXd;
using MatrixC = Eigen::MatrixXcd;
using VectorC = Eigen::VectorXcd;
using Complex = std::complex<double>;

/// Tolerances that govern every rank / spectral decision in the toolkit.
struct ToleranceConfig {
    double rank_rel_tol    = 1e-9;
    double eig_cluster_tol = 1e-8;
    double unit_circle_tol = 1e-9;

    /// Throws std::invalid_argument unless all tolerances are in (0, 1e-3).
    void validate() const;
};

/// A group of eigenvalues that agree within the cluster tolerance. The group
/// size is the algebraic multiplicity reported for the representative value.
struct EigenCluster {
    Complex value;              // cluster representative (mean of the members)
    std::vector<int> members;   // indices into Spectrum::eigenvalues

    int multiplicity() const { return static_cast<int>(members.size()); }
};

struct Spectrum {
    VectorC eigenvalues;        // solver order, one entry per matrix dimension
    MatrixC right_vectors;      // column i pairs with eigenvalues(i)
    double  cluster_tol = 0.0;  // absolute tolerance used for grouping
    std::vector<EigenCluster> clusters;  // sorted by (Re, Im) of the value

    double spectral_radius() const;

    /// Clusters with |value| >= 1 - unit_circle_tol; marginal modes count as
    /// unstable.
    std::vector<EigenCluster> unstable_clusters(double unit_circle_tol) const;
};

/// General (possibly complex-spectrum) eigendecomposition with clustering.
/// Throws std::invalid_argument on non-square input and std::runtime_error if
/// the eigen routine fails to converge.
Spectrum eig(const Matrix& M, const ToleranceConfig& cfg = {});

/// Eigenvalues of a symmetric matrix, sorted ascending. The input is assumed
/// symmetric; only its lower triangle is referenced.
Vector eig_symmetric(const Matrix& M);

/// Rank = number of singular values above rank_rel_tol * sigma_max * max(rows, cols).
int rank(const Matrix& M, const ToleranceConfig& cfg = {});
int rank(const MatrixC& M, const ToleranceConfig& cfg = {});

/// Orthonormal basis of the right null space at the rank tolerance; the result
/// has cols(M) - rank(M) columns (possibly zero).
Matrix null_basis(const Matrix& M, const ToleranceConfig& cfg = {});
MatrixC null_basis(const MatrixC& M, const ToleranceConfig& cfg = {});

/// Kronecker product, dimensions (ra*rb) x (ca*cb).
Matrix kron(const Matrix& a, const Matrix& b);
MatrixC kron(const MatrixC& a, const MatrixC& b);

/// Throws std::invalid_argument if M contains NaN or Inf; `what` names the
/// matrix in the message.
void require_finite(const Matrix& M, const char* what);

}  // namespace obsnet
