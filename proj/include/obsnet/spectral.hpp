#pragma once

#include "obsnet/graph.hpp"
#include "obsnet/numerics.hpp"

#include <string>
#include <vector>

namespace obsnet {

/// (lambda_m + lambda_2) / (lambda_m - lambda_2), with infinity kept as a
/// distinguished value rather than a float sentinel.
struct RhoThreshold {
    bool finite = true;
    double value = 0.0;   // meaningful iff finite
    bool vacuous = false; // lambda_m ~ 0 as well (edgeless graph)

    /// Strict comparison rho < threshold.
    bool exceeds(double rho) const { return !finite || rho < value; }
};

/// Complete graph (lambda_2 ~ lambda_m) gives infinity; disconnected
/// (lambda_2 ~ 0) gives 1, flagged vacuous when lambda_m ~ 0 too.
/// Precondition 0 <= lambda_2 <= lambda_m enforced at tolerance.
RhoThreshold rho_threshold(double lambda2, double lambda_m, const ToleranceConfig& cfg = {});

/// Admissible alpha range for W = I - alpha*L.
struct AlphaInterval {
    double lower = 0.0;        // clamped below at 0 (alpha must be positive)
    double upper = 0.0;        // meaningful iff upper_bounded
    bool upper_bounded = true;
    bool feasible = false;     // rho < rho_threshold
    std::string diagnosis;     // non-empty for degenerate cases
};

/// lower = (1 - 1/rho)/lambda_2, upper = (1 + 1/rho)/lambda_m; feasibility is
/// decided by rho < rho_threshold so the two predicates cannot drift apart.
AlphaInterval alpha_interval(double rho_a, double lambda2, double lambda_m,
                             const ToleranceConfig& cfg = {});

/// W = I_m - alpha*L together with its (sorted ascending) spectrum.
struct WeightMatrix {
    double alpha = 0.0;
    int m = 0;
    Matrix W;
    Vector w_spectrum;  // ascending; largest is 1 iff the graph is connected
};

WeightMatrix make_weight(const CommGraph& g, double alpha);

/// Convergence-rate factor: max over sp(L) \ {lambda_1} of |1 - alpha*l| * rho.
double lambda_bar(const CommGraph& g, double alpha, double rho_a);

/// The alpha in (lower, upper) minimizing lambda_bar (grid search + golden
/// section; the objective is piecewise linear and convex in alpha). Requires a
/// feasible interval and a connected graph.
double pick_alpha(const AlphaInterval& interval, const CommGraph& g, double rho_a);

/// One unstable eigenvalue of W (x) A matched against the unstable spectrum of A.
struct KronAuditEntry {
    Complex lambda;     // cluster representative in sp(W (x) A)
    int mult_kron = 0;  // algebraic multiplicity in W (x) A
    int mult_a = 0;     // algebraic multiplicity in A (0 when unmatched)
    bool matched = false;
    bool mult_ok = false;
};

struct KronAuditReport {
    bool pass = false;
    std::vector<KronAuditEntry> unstable;
    std::string summary() const;
};

/// Audits the actual spectrum of W (x) A: every eigenvalue with modulus
/// >= 1 - unit_circle_tol must match an element of Lambda_U(A) with equal
/// algebraic multiplicity. Failure is a report, not an exception.
KronAuditReport audit_kron_spectrum(const WeightMatrix& w, const Matrix& A,
                                    const ToleranceConfig& cfg = {});

}  // namespace obsnet
