#include "obsnet/spectral.hpp"

#include "obsnet/textio.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace obsnet {

RhoThreshold rho_threshold(double lambda2, double lambda_m, const ToleranceConfig& cfg) {
    cfg.validate();
    const double eq_tol = cfg.eig_cluster_tol * std::max(1.0, lambda_m);
    if (lambda2 < -eq_tol || lambda_m < lambda2 - eq_tol) {
        throw std::invalid_argument("rho_threshold: need 0 <= lambda_2 <= lambda_m");
    }
    lambda2 = std::max(lambda2, 0.0);

    RhoThreshold th;
    if (lambda_m <= eq_tol) {             // edgeless: both eigenvalues vanish
        th.value = 1.0;
        th.vacuous = true;
        return th;
    }
    if (lambda2 <= cfg.unit_circle_tol) { // disconnected graph
        th.value = 1.0;
        return th;
    }
    if (lambda_m - lambda2 <= eq_tol) {   // complete graph
        th.finite = false;
        return th;
    }
    th.value = (lambda_m + lambda2) / (lambda_m - lambda2);
    return th;
}

AlphaInterval alpha_interval(double rho_a, double lambda2, double lambda_m,
                             const ToleranceConfig& cfg) {
    if (!(rho_a > 0.0)) {
        throw std::invalid_argument("alpha_interval: rho(A) must be positive");
    }
    const RhoThreshold th = rho_threshold(lambda2, lambda_m, cfg);

    AlphaInterval iv;
    iv.feasible = th.exceeds(rho_a);

    const double eq_tol = cfg.eig_cluster_tol * std::max(1.0, lambda_m);
    if (lambda2 <= cfg.unit_circle_tol) {
        iv.lower = 0.0;
        iv.diagnosis = "disconnected graph (lambda_2 = 0)";
        if (lambda_m <= eq_tol) {
            iv.upper_bounded = false;
            iv.diagnosis = "edgeless graph (lambda_2 = lambda_m = 0)";
        } else {
            iv.upper = (1.0 + 1.0 / rho_a) / lambda_m;
        }
        return iv;
    }

    iv.lower = std::max(0.0, (1.0 - 1.0 / rho_a) / lambda2);
    iv.upper = (1.0 + 1.0 / rho_a) / lambda_m;
    return iv;
}

WeightMatrix make_weight(const CommGraph& g, double alpha) {
    if (!(alpha > 0.0)) {
        throw std::invalid_argument("make_weight: alpha must be positive");
    }
    WeightMatrix w;
    w.alpha = alpha;
    w.m = g.m;
    w.W = Matrix::Identity(g.m, g.m) - alpha * g.laplacian;
    w.w_spectrum = Vector(g.m);
    for (int i = 0; i < g.m; ++i) w.w_spectrum(i) = 1.0 - alpha * g.lambda(i);
    std::sort(w.w_spectrum.data(), w.w_spectrum.data() + g.m);
    return w;
}

double lambda_bar(const CommGraph& g, double alpha, double rho_a) {
    double worst = 0.0;
    for (int i = 1; i < g.m; ++i) {  // sp(L) minus its smallest eigenvalue
        worst = std::max(worst, std::abs(1.0 - alpha * g.lambda(i)) * rho_a);
    }
    return worst;
}

double pick_alpha(const AlphaInterval& interval, const CommGraph& g, double rho_a) {
    if (!interval.feasible) {
        throw std::invalid_argument("pick_alpha: alpha interval is infeasible");
    }
    const ToleranceConfig cfg;
    if (g.lambda(1) <= cfg.unit_circle_tol || !interval.upper_bounded) {
        throw std::invalid_argument("pick_alpha: requires a connected graph");
    }
    const double lo = std::max(interval.lower, 0.0);
    const double hi = interval.upper;
    if (!(lo < hi)) {
        throw std::invalid_argument("pick_alpha: degenerate interval");
    }

    auto objective = [&](double a) { return lambda_bar(g, a, rho_a); };

    // Coarse grid over the open interval, then golden-section refinement of
    // the bracketing cell pair. The objective is convex piecewise linear.
    const int grid = 64;
    double best_a = lo + (hi - lo) / 2.0;
    double best_f = objective(best_a);
    int best_k = grid / 2;
    for (int k = 1; k <= grid; ++k) {
        const double a = lo + (hi - lo) * k / (grid + 1);
        const double f = objective(a);
        if (f < best_f) {
            best_f = f;
            best_a = a;
            best_k = k;
        }
    }
    double a_lo = lo + (hi - lo) * std::max(best_k - 1, 0) / (grid + 1);
    double a_hi = lo + (hi - lo) * std::min(best_k + 1, grid + 1) / (grid + 1);

    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = a_hi - inv_phi * (a_hi - a_lo);
    double x2 = a_lo + inv_phi * (a_hi - a_lo);
    double f1 = objective(x1);
    double f2 = objective(x2);
    for (int it = 0; it < 300 && (a_hi - a_lo) > 1e-14 * (hi - lo); ++it) {
        if (f1 <= f2) {
            a_hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = a_hi - inv_phi * (a_hi - a_lo);
            f1 = objective(x1);
        } else {
            a_lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = a_lo + inv_phi * (a_hi - a_lo);
            f2 = objective(x2);
        }
    }
    double alpha = 0.5 * (a_lo + a_hi);

    // Keep the result strictly interior.
    const double margin = 1e-9 * (hi - lo);
    alpha = std::min(std::max(alpha, lo + margin), hi - margin);
    return alpha;
}

std::string KronAuditReport::summary() const {
    std::ostringstream os;
    os << (pass ? "pass" : "FAIL") << "; " << unstable.size() << " unstable eigenvalue cluster(s)";
    for (const auto& e : unstable) {
        os << "\n  lambda = " << fmt_g17(e.lambda.real());
        if (e.lambda.imag() != 0.0) os << (e.lambda.imag() > 0 ? " + " : " - ")
                                       << fmt_g17(std::abs(e.lambda.imag())) << "i";
        os << ", mult(W(x)A) = " << e.mult_kron;
        if (e.matched) {
            os << ", mult(A) = " << e.mult_a << (e.mult_ok ? " [ok]" : " [MULTIPLICITY MISMATCH]");
        } else {
            os << " [NOT IN Lambda_U(A)]";
        }
    }
    return os.str();
}

KronAuditReport audit_kron_spectrum(const WeightMatrix& w, const Matrix& A,
                                    const ToleranceConfig& cfg) {
    const Spectrum sk = eig(kron(w.W, A), cfg);
    const Spectrum sa = eig(A, cfg);
    const double match_tol = std::max(sk.cluster_tol, sa.cluster_tol);

    KronAuditReport report;
    report.pass = true;
    for (const auto& ck : sk.unstable_clusters(cfg.unit_circle_tol)) {
        KronAuditEntry entry;
        entry.lambda = ck.value;
        entry.mult_kron = ck.multiplicity();
        for (const auto& ca : sa.unstable_clusters(cfg.unit_circle_tol)) {
            if (std::abs(ck.value - ca.value) <= match_tol) {
                entry.matched = true;
                entry.mult_a = ca.multiplicity();
                break;
            }
        }
        entry.mult_ok = entry.matched && entry.mult_kron == entry.mult_a;
        report.pass = report.pass && entry.mult_ok;
        report.unstable.push_back(entry);
    }
    return report;
}

}  // namespace obsnet
