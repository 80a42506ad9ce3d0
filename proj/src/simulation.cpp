#include "obsnet/simulation.hpp"

#include "obsnet/textio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace obsnet {

namespace {

std::vector<int> offsets_of(const std::vector<int>& sizes) {
    std::vector<int> off(sizes.size() + 1, 0);
    for (size_t i = 0; i < sizes.size(); ++i) off[i + 1] = off[i] + sizes[i];
    return off;
}

}  // namespace

SimTrace simulate(const LtiSystem& sys, const ObserverDesign& d, const CommGraph& g,
                  const Vector& x0, const std::vector<Vector>& xhat0,
                  const std::vector<Vector>& z0, int K) {
    const int m = d.m;
    const int n = d.n;
    if (K < 1) throw std::invalid_argument("simulate: horizon K must be >= 1");
    if (sys.n() != n || sys.blocks() != m || g.m != m) {
        throw std::invalid_argument("simulate: plant/design/graph dimensions disagree");
    }
    if (x0.size() != n || static_cast<int>(xhat0.size()) != m ||
        static_cast<int>(z0.size()) != m) {
        throw std::invalid_argument("simulate: initial-state dimensions disagree");
    }
    for (int i = 0; i < m; ++i) {
        if (xhat0[i].size() != n || z0[i].size() != d.mu[i]) {
            throw std::invalid_argument("simulate: initial estimate/compensator sizes disagree");
        }
    }

    const auto nbhd = neighbor_sets(g);
    const auto roff = offsets_of(d.r);
    const auto muoff = offsets_of(d.mu);

    SimTrace t;
    t.K = K;
    t.m = m;
    t.n = n;
    t.mu = d.mu;
    t.alpha = d.w.alpha;
    t.achieved_radius = d.achieved_radius;
    t.x = Matrix(K + 1, n);
    t.xhat.assign(m, Matrix(K + 1, n));
    t.z.resize(m);
    for (int i = 0; i < m; ++i) t.z[i] = Matrix(K + 1, d.mu[i]);
    t.err_norms = Matrix(m, K + 1);
    t.joint_norm = Vector(K + 1);

    Vector x = x0;
    std::vector<Vector> xhat = xhat0;
    std::vector<Vector> z = z0;

    auto record = [&](int k) {
        t.x.row(k) = x.transpose();
        double sq = 0.0;
        for (int i = 0; i < m; ++i) {
            t.xhat[i].row(k) = xhat[i].transpose();
            t.z[i].row(k) = z[i].transpose();
            const double e = (x - xhat[i]).norm();
            t.err_norms(i, k) = e;
            sq += e * e + z[i].squaredNorm();
        }
        t.joint_norm(k) = std::sqrt(sq);
    };
    record(0);
    const double cutoff = 1e12 * std::max(t.joint_norm(0), 1e-300);

    for (int k = 0; k < K; ++k) {
        // Measurement residuals y_j - C_j xhat_j, shared by every neighbor.
        std::vector<Vector> residual(m);
        for (int j = 0; j < m; ++j) {
            residual[j] = sys.C_blocks[j] * x - sys.C_blocks[j] * xhat[j];
        }

        std::vector<Vector> xhat_next(m, Vector::Zero(n));
        std::vector<Vector> z_next(m);
        for (int i = 0; i < m; ++i) z_next[i] = Vector::Zero(d.mu[i]);

        // Per-node update; only neighbor blocks of the gains are ever read.
        for (int i = 0; i < m; ++i) {
            for (int j1 : nbhd[i]) {
                const int j = j1 - 1;
                xhat_next[i] += d.w.W(i, j) * (sys.A * xhat[j]);
                if (d.r[j] > 0) {
                    xhat_next[i] += d.H.block(i * n, roff[j], n, d.r[j]) * residual[j];
                }
                if (d.mu[j] > 0) {
                    xhat_next[i] += d.S.block(i * n, muoff[j], n, d.mu[j]) * z[j];
                }
                if (d.mu[i] > 0) {
                    if (d.mu[j] > 0) {
                        z_next[i] += d.R.block(muoff[i], muoff[j], d.mu[i], d.mu[j]) * z[j];
                    }
                    if (d.r[j] > 0) {
                        z_next[i] += d.Q.block(muoff[i], roff[j], d.mu[i], d.r[j]) * residual[j];
                    }
                }
            }
        }

        x = sys.A * x;
        xhat = std::move(xhat_next);
        z = std::move(z_next);
        record(k + 1);

        if (!std::isfinite(t.joint_norm(k + 1)) || t.joint_norm(k + 1) > cutoff) {
            throw DivergenceError(k + 1, "simulate: trajectory diverged at step " +
                                             std::to_string(k + 1));
        }
    }
    return t;
}

SimTrace simulate_seeded(const LtiSystem& sys, const ObserverDesign& d, const CommGraph& g,
                         std::uint64_t x0_seed, int K) {
    std::mt19937_64 rng(x0_seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector x0(sys.n());
    for (int i = 0; i < sys.n(); ++i) x0(i) = normal(rng);

    std::vector<Vector> xhat0(d.m, Vector::Zero(sys.n()));
    std::vector<Vector> z0(d.m);
    for (int i = 0; i < d.m; ++i) z0[i] = Vector::Zero(d.mu[i]);

    SimTrace t = simulate(sys, d, g, x0, xhat0, z0, K);
    t.x0_seed = x0_seed;
    return t;
}

bool error_dynamics_check(const LtiSystem& sys, const ObserverDesign& d, const SimTrace& trace,
                          const ToleranceConfig& cfg) {
    (void)cfg;
    const Matrix F = closed_loop_matrix(d.w, sys, d.H, d.S, d.Q, d.R, d.mu);
    const int mn = d.m * d.n;
    int musum = 0;
    for (int v : d.mu) musum += v;

    auto stacked = [&](int k) {
        Vector v(mn + musum);
        int off = mn;
        for (int i = 0; i < d.m; ++i) {
            v.segment(i * d.n, d.n) = trace.x.row(k).transpose() - trace.xhat[i].row(k).transpose();
            v.segment(off, d.mu[i]) = trace.z[i].row(k).transpose();
            off += d.mu[i];
        }
        return v;
    };

    for (int k = 0; k < trace.K; ++k) {
        const Vector predicted = F * stacked(k);
        const Vector actual = stacked(k + 1);
        const double defect = (actual - predicted).norm();
        const double denom = std::max(predicted.norm(), actual.norm());
        if (denom == 0.0) continue;  // exact zero step
        if (defect > 1e-10 * denom) return false;
    }
    return true;
}

DecayEstimate decay_rate(const SimTrace& trace, int burn_in) {
    burn_in = std::max(0, burn_in);
    std::vector<double> ks, logs;
    for (int k = burn_in; k <= trace.K; ++k) {
        if (trace.joint_norm(k) > 0.0) {
            ks.push_back(static_cast<double>(k));
            logs.push_back(std::log(trace.joint_norm(k)));
        }
    }
    if (ks.size() < 2) return DecayEstimate{0.0, true};

    double mean_k = 0.0, mean_l = 0.0;
    for (size_t i = 0; i < ks.size(); ++i) {
        mean_k += ks[i];
        mean_l += logs[i];
    }
    mean_k /= ks.size();
    mean_l /= ks.size();
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < ks.size(); ++i) {
        num += (ks[i] - mean_k) * (logs[i] - mean_l);
        den += (ks[i] - mean_k) * (ks[i] - mean_k);
    }
    if (den == 0.0) return DecayEstimate{0.0, true};
    return DecayEstimate{std::exp(num / den), false};
}

void write_trace_csv(const SimTrace& t, std::ostream& out) {
    out << "# x0_seed=" << t.x0_seed << " alpha=" << fmt_g17(t.alpha)
        << " achieved_radius=" << fmt_g17(t.achieved_radius) << '\n';
    out << "k";
    for (int i = 1; i <= t.m; ++i) out << ",err_" << i;
    out << ",joint_norm\n";
    for (int k = 0; k <= t.K; ++k) {
        out << k;
        for (int i = 0; i < t.m; ++i) out << ',' << fmt_g17(t.err_norms(i, k));
        out << ',' << fmt_g17(t.joint_norm(k)) << '\n';
    }
}

void write_trace_csv_file(const SimTrace& t, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open trace file for writing: " + path);
    write_trace_csv(t, out);
}

}  // namespace obsnet
