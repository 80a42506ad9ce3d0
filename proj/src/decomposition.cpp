#include "obsnet/decomposition.hpp"

#include "obsnet/textio.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace obsnet {

ChannelTriple channel_triple(const CommGraph& g, const LtiSystem& sys, int i) {
    if (i < 1 || i > g.m) {
        throw std::invalid_argument("channel_triple: index out of range");
    }
    if (sys.blocks() != g.m) {
        throw std::invalid_argument("channel_triple: system must have m output blocks");
    }
    const int n = sys.n();

    ChannelTriple tri;
    tri.index = i;
    tri.neighborhood = neighbor_sets(g)[i - 1];

    const int s = static_cast<int>(tri.neighborhood.size());
    tri.Bbar = Matrix::Zero(g.m * n, s * n);
    for (int c = 0; c < s; ++c) {
        const int j = tri.neighborhood[c];
        tri.Bbar.block((j - 1) * n, c * n, n, n) = Matrix::Identity(n, n);
    }

    const Matrix& Ci = sys.C_blocks[i - 1];
    tri.Cbar = Matrix::Zero(Ci.rows(), g.m * n);
    tri.Cbar.block(0, (i - 1) * n, Ci.rows(), n) = Ci;
    return tri;
}

std::vector<ChannelTriple> all_channel_triples(const CommGraph& g, const LtiSystem& sys) {
    std::vector<ChannelTriple> triples;
    triples.reserve(g.m);
    for (int i = 1; i <= g.m; ++i) triples.push_back(channel_triple(g, sys, i));
    return triples;
}

KalmanObsvDecomp kalman_obsv(const Matrix& A, const Matrix& C_i, const ToleranceConfig& cfg) {
    const int n = static_cast<int>(A.rows());
    if (C_i.cols() != n) {
        throw std::invalid_argument("kalman_obsv: C_i must have n columns");
    }

    Matrix obs(C_i.rows() * n, n);
    Matrix Ak = Matrix::Identity(n, n);
    for (int p = 0; p < n; ++p) {
        obs.middleRows(p * C_i.rows(), C_i.rows()) = C_i * Ak;
        Ak = A * Ak;
    }

    // P = (null basis | range basis); both come from the same SVD of the
    // observability matrix, so P is orthogonal.
    Eigen::JacobiSVD<Matrix> svd(obs, Eigen::ComputeFullV);
    const auto& s = svd.singularValues();
    const double smax = s.size() ? s(0) : 0.0;
    const double thresh = cfg.rank_rel_tol * smax * static_cast<double>(std::max(obs.rows(), obs.cols()));
    int r = 0;
    for (Eigen::Index q = 0; q < s.size(); ++q) {
        if (s(q) > thresh) ++r;
    }

    KalmanObsvDecomp d;
    d.k = n - r;
    d.P = Matrix(n, n);
    d.P.leftCols(d.k) = svd.matrixV().rightCols(d.k);  // Null(O)
    d.P.rightCols(r) = svd.matrixV().leftCols(r);      // Range(O^T)

    const Matrix Ahat = d.P.transpose() * A * d.P;
    const Matrix Chat = C_i * d.P;
    d.A_NO = Ahat.topLeftCorner(d.k, d.k);
    d.A_2 = Ahat.topRightCorner(d.k, r);
    d.A_O = Ahat.bottomRightCorner(r, r);
    d.C_O = Chat.rightCols(r);
    return d;
}

WbarNullCheck wbar_null_check(const WeightMatrix& w, int i, const ToleranceConfig& cfg) {
    if (i < 1 || i > w.m) {
        throw std::invalid_argument("wbar_null_check: index out of range");
    }
    const int m = w.m;

    WbarNullCheck result;

    // Hypothesis: eigenvalue 1 simple, all others strictly inside the circle.
    int at_one = 0;
    bool rest_inside = true;
    for (int q = 0; q < m; ++q) {
        const double ev = w.w_spectrum(q);
        if (std::abs(ev - 1.0) <= cfg.eig_cluster_tol) {
            ++at_one;
        } else if (std::abs(ev) >= 1.0 - cfg.unit_circle_tol) {
            rest_inside = false;
        }
    }
    result.precondition_ok = (at_one == 1) && rest_inside;
    if (!result.precondition_ok) return result;

    Matrix wbar(m, m);
    Vector col = Vector::Zero(m);
    col(i - 1) = 1.0;
    for (int p = 0; p < m; ++p) {
        wbar.row(p) = col.transpose();
        col = w.W * col;
    }

    const Matrix ns = null_basis(wbar, cfg);
    result.null_dim = static_cast<int>(ns.cols());
    result.contained = true;
    for (Eigen::Index c = 0; c < ns.cols(); ++c) {
        const double dot = std::abs(ns.col(c).sum());
        if (dot >= 1e-8 * ns.col(c).norm() * std::sqrt(double(m))) result.contained = false;
    }
    return result;
}

std::vector<Complex> channel_co_modes(const WeightMatrix& w, const LtiSystem& sys,
                                      const ChannelTriple& tri, const ToleranceConfig& cfg) {
    const int n = sys.n();
    const Matrix& Ci = sys.C_blocks[tri.index - 1];
    const Spectrum sa = eig(sys.A, cfg);

    std::vector<Complex> modes;
    for (const auto& cluster : sa.unstable_clusters(cfg.unit_circle_tol)) {
        const MatrixC va = null_basis(
            MatrixC(sys.A.cast<Complex>() - cluster.value * MatrixC::Identity(n, n)), cfg);
        if (va.cols() == 0) continue;

        // Observability through the channel: C_i must see some eigenvector.
        bool seen = false;
        if (Ci.rows() > 0) {
            const double gain = (Ci.cast<Complex>() * va).norm();
            seen = gain > cfg.rank_rel_tol * std::max(1.0, Ci.norm());
        }
        if (!seen) continue;

        // Controllability through the channel: (1 (x) v_A)^T Bbar_i != 0.
        // With N_i nonempty this is automatic; checked for form's sake.
        MatrixC consensus(w.m * n, va.cols());
        for (Eigen::Index c = 0; c < va.cols(); ++c) {
            for (int b = 0; b < w.m; ++b) consensus.block(b * n, c, n, 1) = va.col(c);
        }
        const double reach = (tri.Bbar.cast<Complex>().transpose() * consensus).norm();
        if (reach <= cfg.rank_rel_tol) continue;

        modes.push_back(cluster.value);
    }
    return modes;
}

namespace {

PartitionResult scan_partition(const MatrixC& pencil, const std::vector<ChannelTriple>& triples,
                               std::uint32_t mask, int required_rank, const ToleranceConfig& cfg) {
    const int m = static_cast<int>(triples.size());
    const int mn = static_cast<int>(pencil.rows());

    int extra_cols = 0;
    int extra_rows = 0;
    for (int i = 0; i < m; ++i) {
        if (mask & (1u << i)) {
            extra_cols += static_cast<int>(triples[i].Bbar.cols());
        } else {
            extra_rows += static_cast<int>(triples[i].Cbar.rows());
        }
    }

    MatrixC bordered = MatrixC::Zero(mn + extra_rows, mn + extra_cols);
    bordered.topLeftCorner(mn, mn) = pencil;
    int col = mn;
    int row = mn;
    for (int i = 0; i < m; ++i) {
        if (mask & (1u << i)) {
            bordered.block(0, col, mn, triples[i].Bbar.cols()) = triples[i].Bbar.cast<Complex>();
            col += static_cast<int>(triples[i].Bbar.cols());
        } else {
            bordered.block(row, 0, triples[i].Cbar.rows(), mn) = triples[i].Cbar.cast<Complex>();
            row += static_cast<int>(triples[i].Cbar.rows());
        }
    }

    PartitionResult res;
    res.b_side_mask = mask;
    res.rank = rank(bordered, cfg);
    res.pass = res.rank >= required_rank;
    return res;
}

}  // namespace

FixedModeReport fixed_mode_scan(const WeightMatrix& w, const LtiSystem& sys,
                                const std::vector<ChannelTriple>& triples,
                                const ToleranceConfig& cfg, ScanMode mode) {
    const int m = w.m;
    if (m > 12) {
        throw std::invalid_argument("fixed_mode_scan: m > 12 makes 2^m partition enumeration too large");
    }
    if (static_cast<int>(triples.size()) != m) {
        throw std::invalid_argument("fixed_mode_scan: need one channel triple per observer");
    }
    const int n = sys.n();
    const int mn = m * n;
    const std::uint32_t num_masks = 1u << m;

    const Matrix K = kron(w.W, sys.A);
    const Spectrum sk = eig(K, cfg);

    FixedModeReport report;
    report.required_rank = mn;

    for (const auto& cluster : sk.unstable_clusters(cfg.unit_circle_tol)) {
        ModeScan scan;
        scan.lambda = cluster.value;
        scan.partitions.resize(num_masks);
        report.tested_modes.push_back(cluster.value);

        const MatrixC pencil = K.cast<Complex>() - cluster.value * MatrixC::Identity(mn, mn);

        if (mode == ScanMode::Parallel) {
#pragma omp parallel for schedule(dynamic)
            for (std::int64_t mask = 0; mask < static_cast<std::int64_t>(num_masks); ++mask) {
                scan.partitions[mask] =
                    scan_partition(pencil, triples, static_cast<std::uint32_t>(mask), mn, cfg);
            }
        } else {
            for (std::uint32_t mask = 0; mask < num_masks; ++mask) {
                scan.partitions[mask] = scan_partition(pencil, triples, mask, mn, cfg);
            }
        }

        scan.min_rank = scan.partitions[0].rank;
        scan.worst_partition = 0;
        for (const auto& p : scan.partitions) {
            if (p.rank < scan.min_rank) {
                scan.min_rank = p.rank;
                scan.worst_partition = p.b_side_mask;
            }
            if (!p.pass) scan.fixed = true;
        }
        if (scan.fixed) report.fixed_modes.push_back(cluster.value);
        report.scans.push_back(std::move(scan));
    }
    return report;
}

std::string FixedModeReport::to_text() const {
    std::ostringstream os;
    os << "fixed_mode_report" << '\n';
    os << "required_rank " << required_rank << '\n';
    os << "tested_modes " << tested_modes.size() << '\n';
    for (const auto& scan : scans) {
        os << "mode " << fmt_g17(scan.lambda.real()) << ' ' << fmt_g17(scan.lambda.imag()) << ' '
           << (scan.fixed ? "FIXED" : "free") << " min_rank " << scan.min_rank << " worst_partition "
           << scan.worst_partition << '\n';
        for (const auto& p : scan.partitions) {
            if (!p.pass) {
                os << "  fail partition " << p.b_side_mask << " rank " << p.rank << '\n';
            }
        }
    }
    os << "fixed_modes " << fixed_modes.size() << '\n';
    return os.str();
}

}  // namespace obsnet
