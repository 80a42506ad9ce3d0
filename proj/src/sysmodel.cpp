#include "obsnet/sysmodel.hpp"

#include "obsnet/textio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace obsnet {

std::vector<int> LtiSystem::r() const {
    std::vector<int> out;
    out.reserve(C_blocks.size());
    for (const auto& c : C_blocks) out.push_back(static_cast<int>(c.rows()));
    return out;
}

int LtiSystem::r_total() const {
    int total = 0;
    for (const auto& c : C_blocks) total += static_cast<int>(c.rows());
    return total;
}

Matrix LtiSystem::stacked_C() const {
    Matrix C(r_total(), n());
    int row = 0;
    for (const auto& c : C_blocks) {
        C.middleRows(row, c.rows()) = c;
        row += static_cast<int>(c.rows());
    }
    return C;
}

namespace {

// Reads whitespace-separated doubles, `count` per row, skipping blank lines.
Matrix read_rows(std::istream& in, const std::string& name, int& lineno, int rows, int cols,
                 const char* what) {
    Matrix M(rows, cols);
    std::string line;
    int row = 0;
    while (row < rows && std::getline(in, line)) {
        ++lineno;
        std::istringstream ls(line);
        double v;
        if (!(ls >> v)) {
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            throw ParseError(name, lineno, std::string("expected a row of ") + what);
        }
        M(row, 0) = v;
        for (int j = 1; j < cols; ++j) {
            if (!(ls >> v)) throw ParseError(name, lineno, std::string("row of ") + what + " needs " +
                                                               std::to_string(cols) + " values");
            M(row, j) = v;
        }
        std::string rest;
        if (ls >> rest) throw ParseError(name, lineno, std::string("trailing tokens in row of ") + what);
        ++row;
    }
    if (row < rows) throw ParseError(name, lineno, std::string("unexpected end of file reading ") + what);
    return M;
}

int read_scalar_int(std::istream& in, const std::string& name, int& lineno, const char* what,
                    bool* eof = nullptr) {
    std::string line;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ls(line);
        int v;
        if (ls >> v) {
            std::string rest;
            if (ls >> rest) throw ParseError(name, lineno, std::string("trailing tokens after ") + what);
            return v;
        }
        if (line.find_first_not_of(" \t\r") != std::string::npos) {
            throw ParseError(name, lineno, std::string("expected ") + what);
        }
    }
    if (eof) {
        *eof = true;
        return 0;
    }
    throw ParseError(name, lineno ? lineno : 1, std::string("unexpected end of file, expected ") + what);
}

}  // namespace

LtiSystem read_plant(std::istream& in, const std::string& name) {
    int lineno = 0;
    const int n = read_scalar_int(in, name, lineno, "state dimension n");
    if (n < 1) throw ParseError(name, lineno, "state dimension must be >= 1");

    LtiSystem sys;
    sys.A = read_rows(in, name, lineno, n, n, "A");
    require_finite(sys.A, "plant A");

    while (true) {
        bool eof = false;
        const int ri = read_scalar_int(in, name, lineno, "output dimension r_i", &eof);
        if (eof) break;
        if (ri < 0) throw ParseError(name, lineno, "output dimension r_i must be >= 0");
        if (ri == 0) {
            sys.C_blocks.push_back(Matrix::Zero(0, n));
            continue;
        }
        Matrix Ci = read_rows(in, name, lineno, ri, n, "C_i");
        require_finite(Ci, "plant C_i");
        sys.C_blocks.push_back(std::move(Ci));
    }
    if (sys.C_blocks.empty()) throw ParseError(name, lineno, "plant file has no output blocks");
    return sys;
}

LtiSystem read_plant_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open plant file: " + path);
    return read_plant(in, path);
}

PatternMatrix pattern_of(const Matrix& M, const std::vector<int>& row_blocks,
                         const std::vector<int>& col_blocks) {
    const int row_sum = std::accumulate(row_blocks.begin(), row_blocks.end(), 0);
    const int col_sum = std::accumulate(col_blocks.begin(), col_blocks.end(), 0);
    if (row_sum != M.rows() || col_sum != M.cols()) {
        throw std::invalid_argument("pattern_of: block sizes do not partition the matrix");
    }

    PatternMatrix p;
    p.entries = Eigen::MatrixXi::Zero(static_cast<int>(row_blocks.size()),
                                      static_cast<int>(col_blocks.size()));
    int row = 0;
    for (size_t bi = 0; bi < row_blocks.size(); ++bi) {
        int col = 0;
        for (size_t bj = 0; bj < col_blocks.size(); ++bj) {
            const auto block = M.block(row, col, row_blocks[bi], col_blocks[bj]);
            // Structural test: gains are assembled with exact zeros.
            p.entries(static_cast<int>(bi), static_cast<int>(bj)) =
                (block.size() > 0 && !block.isZero(0.0)) ? 1 : 0;
            col += col_blocks[bj];
        }
        row += row_blocks[bi];
    }
    return p;
}

bool pattern_leq(const PatternMatrix& a, const PatternMatrix& b) {
    if (a.entries.rows() != b.entries.rows() || a.entries.cols() != b.entries.cols()) {
        throw std::invalid_argument("pattern_leq: dimension mismatch");
    }
    return (a.entries.array() <= b.entries.array()).all();
}

PatternMatrix laplacian_pattern(const CommGraph& g) {
    PatternMatrix p;
    p.entries = (g.laplacian_int.array() != 0).cast<int>();
    return p;
}

namespace {

// PBH sweep shared by is_detectable and lifted_detectability: for every
// unstable eigenvalue cluster of V, rank([V - lambda I; C]) must be full.
DetectabilityReport pbh_detectability(const Matrix& V, const Matrix& C, const ToleranceConfig& cfg) {
    if (C.cols() != V.rows()) {
        throw std::invalid_argument("detectability: C must have as many columns as V has rows");
    }
    const int n = static_cast<int>(V.rows());
    const Spectrum sp = eig(V, cfg);

    DetectabilityReport report;
    for (const auto& c : sp.unstable_clusters(cfg.unit_circle_tol)) {
        MatrixC pencil(n + C.rows(), n);
        pencil.topRows(n) = V.cast<Complex>() - c.value * MatrixC::Identity(n, n);
        pencil.bottomRows(C.rows()) = C.cast<Complex>();
        const MatrixC ns = null_basis(pencil, cfg);
        if (ns.cols() > 0) {
            report.detectable = false;
            report.failures.push_back(PbhFailure{c.value, ns.col(0), ns});
        }
    }
    return report;
}

}  // namespace

DetectabilityReport is_detectable(const Matrix& A, const Matrix& C, const ToleranceConfig& cfg) {
    return pbh_detectability(A, C, cfg);
}

Matrix stacked_cbar(const LtiSystem& sys, int m) {
    if (sys.blocks() != m) {
        throw std::invalid_argument("stacked_cbar: system must have m output blocks");
    }
    const int n = sys.n();
    Matrix cbar = Matrix::Zero(sys.r_total(), m * n);
    int row = 0;
    for (int i = 0; i < m; ++i) {
        const Matrix& Ci = sys.C_blocks[i];
        cbar.block(row, i * n, Ci.rows(), n) = Ci;
        row += static_cast<int>(Ci.rows());
    }
    return cbar;
}

DetectabilityReport lifted_detectability(const WeightMatrix& w, const LtiSystem& sys,
                                         const ToleranceConfig& cfg) {
    if (sys.blocks() != w.m) {
        throw std::invalid_argument("lifted_detectability: block count must match the graph size");
    }
    return pbh_detectability(kron(w.W, sys.A), stacked_cbar(sys, w.m), cfg);
}

bool verify_unstable_eigvec_structure(const WeightMatrix& w, const Matrix& A,
                                      const ToleranceConfig& cfg) {
    constexpr double kMaxPrincipalAngle = 1e-7;

    const Matrix K = kron(w.W, A);
    const Spectrum sk = eig(K, cfg);
    const Spectrum sa = eig(A, cfg);
    const double match_tol = std::max(sk.cluster_tol, sa.cluster_tol);

    const auto unstable_k = sk.unstable_clusters(cfg.unit_circle_tol);
    const auto unstable_a = sa.unstable_clusters(cfg.unit_circle_tol);

    // Every unstable eigenvalue of W (x) A must also be an unstable eigenvalue
    // of A; otherwise the consensus structure cannot hold.
    for (const auto& ck : unstable_k) {
        bool found = false;
        for (const auto& ca : unstable_a) {
            if (std::abs(ck.value - ca.value) <= match_tol) found = true;
        }
        if (!found) return false;
    }

    const int m = w.m;
    const int n = static_cast<int>(A.rows());
    const VectorC ones = VectorC::Constant(m, Complex(1.0 / std::sqrt(double(m)), 0.0));

    for (const auto& ca : unstable_a) {
        const Complex lambda = ca.value;
        const MatrixC e1 =
            null_basis(MatrixC(K.cast<Complex>() - lambda * MatrixC::Identity(m * n, m * n)), cfg);
        const MatrixC va =
            null_basis(MatrixC(A.cast<Complex>() - lambda * MatrixC::Identity(n, n)), cfg);
        if (e1.cols() != va.cols()) return false;
        if (e1.cols() == 0) continue;

        MatrixC e2(m * n, va.cols());
        for (Eigen::Index c = 0; c < va.cols(); ++c) {
            for (int b = 0; b < m; ++b) e2.block(b * n, c, n, 1) = ones(b) * va.col(c);
        }

        // Orthonormal columns on both sides, so the singular values of
        // e1^H e2 are the principal-angle cosines.
        Eigen::JacobiSVD<MatrixC> svd(e1.adjoint() * e2);
        const double min_cos = svd.singularValues().minCoeff();
        if (std::acos(std::min(min_cos, 1.0)) >= kMaxPrincipalAngle) return false;
    }
    return true;
}

}  // namespace obsnet
