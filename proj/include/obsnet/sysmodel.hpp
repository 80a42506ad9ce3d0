#pragma once

#include "obsnet/graph.hpp"
#include "obsnet/numerics.hpp"
#include "obsnet/spectral.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace obsnet {

/// Discrete-time plant x(k+1) = A x(k) with the output split into per-node
/// blocks y_i = C_i x.
struct LtiSystem {
    Matrix A;
    std::vector<Matrix> C_blocks;

    int n() const { return static_cast<int>(A.rows()); }
    int blocks() const { return static_cast<int>(C_blocks.size()); }
    std::vector<int> r() const;
    int r_total() const;
    Matrix stacked_C() const;  // vertical concatenation of the C_i
};

/// Plant text format: `n`, n rows of A, then one block per node: `r_i`
/// followed by r_i rows of C_i. Throws ParseError with line numbers.
LtiSystem read_plant(std::istream& in, const std::string& name = "<plant>");
LtiSystem read_plant_file(const std::string& path);

/// Block-level zero/nonzero indicator.
struct PatternMatrix {
    Eigen::MatrixXi entries;  // values in {0, 1}
};

/// Entry (i,j) is 0 iff the (i,j) block of M is exactly zero. Block sizes must
/// partition the dimensions of M; a size of 0 yields an (empty, hence zero)
/// block.
PatternMatrix pattern_of(const Matrix& M, const std::vector<int>& row_blocks,
                         const std::vector<int>& col_blocks);

bool pattern_leq(const PatternMatrix& a, const PatternMatrix& b);

/// P(L) of the graph Laplacian: adjacency plus diagonal (for degree >= 1).
PatternMatrix laplacian_pattern(const CommGraph& g);

/// One failed PBH test: the unstable eigenvalue plus the annihilated
/// directions. `witness` is the first column of `witness_basis`.
struct PbhFailure {
    Complex lambda;
    VectorC witness;
    MatrixC witness_basis;
};

struct DetectabilityReport {
    bool detectable = true;
    std::vector<PbhFailure> failures;
};

/// PBH detectability of (A, C): rank([A - lambda*I; C]) = n for every
/// eigenvalue with |lambda| >= 1 - unit_circle_tol.
DetectabilityReport is_detectable(const Matrix& A, const Matrix& C,
                                  const ToleranceConfig& cfg = {});

/// Cbar of size (sum r_i) x (m*n): block row i is e_i^T (x) C_i.
Matrix stacked_cbar(const LtiSystem& sys, int m);

/// PBH detectability of the lifted pair (W (x) A, Cbar).
DetectabilityReport lifted_detectability(const WeightMatrix& w, const LtiSystem& sys,
                                         const ToleranceConfig& cfg = {});

/// Checks that every unstable eigenspace of W (x) A equals
/// span{ 1 (x) v_A : v_A in the eigenspace of A }, by mutual subspace
/// containment (principal angles below 1e-7).
bool verify_unstable_eigvec_structure(const WeightMatrix& w, const Matrix& A,
                                      const ToleranceConfig& cfg = {});

}  // namespace obsnet
