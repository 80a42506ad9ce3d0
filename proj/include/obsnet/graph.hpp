#pragma once

#include "obsnet/numerics.hpp"

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace obsnet {

/// Undirected, unweighted communication graph over m > 2 observers, with its
/// Laplacian and Laplacian spectrum. Immutable after construction.
struct CommGraph {
    int m = 0;
    std::vector<std::pair<int, int>> edges;  // 1-indexed, stored with i < j
    Eigen::MatrixXi laplacian_int;           // exact integer assembly
    Matrix laplacian;                        // floating-point copy
    Vector lambda;                           // eigenvalues sorted ascending
};

/// Assembles the Laplacian in integer arithmetic and computes its spectrum.
/// Throws std::invalid_argument for m <= 2, out-of-range endpoints or
/// self-loops. Duplicate edges collapse to one.
CommGraph build_graph(int m, const std::vector<std::pair<int, int>>& edges);

/// (lambda_2, lambda_m) from the sorted spectrum.
std::pair<double, double> spectral_gap(const CommGraph& g);

/// Connectivity decided by traversal; the spectral answer
/// (lambda_2 > unit_circle_tol) is cross-checked and a disagreement throws
/// std::runtime_error (tolerance fault).
bool is_connected(const CommGraph& g, const ToleranceConfig& cfg = {});

/// N_i = {i} union neighbors(i), 1-indexed and sorted, for each node.
std::vector<std::vector<int>> neighbor_sets(const CommGraph& g);

/// Connected components by traversal, each sorted; components themselves are
/// ordered by smallest member.
std::vector<std::vector<int>> components(const CommGraph& g);

/// Graph text format: first line `m`, then one `i j` pair per line (1-indexed).
/// Blank lines are ignored. Throws ParseError with line numbers.
CommGraph read_graph(std::istream& in, const std::string& name = "<graph>");
CommGraph read_graph_file(const std::string& path);

}  // namespace obsnet
