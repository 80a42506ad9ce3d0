#include "obsnet/graph.hpp"

#include "obsnet/textio.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace obsnet {

CommGraph build_graph(int m, const std::vector<std::pair<int, int>>& edges) {
    if (m <= 2) {
        throw std::invalid_argument("build_graph: m must be greater than 2");
    }

    std::set<std::pair<int, int>> unique_edges;
    for (auto [i, j] : edges) {
        if (i == j) {
            throw std::invalid_argument("build_graph: self-loop at node " + std::to_string(i));
        }
        if (i < 1 || i > m || j < 1 || j > m) {
            throw std::invalid_argument("build_graph: edge endpoint out of range 1.." + std::to_string(m));
        }
        unique_edges.emplace(std::min(i, j), std::max(i, j));
    }

    CommGraph g;
    g.m = m;
    g.edges.assign(unique_edges.begin(), unique_edges.end());

    g.laplacian_int = Eigen::MatrixXi::Zero(m, m);
    for (auto [i, j] : g.edges) {
        g.laplacian_int(i - 1, j - 1) = -1;
        g.laplacian_int(j - 1, i - 1) = -1;
        g.laplacian_int(i - 1, i - 1) += 1;
        g.laplacian_int(j - 1, j - 1) += 1;
    }
    g.laplacian = g.laplacian_int.cast<double>();
    g.lambda = eig_symmetric(g.laplacian);
    return g;
}

std::pair<double, double> spectral_gap(const CommGraph& g) {
    return {g.lambda(1), g.lambda(g.m - 1)};
}

std::vector<std::vector<int>> components(const CommGraph& g) {
    std::vector<std::vector<int>> adj(g.m + 1);
    for (auto [i, j] : g.edges) {
        adj[i].push_back(j);
        adj[j].push_back(i);
    }
    std::vector<int> comp_of(g.m + 1, 0);
    std::vector<std::vector<int>> comps;
    for (int s = 1; s <= g.m; ++s) {
        if (comp_of[s]) continue;
        comps.emplace_back();
        std::vector<int> stack{s};
        comp_of[s] = static_cast<int>(comps.size());
        while (!stack.empty()) {
            int v = stack.back();
            stack.pop_back();
            comps.back().push_back(v);
            for (int w : adj[v]) {
                if (!comp_of[w]) {
                    comp_of[w] = comp_of[s];
                    stack.push_back(w);
                }
            }
        }
        std::sort(comps.back().begin(), comps.back().end());
    }
    return comps;
}

bool is_connected(const CommGraph& g, const ToleranceConfig& cfg) {
    const bool by_traversal = components(g).size() == 1;
    const bool by_spectrum = g.lambda(1) > cfg.unit_circle_tol;
    if (by_traversal != by_spectrum) {
        throw std::runtime_error(
            "is_connected: spectral and traversal answers disagree (tolerance fault): lambda_2 = " +
            fmt_g17(g.lambda(1)));
    }
    return by_traversal;
}

std::vector<std::vector<int>> neighbor_sets(const CommGraph& g) {
    std::vector<std::vector<int>> sets(g.m);
    for (int i = 1; i <= g.m; ++i) sets[i - 1].push_back(i);
    for (auto [i, j] : g.edges) {
        sets[i - 1].push_back(j);
        sets[j - 1].push_back(i);
    }
    for (auto& s : sets) std::sort(s.begin(), s.end());
    return sets;
}

CommGraph read_graph(std::istream& in, const std::string& name) {
    std::string line;
    int lineno = 0;
    int m = -1;
    std::vector<std::pair<int, int>> edges;

    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ls(line);
        if (m < 0) {
            if (!(ls >> m)) {
                if (line.find_first_not_of(" \t\r") == std::string::npos) {
                    m = -1;  // skip leading blank lines
                    continue;
                }
                throw ParseError(name, lineno, "expected node count");
            }
            std::string rest;
            if (ls >> rest) throw ParseError(name, lineno, "trailing tokens after node count");
            continue;
        }
        int i, j;
        if (!(ls >> i)) {
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            throw ParseError(name, lineno, "expected edge `i j`");
        }
        if (!(ls >> j)) throw ParseError(name, lineno, "expected second edge endpoint");
        std::string rest;
        if (ls >> rest) throw ParseError(name, lineno, "trailing tokens after edge");
        edges.emplace_back(i, j);
    }
    if (m < 0) throw ParseError(name, lineno ? lineno : 1, "empty graph file");

    try {
        return build_graph(m, edges);
    } catch (const std::invalid_argument& e) {
        throw ParseError(name, lineno, e.what());
    }
}

CommGraph read_graph_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open graph file: " + path);
    return read_graph(in, path);
}

}  // namespace obsnet
