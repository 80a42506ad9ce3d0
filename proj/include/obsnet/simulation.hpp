#pragma once

#include "obsnet/graph.hpp"
#include "obsnet/numerics.hpp"
#include "obsnet/synthesis.hpp"
#include "obsnet/sysmodel.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace obsnet {

/// Time-indexed record of a simulation run: plant state, per-node estimates,
/// augmented states and error norms for k = 0..K.
struct SimTrace {
    int K = 0;
    int m = 0;
    int n = 0;
    std::vector<int> mu;
    Matrix x;                   // (K+1) x n, row k is x(k)
    std::vector<Matrix> xhat;   // per node: (K+1) x n
    std::vector<Matrix> z;      // per node: (K+1) x mu_i
    Matrix err_norms;           // m x (K+1), entry (i,k) is ||eps_i(k)||
    Vector joint_norm;          // K+1, ||(eps(k), z(k))||

    // Reproducibility bookkeeping for the CSV header.
    std::uint64_t x0_seed = 0;
    double alpha = 0.0;
    double achieved_radius = 0.0;
};

/// The trajectory blew past the divergence cut-off; carries the step index.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(int step, const std::string& what) : std::runtime_error(what), step_(step) {}
    int step() const { return step_; }

private:
    int step_;
};

/// Steps the plant and each observer in per-node form, reading only neighbor
/// blocks of the gain matrices. Aborts with DivergenceError when the joint
/// norm exceeds 1e12 times its initial value.
SimTrace simulate(const LtiSystem& sys, const ObserverDesign& d, const CommGraph& g,
                  const Vector& x0, const std::vector<Vector>& xhat0,
                  const std::vector<Vector>& z0, int K);

/// Convenience wrapper: xhat_i(0) = 0, z_i(0) = 0 and x0 drawn from a seeded
/// unit Gaussian; the seed is recorded in the trace.
SimTrace simulate_seeded(const LtiSystem& sys, const ObserverDesign& d, const CommGraph& g,
                         std::uint64_t x0_seed, int K);

/// Verifies that the recorded (eps, z) sequence satisfies
/// (eps, z)(k+1) = closed_loop * (eps, z)(k) within 1e-10 relative per step:
/// the per-node update and the collective rewrite are the same map.
bool error_dynamics_check(const LtiSystem& sys, const ObserverDesign& d, const SimTrace& trace,
                          const ToleranceConfig& cfg = {});

struct DecayEstimate {
    double rate = 0.0;
    bool degenerate = false;  // trace identically zero after burn-in
};

/// Per-step geometric decay estimate: least-squares slope of log joint_norm
/// over k in [burn_in, K].
DecayEstimate decay_rate(const SimTrace& trace, int burn_in);

/// CSV export: a metadata header line, a column header, then rows
/// `k, err_1, ..., err_m, joint_norm`.
void write_trace_csv(const SimTrace& t, std::ostream& out);
void write_trace_csv_file(const SimTrace& t, const std::string& path);

}  // namespace obsnet
