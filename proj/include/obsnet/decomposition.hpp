#pragma once

#include "obsnet/graph.hpp"
#include "obsnet/numerics.hpp"
#include "obsnet/spectral.hpp"
#include "obsnet/sysmodel.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace obsnet {

/// Channel view of observer i: injection authority Bbar_i = E_{N_i} (x) I_n
/// and measurement Cbar_i = e_i^T (x) C_i.
struct ChannelTriple {
    int index = 0;                  // 1-based observer index
    std::vector<int> neighborhood;  // N_i, 1-based, sorted, includes i
    Matrix Bbar;                    // (m n) x (|N_i| n)
    Matrix Cbar;                    // r_i x (m n)
};

ChannelTriple channel_triple(const CommGraph& g, const LtiSystem& sys, int i);
std::vector<ChannelTriple> all_channel_triples(const CommGraph& g, const LtiSystem& sys);

/// Orthogonal observability (Kalman) decomposition of (A, C_i):
/// P = (null basis of the observability matrix | range basis), so that
/// P^T A P = [[A_NO, A_2], [0, A_O]] and C_i P = [0, C_O].
struct KalmanObsvDecomp {
    Matrix P;     // orthogonal change of basis
    int k = 0;    // unobservable dimension
    Matrix A_NO;  // k x k
    Matrix A_2;   // k x (n-k)
    Matrix A_O;   // (n-k) x (n-k)
    Matrix C_O;   // r x (n-k)
};

KalmanObsvDecomp kalman_obsv(const Matrix& A, const Matrix& C_i, const ToleranceConfig& cfg = {});

/// Appendix lemma: with Wbar_i = (e_i, W e_i, ..., W^{m-1} e_i)^T,
/// Null(Wbar_i) must be orthogonal to the all-ones vector. The lemma's
/// hypothesis (eigenvalue 1 simple, everything else inside the unit circle) is
/// reported via precondition_ok rather than thrown.
struct WbarNullCheck {
    bool precondition_ok = false;
    bool contained = false;  // meaningful only when the precondition holds
    int null_dim = 0;
};

WbarNullCheck wbar_null_check(const WeightMatrix& w, int i, const ToleranceConfig& cfg = {});

/// Unstable eigenvalues of W (x) A lying in the controllable-and-observable
/// part of (W (x) A, Bbar_i, Cbar_i), one representative per cluster. Uses the
/// consensus eigenvector structure: lambda counts iff C_i does not annihilate
/// the whole eigenspace of A at lambda and (1 (x) v_A)^T Bbar_i is nonzero.
std::vector<Complex> channel_co_modes(const WeightMatrix& w, const LtiSystem& sys,
                                      const ChannelTriple& tri, const ToleranceConfig& cfg = {});

enum class ScanMode { Serial, Parallel };

/// One partition's bordered-matrix rank test. Bit i-1 of b_side_mask set means
/// observer i contributes its Bbar block (the rest contribute Cbar rows).
struct PartitionResult {
    std::uint32_t b_side_mask = 0;
    int rank = 0;
    bool pass = false;
};

struct ModeScan {
    Complex lambda;
    bool fixed = false;  // some partition failed the n*m rank bound
    int min_rank = 0;
    std::uint32_t worst_partition = 0;
    std::vector<PartitionResult> partitions;  // indexed by mask
};

struct FixedModeReport {
    int required_rank = 0;  // n*m
    std::vector<Complex> tested_modes;
    std::vector<ModeScan> scans;
    std::vector<Complex> fixed_modes;

    bool clean() const { return fixed_modes.empty(); }
    std::string to_text() const;  // structured serialization for the CLI
};

/// Lemma 3 scan: for each unstable eigenvalue cluster of W (x) A and each of
/// the 2^m partitions, checks rank of the bordered matrix against n*m.
/// Requires m <= 12. ScanMode::Parallel uses OpenMP across partitions and
/// produces a result identical to the serial reference.
FixedModeReport fixed_mode_scan(const WeightMatrix& w, const LtiSystem& sys,
                                const std::vector<ChannelTriple>& triples,
                                const ToleranceConfig& cfg = {},
                                ScanMode mode = ScanMode::Parallel);

}  // namespace obsnet
