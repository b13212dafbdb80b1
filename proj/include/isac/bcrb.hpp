#pragma once

// Recursive Bayesian information matrix over the augmented parameter
// [psi_1..psi_K (4 each); Re s_1, Im s_1, ..., Re s_K, Im s_K].

#include "isac/synth.hpp"

namespace isac {

struct BimMatrix {
    MatX matrix;
    int slotIndex = 0;
};

struct BcrbWeights {
    VecX v;

    /// Weight 1 on positions, `vel` on velocities, `sym` on symbol dims.
    static BcrbWeights make(int users, double pos, double vel, double sym);
};

/// -E[d^2 log p(x_t | x_{t-1})] blocks: xi11 on x_{t-1}, xi12 cross, xi22 on x_t.
struct TransitionBlocks {
    MatX xi11, xi12, xi21, xi22;
};

/// Linear-Gaussian dynamics x_t = F x_{t-1} + N(0, Q).
TransitionBlocks transitionBlocks(const MatX& transition, const MatX& processNoise);
/// Block-diagonal over users for the states; i.i.d. symbols contribute prior
/// information 2/symbolVar per real dimension to xi22 only.
TransitionBlocks transitionBlocks(const MobilityModel& model, int users, double symbolVar);

/// Fisher information of the complex-Gaussian observation at the true
/// parameters, (2/noiseVar) Re{J^H J}. Gains follow the path-loss magnitude of
/// the truth; blocked links are excluded.
MatX measurementBim(const SignalModel& model, const SlotTruth& truth, double powerW, double risEfficiency,
                    double noiseVar);

/// B_t = mea + xi22 - xi21 (prev + xi11)^-1 xi12.
BimMatrix bimRecursion(const BimMatrix& prev, const MatX& mea, const TransitionBlocks& blocks);

/// Prior information blkdiag(P0^-1 per user, 2/symbolVar I).
BimMatrix initialBim(const Mat4& initialCov, int users, double symbolVar);

/// trace(diag(v) B^-1); +inf when B is singular.
double weightedBcrb(const BimMatrix& b, const BcrbWeights& w);
/// sqrt of the trace of user k's position block of B^-1.
double positionBound(const BimMatrix& b, int user);

}  // namespace isac
