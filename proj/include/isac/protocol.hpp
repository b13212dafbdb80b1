#pragma once

// ISAC resource-element grid, repetition-coded symbols and RIS phase schedules.

#include "isac/rng.hpp"
#include "isac/common.hpp"

#include <vector>

namespace isac {

/// Comb-patterned ISAC set: N_I subcarriers spaced deltaN apart, and I groups
/// of q1 consecutive OFDM symbols with group starts spaced deltaQ apart.
struct IsacGrid {
    int q1 = 2;
    int groups = 1;
    int deltaQ = 2;
    int nI = 1;
    int deltaN = 1;
    double subcarrierSpacing = 10e6 / 12.0;  // Hz
    double cpRatio = 0.25;                   // J / N

    double symbolPeriod() const { return (1.0 + cpRatio) / subcarrierSpacing; }
    /// Delay phase per used subcarrier step [rad/s].
    double zetaF() const { return kTwoPi * subcarrierSpacing * deltaN; }
    /// Doppler phase per consecutive OFDM symbol [rad*s].
    double zetaT() const { return kTwoPi * symbolPeriod(); }
    /// Doppler phase per group step [rad*s].
    double zetaTGroup() const { return zetaT() * deltaQ; }

    /// 1-based subcarrier indices, strictly increasing.
    std::vector<int> subcarrierSet() const;
    /// 1-based OFDM symbol indices of all groups, strictly increasing.
    std::vector<int> symbolSet() const;
    int elementCount() const { return q1 * groups * nI; }
    void validate() const;
};

IsacGrid buildGrid(int q1, int groups, int deltaQ, int nI, int deltaN,
                   double subcarrierSpacing = 10e6 / 12.0, double cpRatio = 0.25);

/// One M_I x Q1 unit-modulus phase matrix per RIS; column q is reused by the
/// q-th symbol of every group.
struct RisSchedule {
    std::vector<CMat> perRis;

    void validate() const;
};

CMat randomRisProfile(Rng& rng, int mI, int q1);
RisSchedule randomRisSchedule(Rng& rng, const std::vector<int>& elementCounts, int q1);

/// Unit-modulus matrix from element phases [rad].
CMat profileFromAngles(const MatX& angles);
MatX anglesFromProfile(const CMat& profile);

/// DFT codewords c_b[m] = exp(j 2 pi b m / mI) nearest in spatial frequency to
/// the targets. `targets[k]` lists the composite phase steps
/// zetaS*(cos(aod) + cos(aoa)) of user k (one per BS). Users pick their next
/// nearest unused bin round-robin, cycling through their own targets, so each
/// user receives floor(q1/K) columns and the first q1 mod K users one more.
CMat dftRisProfile(int mI, const std::vector<std::vector<double>>& targets, int q1);

enum class SymbolPriorKind { ComplexGaussian, Qpsk };

struct SymbolPrior {
    SymbolPriorKind kind = SymbolPriorKind::ComplexGaussian;
    double variance = 1.0;

    cd sample(Rng& rng) const;
};

/// Per-element noise variance from a PSD [dBm/Hz] and bandwidth [Hz], in watts.
double noiseVariance(double psdDbmPerHz, double bandwidthHz);

}  // namespace isac
