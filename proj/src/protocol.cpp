#include "isac/protocol.hpp"

#include <algorithm>

namespace isac {

std::vector<int> IsacGrid::subcarrierSet() const {
    std::vector<int> out(nI);
    for (int n = 0; n < nI; ++n) out[n] = 1 + n * deltaN;
    return out;
}

std::vector<int> IsacGrid::symbolSet() const {
    std::vector<int> out;
    out.reserve(q1 * groups);
    for (int i = 0; i < groups; ++i)
        for (int q = 1; q <= q1; ++q) out.push_back(q + i * deltaQ);
    return out;
}

void IsacGrid::validate() const {
    if (q1 <= 1) throw ConfigError("q1 must exceed 1");
    if (groups < 1) throw ConfigError("groups must be >= 1");
    if (deltaQ < q1) throw ConfigError("deltaQ < q1 makes symbol groups overlap");
    if (nI < 1 || deltaN < 1) throw ConfigError("subcarrier count and spacing must be >= 1");
    if (!(subcarrierSpacing > 0.0)) throw ConfigError("subcarrier spacing must be positive");
    if (!(cpRatio >= 0.0)) throw ConfigError("cp ratio must be nonnegative");
}

IsacGrid buildGrid(int q1, int groups, int deltaQ, int nI, int deltaN, double subcarrierSpacing, double cpRatio) {
    IsacGrid g{q1, groups, deltaQ, nI, deltaN, subcarrierSpacing, cpRatio};
    g.validate();
    return g;
}

void RisSchedule::validate() const {
    for (const CMat& psi : perRis) {
        if ((psi.array().abs() - 1.0).abs().maxCoeff() > 1e-9)
            throw StructuralError("RIS schedule entries must be unit-modulus");
        for (int a = 0; a < psi.cols(); ++a)
            for (int b = a + 1; b < psi.cols(); ++b)
                if ((psi.col(a) - psi.col(b)).norm() < 1e-12)
                    throw StructuralError("RIS schedule columns must be pairwise distinct");
    }
}

CMat randomRisProfile(Rng& rng, int mI, int q1) {
    std::uniform_real_distribution<double> u(0.0, kTwoPi);
    CMat psi(mI, q1);
    for (int q = 0; q < q1; ++q)
        for (int m = 0; m < mI; ++m) psi(m, q) = std::polar(1.0, u(rng));
    return psi;
}

RisSchedule randomRisSchedule(Rng& rng, const std::vector<int>& elementCounts, int q1) {
    RisSchedule s;
    for (int mI : elementCounts) s.perRis.push_back(randomRisProfile(rng, mI, q1));
    return s;
}

CMat profileFromAngles(const MatX& angles) {
    CMat psi(angles.rows(), angles.cols());
    for (int c = 0; c < angles.cols(); ++c)
        for (int r = 0; r < angles.rows(); ++r) psi(r, c) = std::polar(1.0, angles(r, c));
    return psi;
}

MatX anglesFromProfile(const CMat& profile) { return profile.array().arg().matrix(); }

CMat dftRisProfile(int mI, const std::vector<std::vector<double>>& targets, int q1) {
    if (q1 > mI) throw ConfigError("DFT profile needs q1 <= RIS element count");
    if (targets.empty()) throw ConfigError("DFT profile needs at least one user target");
    const int users = static_cast<int>(targets.size());
    std::vector<bool> used(mI, false);
    std::vector<int> picks(users, 0);
    CMat psi(mI, q1);
    // Codeword b matches steps s with s/(2 pi) = b/mI (mod 1).
    auto circularDistance = [mI](double bins, int b) {
        double d = std::fmod(std::abs(bins - b), double(mI));
        return std::min(d, mI - d);
    };
    for (int col = 0; col < q1; ++col) {
        const int k = col % users;
        const auto& tk = targets[k];
        if (tk.empty()) throw ConfigError("DFT profile user without targets");
        const double bins = tk[picks[k] % tk.size()] / kTwoPi * mI;
        ++picks[k];
        int best = -1;
        double bestD = 1e300;
        for (int b = 0; b < mI; ++b) {
            if (used[b]) continue;
            const double d = circularDistance(bins, b);
            if (d < bestD - 1e-12) {
                bestD = d;
                best = b;
            }
        }
        used[best] = true;
        for (int m = 0; m < mI; ++m) psi(m, col) = std::polar(1.0, kTwoPi * best * m / mI);
    }
    return psi;
}

cd SymbolPrior::sample(Rng& rng) const {
    if (kind == SymbolPriorKind::Qpsk) {
        std::uniform_int_distribution<int> u(0, 3);
        return std::polar(std::sqrt(variance), kPi / 4.0 + kPi / 2.0 * u(rng));
    }
    std::normal_distribution<double> n(0.0, std::sqrt(variance / 2.0));
    const double re = n(rng);
    const double im = n(rng);
    return {re, im};
}

double noiseVariance(double psdDbmPerHz, double bandwidthHz) {
    if (!(bandwidthHz > 0.0)) throw DomainError("bandwidth must be positive");
    return dbmToWatts(psdDbmPerHz) * bandwidthHz;
}

}  // namespace isac
