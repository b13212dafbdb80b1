#pragma once

// Vectorized per-BS observation y_g = sum_l w_l a_l + z.
//
// Layout contract: element index ((n*I + i)*Q1 + q)*M_B + m, i.e. the
// Kronecker order delay (slowest) x group x intra-group symbol x BS antenna.
//
// Every link steering vector is a Kronecker product of three factors driven by
// phase-domain variables x = -zeta*u:
//   delay    x_tau   = -zetaF * tau           F[n]    = exp(j n (x_tau + c))
//   Doppler  x_nu    = -zetaTGroup * nu       H[i,q]  = exp(j (i + q/deltaQ) x_nu) [* T_q]
//   angle    x_theta = -zetaS * cos(theta)    B[m]    = exp(j m x_theta)
// For user-RIS-BS links, c = -zetaF*tau_IB, H carries the RIS beamspace
// response T_q = sum_m Psi(m,q) exp(j m (x_aod + x_theta)) and B is the fixed
// BS response toward the RIS.

#include "isac/channel.hpp"
#include "isac/protocol.hpp"

#include <array>
#include <limits>
#include <string>
#include <vector>

namespace isac {

CVec delaySteering(double tau, int nI, double zetaF);
CVec dopplerSteering(double nu, int len, double zeta);
/// (Psi^T (a_I(aod) .* a_I(aoa))) .* a_T(nu); `intraZeta` = zetaT, or 0 for the a_T = 1 approximation.
CVec risBeamspaceSteering(const CMat& psi, double aod, double aoa, double nu, double zetaS, double intraZeta);
CVec kron(const CVec& a, const CVec& b);

enum class LinkKind { UB, UI };

struct LinkId {
    LinkKind kind = LinkKind::UB;
    int user = 0;
    int bs = 0;
    int ris = -1;
};

/// Phase-domain variables of one link (x_tau, x_nu, x_theta).
struct LinkPhases {
    double tau = 0.0;
    double nu = 0.0;
    double theta = 0.0;

    std::array<double, 3> array() const { return {tau, nu, theta}; }
    static LinkPhases fromArray(const std::array<double, 3>& a) { return {a[0], a[1], a[2]}; }
};

/// VM concentrations of the three phase variables; +inf means a point value.
struct LinkConcentrations {
    double tau = std::numeric_limits<double>::infinity();
    double nu = std::numeric_limits<double>::infinity();
    double theta = std::numeric_limits<double>::infinity();
};

/// Kronecker factors of one link and their derivatives up to second order.
/// f[d] = d^d F / dx_tau^d; h[a][b] = d^(a+b) H / dx_nu^a dx_theta^b;
/// bs[d] = d^d B / dx_theta^d. `thetaInH` says which factor depends on x_theta.
struct LinkFactors {
    std::array<CVec, 3> f;
    std::array<std::array<CVec, 3>, 3> h;
    std::array<CVec, 3> bs;
    bool thetaInH = false;
    int order = 0;

    int length() const { return static_cast<int>(f[0].size() * h[0][0].size() * bs[0].size()); }
    /// Factor triple for the derivative multi-index (dTau, dNu, dTheta).
    struct Triple {
        const CVec* f;
        const CVec* h;
        const CVec* b;
    };
    Triple triple(int dTau, int dNu, int dTheta) const;
    CVec vector(int dTau = 0, int dNu = 0, int dTheta = 0) const;
};

/// eta^H (F kron H kron B) with partial contractions cached per B variant.
class KronContractor {
public:
    KronContractor(const CVec& eta, int nF, int nH, int nB);
    cd operator()(const CVec& f, const CVec& h, const CVec& b);
    cd operator()(const LinkFactors::Triple& t) { return (*this)(*t.f, *t.h, *t.b); }

private:
    const CVec& eta_;
    int nF_, nH_, nB_;
    std::vector<std::pair<const CVec*, CMat>> cache_;
};

/// Static description of the array/grid/schedule shared by synthesis, the
/// bound and the estimator.
class SignalModel {
public:
    SignalModel(Scene scene, IsacGrid grid, RisSchedule schedule, bool intraGroupApprox);

    const Scene& scene() const { return scene_; }
    const IsacGrid& grid() const { return grid_; }
    const RisSchedule& schedule() const { return schedule_; }
    void setSchedule(RisSchedule s);
    bool intraGroupApprox() const { return approx_; }

    int bsCount() const { return static_cast<int>(scene_.baseStations.size()); }
    int risCount() const { return static_cast<int>(scene_.ris.size()); }
    int length(int g) const;
    int hLength() const { return grid_.groups * grid_.q1; }

    double zetaS() const { return scene_.zetaS(); }
    double zetaF() const { return grid_.zetaF(); }
    double zetaTGroup() const { return grid_.zetaTGroup(); }
    double wavelength() const { return scene_.wavelength(); }

    const RisBsGeometry& risBs(int g, int r) const { return risBs_[g][r]; }
    /// Delay offset c = -zetaF*tau_IB of the RIS-BS segment.
    double risDelayPhase(int g, int r) const;
    /// Departure phase x_aod = -zetaS*cos(aod at RIS toward BS g).
    double risAodPhase(int g, int r) const;

    LinkPhases phases(const LinkId& id, const UserState& s) const;
    LinkGeometry geometry(const LinkId& id, const UserState& s) const;
    /// d(x_tau, x_nu, x_theta)/d(position, velocity), rows in that order.
    Eigen::Matrix<double, 3, 4> phaseJacobian(const LinkId& id, const UserState& s) const;

    /// Factors at `mu`; finite concentrations give the VM expectation E[a].
    LinkFactors factors(const LinkId& id, const LinkPhases& mu, int order,
                        const LinkConcentrations& kappa = {}) const;
    CVec steering(const LinkId& id, const LinkPhases& mu) const;
    /// ||a||^2 of a UI link and its x_theta derivatives up to second order,
    /// or its VM expectation for finite kappaTheta. UB links return (L, 0, 0).
    std::array<double, 3> squaredNorm(const LinkId& id, double muTheta, double kappaTheta) const;

private:
    Scene scene_;
    IsacGrid grid_;
    RisSchedule schedule_;
    bool approx_;
    std::vector<std::vector<RisBsGeometry>> risBs_;
    std::vector<std::vector<CVec>> risBsArray_;
};

/// Links seen at BS g, ordered by user, UB first then RIS index.
std::vector<LinkId> linksAtBs(const SignalModel& model, int users, int g);

struct EffectiveSignal {
    std::vector<std::vector<cd>> ub;               // [k][g]
    std::vector<std::vector<std::vector<cd>>> ui;  // [k][g][r]
};

/// Per-slot ground truth the observation depends on.
struct SlotTruth {
    std::vector<UserState> users;
    std::vector<cd> symbols;
    BlockageState alpha;
    std::vector<std::vector<cd>> gainUB;  // [k][g]
    std::vector<std::vector<cd>> gainUI;  // [k][r]
    std::vector<std::vector<cd>> gainIB;  // [g][r]
};

/// w = sqrt(P) s alpha beta; cascaded links multiply both segments and `risEfficiency`.
EffectiveSignal effectiveSignals(const SlotTruth& truth, double powerW, double risEfficiency);

struct ReceivedBlock {
    std::vector<CVec> perBs;
    double noiseVar = 0.0;
};

/// y_g = sum_k (w_UB a_UB + sum_r w_UI a_UI) + z with z ~ CN(0, noiseVar I).
/// Links with w == 0 are skipped exactly.
ReceivedBlock assembleObservation(const SignalModel& model, const std::vector<UserState>& users,
                                  const EffectiveSignal& signals, double noiseVar, Rng& rng);

/// Writes `<stem>.bin` (interleaved re/im float64, little-endian, BS-major)
/// and `<stem>.json` (dimensions and layout).
void dumpBlock(const ReceivedBlock& block, const SignalModel& model, const std::string& stem);

}  // namespace isac
