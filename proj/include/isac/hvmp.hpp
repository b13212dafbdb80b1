#pragma once

// Hybrid variational message passing: per-slot joint tracking of user states,
// link indicators and symbols from the per-BS observations.

#include "isac/beliefs.hpp"
#include "isac/synth.hpp"

#include <optional>

namespace isac {

enum class EstimatorMode { Hvmp, Pilot, PositionOnly };

struct HvmpConfig {
    int outerIters = 8;
    int innerIters = 10;
    double outerTolM = 1e-4;
    int newtonSteps = 5;
    double damping = 0.7;             // weight of the new extrinsic natural parameters
    double llrThreshold = 6.0;        // nats
    bool intraGroupApprox = true;     // a_T(nu) = 1 inside the estimator
    EstimatorMode mode = EstimatorMode::Hvmp;

    void validate() const;
};

/// Beliefs on the three phase variables of one link group.
struct LinkVmBeliefs {
    std::array<VonMisesBelief, 3> incoming;   // prediction -> link (tau, nu, theta)
    std::array<VonMisesBelief, 3> extrinsic;  // link -> state
};

struct UserBelief {
    GaussianBelief state;  // joint [position; velocity]
    ComplexGaussianBelief symbol;
};

struct SlotBeliefState {
    std::vector<UserBelief> users;
    std::vector<std::vector<LinkVmBeliefs>> ub;  // [k][g]
    std::vector<std::vector<LinkVmBeliefs>> ui;  // [k][r]
};

/// Prior state for the first slot: joint Gaussian per user, symbol prior.
SlotBeliefState initialBeliefs(const std::vector<Vec4>& means, const Mat4& cov, int bs, int ris);

// ---- VMP inner loop --------------------------------------------------------

struct PhaseBelief {
    LinkPhases mu;
    LinkConcentrations kappa;
};

struct VmpSurrogate {
    std::vector<std::vector<PhaseBelief>> ub;  // [k][g]
    std::vector<std::vector<PhaseBelief>> ui;  // [k][r]
    std::vector<CVec> w;                       // per BS, linksAtBs order
    std::vector<CMat> cov;                     // per BS, zero outside the support
    std::vector<std::vector<int>> active;      // per BS, linksAtBs order
};

/// Messages entering the inner loop.
struct VmpIncoming {
    std::vector<std::vector<std::array<VonMisesBelief, 3>>> ub;  // [k][g]
    std::vector<std::vector<std::array<VonMisesBelief, 3>>> ui;  // [k][r]
    std::vector<std::vector<ComplexGaussianBelief>> wPrior;     // per BS, linksAtBs order
    std::vector<std::vector<double>> activeVar;                 // per BS: prior variance of w if the link exists
};

struct VmpOptions {
    int sweeps = 10;
    int newtonSteps = 5;
    double llrThreshold = 6.0;
    bool updateConcentrations = true;
    bool detectLinks = true;
    double tol = 1e-10;  // stop when no phase mode moves more than this and the support is unchanged
};

/// Surrogate with modes at `mu`, concentrations `kappa`, all links active and
/// w from one matched-filter pass.
VmpSurrogate initSurrogate(const SignalModel& model, const ReceivedBlock& obs, int users,
                           const std::vector<std::vector<PhaseBelief>>& ub,
                           const std::vector<std::vector<PhaseBelief>>& ui, const VmpIncoming& in);

VmpSurrogate vmpInner(const SignalModel& model, const ReceivedBlock& obs, int users, const VmpIncoming& in,
                      VmpSurrogate s, const VmpOptions& opt);

/// Evidence lower bound of the surrogate (up to a constant).
double surrogateElbo(const SignalModel& model, const ReceivedBlock& obs, int users, const VmpIncoming& in,
                     const VmpSurrogate& s);

/// Residual-based LLR of link `idx` at BS g being present versus absent.
double linkLlr(const SignalModel& model, const ReceivedBlock& obs, int users, const VmpSurrogate& s, int g, int idx,
               double activeVar);

/// Decision rule: w_ls ~ CN(0, s0) when absent, CN(0, s0 + activeVar) when present.
double linkLlrFromEstimate(cd wLs, double s0, double activeVar);

/// Parallel decisions for least-squares estimates `wLs` (mean, var = s0).
std::vector<int> linkDetect(const std::vector<ComplexGaussianBelief>& wLs, const std::vector<double>& activeVar,
                            double threshold);

// ---- Message conversions ---------------------------------------------------

struct PhaseScales {
    double zetaS = kPi;
    double zetaF = 0.0;       // delay phase per second
    double zetaTGroup = 0.0;  // Doppler phase per Hz
    double wavelength = 0.0;

    static PhaseScales of(const SignalModel& m);
};

/// Polar (angle, range) evidence about `anchor` as a 2D Gaussian on position.
/// Diffuse when either belief is uninformative or the range is not positive.
GaussianBelief perLinkPositionMessage(const VonMisesBelief& theta, const VonMisesBelief& tau, const Anchor& anchor,
                                      const GaussianBelief& reference, const PhaseScales& sc);

/// VM message on x_nu = -zetaTGroup * nu from a velocity belief projected on `direction`.
VonMisesBelief dopplerPredictionMessage(const GaussianBelief& velocity, const Vec2& direction, const PhaseScales& sc);

struct VelocityEvidence {
    GaussianBelief posterior;  // prior fused with the Doppler evidence
    Mat2 info = Mat2::Zero();  // information contributed by the Doppler messages
    Vec2 infoVec = Vec2::Zero();
    bool informative = false;
};

/// Objective sum_l kappa_l cos(a v^T e_l + mu_l), a = zetaTGroup / lambda.
double dopplerObjective(const std::vector<VonMisesBelief>& msgs, const std::vector<Vec2>& dirs, double a,
                        const Vec2& v);
Vec2 dopplerGradient(const std::vector<VonMisesBelief>& msgs, const std::vector<Vec2>& dirs, double a, const Vec2& v);
Mat2 dopplerHessian(const std::vector<VonMisesBelief>& msgs, const std::vector<Vec2>& dirs, double a, const Vec2& v);

/// Newton maximization of the Doppler objective plus the log prior.
VelocityEvidence velocityFusion(const std::vector<VonMisesBelief>& msgs, const GaussianBelief& priorVel,
                                const std::vector<Vec2>& directions, const PhaseScales& sc);

GaussianBelief positionFusion(const std::vector<GaussianBelief>& msgs);

/// Evidence about one user's state, one entry per link variable group
/// (UB per BS, then UI per RIS).
struct StateEvidence {
    std::vector<GaussianBelief> position;  // 2D, diffuse when absent
    std::vector<VonMisesBelief> doppler;
    std::vector<Vec2> directions;  // anchor -> user
};

/// Predicted joint state times all evidence except entry `skip` (-1 keeps all).
/// Doppler evidence enters through velocityFusion when `useDoppler`.
GaussianBelief leaveOneOutState(const GaussianBelief& predicted, const StateEvidence& ev, int skip,
                                const PhaseScales& sc, bool useDoppler);

/// Precision fusion of per-link pseudo-observations of the symbol with the prior.
ComplexGaussianBelief symbolFusion(const std::vector<ComplexGaussianBelief>& observations, const SymbolPrior& prior);

/// Kalman predict of each user's joint state.
SlotBeliefState forwardPredict(const SlotBeliefState& posterior, const MobilityModel& model);

// ---- Slot driver -----------------------------------------------------------

struct SlotContext {
    double powerW = 1.0;
    double risEfficiency = 1.0;
    SymbolPrior symbolPrior;
    std::vector<cd> pilotSymbols;  // required in pilot mode
    bool gainPhaseKnown = true;    // false: w priors are zero-mean and symbols are not fused
};

struct SlotEstimates {
    std::vector<UserState> states;
    std::vector<cd> symbols;
    std::vector<std::vector<int>> alphaUB;               // [k][g]
    std::vector<std::vector<std::vector<int>>> alphaUI;  // [k][g][r]
};

struct OuterTraceRow {
    int iteration = 0;
    int user = 0;
    Vec2 position = Vec2::Zero();
    double elbo = 0.0;
    int activeLinks = 0;
};

struct SlotResult {
    SlotBeliefState posterior;
    SlotEstimates estimates;
    bool diverged = false;
    int iterations = 0;
    std::vector<OuterTraceRow> trace;
};

SlotResult runSlot(const SignalModel& model, const ReceivedBlock& obs, const SlotBeliefState& prior,
                   const HvmpConfig& cfg, const SlotContext& ctx);

}  // namespace isac
