#pragma once

// RIS phase-profile design: gradient descent on the weighted Bayesian bound
// at a predicted operating point.

#include "isac/bcrb.hpp"

#include <functional>
#include <string>

namespace isac {

/// Phase angles in radians, one M_I x Q1 matrix per RIS. Any real angles map
/// to unit-modulus reflection coefficients.
struct PhaseProfile {
    std::vector<MatX> anglesPerRis;

    RisSchedule schedule() const;
    static PhaseProfile fromSchedule(const RisSchedule& s);
    int size() const;
    VecX flatten() const;
    PhaseProfile unflattened(const VecX& x) const;
};

/// Operating point and recursion inputs of the bound being minimized.
struct RisOptContext {
    const SignalModel* model = nullptr;
    SlotTruth point;  // predicted states, unit-magnitude symbols, nominal gains
    double powerW = 1.0;
    double risEfficiency = 1.0;
    double noiseVar = 1.0;
    BimMatrix previous;
    TransitionBlocks blocks;
};

/// Nominal operating point: predicted states, unit symbols, every link visible,
/// zero-phase path-loss gains.
SlotTruth nominalPoint(const SignalModel& model, const std::vector<UserState>& predicted);

double objective(const PhaseProfile& profile, const RisOptContext& ctx, const BcrbWeights& w);
/// Forward differences with step h per angle.
std::vector<MatX> gradient(const PhaseProfile& profile, const RisOptContext& ctx, const BcrbWeights& w,
                           double h = 1e-5);

struct ArmijoParams {
    double c1 = 1e-4;
    double shrink = 0.5;
    int maxBacktracks = 30;
    double maxAngleStep = 0.5;  // radians; first trial step of every iteration
};

struct OptimizerReport {
    int iterations = 0;
    std::vector<double> trajectory;  // objective before the first and after every accepted step
    std::vector<double> steps;
    double finalGradientNorm = 0.0;
    bool stalled = false;
};

/// Armijo gradient descent on a generic smooth function. Stops when
/// stepNorm(accepted displacement) falls below eps or after maxIters;
/// stepNorm defaults to the Euclidean norm.
std::pair<VecX, OptimizerReport> armijoDescent(const VecX& x0, const std::function<double(const VecX&)>& f,
                                               const std::function<VecX(const VecX&)>& grad, const ArmijoParams& p,
                                               double eps, int maxIters,
                                               const std::function<double(const VecX&)>& stepNorm = {});

std::pair<PhaseProfile, OptimizerReport> optimize(const PhaseProfile& init, const RisOptContext& ctx,
                                                  const BcrbWeights& w, const ArmijoParams& p = {}, double eps = 1e-4,
                                                  int maxIters = 100);

/// CSV with header `ris,element,column,angle_rad`.
void writeProfileCsv(const std::string& path, const PhaseProfile& profile);
PhaseProfile readProfileCsv(const std::string& path);

}  // namespace isac
