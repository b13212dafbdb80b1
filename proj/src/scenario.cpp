#include "isac/scenario.hpp"

#include <algorithm>

namespace isac {

void Anchor::validate() const {
    if (!position.allFinite() || !axis.allFinite()) throw DomainError("anchor has non-finite fields");
    if (std::abs(axis.norm() - 1.0) > 1e-12) throw DomainError("anchor axis must be unit norm");
    if (elementCount < 1) throw DomainError("anchor needs at least one element");
}

Vec4 UserState::stacked() const {
    Vec4 psi;
    psi << position, velocity;
    return psi;
}

UserState UserState::fromStacked(const Vec4& psi) {
    return UserState{psi.head<2>(), psi.tail<2>()};
}

Mat4 constantVelocityTransition(double dt) {
    Mat4 f = Mat4::Identity();
    f.block<2, 2>(0, 2) = dt * Mat2::Identity();
    return f;
}

MobilityModel MobilityModel::whiteAcceleration(double dt, double q) {
    if (!(dt > 0.0) || !(q >= 0.0)) throw DomainError("mobility model needs dt > 0 and q >= 0");
    MobilityModel m;
    m.dt = dt;
    m.transition = constantVelocityTransition(dt);
    const Mat2 i2 = Mat2::Identity();
    m.processNoiseCov.block<2, 2>(0, 0) = q * dt * dt * dt / 3.0 * i2;
    m.processNoiseCov.block<2, 2>(0, 2) = q * dt * dt / 2.0 * i2;
    m.processNoiseCov.block<2, 2>(2, 0) = q * dt * dt / 2.0 * i2;
    m.processNoiseCov.block<2, 2>(2, 2) = q * dt * i2;
    return m;
}

void MobilityModel::validate() const {
    if (!(dt > 0.0)) throw DomainError("mobility dt must be positive");
    if ((transition - constantVelocityTransition(dt)).cwiseAbs().maxCoeff() > 1e-12)
        throw DomainError("transition must be the constant-velocity block form");
    if ((processNoiseCov - processNoiseCov.transpose()).cwiseAbs().maxCoeff() > 1e-12)
        throw DomainError("process noise covariance must be symmetric");
    Eigen::SelfAdjointEigenSolver<Mat4> es(processNoiseCov);
    if (es.eigenvalues().minCoeff() < -1e-12) throw DomainError("process noise covariance must be PSD");
}

UserState stepState(const UserState& state, const MobilityModel& model, const Vec4& noiseSample) {
    const Vec4 psi = state.stacked();
    if (!psi.allFinite() || !noiseSample.allFinite()) throw DomainError("stepState: non-finite input");
    return UserState::fromStacked(model.transition * psi + noiseSample);
}

namespace {

LinkGeometry geometryBetween(const Vec2& anchorPos, const Vec2& axis, const Vec2& farPos) {
    if (!anchorPos.allFinite() || !farPos.allFinite()) throw DomainError("linkGeometry: non-finite input");
    const Vec2 diff = farPos - anchorPos;
    const double d = diff.norm();
    if (!(d > 0.0)) throw SingularGeometryError("linkGeometry: coincident positions");
    LinkGeometry g;
    g.distance = d;
    g.direction = diff / d;
    g.aoa = std::acos(std::clamp(axis.dot(g.direction), -1.0, 1.0));
    g.delay = d / kSpeedOfLight;
    return g;
}

}  // namespace

LinkGeometry linkGeometry(const UserState& state, const Anchor& anchor, double wavelength) {
    if (!std::isfinite(wavelength) || !(wavelength > 0.0)) throw DomainError("wavelength must be positive");
    if (!state.velocity.allFinite()) throw DomainError("linkGeometry: non-finite velocity");
    LinkGeometry g = geometryBetween(anchor.position, anchor.axis, state.position);
    g.doppler = state.velocity.dot(g.direction) / wavelength;
    return g;
}

RisBsGeometry risToBsGeometry(const Anchor& ris, const Anchor& bs) {
    RisBsGeometry out;
    out.atBs = geometryBetween(bs.position, bs.axis, ris.position);
    out.atRis = geometryBetween(ris.position, ris.axis, bs.position);
    out.atBs.doppler = 0.0;
    out.atRis.doppler = 0.0;
    return out;
}

void Scene::validate() const {
    if (baseStations.empty()) throw DomainError("scene needs at least one base station");
    for (const auto& a : baseStations) a.validate();
    for (const auto& a : ris) a.validate();
    if (!(carrierHz > 0.0) || !(spacingWavelengths > 0.0)) throw DomainError("carrier and spacing must be positive");
}

}  // namespace isac
