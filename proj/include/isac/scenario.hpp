#pragma once

// Geometric world model: anchors, user kinematics and the maps from user
// state to per-link angle, delay and Doppler.

#include "isac/common.hpp"

#include <vector>

namespace isac {

enum class AnchorKind { BaseStation, Ris };

/// A BS or RIS uniform linear array. `axis` is the unit vector along the
/// array, so cos(aoa) = axis . direction and aoa = pi/2 is broadside.
struct Anchor {
    Vec2 position = Vec2::Zero();
    Vec2 axis = Vec2(1.0, 0.0);
    int elementCount = 1;
    AnchorKind kind = AnchorKind::BaseStation;

    /// Throws DomainError unless the axis is unit-norm and elementCount >= 1.
    void validate() const;
};

struct UserState {
    Vec2 position = Vec2::Zero();
    Vec2 velocity = Vec2::Zero();

    Vec4 stacked() const;
    static UserState fromStacked(const Vec4& psi);
};

/// Constant-velocity dynamics psi_t = F psi_{t-1} + noise, noise ~ N(0, Q).
struct MobilityModel {
    double dt = 0.02;
    Mat4 transition = Mat4::Identity();
    Mat4 processNoiseCov = Mat4::Zero();

    /// White-acceleration model with spectral density q [m^2/s^3].
    static MobilityModel whiteAcceleration(double dt, double q);
    void validate() const;
};

struct LinkGeometry {
    double aoa = 0.0;       // [0, pi]
    double delay = 0.0;     // s
    double doppler = 0.0;   // Hz
    double distance = 0.0;  // m
    Vec2 direction = Vec2(1.0, 0.0);  // unit vector anchor -> far end
};

/// Static RIS-BS link: arrival angle at the BS and departure angle at the RIS.
struct RisBsGeometry {
    LinkGeometry atBs;
    LinkGeometry atRis;
};

Mat4 constantVelocityTransition(double dt);

UserState stepState(const UserState& state, const MobilityModel& model, const Vec4& noiseSample);

LinkGeometry linkGeometry(const UserState& state, const Anchor& anchor, double wavelength);

RisBsGeometry risToBsGeometry(const Anchor& ris, const Anchor& bs);

/// Anchors plus carrier and array constants shared by every link.
struct Scene {
    std::vector<Anchor> baseStations;
    std::vector<Anchor> ris;
    double carrierHz = 28e9;
    double spacingWavelengths = 0.5;

    double wavelength() const { return kSpeedOfLight / carrierHz; }
    /// Spatial phase step 2*pi*d/lambda of every ULA.
    double zetaS() const { return kTwoPi * spacingWavelengths; }
    void validate() const;
};

}  // namespace isac
