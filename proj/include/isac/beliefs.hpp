#pragma once

// Gaussian, complex-Gaussian and von Mises beliefs with their closed-form
// product, quotient and moment-matching rules.

#include "isac/common.hpp"

#include <vector>

namespace isac {

/// Concentration at or below which a von Mises belief counts as uninformative.
inline constexpr double kKappaMin = 1e-3;

struct GaussianBelief {
    VecX mean;
    MatX cov;
    bool diffuse = false;  // zero information; mean and cov are placeholders
    double logWeight = 0.0;

    static GaussianBelief make(VecX mean, MatX cov);
    static GaussianBelief makeDiffuse(int dim);
    int dim() const { return static_cast<int>(mean.size()); }
    /// Information matrix; zero when diffuse.
    MatX information() const;
    /// Information vector cov^-1 mean; zero when diffuse.
    VecX informationVector() const;
    static GaussianBelief fromInformation(const MatX& info, const VecX& infoVec);
};

struct ComplexGaussianBelief {
    cd mean{0.0, 0.0};
    double var = 1.0;  // > 0; +inf encodes a diffuse belief
    double logWeight = 0.0;
};

/// VM(x; mu, kappa) proportional to exp(kappa cos(x - mu)).
struct VonMisesBelief {
    double mu = 0.0;     // [-pi, pi)
    double kappa = 0.0;  // >= 0
    double logWeight = 0.0;

    cd natural() const { return std::polar(kappa, mu); }
    static VonMisesBelief fromNatural(cd eta);
    bool informative() const { return kappa > kKappaMin; }
};

VonMisesBelief vmMultiply(const VonMisesBelief& a, const VonMisesBelief& b);
VonMisesBelief vmDivide(const VonMisesBelief& a, const VonMisesBelief& b);

/// Laplace match of VM on x = scale*u + offset to a Gaussian on u. The mean is
/// the 2*pi/scale alias nearest `reference`. Diffuse when kappa <= kKappaMin.
GaussianBelief vmToGaussian(const VonMisesBelief& b, double scale, double offset, double reference);
/// Inverse map: VM on x = scale*u + offset with kappa = 1/(scale^2 var).
VonMisesBelief gaussianToVm(double mean, double var, double scale, double offset);

/// Precision-weighted product of Gaussian densities. Singular covariances get
/// jitter 1e-9*trace/dim. All inputs diffuse -> diffuse.
GaussianBelief gaussianFuse(const std::vector<GaussianBelief>& parts);
ComplexGaussianBelief complexGaussianFuse(const std::vector<ComplexGaussianBelief>& parts);

/// I1(kappa)/I0(kappa), in [0, 1), strictly increasing.
double besselRatio(double kappa);
/// I_|order|(kappa)/I_0(kappa) for arbitrary real order (characteristic
/// function magnitude of a VM variable at that order).
double besselRatio(double order, double kappa);
/// I_m(kappa)/I_0(kappa) for m = 0..maxOrder.
VecX besselRatios(int maxOrder, double kappa);

}  // namespace isac
