#include "isac/beliefs.hpp"

#include <gsl/gsl_errno.h>
#include <gsl/gsl_sf_bessel.h>
#include <spdlog/spdlog.h>

#include <limits>

namespace isac {

GaussianBelief GaussianBelief::make(VecX mean, MatX cov) {
    if (mean.size() != cov.rows() || cov.rows() != cov.cols())
        throw StructuralError("Gaussian belief dimension mismatch");
    GaussianBelief g;
    g.mean = std::move(mean);
    g.cov = 0.5 * (cov + cov.transpose());
    return g;
}

GaussianBelief GaussianBelief::makeDiffuse(int dim) {
    GaussianBelief g;
    g.mean = VecX::Zero(dim);
    g.cov = MatX::Identity(dim, dim) * 1e12;
    g.diffuse = true;
    return g;
}

namespace {

MatX regularizedInverse(const MatX& cov) {
    Eigen::LDLT<MatX> ldlt(cov);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive() && ldlt.vectorD().minCoeff() > 0.0 &&
        ldlt.rcond() > 1e-14)
        return ldlt.solve(MatX::Identity(cov.rows(), cov.cols()));
    const double jitter = 1e-9 * std::max(cov.trace(), 1e-300) / cov.rows();
    spdlog::debug("singular covariance regularized with jitter {}", jitter);
    MatX reg = cov + jitter * MatX::Identity(cov.rows(), cov.cols());
    return reg.ldlt().solve(MatX::Identity(cov.rows(), cov.cols()));
}

}  // namespace

MatX GaussianBelief::information() const {
    if (diffuse) return MatX::Zero(dim(), dim());
    return regularizedInverse(cov);
}

VecX GaussianBelief::informationVector() const {
    if (diffuse) return VecX::Zero(dim());
    return information() * mean;
}

GaussianBelief GaussianBelief::fromInformation(const MatX& info, const VecX& infoVec) {
    if (info.isZero(0.0)) return makeDiffuse(static_cast<int>(infoVec.size()));
    MatX cov = regularizedInverse(0.5 * (info + info.transpose()));
    return make(cov * infoVec, cov);
}

VonMisesBelief VonMisesBelief::fromNatural(cd eta) {
    VonMisesBelief b;
    b.kappa = std::abs(eta);
    b.mu = b.kappa > 0.0 ? wrapToPi(std::arg(eta)) : 0.0;
    return b;
}

VonMisesBelief vmMultiply(const VonMisesBelief& a, const VonMisesBelief& b) {
    VonMisesBelief r = VonMisesBelief::fromNatural(a.natural() + b.natural());
    r.logWeight = a.logWeight + b.logWeight;
    return r;
}

VonMisesBelief vmDivide(const VonMisesBelief& a, const VonMisesBelief& b) {
    const cd eta = a.natural() - b.natural();
    if (!std::isfinite(eta.real()) || !std::isfinite(eta.imag()))
        throw DomainError("von Mises quotient is not finite");
    VonMisesBelief r = VonMisesBelief::fromNatural(eta);
    r.logWeight = a.logWeight - b.logWeight;
    return r;
}

GaussianBelief vmToGaussian(const VonMisesBelief& b, double scale, double offset, double reference) {
    if (scale == 0.0 || !std::isfinite(scale)) throw DomainError("vmToGaussian needs a finite nonzero scale");
    if (!b.informative()) return GaussianBelief::makeDiffuse(1);
    // Aliases of the mode in u are spaced 2*pi/|scale| apart.
    const double xRef = scale * reference + offset;
    const double x = unwrapNear(b.mu, xRef);
    VecX m(1);
    MatX c(1, 1);
    m(0) = (x - offset) / scale;
    c(0, 0) = 1.0 / (b.kappa * scale * scale);
    return GaussianBelief::make(m, c);
}

VonMisesBelief gaussianToVm(double mean, double var, double scale, double offset) {
    if (!(var > 0.0)) throw DomainError("gaussianToVm needs positive variance");
    VonMisesBelief b;
    b.mu = wrapToPi(scale * mean + offset);
    b.kappa = 1.0 / (scale * scale * var);
    return b;
}

GaussianBelief gaussianFuse(const std::vector<GaussianBelief>& parts) {
    if (parts.empty()) throw StructuralError("gaussianFuse needs at least one belief");
    const int d = parts.front().dim();
    MatX info = MatX::Zero(d, d);
    VecX vec = VecX::Zero(d);
    for (const auto& p : parts) {
        if (p.dim() != d) throw StructuralError("gaussianFuse dimension mismatch");
        if (p.diffuse) continue;
        MatX li = p.information();
        info += li;
        vec += li * p.mean;
    }
    return GaussianBelief::fromInformation(info, vec);
}

ComplexGaussianBelief complexGaussianFuse(const std::vector<ComplexGaussianBelief>& parts) {
    double prec = 0.0;
    cd vec{0.0, 0.0};
    double logW = 0.0;
    for (const auto& p : parts) {
        if (!(p.var > 0.0)) throw DomainError("complex Gaussian variance must be positive");
        if (std::isinf(p.var)) continue;
        prec += 1.0 / p.var;
        vec += p.mean / p.var;
        logW += p.logWeight;
    }
    ComplexGaussianBelief r;
    r.logWeight = logW;
    if (prec == 0.0) {
        r.var = std::numeric_limits<double>::infinity();
        return r;
    }
    r.var = 1.0 / prec;
    r.mean = vec / prec;
    return r;
}

namespace {

struct GslErrorsOff {
    GslErrorsOff() { gsl_set_error_handler_off(); }
};
const GslErrorsOff gslErrorsOff;

// Above this concentration (scaled by 1 + order^2) the large-argument series is
// accurate to rounding and the GSL continued fraction would need O(kappa) terms.
constexpr double kAsymptoticKappa = 500.0;

bool asymptoticRegime(double order, double kappa) { return kappa > kAsymptoticKappa * (1.0 + order * order); }

/// sqrt(2 pi kappa) exp(-kappa) I_order(kappa) from the large-argument series.
double scaledBesselAsymptotic(double order, double kappa) {
    const double mu = 4.0 * order * order;
    double term = 1.0, sum = 1.0;
    for (int k = 1; k <= 8; ++k) {
        const double odd = 2.0 * k - 1.0;
        term *= -(mu - odd * odd) / (8.0 * kappa * k);
        sum += term;
    }
    return sum;
}

}  // namespace

double besselRatio(double kappa) { return besselRatio(1.0, kappa); }

double besselRatio(double order, double kappa) {
    if (!(kappa >= 0.0)) throw DomainError("besselRatio needs kappa >= 0");
    order = std::abs(order);
    if (order == 0.0) return 1.0;
    if (kappa == 0.0) return 0.0;
    if (!std::isfinite(kappa)) return 1.0;
    if (asymptoticRegime(order, kappa)) return scaledBesselAsymptotic(order, kappa) / scaledBesselAsymptotic(0.0, kappa);
    const double den = gsl_sf_bessel_I0_scaled(kappa);
    double num;
    const double rounded = std::round(order);
    if (std::abs(order - rounded) < 1e-15 && rounded < 1e6)
        num = gsl_sf_bessel_In_scaled(static_cast<int>(rounded), kappa);
    else
        num = gsl_sf_bessel_Inu_scaled(order, kappa);
    if (!std::isfinite(num) || !(den > 0.0)) return std::exp(-order * order / (2.0 * kappa));
    return num / den;
}

VecX besselRatios(int maxOrder, double kappa) {
    if (!(kappa >= 0.0)) throw DomainError("besselRatios needs kappa >= 0");
    VecX out = VecX::Zero(maxOrder + 1);
    out(0) = 1.0;
    if (maxOrder == 0 || kappa == 0.0) return out;
    if (!std::isfinite(kappa)) return VecX::Ones(maxOrder + 1);
    if (asymptoticRegime(maxOrder, kappa)) {
        const double den = scaledBesselAsymptotic(0.0, kappa);
        for (int m = 1; m <= maxOrder; ++m) out(m) = scaledBesselAsymptotic(m, kappa) / den;
        return out;
    }
    std::vector<double> buf(maxOrder + 1);
    const int status = gsl_sf_bessel_In_scaled_array(0, maxOrder, kappa, buf.data());
    if (status != GSL_SUCCESS || !(buf[0] > 0.0)) {
        for (int m = 1; m <= maxOrder; ++m) out(m) = besselRatio(double(m), kappa);
        return out;
    }
    for (int m = 1; m <= maxOrder; ++m) out(m) = buf[m] / buf[0];
    return out;
}

}  // namespace isac
