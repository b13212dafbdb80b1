#include "isac/synth.hpp"
#include "isac/beliefs.hpp"

#include <json.hpp>

#include <fstream>

namespace isac {

CVec delaySteering(double tau, int nI, double zetaF) {
    if (nI < 1) throw DomainError("delaySteering needs nI >= 1");
    CVec v(nI);
    for (int n = 0; n < nI; ++n) v[n] = std::polar(1.0, -zetaF * n * tau);
    return v;
}

CVec dopplerSteering(double nu, int len, double zeta) {
    if (len < 1) throw DomainError("dopplerSteering needs len >= 1");
    CVec v(len);
    for (int m = 0; m < len; ++m) v[m] = std::polar(1.0, -zeta * m * nu);
    return v;
}

CVec risBeamspaceSteering(const CMat& psi, double aod, double aoa, double nu, double zetaS, double intraZeta) {
    const int mI = static_cast<int>(psi.rows());
    CVec composite(mI);
    const double step = -zetaS * (std::cos(aod) + std::cos(aoa));
    for (int m = 0; m < mI; ++m) composite[m] = std::polar(1.0, step * m);
    CVec out = psi.transpose() * composite;
    for (int q = 0; q < out.size(); ++q) out[q] *= std::polar(1.0, -intraZeta * q * nu);
    return out;
}

CVec kron(const CVec& a, const CVec& b) {
    CVec out(a.size() * b.size());
    for (Eigen::Index i = 0; i < a.size(); ++i) out.segment(i * b.size(), b.size()) = a[i] * b;
    return out;
}

LinkFactors::Triple LinkFactors::triple(int dTau, int dNu, int dTheta) const {
    if (thetaInH) return {&f[dTau], &h[dNu][dTheta], &bs[0]};
    return {&f[dTau], &h[dNu][0], &bs[dTheta]};
}

CVec LinkFactors::vector(int dTau, int dNu, int dTheta) const {
    const Triple t = triple(dTau, dNu, dTheta);
    return kron(*t.f, kron(*t.h, *t.b));
}

KronContractor::KronContractor(const CVec& eta, int nF, int nH, int nB) : eta_(eta), nF_(nF), nH_(nH), nB_(nB) {
    if (eta.size() != static_cast<Eigen::Index>(nF) * nH * nB)
        throw StructuralError("contraction length mismatch");
}

cd KronContractor::operator()(const CVec& f, const CVec& h, const CVec& b) {
    const CMat* u = nullptr;
    for (auto& [key, val] : cache_)
        if (key == &b) u = &val;
    if (!u) {
        Eigen::Map<const CMat> e(eta_.data(), nB_, static_cast<Eigen::Index>(nH_) * nF_);
        CVec flat = e.adjoint() * b;
        cache_.emplace_back(&b, Eigen::Map<CMat>(flat.data(), nH_, nF_));
        u = &cache_.back().second;
    }
    const CVec z = u->transpose() * h;
    return (z.array() * f.array()).sum();
}

SignalModel::SignalModel(Scene scene, IsacGrid grid, RisSchedule schedule, bool intraGroupApprox)
    : scene_(std::move(scene)), grid_(grid), schedule_(std::move(schedule)), approx_(intraGroupApprox) {
    scene_.validate();
    grid_.validate();
    if (static_cast<int>(schedule_.perRis.size()) != risCount())
        throw StructuralError("RIS schedule count does not match the scene");
    setSchedule(schedule_);
    risBs_.assign(bsCount(), {});
    risBsArray_.assign(bsCount(), {});
    for (int g = 0; g < bsCount(); ++g)
        for (int r = 0; r < risCount(); ++r) {
            risBs_[g].push_back(risToBsGeometry(scene_.ris[r], scene_.baseStations[g]));
            risBsArray_[g].push_back(
                isac::steering(risBs_[g][r].atBs.aoa, scene_.baseStations[g].elementCount, zetaS()).entries);
        }
}

void SignalModel::setSchedule(RisSchedule s) {
    if (static_cast<int>(s.perRis.size()) != risCount()) throw StructuralError("RIS schedule count mismatch");
    for (int r = 0; r < risCount(); ++r)
        if (s.perRis[r].rows() != scene_.ris[r].elementCount || s.perRis[r].cols() != grid_.q1)
            throw StructuralError("RIS schedule must be M_I x Q1");
    schedule_ = std::move(s);
}

int SignalModel::length(int g) const {
    return grid_.nI * hLength() * scene_.baseStations.at(g).elementCount;
}

double SignalModel::risDelayPhase(int g, int r) const { return -zetaF() * risBs_[g][r].atRis.delay; }

double SignalModel::risAodPhase(int g, int r) const { return -zetaS() * std::cos(risBs_[g][r].atRis.aoa); }

LinkGeometry SignalModel::geometry(const LinkId& id, const UserState& s) const {
    if (id.kind == LinkKind::UB) return linkGeometry(s, scene_.baseStations.at(id.bs), wavelength());
    return linkGeometry(s, scene_.ris.at(id.ris), wavelength());
}

LinkPhases SignalModel::phases(const LinkId& id, const UserState& s) const {
    const LinkGeometry lg = geometry(id, s);
    return {-zetaF() * lg.delay, -zetaTGroup() * lg.doppler, -zetaS() * std::cos(lg.aoa)};
}

Eigen::Matrix<double, 3, 4> SignalModel::phaseJacobian(const LinkId& id, const UserState& s) const {
    const Anchor& a = id.kind == LinkKind::UB ? scene_.baseStations.at(id.bs) : scene_.ris.at(id.ris);
    const LinkGeometry lg = geometry(id, s);
    const Vec2 e = lg.direction;
    const Mat2 proj = (Mat2::Identity() - e * e.transpose()) / lg.distance;
    Eigen::Matrix<double, 3, 4> jac = Eigen::Matrix<double, 3, 4>::Zero();
    jac.block<1, 2>(0, 0) = -zetaF() / kSpeedOfLight * e.transpose();
    jac.block<1, 2>(1, 0) = -zetaTGroup() / wavelength() * (proj * s.velocity).transpose();
    jac.block<1, 2>(1, 2) = -zetaTGroup() / wavelength() * e.transpose();
    jac.block<1, 2>(2, 0) = -zetaS() * (proj * a.axis).transpose();
    return jac;
}

namespace {

double rho(double order, double kappa) { return std::isinf(kappa) ? 1.0 : besselRatio(order, kappa); }

VecX rhoInts(int count, double kappa) {
    if (std::isinf(kappa)) return VecX::Ones(count);
    return besselRatios(count - 1, kappa);
}

}  // namespace

LinkFactors SignalModel::factors(const LinkId& id, const LinkPhases& mu, int order,
                                 const LinkConcentrations& kappa) const {
    if (order < 0 || order > 2) throw DomainError("factor derivative order must be 0..2");
    LinkFactors lf;
    lf.order = order;
    lf.thetaInH = id.kind == LinkKind::UI;
    const int nI = grid_.nI, groups = grid_.groups, q1 = grid_.q1;
    const int mB = scene_.baseStations.at(id.bs).elementCount;
    const bool ris = id.kind == LinkKind::UI;

    // Delay factor.
    const double c = ris ? risDelayPhase(id.bs, id.ris) : 0.0;
    const VecX rf = rhoInts(nI, kappa.tau);
    for (int d = 0; d <= 2; ++d) lf.f[d] = CVec::Zero(nI);
    for (int n = 0; n < nI; ++n) {
        const cd base = rf[n] * std::polar(1.0, n * (mu.tau + c));
        const cd jn(0.0, n);
        lf.f[0][n] = base;
        if (order >= 1) lf.f[1][n] = jn * base;
        if (order >= 2) lf.f[2][n] = jn * jn * base;
    }

    // Doppler factor, times the RIS beamspace response for cascaded links.
    const int nH = groups * q1;
    for (auto& row : lf.h)
        for (auto& v : row) v = CVec::Zero(nH);
    std::array<CVec, 3> t;  // T_q and its x_theta derivatives
    if (ris) {
        const CMat& psi = schedule_.perRis.at(id.ris);
        const int mI = static_cast<int>(psi.rows());
        const VecX rt = rhoInts(mI, kappa.theta);
        const double s = risAodPhase(id.bs, id.ris) + mu.theta;
        CVec e(mI), e1(mI), e2(mI);
        for (int m = 0; m < mI; ++m) {
            e[m] = rt[m] * std::polar(1.0, m * s);
            e1[m] = cd(0.0, m) * e[m];
            e2[m] = cd(0.0, m) * e1[m];
        }
        t[0] = psi.transpose() * e;
        t[1] = psi.transpose() * e1;
        t[2] = psi.transpose() * e2;
    }
    std::vector<double> rhoNu(nH);
    VecX rIntNu = rhoInts(groups, kappa.nu);
    for (int i = 0; i < groups; ++i)
        for (int q = 0; q < q1; ++q) {
            const double k = approx_ ? double(i) : i + double(q) / grid_.deltaQ;
            rhoNu[i * q1 + q] = approx_ || q == 0 ? rIntNu[i] : rho(k, kappa.nu);
        }
    for (int i = 0; i < groups; ++i)
        for (int q = 0; q < q1; ++q) {
            const int idx = i * q1 + q;
            const double k = approx_ ? double(i) : i + double(q) / grid_.deltaQ;
            const cd base = rhoNu[idx] * std::polar(1.0, k * mu.nu);
            const cd jk(0.0, k);
            const std::array<cd, 3> dn{base, jk * base, jk * jk * base};
            for (int a = 0; a <= order; ++a) {
                if (!ris) {
                    lf.h[a][0][idx] = dn[a];
                    continue;
                }
                for (int b = 0; a + b <= order; ++b) lf.h[a][b][idx] = dn[a] * t[b][q];
            }
        }

    // BS array factor.
    for (auto& v : lf.bs) v = CVec::Zero(mB);
    if (ris) {
        lf.bs[0] = risBsArray_[id.bs][id.ris];
    } else {
        const VecX rb = rhoInts(mB, kappa.theta);
        for (int m = 0; m < mB; ++m) {
            const cd base = rb[m] * std::polar(1.0, m * mu.theta);
            const cd jm(0.0, m);
            lf.bs[0][m] = base;
            if (order >= 1) lf.bs[1][m] = jm * base;
            if (order >= 2) lf.bs[2][m] = jm * jm * base;
        }
    }
    return lf;
}

CVec SignalModel::steering(const LinkId& id, const LinkPhases& mu) const { return factors(id, mu, 0).vector(); }

std::array<double, 3> SignalModel::squaredNorm(const LinkId& id, double muTheta, double kappaTheta) const {
    if (id.kind == LinkKind::UB) return {double(length(id.bs)), 0.0, 0.0};
    const CMat& psi = schedule_.perRis.at(id.ris);
    const int mI = static_cast<int>(psi.rows());
    // sum_q |T_q|^2 = sum_d A[d] exp(j d s), A[d] = sum_q sum_{m-m'=d} Psi(m,q) conj(Psi(m',q)).
    const CMat gram = psi * psi.adjoint();
    const VecX rt = rhoInts(mI, kappaTheta);
    const double s = risAodPhase(id.bs, id.ris) + muTheta;
    std::array<double, 3> out{0.0, 0.0, 0.0};
    for (int d = -(mI - 1); d <= mI - 1; ++d) {
        cd a(0.0, 0.0);
        for (int m = std::max(0, d); m < std::min(mI, mI + d); ++m) a += gram(m, m - d);
        const cd term = a * rt[std::abs(d)] * std::polar(1.0, d * s);
        const cd jd(0.0, d);
        out[0] += term.real();
        out[1] += (jd * term).real();
        out[2] += (jd * jd * term).real();
    }
    const double scale = double(grid_.nI) * grid_.groups * scene_.baseStations.at(id.bs).elementCount;
    for (double& v : out) v *= scale;
    return out;
}

std::vector<LinkId> linksAtBs(const SignalModel& model, int users, int g) {
    std::vector<LinkId> out;
    for (int k = 0; k < users; ++k) {
        out.push_back({LinkKind::UB, k, g, -1});
        for (int r = 0; r < model.risCount(); ++r) out.push_back({LinkKind::UI, k, g, r});
    }
    return out;
}

EffectiveSignal effectiveSignals(const SlotTruth& truth, double powerW, double risEfficiency) {
    const int users = static_cast<int>(truth.users.size());
    const int bs = static_cast<int>(truth.gainIB.size());
    const int ris = bs > 0 ? static_cast<int>(truth.gainIB[0].size()) : 0;
    if (static_cast<int>(truth.symbols.size()) != users) throw StructuralError("one symbol per user required");
    const double amp = std::sqrt(powerW);
    EffectiveSignal s;
    s.ub.assign(users, std::vector<cd>(bs));
    s.ui.assign(users, std::vector<std::vector<cd>>(bs, std::vector<cd>(ris)));
    for (int k = 0; k < users; ++k)
        for (int g = 0; g < bs; ++g) {
            s.ub[k][g] = truth.alpha.ub[k][g] ? amp * truth.symbols[k] * truth.gainUB[k][g] : cd(0.0, 0.0);
            for (int r = 0; r < ris; ++r) {
                const bool los = truth.alpha.ui[k][r] && truth.alpha.ib[g][r];
                s.ui[k][g][r] = los ? amp * truth.symbols[k] * truth.gainUI[k][r] * truth.gainIB[g][r] * risEfficiency
                                    : cd(0.0, 0.0);
            }
        }
    return s;
}

ReceivedBlock assembleObservation(const SignalModel& model, const std::vector<UserState>& users,
                                  const EffectiveSignal& signals, double noiseVar, Rng& rng) {
    const int bs = model.bsCount();
    const int ris = model.risCount();
    if (static_cast<int>(signals.ub.size()) != static_cast<int>(users.size()) ||
        static_cast<int>(signals.ui.size()) != static_cast<int>(users.size()))
        throw StructuralError("effective signals do not match the user count");
    if (!(noiseVar >= 0.0)) throw DomainError("noise variance must be nonnegative");
    ReceivedBlock blk;
    blk.noiseVar = noiseVar;
    std::normal_distribution<double> n01(0.0, 1.0);
    const double sd = std::sqrt(noiseVar / 2.0);
    for (int g = 0; g < bs; ++g) {
        CVec y = CVec::Zero(model.length(g));
        for (std::size_t k = 0; k < users.size(); ++k) {
            if (static_cast<int>(signals.ub[k].size()) != bs || static_cast<int>(signals.ui[k].size()) != bs ||
                static_cast<int>(signals.ui[k][g].size()) != ris)
                throw StructuralError("effective signal shape mismatch");
            const int kk = static_cast<int>(k);
            if (signals.ub[k][g] != cd(0.0, 0.0)) {
                const LinkId id{LinkKind::UB, kk, g, -1};
                y += signals.ub[k][g] * model.steering(id, model.phases(id, users[k]));
            }
            for (int r = 0; r < ris; ++r) {
                if (signals.ui[k][g][r] == cd(0.0, 0.0)) continue;
                const LinkId id{LinkKind::UI, kk, g, r};
                y += signals.ui[k][g][r] * model.steering(id, model.phases(id, users[k]));
            }
        }
        if (sd > 0.0)
            for (Eigen::Index i = 0; i < y.size(); ++i) {
                const double re = n01(rng);
                const double im = n01(rng);
                y[i] += cd(sd * re, sd * im);
            }
        blk.perBs.push_back(std::move(y));
    }
    return blk;
}

void dumpBlock(const ReceivedBlock& block, const SignalModel& model, const std::string& stem) {
    nlohmann::json hdr;
    hdr["layout"] = "((n*I + i)*Q1 + q)*M_B + m";
    hdr["dtype"] = "complex128 interleaved little-endian";
    hdr["noise_var"] = block.noiseVar;
    hdr["n_i"] = model.grid().nI;
    hdr["groups"] = model.grid().groups;
    hdr["q1"] = model.grid().q1;
    nlohmann::json bsArr = nlohmann::json::array();
    for (int g = 0; g < static_cast<int>(block.perBs.size()); ++g)
        bsArr.push_back({{"elements", model.scene().baseStations.at(g).elementCount},
                         {"length", block.perBs[g].size()}});
    hdr["bs"] = bsArr;
    std::ofstream js(stem + ".json");
    if (!js) throw std::runtime_error("cannot open " + stem + ".json");
    js << hdr.dump(2) << '\n';
    std::ofstream bin(stem + ".bin", std::ios::binary);
    if (!bin) throw std::runtime_error("cannot open " + stem + ".bin");
    for (const CVec& y : block.perBs)
        for (Eigen::Index i = 0; i < y.size(); ++i) {
            const double re = y[i].real(), im = y[i].imag();
            bin.write(reinterpret_cast<const char*>(&re), sizeof re);
            bin.write(reinterpret_cast<const char*>(&im), sizeof im);
        }
}

}  // namespace isac
