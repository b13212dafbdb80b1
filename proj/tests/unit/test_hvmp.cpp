#include <doctest.h>

#include "isac/hvmp.hpp"

#include <random>

using namespace isac;

namespace {

Scene scene(int risElements = 8, bool withRis = true) {
    Scene s;
    s.baseStations = {{Vec2(0, 0), Vec2(0, 1), 4, AnchorKind::BaseStation},
                      {Vec2(90, 0), Vec2(0, 1), 4, AnchorKind::BaseStation}};
    if (withRis) s.ris = {{Vec2(20, 40), Vec2(1, 0), risElements, AnchorKind::Ris}};
    return s;
}

SignalModel model(bool withRis = true, bool approx = false) {
    Rng rng(5);
    IsacGrid g = buildGrid(3, 3, 40, 4, 1);
    RisSchedule sch = withRis ? randomRisSchedule(rng, {8}, 3) : RisSchedule{};
    return SignalModel(scene(8, withRis), g, sch, approx);
}

SlotTruth truthFor(const SignalModel& m, const std::vector<UserState>& users, const std::vector<cd>& syms) {
    SlotTruth t;
    const int K = static_cast<int>(users.size()), G = m.bsCount(), R = m.risCount();
    t.users = users;
    t.symbols = syms;
    t.alpha.ub.assign(K, std::vector<int>(G, 1));
    t.alpha.ui.assign(K, std::vector<int>(R, 1));
    t.alpha.ib.assign(G, std::vector<int>(R, 1));
    t.gainUB.assign(K, std::vector<cd>(G));
    t.gainUI.assign(K, std::vector<cd>(R));
    t.gainIB.assign(G, std::vector<cd>(R));
    const double lam = m.wavelength();
    for (int k = 0; k < K; ++k) {
        for (int g = 0; g < G; ++g) t.gainUB[k][g] = pathGain(m.geometry({LinkKind::UB, k, g, -1}, users[k]).distance, lam);
        for (int r = 0; r < R; ++r) t.gainUI[k][r] = pathGain(m.geometry({LinkKind::UI, k, 0, r}, users[k]).distance, lam);
    }
    for (int g = 0; g < G; ++g)
        for (int r = 0; r < R; ++r) t.gainIB[g][r] = pathGain(m.risBs(g, r).atBs.distance, lam);
    return t;
}

/// Incoming messages centered at the true phases, w priors CN(mean, var).
VmpIncoming incomingAtTruth(const SignalModel& m, const std::vector<UserState>& users, const EffectiveSignal& sig,
                            double kappa, bool priorMeanAtTruth) {
    const int K = static_cast<int>(users.size()), G = m.bsCount(), R = m.risCount();
    VmpIncoming in;
    in.ub.assign(K, std::vector<std::array<VonMisesBelief, 3>>(G));
    in.ui.assign(K, std::vector<std::array<VonMisesBelief, 3>>(R));
    for (int k = 0; k < K; ++k) {
        for (int g = 0; g < G; ++g) {
            const auto p = m.phases({LinkKind::UB, k, g, -1}, users[k]).array();
            for (int i = 0; i < 3; ++i) in.ub[k][g][i] = {wrapToPi(p[i]), kappa};
        }
        for (int r = 0; r < R; ++r) {
            const auto p = m.phases({LinkKind::UI, k, 0, r}, users[k]).array();
            for (int i = 0; i < 3; ++i) in.ui[k][r][i] = {wrapToPi(p[i]), kappa};
        }
    }
    const int n = K * (1 + R);
    in.wPrior.assign(G, std::vector<ComplexGaussianBelief>(n));
    in.activeVar.assign(G, std::vector<double>(n));
    for (int g = 0; g < G; ++g)
        for (int k = 0; k < K; ++k)
            for (int v = 0; v <= R; ++v) {
                const cd w = v == 0 ? sig.ub[k][g] : sig.ui[k][g][v - 1];
                const double var = std::max(std::norm(w), 1e-30);
                in.wPrior[g][k * (1 + R) + v] = {priorMeanAtTruth ? w : cd(0.0, 0.0), var};
                in.activeVar[g][k * (1 + R) + v] = var;
            }
    return in;
}

std::vector<std::vector<PhaseBelief>> beliefsAt(const SignalModel& m, const std::vector<UserState>& users,
                                                LinkKind kind, double kappa, double offset) {
    std::vector<std::vector<PhaseBelief>> out(users.size());
    const int count = kind == LinkKind::UB ? m.bsCount() : m.risCount();
    for (std::size_t k = 0; k < users.size(); ++k)
        for (int x = 0; x < count; ++x) {
            const LinkId id = kind == LinkKind::UB ? LinkId{kind, int(k), x, -1} : LinkId{kind, int(k), 0, x};
            LinkPhases p = m.phases(id, users[k]);
            p.tau += offset;
            p.nu -= offset;
            p.theta += offset;
            out[k].push_back({p, {kappa, kappa, kappa}});
        }
    return out;
}

}  // namespace

TEST_CASE("Doppler objective derivatives match central differences") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double a = 0.05;
    double worstG = 0.0, worstH = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<VonMisesBelief> ms;
        std::vector<Vec2> ds;
        for (int l = 0; l < 4; ++l) {
            ms.push_back({kPi * u(rng), 50.0 * (1.0 + u(rng))});
            ds.push_back(Vec2(u(rng), u(rng)).normalized());
        }
        const Vec2 v(20.0 * u(rng), 20.0 * u(rng));
        const Vec2 g = dopplerGradient(ms, ds, a, v);
        const Mat2 h = dopplerHessian(ms, ds, a, v);
        const double step = 1e-4;
        Vec2 gfd;
        Mat2 hfd;
        for (int i = 0; i < 2; ++i) {
            Vec2 e = Vec2::Zero();
            e[i] = step;
            gfd[i] = (dopplerObjective(ms, ds, a, v + e) - dopplerObjective(ms, ds, a, v - e)) / (2 * step);
            hfd.col(i) = (dopplerGradient(ms, ds, a, v + e) - dopplerGradient(ms, ds, a, v - e)) / (2 * step);
        }
        worstG = std::max(worstG, (g - gfd).norm() / std::max(g.norm(), 1e-3));
        worstH = std::max(worstH, (h - hfd).norm() / std::max(h.norm(), 1e-3));
    }
    CHECK(worstG < 1e-6);
    CHECK(worstH < 1e-5);
}

TEST_CASE("two orthogonal Doppler readings pin the velocity") {
    PhaseScales sc;
    sc.zetaTGroup = 2e-3;
    sc.wavelength = 0.0107;
    const double a = sc.zetaTGroup / sc.wavelength;
    const Vec2 vTrue(3.0, -1.5);
    const std::vector<Vec2> ds{Vec2(1, 0), Vec2(0, 1)};
    std::vector<VonMisesBelief> ms;
    for (const Vec2& e : ds) ms.push_back({wrapToPi(-a * vTrue.dot(e)), 1e12});
    const GaussianBelief prior = GaussianBelief::make(Vec2(2.5, -1.0), Mat2::Identity());
    const VelocityEvidence ve = velocityFusion(ms, prior, ds, sc);
    REQUIRE(ve.informative);
    CHECK((ve.posterior.mean - vTrue).norm() < 1e-6);
}

TEST_CASE("single Doppler reading leaves the orthogonal direction to the prior") {
    PhaseScales sc;
    sc.zetaTGroup = 2e-3;
    sc.wavelength = 0.0107;
    const std::vector<Vec2> ds{Vec2(1, 0)};
    const std::vector<VonMisesBelief> ms{{0.1, 1e6}};
    const GaussianBelief prior = GaussianBelief::make(Vec2(0, 0), 0.7 * Mat2::Identity());
    const VelocityEvidence ve = velocityFusion(ms, prior, ds, sc);
    REQUIRE(ve.informative);
    CHECK(ve.posterior.cov(1, 1) == doctest::Approx(0.7).epsilon(1e-9));
    CHECK(ve.posterior.cov(0, 0) < 1e-3);
}

TEST_CASE("no informative Doppler message returns the prior") {
    const GaussianBelief prior = GaussianBelief::make(Vec2(1, 2), Mat2::Identity());
    const VelocityEvidence ve = velocityFusion({{0.0, 0.0}}, prior, {Vec2(1, 0)}, PhaseScales{kPi, 1, 1e-3, 0.01});
    CHECK_FALSE(ve.informative);
    CHECK((ve.posterior.mean - prior.mean).norm() == 0.0);
}

TEST_CASE("position message geometry") {
    PhaseScales sc{kPi, 2 * kPi * 1e6, 1e-3, 0.0107};
    const Anchor anchor{Vec2(0, 0), Vec2(1, 0), 4, AnchorKind::BaseStation};
    const double d = 10.0;
    const VonMisesBelief theta{0.0, 1e14};
    const VonMisesBelief tau{wrapToPi(-sc.zetaF * d / kSpeedOfLight), 1e14};
    const GaussianBelief ref = GaussianBelief::make(Vec2(0.5, 8.0), Mat2::Identity());
    const GaussianBelief m = perLinkPositionMessage(theta, tau, anchor, ref, sc);
    REQUIRE_FALSE(m.diffuse);
    CHECK(m.mean[0] == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(m.mean[1] == doctest::Approx(10.0).epsilon(1e-9));
    CHECK(m.cov.norm() < 1e-9);

    const GaussianBelief below = perLinkPositionMessage(theta, tau, anchor, GaussianBelief::make(Vec2(0, -8), Mat2::Identity()), sc);
    CHECK(below.mean[1] == doctest::Approx(-10.0).epsilon(1e-9));
    CHECK(perLinkPositionMessage({0.0, 0.0}, tau, anchor, ref, sc).diffuse);
}

TEST_CASE("position message covariance matches polar sampling") {
    PhaseScales sc{kPi, 2 * kPi * 10e6 / 12 * 4, 1e-3, 0.0107};
    const Anchor anchor{Vec2(1, 2), Vec2(0.6, 0.8), 4, AnchorKind::BaseStation};
    const Vec2 truth(31.0, -14.0);
    const Vec2 rel = truth - anchor.position;
    const double d = rel.norm(), c = anchor.axis.dot(rel) / d;
    const VonMisesBelief theta{wrapToPi(-sc.zetaS * c), 400.0};
    const VonMisesBelief tau{wrapToPi(-sc.zetaF * d / kSpeedOfLight), 150.0};
    const GaussianBelief ref = GaussianBelief::make(truth, Mat2::Identity());
    const GaussianBelief m = perLinkPositionMessage(theta, tau, anchor, ref, sc);
    REQUIRE_FALSE(m.diffuse);

    // Sample VM phases, invert the polar map on the reference side.
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n01;
    std::uniform_real_distribution<double> u01;
    const auto vmSample = [&](const VonMisesBelief& b) {
        while (true) {
            const double x = b.mu + n01(rng) / std::sqrt(b.kappa);
            const double logAcc = b.kappa * (std::cos(x - b.mu) - 1.0) + 0.5 * b.kappa * (x - b.mu) * (x - b.mu);
            if (std::log(u01(rng)) < std::min(0.0, logAcc)) return x;
        }
    };
    const Vec2 perp(-anchor.axis.y(), anchor.axis.x());
    const double side = perp.dot(rel) < 0 ? -1.0 : 1.0;
    const int n = 200000;
    std::vector<Vec2> pts;
    Vec2 mean = Vec2::Zero();
    for (int i = 0; i < n; ++i) {
        const double cs = vmSample(theta) / -sc.zetaS;
        const double ds = vmSample(tau) / (-sc.zetaF / kSpeedOfLight);
        const Vec2 p = anchor.position + ds * (cs * anchor.axis + side * std::sqrt(1 - cs * cs) * perp);
        pts.push_back(p);
        mean += p;
    }
    mean /= n;
    Mat2 cov = Mat2::Zero();
    for (const Vec2& p : pts) cov += (p - mean) * (p - mean).transpose();
    cov /= n - 1;
    CHECK((cov - m.cov).norm() / cov.norm() < 0.05);
    CHECK((m.mean - truth).norm() < 1e-6);
}

TEST_CASE("Doppler prediction message") {
    PhaseScales sc{kPi, 1.0, 3e-3, 0.0107};
    const double a = sc.zetaTGroup / sc.wavelength;
    CHECK(dopplerPredictionMessage(GaussianBelief::makeDiffuse(2), Vec2(1, 0), sc).kappa == 0.0);
    const Vec2 e = Vec2(0.3, -0.9).normalized();
    const VonMisesBelief det = dopplerPredictionMessage(GaussianBelief::make(Vec2(2, 1), 1e-20 * Mat2::Identity()), e, sc);
    CHECK(det.mu == doctest::Approx(wrapToPi(-a * Vec2(2, 1).dot(e))).epsilon(1e-12));

    Mat2 p;
    p << 0.8, 0.3, 0.3, 0.5;
    const VonMisesBelief msg = dopplerPredictionMessage(GaussianBelief::make(Vec2(1, -1), p), e, sc);
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n01;
    const Eigen::LLT<Mat2> llt(p);
    double s = 0, s2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const Vec2 v = Vec2(1, -1) + llt.matrixL() * Vec2(n01(rng), n01(rng));
        const double x = v.dot(e);
        s += x;
        s2 += x * x;
    }
    const double var = s2 / n - (s / n) * (s / n);
    CHECK(std::abs(1.0 / (msg.kappa * a * a) - var) / var < 0.02);
}

TEST_CASE("leave-one-out state ignores the skipped link") {
    PhaseScales sc{kPi, 1.0, 3e-3, 0.0107};
    const GaussianBelief pred = GaussianBelief::make(Vec4(10, 20, 1, 0), Vec4(1, 1, 0.5, 0.5).asDiagonal());
    StateEvidence ev;
    ev.position = {GaussianBelief::make(Vec2(10.2, 19.9), 0.01 * Mat2::Identity()),
                   GaussianBelief::make(Vec2(9.9, 20.1), 0.02 * Mat2::Identity())};
    ev.doppler = {{0.1, 1e4}, {-0.2, 2e4}};
    ev.directions = {Vec2(1, 0), Vec2(0, 1)};
    const GaussianBelief base = leaveOneOutState(pred, ev, 1, sc, true);
    StateEvidence moved = ev;
    moved.position[1] = GaussianBelief::make(Vec2(3, 3), 0.5 * Mat2::Identity());
    moved.doppler[1] = {1.3, 5e3};
    const GaussianBelief same = leaveOneOutState(pred, moved, 1, sc, true);
    CHECK((same.mean - base.mean).norm() == 0.0);
    CHECK((same.cov - base.cov).norm() == 0.0);
    const GaussianBelief other = leaveOneOutState(pred, moved, 0, sc, true);
    CHECK((other.mean - leaveOneOutState(pred, ev, 0, sc, true).mean).norm() > 1e-3);
}

TEST_CASE("forward prediction is a Kalman predict step") {
    const MobilityModel mob = MobilityModel::whiteAcceleration(0.02, 1.0);
    Mat4 p;
    p << 0.2, 0.01, 0.03, 0, 0.01, 0.3, 0, 0.02, 0.03, 0, 0.5, 0.1, 0, 0.02, 0.1, 0.6;
    SlotBeliefState post = initialBeliefs({Vec4(1, 2, 3, 4)}, p, 2, 1);
    const SlotBeliefState pred = forwardPredict(post, mob);
    Mat4 f = Mat4::Identity();
    f(0, 2) = f(1, 3) = 0.02;
    const Vec4 m = f * Vec4(1, 2, 3, 4);
    const Mat4 c = f * p * f.transpose() + mob.processNoiseCov;
    CHECK((pred.users[0].state.mean - m).norm() < 1e-10);
    CHECK((pred.users[0].state.cov - c).norm() < 1e-10);
    const Eigen::SelfAdjointEigenSolver<Mat4> es(pred.users[0].state.cov - f * p * f.transpose());
    CHECK(es.eigenvalues().minCoeff() > 0.0);

    MobilityModel still = mob;
    still.processNoiseCov.setZero();
    CHECK((forwardPredict(post, still).users[0].state.mean - m).norm() < 1e-12);
}

TEST_CASE("link test extremes") {
    CHECK(linkLlrFromEstimate(cd(1e3, 0), 1e-2, 1.0) > 100.0);
    CHECK(linkLlrFromEstimate(cd(0, 0), 1e-6, 1.0) < -6.0);
    const auto act = linkDetect({{cd(50, 0), 1e-2}, {cd(0, 0), 1e-2}}, {1.0, 1.0}, 6.0);
    CHECK(act == std::vector<int>{1, 0});
}

TEST_CASE("symbol fusion") {
    const SymbolPrior gauss{SymbolPriorKind::ComplexGaussian, 1.0};
    const ComplexGaussianBelief one = symbolFusion({{cd(0.3, -0.8), 1e-14}}, gauss);
    CHECK(std::abs(one.mean - cd(0.3, -0.8)) < 1e-9);
    const double v = 0.2;
    const ComplexGaussianBelief single = symbolFusion({{cd(1, 0), v}}, {SymbolPriorKind::ComplexGaussian, 1e12});
    const ComplexGaussianBelief pair = symbolFusion({{cd(1, 0), v}, {cd(1, 0), v}}, {SymbolPriorKind::ComplexGaussian, 1e12});
    CHECK(pair.var == doctest::Approx(single.var / 2).epsilon(1e-9));
    CHECK(symbolFusion({}, gauss).var == doctest::Approx(1.0));

    const SymbolPrior qpsk{SymbolPriorKind::Qpsk, 1.0};
    const double a = std::sqrt(0.5);
    const ComplexGaussianBelief q = symbolFusion({{cd(0.6, -0.75), 1e-3}}, qpsk);
    CHECK(std::abs(q.mean - cd(a, -a)) < 1e-9);
    CHECK(std::abs(symbolFusion({}, qpsk).mean) < 1e-12);

    // Monte-Carlo: more links at fixed per-link SNR lower the symbol MSE.
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n01;
    double prev = 1e9;
    for (int links = 1; links <= 4; ++links) {
        double mse = 0;
        for (int t = 0; t < 4000; ++t) {
            const cd s(n01(rng) * a, n01(rng) * a);
            std::vector<ComplexGaussianBelief> obs;
            for (int l = 0; l < links; ++l) obs.push_back({s + cd(n01(rng), n01(rng)) * std::sqrt(0.25), 0.5});
            mse += std::norm(symbolFusion(obs, gauss).mean - s);
        }
        CHECK(mse < prev);
        prev = mse;
    }
}

TEST_CASE("single-link w update is a scalar Wiener filter") {
    const SignalModel m = model(false);
    const std::vector<UserState> users{{Vec2(30, -10), Vec2(2, 1)}};
    SlotTruth t = truthFor(m, users, {cd(0.7, 0.2)});
    t.alpha.ub[0][1] = 0;
    const EffectiveSignal sig = effectiveSignals(t, 1.0, 1.0);
    Rng rng(1);
    const double s2 = 1e-11;
    const ReceivedBlock obs = assembleObservation(m, users, sig, s2, rng);
    VmpIncoming in = incomingAtTruth(m, users, sig, 1e4, false);
    in.wPrior[1][0] = {cd(0, 0), 1e-9};
    const double inf = std::numeric_limits<double>::infinity();
    VmpSurrogate s = initSurrogate(m, obs, 1, beliefsAt(m, users, LinkKind::UB, inf, 0.0), {{}}, in);
    for (auto& b : s.ub[0]) b.kappa = {inf, inf, inf};
    VmpOptions opt;
    opt.sweeps = 1;
    opt.detectLinks = false;
    opt.updateConcentrations = false;
    s = vmpInner(m, obs, 1, in, s, opt);
    const CVec a = m.steering({LinkKind::UB, 0, 0, -1}, s.ub[0][0].mu);
    const double v = in.wPrior[0][0].var;
    const double c = 1.0 / (a.squaredNorm() / s2 + 1.0 / v);
    const cd w = c * a.dot(obs.perBs[0]) / s2;
    CHECK(std::abs(s.w[0][0] - w) / std::abs(w) < 1e-10);
    CHECK(std::abs(s.cov[0](0, 0).real() - c) / c < 1e-10);
}

TEST_CASE("noiseless truth is a fixed point of the inner loop") {
    const SignalModel m = model(true);
    const std::vector<UserState> users{{Vec2(30, -10), Vec2(2, 1)}};
    const SlotTruth t = truthFor(m, users, {cd(1, 0)});
    const EffectiveSignal sig = effectiveSignals(t, 1.0, 1.0);
    Rng rng(1);
    ReceivedBlock obs = assembleObservation(m, users, sig, 0.0, rng);
    obs.noiseVar = 1e-26;
    const VmpIncoming in = incomingAtTruth(m, users, sig, 1e4, true);
    const double inf = std::numeric_limits<double>::infinity();
    const auto ub0 = beliefsAt(m, users, LinkKind::UB, inf, 0.0);
    const auto ui0 = beliefsAt(m, users, LinkKind::UI, inf, 0.0);
    VmpSurrogate s = initSurrogate(m, obs, 1, ub0, ui0, in);
    s.ub = ub0;
    s.ui = ui0;
    VmpOptions opt;
    opt.sweeps = 3;
    opt.updateConcentrations = false;
    const VmpSurrogate out = vmpInner(m, obs, 1, in, s, opt);
    double disp = 0.0;
    for (int g = 0; g < 2; ++g)
        for (int i = 0; i < 3; ++i) disp = std::max(disp, std::abs(out.ub[0][g].mu.array()[i] - ub0[0][g].mu.array()[i]));
    for (int i = 0; i < 3; ++i) disp = std::max(disp, std::abs(out.ui[0][0].mu.array()[i] - ui0[0][0].mu.array()[i]));
    CHECK(disp < 1e-10);
    CHECK(out.active[0] == std::vector<int>{1, 1});
}

TEST_CASE("ELBO is non-decreasing across sweeps with frozen concentrations and support") {
    const SignalModel m = model(true);
    const std::vector<UserState> users{{Vec2(30, -10), Vec2(2, 1)}, {Vec2(60, -20), Vec2(-1, 2)}};
    const SlotTruth t = truthFor(m, users, {cd(0.8, 0.3), cd(-0.5, 0.9)});
    const EffectiveSignal sig = effectiveSignals(t, 1.0, 1.0);
    Rng rng(9);
    const double s2 = 3e-11;
    const ReceivedBlock obs = assembleObservation(m, users, sig, s2, rng);
    const VmpIncoming in = incomingAtTruth(m, users, sig, 200.0, false);
    VmpSurrogate s = initSurrogate(m, obs, 2, beliefsAt(m, users, LinkKind::UB, 1e4, 0.05),
                                   beliefsAt(m, users, LinkKind::UI, 1e4, 0.05), in);
    VmpOptions opt;
    opt.sweeps = 1;
    opt.detectLinks = false;
    opt.updateConcentrations = false;
    opt.tol = -1.0;
    double prev = surrogateElbo(m, obs, 2, in, s);
    for (int sweep = 0; sweep < 10; ++sweep) {
        s = vmpInner(m, obs, 2, in, s, opt);
        const double cur = surrogateElbo(m, obs, 2, in, s);
        CHECK(cur >= prev - 1e-8 * std::abs(prev));
        prev = cur;
    }
}

TEST_CASE("two separated users are recovered within bound-scaled error") {
    const SignalModel m = model(true);
    const std::vector<UserState> users{{Vec2(30, -10), Vec2(2, 1)}, {Vec2(65, 20), Vec2(-1, 2)}};
    const SlotTruth t = truthFor(m, users, {cd(1, 0), cd(0, 1)});
    const EffectiveSignal sig = effectiveSignals(t, 1.0, 1.0);
    // Per-element SNR of 30 dB on the strongest direct link.
    double peak = 0;
    for (const auto& row : sig.ub)
        for (cd w : row) peak = std::max(peak, std::norm(w));
    const double s2 = peak / 1000.0;
    Rng rng(21);
    const ReceivedBlock obs = assembleObservation(m, users, sig, s2, rng);
    const VmpIncoming in = incomingAtTruth(m, users, sig, 1.0, false);
    VmpSurrogate s = initSurrogate(m, obs, 2, beliefsAt(m, users, LinkKind::UB, 1e3, 0.03),
                                   beliefsAt(m, users, LinkKind::UI, 1e3, 0.03), in);
    s = vmpInner(m, obs, 2, in, s, VmpOptions{});
    for (int k = 0; k < 2; ++k)
        for (int g = 0; g < 2; ++g) {
            const LinkId id{LinkKind::UB, k, g, -1};
            const LinkPhases truth = m.phases(id, users[k]);
            // Dense Fisher information of (x_tau, x_nu, x_theta, Re w, Im w).
            const LinkFactors lf = m.factors(id, truth, 1);
            CMat jac(lf.length(), 5);
            const cd w = sig.ub[k][g];
            jac.col(0) = w * lf.vector(1, 0, 0);
            jac.col(1) = w * lf.vector(0, 1, 0);
            jac.col(2) = w * lf.vector(0, 0, 1);
            jac.col(3) = lf.vector();
            jac.col(4) = kJ * lf.vector();
            const MatX crb = ((2.0 / s2) * (jac.adjoint() * jac).real()).inverse();
            const auto est = s.ub[k][g].mu.array();
            const auto tr = truth.array();
            for (int i : {0, 2}) CHECK(std::abs(wrapToPi(est[i] - tr[i])) < 5.0 * std::sqrt(crb(i, i)));
        }
}

TEST_CASE("weak cascaded link concentration matches its own Fisher bound next to strong direct links") {
    const SignalModel m = model(true);
    const std::vector<UserState> users{{Vec2(30, -10), Vec2(2, 1)}};
    const SlotTruth t = truthFor(m, users, {cd(1, 0)});
    const EffectiveSignal sig = effectiveSignals(t, 1.0, 1.0);
    Rng rng(3);
    ReceivedBlock obs = assembleObservation(m, users, sig, 0.0, rng);
    obs.noiseVar = 1e-24;
    const VmpIncoming in = incomingAtTruth(m, users, sig, 1.0, false);
    VmpSurrogate s = initSurrogate(m, obs, 1, beliefsAt(m, users, LinkKind::UB, 1e3, 0.0),
                                   beliefsAt(m, users, LinkKind::UI, 1e3, 0.0), in);
    VmpOptions opt;
    opt.detectLinks = false;
    s = vmpInner(m, obs, 1, in, s, opt);
    // Oracle: dense Fisher information of the cascaded phases and one w per BS.
    const LinkPhases truth = m.phases({LinkKind::UI, 0, 0, 0}, users[0]);
    MatX fim = MatX::Zero(7, 7);
    for (int g = 0; g < 2; ++g) {
        const LinkFactors lf = m.factors({LinkKind::UI, 0, g, 0}, truth, 1);
        const cd w = sig.ui[0][g][0];
        CMat jac = CMat::Zero(lf.length(), 7);
        jac.col(0) = w * lf.vector(1, 0, 0);
        jac.col(1) = w * lf.vector(0, 1, 0);
        jac.col(2) = w * lf.vector(0, 0, 1);
        jac.col(3 + 2 * g) = lf.vector();
        jac.col(4 + 2 * g) = kJ * lf.vector();
        fim += (2.0 / obs.noiseVar) * (jac.adjoint() * jac).real();
    }
    const MatX crb = fim.inverse();
    const std::array<double, 3> kap{s.ui[0][0].kappa.tau, s.ui[0][0].kappa.nu, s.ui[0][0].kappa.theta};
    for (int i = 0; i < 3; ++i) CHECK(kap[i] * crb(i, i) == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("noiseless slot recovers the state and symbol") {
    const SignalModel m = model(true);
    const std::vector<UserState> users{{Vec2(40, -5), Vec2(3, 1)}};
    const cd sym(0.6, -0.8);
    const SlotTruth t = truthFor(m, users, {sym});
    Rng rng(2);
    ReceivedBlock obs = assembleObservation(m, users, effectiveSignals(t, 1.0, 1.0), 0.0, rng);
    obs.noiseVar = 1e-24;
    const SlotBeliefState prior =
        initialBeliefs({users[0].stacked()}, Vec4(1e-2, 1e-2, 0.25, 0.25).asDiagonal(), 2, 1);
    HvmpConfig cfg;
    SlotContext ctx;
    const SlotResult r = runSlot(m, obs, prior, cfg, ctx);
    REQUIRE_FALSE(r.diverged);
    CHECK((r.estimates.states[0].position - users[0].position).norm() < 1e-3);
    CHECK(std::abs(r.estimates.symbols[0] - sym) < 1e-4);
    CHECK(r.estimates.alphaUB[0] == std::vector<int>{1, 1});
    CHECK_FALSE(r.trace.empty());
}

TEST_CASE("extrinsic times incoming restores the posterior") {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(-kPi, kPi);
    for (int i = 0; i < 50; ++i) {
        const VonMisesBelief post{u(rng), 500.0 + 100 * (u(rng) + kPi)};
        const VonMisesBelief inc{post.mu + 0.01 * u(rng), 40.0};
        const VonMisesBelief back = vmMultiply(vmDivide(post, inc), inc);
        CHECK(std::abs(back.natural() - post.natural()) < 1e-10 * post.kappa);
    }
}

TEST_CASE("configuration validation") {
    HvmpConfig c;
    c.outerIters = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = HvmpConfig{};
    c.damping = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}
