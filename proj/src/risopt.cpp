#include "isac/risopt.hpp"

#include <fstream>
#include <limits>
#include <iomanip>
#include <sstream>

namespace isac {

RisSchedule PhaseProfile::schedule() const {
    RisSchedule s;
    for (const MatX& a : anglesPerRis) s.perRis.push_back(profileFromAngles(a));
    return s;
}

PhaseProfile PhaseProfile::fromSchedule(const RisSchedule& s) {
    PhaseProfile p;
    for (const CMat& psi : s.perRis) p.anglesPerRis.push_back(anglesFromProfile(psi));
    return p;
}

int PhaseProfile::size() const {
    int n = 0;
    for (const MatX& a : anglesPerRis) n += static_cast<int>(a.size());
    return n;
}

VecX PhaseProfile::flatten() const {
    VecX x(size());
    int o = 0;
    for (const MatX& a : anglesPerRis) {
        x.segment(o, a.size()) = a.reshaped();
        o += static_cast<int>(a.size());
    }
    return x;
}

PhaseProfile PhaseProfile::unflattened(const VecX& x) const {
    if (x.size() != size()) throw StructuralError("flat profile length mismatch");
    PhaseProfile p = *this;
    int o = 0;
    for (MatX& a : p.anglesPerRis) {
        a = x.segment(o, a.size()).reshaped(a.rows(), a.cols());
        o += static_cast<int>(a.size());
    }
    return p;
}

SlotTruth nominalPoint(const SignalModel& model, const std::vector<UserState>& predicted) {
    const int K = static_cast<int>(predicted.size()), G = model.bsCount(), R = model.risCount();
    const double lam = model.wavelength();
    SlotTruth t;
    t.users = predicted;
    t.symbols.assign(K, cd(1.0, 0.0));
    t.alpha.ub.assign(K, std::vector<int>(G, 1));
    t.alpha.ui.assign(K, std::vector<int>(R, 1));
    t.alpha.ib.assign(G, std::vector<int>(R, 1));
    t.gainUB.assign(K, std::vector<cd>(G));
    t.gainUI.assign(K, std::vector<cd>(R));
    t.gainIB.assign(G, std::vector<cd>(R));
    for (int k = 0; k < K; ++k) {
        for (int g = 0; g < G; ++g) t.gainUB[k][g] = pathGain(model.geometry({LinkKind::UB, k, g, -1}, predicted[k]).distance, lam);
        for (int r = 0; r < R; ++r) t.gainUI[k][r] = pathGain(model.geometry({LinkKind::UI, k, 0, r}, predicted[k]).distance, lam);
    }
    for (int g = 0; g < G; ++g)
        for (int r = 0; r < R; ++r) t.gainIB[g][r] = pathGain(model.risBs(g, r).atBs.distance, lam);
    return t;
}

double objective(const PhaseProfile& profile, const RisOptContext& ctx, const BcrbWeights& w) {
    if (!ctx.model) throw StructuralError("optimizer context has no signal model");
    SignalModel m = *ctx.model;
    m.setSchedule(profile.schedule());
    const MatX mea = measurementBim(m, ctx.point, ctx.powerW, ctx.risEfficiency, ctx.noiseVar);
    return weightedBcrb(bimRecursion(ctx.previous, mea, ctx.blocks), w);
}

std::vector<MatX> gradient(const PhaseProfile& profile, const RisOptContext& ctx, const BcrbWeights& w, double h) {
    if (!(h > 0.0)) throw DomainError("finite-difference step must be positive");
    const double f0 = objective(profile, ctx, w);
    std::vector<MatX> g;
    PhaseProfile probe = profile;
    for (std::size_t r = 0; r < profile.anglesPerRis.size(); ++r) {
        MatX gr(profile.anglesPerRis[r].rows(), profile.anglesPerRis[r].cols());
        for (Eigen::Index c = 0; c < gr.cols(); ++c)
            for (Eigen::Index e = 0; e < gr.rows(); ++e) {
                const double keep = probe.anglesPerRis[r](e, c);
                probe.anglesPerRis[r](e, c) = keep + h;
                gr(e, c) = (objective(probe, ctx, w) - f0) / h;
                probe.anglesPerRis[r](e, c) = keep;
            }
        g.push_back(std::move(gr));
    }
    return g;
}

std::pair<VecX, OptimizerReport> armijoDescent(const VecX& x0, const std::function<double(const VecX&)>& f,
                                               const std::function<VecX(const VecX&)>& grad, const ArmijoParams& p,
                                               double eps, int maxIters,
                                               const std::function<double(const VecX&)>& stepNorm) {
    if (!(p.c1 > 0.0 && p.c1 < 1.0) || !(p.shrink > 0.0 && p.shrink < 1.0) || p.maxBacktracks < 0)
        throw ConfigError("Armijo parameters out of range");
    const auto norm = [&](const VecX& d) { return stepNorm ? stepNorm(d) : d.norm(); };
    OptimizerReport rep;
    VecX x = x0;
    double fx = f(x);
    rep.trajectory.push_back(fx);
    VecX g = grad(x);
    double lastStep = std::numeric_limits<double>::infinity();
    for (int it = 0; it < maxIters; ++it) {
        const double gmax = g.cwiseAbs().maxCoeff();
        if (!(gmax > 0.0)) break;
        // First trial: the capped displacement, or twice the last accepted step.
        double t = std::min(p.maxAngleStep / gmax, 2.0 * lastStep);
        bool accepted = false;
        for (int b = 0; b <= p.maxBacktracks; ++b) {
            const VecX trial = x - t * g;
            const double ft = f(trial);
            if (ft <= fx - p.c1 * t * g.squaredNorm()) {
                x = trial;
                fx = ft;
                accepted = true;
                break;
            }
            t *= p.shrink;
        }
        if (!accepted) {
            rep.stalled = true;
            break;
        }
        ++rep.iterations;
        rep.trajectory.push_back(fx);
        rep.steps.push_back(t);
        lastStep = t;
        const double moved = norm(t * g);
        g = grad(x);
        if (moved < eps) break;
    }
    rep.finalGradientNorm = g.norm();
    return {x, rep};
}

std::pair<PhaseProfile, OptimizerReport> optimize(const PhaseProfile& init, const RisOptContext& ctx,
                                                  const BcrbWeights& w, const ArmijoParams& p, double eps,
                                                  int maxIters) {
    const auto f = [&](const VecX& x) { return objective(init.unflattened(x), ctx, w); };
    const auto g = [&](const VecX& x) {
        const std::vector<MatX> parts = gradient(init.unflattened(x), ctx, w);
        PhaseProfile gp;
        gp.anglesPerRis = parts;
        return gp.flatten();
    };
    // Sum over RIS of per-RIS displacement norms.
    const auto perRisNorm = [&](const VecX& d) {
        double s = 0.0;
        int o = 0;
        for (const MatX& a : init.anglesPerRis) {
            s += d.segment(o, a.size()).norm();
            o += static_cast<int>(a.size());
        }
        return s;
    };
    auto [x, rep] = armijoDescent(init.flatten(), f, g, p, eps, maxIters, perRisNorm);
    return {init.unflattened(x), rep};
}

void writeProfileCsv(const std::string& path, const PhaseProfile& profile) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "ris,element,column,angle_rad\n" << std::setprecision(17);
    for (std::size_t r = 0; r < profile.anglesPerRis.size(); ++r)
        for (Eigen::Index c = 0; c < profile.anglesPerRis[r].cols(); ++c)
            for (Eigen::Index e = 0; e < profile.anglesPerRis[r].rows(); ++e)
                out << r << ',' << e << ',' << c << ',' << profile.anglesPerRis[r](e, c) << '\n';
}

PhaseProfile readProfileCsv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read profile " + path);
    struct Entry {
        int r, e, c;
        double v;
    };
    std::vector<Entry> entries;
    std::string line;
    std::getline(in, line);
    if (line.rfind("ris,element,column,angle_rad", 0) != 0) throw ConfigError("profile CSV header mismatch in " + path);
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::stringstream ss(line);
        Entry en{};
        char c1 = 0, c2 = 0, c3 = 0;
        if (!(ss >> en.r >> c1 >> en.e >> c2 >> en.c >> c3 >> en.v) || c1 != ',' || c2 != ',' || c3 != ',')
            throw ConfigError("malformed profile row: " + line);
        if (en.r < 0 || en.e < 0 || en.c < 0) throw ConfigError("negative index in profile row: " + line);
        entries.push_back(en);
    }
    int ris = 0;
    for (const Entry& en : entries) ris = std::max(ris, en.r + 1);
    std::vector<int> rows(ris, 0), cols(ris, 0);
    for (const Entry& en : entries) {
        rows[en.r] = std::max(rows[en.r], en.e + 1);
        cols[en.r] = std::max(cols[en.r], en.c + 1);
    }
    PhaseProfile p;
    std::vector<MatX> seen;
    for (int r = 0; r < ris; ++r) {
        p.anglesPerRis.push_back(MatX::Zero(rows[r], cols[r]));
        seen.push_back(MatX::Zero(rows[r], cols[r]));
    }
    for (const Entry& en : entries) {
        p.anglesPerRis[en.r](en.e, en.c) = en.v;
        seen[en.r](en.e, en.c) += 1.0;
    }
    for (const MatX& s : seen)
        if ((s.array() != 1.0).any()) throw ConfigError("profile CSV must list every entry exactly once: " + path);
    return p;
}

}  // namespace isac
