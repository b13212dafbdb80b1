#include "isac/hvmp.hpp"

#include <spdlog/spdlog.h>

namespace isac {

namespace {

constexpr double kInitKappaFloor = 100.0;

double rho1(double kappa) { return std::isinf(kappa) ? 1.0 : besselRatio(kappa); }

double& component(LinkPhases& p, int i) { return i == 0 ? p.tau : (i == 1 ? p.nu : p.theta); }
double component(const LinkPhases& p, int i) { return i == 0 ? p.tau : (i == 1 ? p.nu : p.theta); }
double& component(LinkConcentrations& c, int i) { return i == 0 ? c.tau : (i == 1 ? c.nu : c.theta); }
double component(const LinkConcentrations& c, int i) { return i == 0 ? c.tau : (i == 1 ? c.nu : c.theta); }

/// Hermitian inverse through LDLT; false when not positive definite.
bool hermitianInverse(const CMat& a, CMat& inv) {
    Eigen::LDLT<CMat> ldlt(a);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return false;
    if ((ldlt.vectorD().real().array() <= 0.0).any()) return false;
    inv = ldlt.solve(CMat::Identity(a.rows(), a.cols()));
    inv = (0.5 * (inv + inv.adjoint())).eval();
    return true;
}

/// Expected log-likelihood over one link variable group plus the inner state.
class InnerSolver {
public:
    InnerSolver(const SignalModel& model, const ReceivedBlock& obs, int users, const VmpIncoming& in, VmpSurrogate& s)
        : model_(model), obs_(obs), users_(users), in_(in), s_(s), sigma2_(obs.noiseVar) {
        if (!(sigma2_ > 0.0)) throw DomainError("inner loop needs a positive noise variance");
        const int G = model.bsCount();
        if (static_cast<int>(obs.perBs.size()) != G) throw StructuralError("observation count does not match BSs");
        links_.resize(G);
        ea_.resize(G);
        sqn_.resize(G);
        for (int g = 0; g < G; ++g) {
            links_[g] = linksAtBs(model, users, g);
            ea_[g].resize(links_[g].size());
            sqn_[g].resize(links_[g].size());
            for (std::size_t i = 0; i < links_[g].size(); ++i) refresh(g, static_cast<int>(i));
        }
    }

    int index(const LinkId& id) const {
        return id.user * (1 + model_.risCount()) + (id.kind == LinkKind::UB ? 0 : 1 + id.ris);
    }

    PhaseBelief& belief(LinkKind kind, int k, int x) { return kind == LinkKind::UB ? s_.ub[k][x] : s_.ui[k][x]; }
    const std::array<VonMisesBelief, 3>& incoming(LinkKind kind, int k, int x) const {
        return kind == LinkKind::UB ? in_.ub[k][x] : in_.ui[k][x];
    }

    std::vector<LinkId> varLinks(LinkKind kind, int k, int x) const {
        if (kind == LinkKind::UB) return {LinkId{LinkKind::UB, k, x, -1}};
        std::vector<LinkId> out;
        for (int g = 0; g < model_.bsCount(); ++g) out.push_back({LinkKind::UI, k, g, x});
        return out;
    }

    void refresh(int g, int i) {
        const LinkId& id = links_[g][i];
        const PhaseBelief& b = id.kind == LinkKind::UB ? s_.ub[id.user][id.bs] : s_.ui[id.user][id.ris];
        ea_[g][i] = model_.factors(id, b.mu, 0, b.kappa).vector();
        sqn_[g][i] = model_.squaredNorm(id, b.mu.theta, b.kappa.theta)[0];
    }

    void refreshVar(LinkKind kind, int k, int x) {
        for (const LinkId& id : varLinks(kind, k, x)) refresh(id.bs, index(id));
    }

    // ---- w on the support ----

    void updateW(int g) {
        const int n = static_cast<int>(links_[g].size());
        std::vector<int> act;
        for (int i = 0; i < n; ++i)
            if (s_.active[g][i]) act.push_back(i);
        s_.w[g] = CVec::Zero(n);
        s_.cov[g] = CMat::Zero(n, n);
        if (act.empty()) return;
        const int na = static_cast<int>(act.size());
        CMat lam(na, na);
        CVec rhs(na);
        for (int a = 0; a < na; ++a) {
            for (int b = 0; b < na; ++b)
                lam(a, b) = (a == b ? cd(sqn_[g][act[a]], 0.0) : ea_[g][act[a]].dot(ea_[g][act[b]])) / sigma2_;
            rhs[a] = ea_[g][act[a]].dot(obs_.perBs[g]) / sigma2_;
            const ComplexGaussianBelief& p = in_.wPrior[g][act[a]];
            if (std::isfinite(p.var)) {
                lam(a, a) += 1.0 / p.var;
                rhs[a] += p.mean / p.var;
            }
        }
        CMat c;
        if (!hermitianInverse(lam, c)) {
            const double jitter = 1e-9 * lam.diagonal().real().sum() / na;
            spdlog::debug("w precision not positive definite at BS {}, jitter {}", g, jitter);
            lam.diagonal().array() += jitter;
            if (!hermitianInverse(lam, c)) throw StructuralError("w precision is singular");
        }
        const CVec wA = c * rhs;
        for (int a = 0; a < na; ++a) {
            s_.w[g][act[a]] = wA[a];
            for (int b = 0; b < na; ++b) s_.cov[g](act[a], act[b]) = c(a, b);
        }
    }

    // ---- link detection ----

    double llr(int g, int i) const {
        const LinkId& id = links_[g][i];
        CVec r = obs_.perBs[g];
        for (std::size_t j = 0; j < links_[g].size(); ++j)
            if (static_cast<int>(j) != i && s_.active[g][j]) r -= s_.w[g][j] * ea_[g][j];
        const PhaseBelief& b = id.kind == LinkKind::UB ? s_.ub[id.user][id.bs] : s_.ui[id.user][id.ris];
        const CVec a = model_.steering(id, b.mu);
        const double nrm = a.squaredNorm();
        if (!(nrm > 0.0)) return -std::numeric_limits<double>::infinity();
        const cd wLs = a.dot(r) / nrm;
        return linkLlrFromEstimate(wLs, sigma2_ / nrm, in_.activeVar[g][i]);
    }

    bool detect(int g, double threshold) {
        const int n = static_cast<int>(links_[g].size());
        std::vector<int> next(n);
        for (int i = 0; i < n; ++i) next[i] = llr(g, i) > threshold ? 1 : 0;
        const bool changed = next != s_.active[g];
        s_.active[g] = next;
        return changed;
    }

    // ---- phase variables ----

    /// Per-link data of the joint (phase, w mean) block: w enters through its
    /// closed-form maximizer, so the phase objective is the profile over w.
    struct Term {
        LinkId id;
        int bs = 0;
        int slot = 0;
        CVec resid;  // (y - sum_{l' != l} w_l' E[a_l']) / sigma^2
        CVec xi;     // -(2/sigma^2) sum_{l' != l} C(l', l) E[a_l']
        double cll = 0.0;
        cd priorTerm{0.0, 0.0};  // m / v
        double priorPrec = 0.0;  // 1 / v
    };

    std::vector<Term> terms(LinkKind kind, int k, int x) const {
        std::vector<Term> out;
        for (const LinkId& id : varLinks(kind, k, x)) {
            const int g = id.bs, l = index(id);
            if (!s_.active[g][l]) continue;
            Term t;
            t.id = id;
            t.bs = g;
            t.slot = l;
            t.resid = obs_.perBs[g];
            t.xi = CVec::Zero(t.resid.size());
            for (std::size_t j = 0; j < links_[g].size(); ++j) {
                if (static_cast<int>(j) == l || !s_.active[g][j]) continue;
                t.resid -= s_.w[g][j] * ea_[g][j];
                t.xi += s_.cov[g](j, l) * ea_[g][j];
            }
            t.resid /= sigma2_;
            t.xi *= -2.0 / sigma2_;
            t.cll = s_.cov[g](l, l).real();
            const ComplexGaussianBelief& p = in_.wPrior[g][l];
            if (std::isfinite(p.var)) {
                t.priorPrec = 1.0 / p.var;
                t.priorTerm = p.mean / p.var;
            }
            out.push_back(std::move(t));
        }
        return out;
    }

    /// Profile objective and, when `wOut` is non-null, the maximizing w means.
    double localObjective(const std::vector<Term>& ts, const PhaseBelief& b, const std::array<VonMisesBelief, 3>& inc,
                          const LinkPhases& mu, Eigen::Vector3d* grad, Eigen::Matrix3d* hess,
                          std::vector<cd>* wOut = nullptr) const {
        const bool deriv = grad != nullptr;
        double val = 0.0;
        Eigen::Vector3d gr = Eigen::Vector3d::Zero();
        Eigen::Matrix3d he = Eigen::Matrix3d::Zero();
        for (int i = 0; i < 3; ++i) {
            const double w = inc[i].kappa * rho1(component(b.kappa, i));
            if (w == 0.0) continue;
            const double d = component(mu, i) - inc[i].mu;
            val += w * std::cos(d);
            gr[i] -= w * std::sin(d);
            he(i, i) -= w * std::cos(d);
        }
        const int nF = model_.grid().nI, nH = model_.hLength();
        static constexpr int unit[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
        for (const Term& t : ts) {
            const LinkFactors lf = model_.factors(t.id, mu, deriv ? 2 : 0, b.kappa);
            const int nB = static_cast<int>(lf.bs[0].size());
            KronContractor cr(t.resid, nF, nH, nB);
            KronContractor cx(t.xi, nF, nH, nB);
            std::array<double, 3> sq = model_.squaredNorm(t.id, mu.theta, b.kappa.theta);
            const double a = sq[0] / sigma2_ + t.priorPrec;
            const cd u = std::conj(cr(lf.triple(0, 0, 0))) + t.priorTerm;
            val += std::norm(u) / a + cx(lf.triple(0, 0, 0)).real() - t.cll / sigma2_ * sq[0];
            if (wOut) wOut->push_back(u / a);
            if (!deriv) continue;
            std::array<cd, 3> du;
            std::array<double, 3> da{0.0, 0.0, sq[1] / sigma2_};
            for (int i = 0; i < 3; ++i) du[i] = std::conj(cr(lf.triple(unit[i][0], unit[i][1], unit[i][2])));
            for (int i = 0; i < 3; ++i) {
                const double ru = 2.0 * (std::conj(u) * du[i]).real();
                gr[i] += ru / a - std::norm(u) * da[i] / (a * a) +
                         cx(lf.triple(unit[i][0], unit[i][1], unit[i][2])).real();
                for (int j = i; j < 3; ++j) {
                    const int e0 = unit[i][0] + unit[j][0], e1 = unit[i][1] + unit[j][1], e2 = unit[i][2] + unit[j][2];
                    const cd duij = std::conj(cr(lf.triple(e0, e1, e2)));
                    const double daij = i == 2 && j == 2 ? sq[2] / sigma2_ : 0.0;
                    const double ruj = 2.0 * (std::conj(u) * du[j]).real();
                    const double v = 2.0 * (std::conj(du[j]) * du[i] + std::conj(u) * duij).real() / a -
                                     ru * da[j] / (a * a) - ruj * da[i] / (a * a) - std::norm(u) * daij / (a * a) +
                                     2.0 * std::norm(u) * da[i] * da[j] / (a * a * a) + cx(lf.triple(e0, e1, e2)).real();
                    he(i, j) += v;
                    if (j != i) he(j, i) += v;
                }
            }
            gr[2] -= t.cll / sigma2_ * sq[1];
            he(2, 2) -= t.cll / sigma2_ * sq[2];
        }
        if (grad) *grad = gr;
        if (hess) *hess = he;
        return val;
    }

    /// Safeguarded Newton ascent on the profile objective of one variable
    /// group; its links' w means move to their conditional maximizers.
    /// Returns the largest accepted displacement.
    double newton(LinkKind kind, int k, int x, int steps) {
        PhaseBelief& b = belief(kind, k, x);
        const auto& inc = incoming(kind, k, x);
        const std::vector<Term> ts = terms(kind, k, x);
        if (ts.empty()) return 0.0;
        double moved = 0.0;
        for (int it = 0; it < steps; ++it) {
            Eigen::Vector3d gr;
            Eigen::Matrix3d he;
            const double f0 = localObjective(ts, b, inc, b.mu, &gr, &he);
            Eigen::Vector3d step;
            Eigen::LDLT<Eigen::Matrix3d> ldlt(-he);
            if (ldlt.info() == Eigen::Success && ldlt.isPositive() && (ldlt.vectorD().array() > 0.0).all()) {
                step = ldlt.solve(gr);
            } else {
                const double scale = std::max(he.diagonal().cwiseAbs().maxCoeff(), 1e-12);
                step = gr / scale;
            }
            if (!step.allFinite()) break;
            bool accepted = false;
            for (int h = 0; h <= 8; ++h) {
                LinkPhases trial = b.mu;
                for (int i = 0; i < 3; ++i) component(trial, i) += step[i];
                if (localObjective(ts, b, inc, trial, nullptr, nullptr) >= f0) {
                    b.mu = trial;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if (!accepted) break;
            const double disp = step.cwiseAbs().maxCoeff();
            moved = std::max(moved, disp);
            if (disp < 1e-12) break;
        }
        std::vector<cd> wNew;
        localObjective(ts, b, inc, b.mu, nullptr, nullptr, &wNew);
        for (std::size_t i = 0; i < ts.size(); ++i) s_.w[ts[i].bs][ts[i].slot] = wNew[i];
        refreshVar(kind, k, x);
        return moved;
    }

    // ---- concentrations ----

    void updateKappa(LinkKind kind, int k, int x) {
        PhaseBelief& b = belief(kind, k, x);
        const auto& inc = incoming(kind, k, x);
        std::vector<LinkId> act;
        for (const LinkId& id : varLinks(kind, k, x))
            if (s_.active[id.bs][index(id)]) act.push_back(id);
        if (act.empty()) {
            for (int i = 0; i < 3; ++i) component(b.kappa, i) = std::max(inc[i].kappa, kInitKappaFloor);
            refreshVar(kind, k, x);
            return;
        }
        const int n = 3 + 2 * static_cast<int>(act.size());
        MatX fim = MatX::Zero(n, n);
        for (std::size_t a = 0; a < act.size(); ++a) {
            const LinkId& id = act[a];
            const int g = id.bs, l = index(id);
            const LinkFactors lf = model_.factors(id, b.mu, 1);
            const int len = lf.length();
            CMat jac(len, 5);
            const cd wl = s_.w[g][l];
            jac.col(0) = wl * lf.vector(1, 0, 0);
            jac.col(1) = wl * lf.vector(0, 1, 0);
            jac.col(2) = wl * lf.vector(0, 0, 1);
            jac.col(3) = lf.vector();
            jac.col(4) = kJ * jac.col(3);
            const MatX part = (2.0 / sigma2_) * (jac.adjoint() * jac).real();
            const std::array<int, 5> map{0, 1, 2, 3 + 2 * static_cast<int>(a), 4 + 2 * static_cast<int>(a)};
            for (int i = 0; i < 5; ++i)
                for (int j = 0; j < 5; ++j) fim(map[i], map[j]) += part(i, j);
            const double v = in_.wPrior[g][l].var;
            if (std::isfinite(v)) {
                fim(map[3], map[3]) += 2.0 / v;
                fim(map[4], map[4]) += 2.0 / v;
            }
        }
        for (int i = 0; i < 3; ++i)
            fim(i, i) += std::max(inc[i].kappa * std::cos(component(b.mu, i) - inc[i].mu), 0.0);
        // Per-entry ridge: phase and w entries differ in scale by |w|^2.
        fim.diagonal().array() = fim.diagonal().array() * (1.0 + 1e-12) + 1e-300;
        Eigen::LDLT<MatX> ldlt(fim);
        if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return;
        const MatX inv = ldlt.solve(MatX::Identity(n, n));
        for (int i = 0; i < 3; ++i)
            if (inv(i, i) > 0.0 && std::isfinite(inv(i, i))) component(b.kappa, i) = 1.0 / inv(i, i);
        refreshVar(kind, k, x);
    }

    // ---- objective ----

    double elbo() const {
        double total = 0.0;
        for (int g = 0; g < model_.bsCount(); ++g) {
            const int n = static_cast<int>(links_[g].size());
            std::vector<int> act;
            for (int i = 0; i < n; ++i)
                if (s_.active[g][i]) act.push_back(i);
            const CVec& y = obs_.perBs[g];
            double quad = y.squaredNorm();
            const int na = static_cast<int>(act.size());
            CMat jm(na, na), ca(na, na);
            CVec wa(na);
            for (int a = 0; a < na; ++a) {
                wa[a] = s_.w[g][act[a]];
                quad -= 2.0 * (wa[a] * y.dot(ea_[g][act[a]])).real();
                for (int b = 0; b < na; ++b) {
                    jm(a, b) = a == b ? cd(sqn_[g][act[a]], 0.0) : ea_[g][act[a]].dot(ea_[g][act[b]]);
                    ca(a, b) = s_.cov[g](act[a], act[b]);
                }
            }
            if (na > 0) quad += (wa.dot(jm * wa)).real() + (jm * ca).trace().real();
            total -= quad / sigma2_;
            for (int a = 0; a < na; ++a) {
                const ComplexGaussianBelief& p = in_.wPrior[g][act[a]];
                if (std::isfinite(p.var)) total -= (std::norm(wa[a] - p.mean) + ca(a, a).real()) / p.var;
            }
            if (na > 0) {
                Eigen::LDLT<CMat> ldlt(ca);
                total += ldlt.vectorD().real().array().log().sum();
            }
        }
        const auto phaseTerm = [&](const PhaseBelief& b, const std::array<VonMisesBelief, 3>& inc) {
            double v = 0.0;
            for (int i = 0; i < 3; ++i)
                v += inc[i].kappa * rho1(component(b.kappa, i)) * std::cos(component(b.mu, i) - inc[i].mu);
            return v;
        };
        for (int k = 0; k < users_; ++k) {
            for (int g = 0; g < model_.bsCount(); ++g) total += phaseTerm(s_.ub[k][g], in_.ub[k][g]);
            for (int r = 0; r < model_.risCount(); ++r) total += phaseTerm(s_.ui[k][r], in_.ui[k][r]);
        }
        return total;
    }

    int users() const { return users_; }

private:
    const SignalModel& model_;
    const ReceivedBlock& obs_;
    int users_;
    const VmpIncoming& in_;
    VmpSurrogate& s_;
    double sigma2_;
    std::vector<std::vector<LinkId>> links_;
    std::vector<std::vector<CVec>> ea_;
    std::vector<std::vector<double>> sqn_;
};

void checkShapes(const SignalModel& model, int users, const VmpIncoming& in) {
    const int G = model.bsCount(), R = model.risCount();
    const auto bad = [](const char* what) { throw StructuralError(std::string("inner loop input shape: ") + what); };
    if (static_cast<int>(in.ub.size()) != users || static_cast<int>(in.ui.size()) != users) bad("incoming users");
    for (int k = 0; k < users; ++k)
        if (static_cast<int>(in.ub[k].size()) != G || static_cast<int>(in.ui[k].size()) != R) bad("incoming links");
    if (static_cast<int>(in.wPrior.size()) != G || static_cast<int>(in.activeVar.size()) != G) bad("w priors");
    for (int g = 0; g < G; ++g)
        if (static_cast<int>(in.wPrior[g].size()) != users * (1 + R) ||
            static_cast<int>(in.activeVar[g].size()) != users * (1 + R))
            bad("w prior length");
}

}  // namespace

double linkLlrFromEstimate(cd wLs, double s0, double activeVar) {
    if (!(s0 > 0.0)) throw DomainError("link test needs a positive null variance");
    if (!(activeVar >= 0.0)) throw DomainError("link test needs a nonnegative active variance");
    const double s1 = s0 + activeVar;
    return std::log(s0 / s1) + std::norm(wLs) * (1.0 / s0 - 1.0 / s1);
}

std::vector<int> linkDetect(const std::vector<ComplexGaussianBelief>& wLs, const std::vector<double>& activeVar,
                            double threshold) {
    if (wLs.size() != activeVar.size()) throw StructuralError("one active variance per link estimate");
    std::vector<int> out(wLs.size());
    for (std::size_t i = 0; i < wLs.size(); ++i)
        out[i] = linkLlrFromEstimate(wLs[i].mean, wLs[i].var, activeVar[i]) > threshold ? 1 : 0;
    return out;
}

VmpSurrogate initSurrogate(const SignalModel& model, const ReceivedBlock& obs, int users,
                           const std::vector<std::vector<PhaseBelief>>& ub,
                           const std::vector<std::vector<PhaseBelief>>& ui, const VmpIncoming& in) {
    checkShapes(model, users, in);
    VmpSurrogate s;
    s.ub = ub;
    s.ui = ui;
    for (auto* set : {&s.ub, &s.ui})
        for (auto& row : *set)
            for (PhaseBelief& b : row)
                for (int i = 0; i < 3; ++i) component(b.kappa, i) = std::max(component(b.kappa, i), kInitKappaFloor);
    const int G = model.bsCount(), n = users * (1 + model.risCount());
    s.w.assign(G, CVec::Zero(n));
    s.cov.assign(G, CMat::Zero(n, n));
    s.active.assign(G, std::vector<int>(n, 1));
    InnerSolver solver(model, obs, users, in, s);
    for (int g = 0; g < G; ++g) solver.updateW(g);
    return s;
}

VmpSurrogate vmpInner(const SignalModel& model, const ReceivedBlock& obs, int users, const VmpIncoming& in,
                      VmpSurrogate s, const VmpOptions& opt) {
    checkShapes(model, users, in);
    if (opt.sweeps < 1) throw DomainError("inner loop needs at least one sweep");
    InnerSolver solver(model, obs, users, in, s);
    const int G = model.bsCount(), R = model.risCount();
    for (int sweep = 0; sweep < opt.sweeps; ++sweep) {
        double moved = 0.0;
        for (int k = 0; k < users; ++k)
            for (int g = 0; g < G; ++g) moved = std::max(moved, solver.newton(LinkKind::UB, k, g, opt.newtonSteps));
        for (int k = 0; k < users; ++k)
            for (int r = 0; r < R; ++r) moved = std::max(moved, solver.newton(LinkKind::UI, k, r, opt.newtonSteps));
        bool supportChanged = false;
        for (int g = 0; g < G; ++g) {
            solver.updateW(g);
            if (opt.detectLinks && solver.detect(g, opt.llrThreshold)) {
                supportChanged = true;
                solver.updateW(g);
            }
        }
        if (opt.updateConcentrations) {
            for (int k = 0; k < users; ++k) {
                for (int g = 0; g < G; ++g) solver.updateKappa(LinkKind::UB, k, g);
                for (int r = 0; r < R; ++r) solver.updateKappa(LinkKind::UI, k, r);
            }
            for (int g = 0; g < G; ++g) solver.updateW(g);
        }
        if (moved < opt.tol && !supportChanged && sweep > 0) break;
    }
    return s;
}

double surrogateElbo(const SignalModel& model, const ReceivedBlock& obs, int users, const VmpIncoming& in,
                     const VmpSurrogate& s) {
    checkShapes(model, users, in);
    VmpSurrogate copy = s;
    InnerSolver solver(model, obs, users, in, copy);
    return solver.elbo();
}

double linkLlr(const SignalModel& model, const ReceivedBlock& obs, int users, const VmpSurrogate& s, int g, int idx,
               double activeVar) {
    VmpSurrogate copy = s;
    VmpIncoming in;
    in.ub.assign(users, std::vector<std::array<VonMisesBelief, 3>>(model.bsCount()));
    in.ui.assign(users, std::vector<std::array<VonMisesBelief, 3>>(model.risCount()));
    const int n = users * (1 + model.risCount());
    in.wPrior.assign(model.bsCount(), std::vector<ComplexGaussianBelief>(n));
    in.activeVar.assign(model.bsCount(), std::vector<double>(n, activeVar));
    InnerSolver solver(model, obs, users, in, copy);
    return solver.llr(g, idx);
}

}  // namespace isac
