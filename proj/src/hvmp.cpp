#include "isac/hvmp.hpp"

#include <spdlog/spdlog.h>

namespace isac {

void HvmpConfig::validate() const {
    if (outerIters < 1 || innerIters < 1) throw ConfigError("hvmp: outer and inner iteration counts must be >= 1");
    if (!(outerTolM > 0.0)) throw ConfigError("hvmp: outer tolerance must be positive");
    if (newtonSteps < 1) throw ConfigError("hvmp: newton steps must be >= 1");
    if (!(damping > 0.0 && damping <= 1.0)) throw ConfigError("hvmp: damping must lie in (0, 1]");
    if (!std::isfinite(llrThreshold)) throw ConfigError("hvmp: llr threshold must be finite");
}

SlotBeliefState initialBeliefs(const std::vector<Vec4>& means, const Mat4& cov, int bs, int ris) {
    SlotBeliefState st;
    for (const Vec4& m : means) {
        UserBelief u;
        u.state = GaussianBelief::make(m, cov);
        u.symbol.var = std::numeric_limits<double>::infinity();
        st.users.push_back(u);
    }
    st.ub.assign(means.size(), std::vector<LinkVmBeliefs>(bs));
    st.ui.assign(means.size(), std::vector<LinkVmBeliefs>(ris));
    return st;
}

PhaseScales PhaseScales::of(const SignalModel& m) {
    return {m.zetaS(), m.zetaF(), m.zetaTGroup(), m.wavelength()};
}

GaussianBelief perLinkPositionMessage(const VonMisesBelief& theta, const VonMisesBelief& tau, const Anchor& anchor,
                                      const GaussianBelief& reference, const PhaseScales& sc) {
    if (!theta.informative() || !tau.informative()) return GaussianBelief::makeDiffuse(2);
    const Vec2 refPos = reference.mean.head<2>();
    const Vec2 rel = refPos - anchor.position;
    const double dRef = rel.norm();
    const double cRef = dRef > 0.0 ? anchor.axis.dot(rel) / dRef : 0.0;
    const GaussianBelief cB = vmToGaussian(theta, -sc.zetaS, 0.0, cRef);
    const GaussianBelief dB = vmToGaussian(tau, -sc.zetaF / kSpeedOfLight, 0.0, dRef);
    const double d = dB.mean[0];
    if (!(d > 0.0)) return GaussianBelief::makeDiffuse(2);
    const double c = std::clamp(cB.mean[0], -1.0 + 1e-9, 1.0 - 1e-9);
    const double s = std::max(std::sqrt(1.0 - c * c), 1e-3);
    const Vec2 perp(-anchor.axis.y(), anchor.axis.x());
    const double side = perp.dot(rel) < 0.0 ? -1.0 : 1.0;
    const Vec2 u = c * anchor.axis + side * s * perp;
    const Vec2 du = anchor.axis - side * (c / s) * perp;
    const Mat2 cov = dB.cov(0, 0) * u * u.transpose() + cB.cov(0, 0) * d * d * du * du.transpose();
    return GaussianBelief::make(anchor.position + d * u, cov);
}

VonMisesBelief dopplerPredictionMessage(const GaussianBelief& velocity, const Vec2& direction, const PhaseScales& sc) {
    if (velocity.diffuse) return {};
    const double a = sc.zetaTGroup / sc.wavelength;
    const double mean = -a * velocity.mean.dot(direction);
    const double var = a * a * direction.dot(velocity.cov * direction);
    VonMisesBelief out;
    out.mu = wrapToPi(mean);
    out.kappa = var > 0.0 ? 1.0 / var : 1e300;
    return out;
}

double dopplerObjective(const std::vector<VonMisesBelief>& msgs, const std::vector<Vec2>& dirs, double a,
                        const Vec2& v) {
    double f = 0.0;
    for (std::size_t l = 0; l < msgs.size(); ++l) f += msgs[l].kappa * std::cos(a * v.dot(dirs[l]) + msgs[l].mu);
    return f;
}

Vec2 dopplerGradient(const std::vector<VonMisesBelief>& msgs, const std::vector<Vec2>& dirs, double a, const Vec2& v) {
    Vec2 g = Vec2::Zero();
    for (std::size_t l = 0; l < msgs.size(); ++l)
        g -= msgs[l].kappa * a * std::sin(a * v.dot(dirs[l]) + msgs[l].mu) * dirs[l];
    return g;
}

Mat2 dopplerHessian(const std::vector<VonMisesBelief>& msgs, const std::vector<Vec2>& dirs, double a, const Vec2& v) {
    Mat2 h = Mat2::Zero();
    for (std::size_t l = 0; l < msgs.size(); ++l)
        h -= msgs[l].kappa * a * a * std::cos(a * v.dot(dirs[l]) + msgs[l].mu) * dirs[l] * dirs[l].transpose();
    return h;
}

namespace {

bool negativeDefinite(const Mat2& h) { return h(0, 0) < 0.0 && h.determinant() > 0.0; }

}  // namespace

VelocityEvidence velocityFusion(const std::vector<VonMisesBelief>& msgs, const GaussianBelief& priorVel,
                                const std::vector<Vec2>& directions, const PhaseScales& sc) {
    if (msgs.size() != directions.size()) throw StructuralError("one direction per Doppler message");
    if (priorVel.dim() != 2) throw StructuralError("velocity prior must be 2D");
    VelocityEvidence out;
    out.posterior = priorVel;
    std::vector<VonMisesBelief> ms;
    std::vector<Vec2> ds;
    for (std::size_t l = 0; l < msgs.size(); ++l)
        if (msgs[l].informative()) {
            ms.push_back(msgs[l]);
            ds.push_back(directions[l]);
        }
    if (ms.empty()) return out;
    const double a = sc.zetaTGroup / sc.wavelength;
    const Mat2 pInfo = priorVel.information();
    const Vec2 m0 = priorVel.diffuse ? Vec2::Zero() : Vec2(priorVel.mean);
    const auto phi = [&](const Vec2& v) {
        return dopplerObjective(ms, ds, a, v) - 0.5 * (v - m0).dot(pInfo * (v - m0));
    };
    Vec2 v = m0;
    for (int it = 0; it < 50; ++it) {
        const Vec2 g = dopplerGradient(ms, ds, a, v) - pInfo * (v - m0);
        const Mat2 h = dopplerHessian(ms, ds, a, v) - pInfo;
        Vec2 step;
        if (negativeDefinite(h)) {
            step = -h.ldlt().solve(g);
        } else {
            step = g / std::max(h.diagonal().cwiseAbs().maxCoeff(), 1e-300);
        }
        const double f0 = phi(v);
        bool accepted = false;
        for (int k = 0; k < 30; ++k) {
            if (phi(v + step) >= f0) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;
        v += step;
        if (step.norm() < 1e-13 * (1.0 + v.norm())) break;
    }
    Mat2 info = -dopplerHessian(ms, ds, a, v);
    if (!(info(0, 0) >= 0.0 && info(1, 1) >= 0.0 && info.determinant() >= -1e-12 * info.squaredNorm())) {
        info.setZero();
        for (std::size_t l = 0; l < ms.size(); ++l)
            info += ms[l].kappa * a * a * std::max(std::cos(a * v.dot(ds[l]) + ms[l].mu), 0.0) * ds[l] *
                    ds[l].transpose();
        spdlog::debug("velocity evidence curvature clipped to its PSD part");
    }
    if (!info.allFinite() || info.trace() <= 0.0) {
        spdlog::debug("velocity evidence uninformative at the maximizer");
        return out;
    }
    out.info = info;
    out.infoVec = info * v + dopplerGradient(ms, ds, a, v);
    out.informative = true;
    out.posterior = GaussianBelief::fromInformation(pInfo + info, (priorVel.diffuse ? Vec2::Zero() : Vec2(pInfo * m0)) +
                                                                      out.infoVec);
    return out;
}

GaussianBelief positionFusion(const std::vector<GaussianBelief>& msgs) { return gaussianFuse(msgs); }

GaussianBelief leaveOneOutState(const GaussianBelief& predicted, const StateEvidence& ev, int skip,
                                const PhaseScales& sc, bool useDoppler) {
    if (predicted.dim() != 4 || predicted.diffuse) throw StructuralError("predicted state must be a proper 4D belief");
    MatX info = predicted.information();
    VecX vec = predicted.informationVector();
    for (std::size_t l = 0; l < ev.position.size(); ++l) {
        if (static_cast<int>(l) == skip || ev.position[l].diffuse) continue;
        const MatX li = ev.position[l].information();
        info.topLeftCorner<2, 2>() += li;
        vec.head<2>() += li * ev.position[l].mean;
    }
    if (useDoppler) {
        std::vector<VonMisesBelief> ms;
        std::vector<Vec2> ds;
        for (std::size_t l = 0; l < ev.doppler.size(); ++l) {
            if (static_cast<int>(l) == skip) continue;
            ms.push_back(ev.doppler[l]);
            ds.push_back(ev.directions.at(l));
        }
        const GaussianBelief joint = GaussianBelief::fromInformation(info, vec);
        const GaussianBelief vel = GaussianBelief::make(joint.mean.tail<2>(), joint.cov.bottomRightCorner<2, 2>());
        const VelocityEvidence ve = velocityFusion(ms, vel, ds, sc);
        if (ve.informative) {
            info.bottomRightCorner<2, 2>() += ve.info;
            vec.tail<2>() += ve.infoVec;
        }
    }
    return GaussianBelief::fromInformation(info, vec);
}

ComplexGaussianBelief symbolFusion(const std::vector<ComplexGaussianBelief>& observations, const SymbolPrior& prior) {
    std::vector<ComplexGaussianBelief> finite;
    for (const auto& o : observations)
        if (std::isfinite(o.var)) finite.push_back(o);
    if (prior.kind == SymbolPriorKind::ComplexGaussian) {
        finite.push_back({cd(0.0, 0.0), prior.variance});
        return complexGaussianFuse(finite);
    }
    if (finite.empty()) return {cd(0.0, 0.0), prior.variance};
    const ComplexGaussianBelief lik = complexGaussianFuse(finite);
    const double amp = std::sqrt(prior.variance / 2.0);
    std::array<cd, 4> pts{cd(amp, amp), cd(-amp, amp), cd(-amp, -amp), cd(amp, -amp)};
    std::array<double, 4> logw{};
    for (int i = 0; i < 4; ++i) logw[i] = -std::norm(pts[i] - lik.mean) / lik.var;
    const double top = *std::max_element(logw.begin(), logw.end());
    double z = 0.0;
    cd mean(0.0, 0.0);
    double second = 0.0;
    for (int i = 0; i < 4; ++i) {
        const double w = std::exp(logw[i] - top);
        z += w;
        mean += w * pts[i];
        second += w * std::norm(pts[i]);
    }
    mean /= z;
    const double var = std::max(second / z - std::norm(mean), 1e-15 * prior.variance);
    return {mean, var};
}

SlotBeliefState forwardPredict(const SlotBeliefState& posterior, const MobilityModel& model) {
    model.validate();
    SlotBeliefState out = posterior;
    for (UserBelief& u : out.users) {
        if (u.state.dim() != 4 || u.state.diffuse) throw StructuralError("forward prediction needs a proper 4D state");
        const Vec4 m = model.transition * u.state.mean;
        const Mat4 p = model.transition * u.state.cov * model.transition.transpose() + model.processNoiseCov;
        u.state = GaussianBelief::make(m, 0.5 * (p + p.transpose()));
        u.symbol = {cd(0.0, 0.0), std::numeric_limits<double>::infinity()};
    }
    for (auto* set : {&out.ub, &out.ui})
        for (auto& row : *set)
            for (LinkVmBeliefs& b : row) b = LinkVmBeliefs{};
    return out;
}

// ---- slot driver -----------------------------------------------------------

namespace {

struct SlotSolver {
    const SignalModel& model;
    const ReceivedBlock& obs;
    const SlotBeliefState& prior;
    const HvmpConfig& cfg;
    const SlotContext& ctx;
    PhaseScales sc;
    int K, G, R, V;

    SlotSolver(const SignalModel& m, const ReceivedBlock& o, const SlotBeliefState& p, const HvmpConfig& c,
               const SlotContext& x)
        : model(m), obs(o), prior(p), cfg(c), ctx(x), sc(PhaseScales::of(m)),
          K(static_cast<int>(p.users.size())), G(m.bsCount()), R(m.risCount()), V(G + R) {}

    LinkId varId(int k, int v) const {
        return v < G ? LinkId{LinkKind::UB, k, v, -1} : LinkId{LinkKind::UI, k, 0, v - G};
    }
    const Anchor& anchor(int v) const { return v < G ? model.scene().baseStations[v] : model.scene().ris[v - G]; }
    // Link slot inside the per-BS ordering.
    int linkIndex(int k, int v) const { return k * (1 + R) + (v < G ? 0 : 1 + v - G); }
    // Flattened per-user index of the link observed at BS g for variable v.
    int symIndex(int g, int v) const { return g * (1 + R) + (v < G ? 0 : 1 + v - G); }
    bool linkAtBs(int g, int v) const { return v >= G || v == g; }

    double gainMagnitude(int g, int v, const Vec2& pos) const {
        const double lambda = model.wavelength();
        const double d = std::max((pos - anchor(v).position).norm(), 1e-3);
        if (v < G) return pathGain(d, lambda);
        return ctx.risEfficiency * pathGain(model.risBs(g, v - G).atBs.distance, lambda) * pathGain(d, lambda);
    }

    /// Range variance relative to squared range along the link.
    double relRangeVar(int v, const GaussianBelief& st) const {
        const Vec2 rel = st.mean.head<2>() - anchor(v).position;
        const double d = std::max(rel.norm(), 1e-3);
        const Vec2 e = rel / d;
        return e.dot(st.cov.topLeftCorner<2, 2>() * e) / (d * d);
    }

    std::array<VonMisesBelief, 3> incoming(int k, int v, const GaussianBelief& loo, bool doppler) const {
        const LinkId id = varId(k, v);
        const UserState us = UserState::fromStacked(loo.mean);
        const LinkPhases mu = model.phases(id, us);
        const auto jac = model.phaseJacobian(id, us);
        const Eigen::Matrix3d cov = jac * loo.cov * jac.transpose();
        std::array<VonMisesBelief, 3> out;
        const std::array<double, 3> m = mu.array();
        for (int i = 0; i < 3; ++i) {
            out[i].mu = wrapToPi(m[i]);
            out[i].kappa = cov(i, i) > 0.0 ? 1.0 / cov(i, i) : 1e300;
        }
        if (doppler) {
            const GaussianBelief vel = GaussianBelief::make(loo.mean.tail<2>(), loo.cov.bottomRightCorner<2, 2>());
            out[1] = dopplerPredictionMessage(vel, model.geometry(id, us).direction, sc);
        } else {
            out[1].kappa = 0.0;
        }
        return out;
    }

    SlotResult fallback(SlotResult res) const {
        res.diverged = true;
        res.posterior = prior;
        res.estimates = SlotEstimates{};
        for (int k = 0; k < K; ++k) {
            res.estimates.states.push_back(UserState::fromStacked(prior.users[k].state.mean));
            res.estimates.symbols.push_back(ctx.pilotSymbols.size() == std::size_t(K) ? ctx.pilotSymbols[k]
                                                                                       : cd(0.0, 0.0));
        }
        res.estimates.alphaUB.assign(K, std::vector<int>(G, 0));
        res.estimates.alphaUI.assign(K, std::vector<std::vector<int>>(G, std::vector<int>(R, 0)));
        return res;
    }

    SlotResult run() {
        cfg.validate();
        if (static_cast<int>(prior.ub.size()) != K || static_cast<int>(prior.ui.size()) != K)
            throw StructuralError("prior link beliefs do not match the user count");
        const bool pilot = cfg.mode == EstimatorMode::Pilot;
        const bool useDoppler = cfg.mode != EstimatorMode::PositionOnly;
        if (pilot && static_cast<int>(ctx.pilotSymbols.size()) != K)
            throw StructuralError("pilot mode needs one pilot symbol per user");
        for (const UserBelief& u : prior.users)
            if (u.state.dim() != 4 || u.state.diffuse || !u.state.cov.allFinite())
                throw DomainError("slot prior must be a proper 4D belief");

        SlotResult res;
        std::vector<GaussianBelief> state(K);
        for (int k = 0; k < K; ++k) state[k] = prior.users[k].state;
        std::vector<StateEvidence> ev(K);
        std::vector<std::vector<ComplexGaussianBelief>> symObs(K);
        const double inf = std::numeric_limits<double>::infinity();
        for (int k = 0; k < K; ++k) {
            ev[k].position.assign(V, GaussianBelief::makeDiffuse(2));
            ev[k].doppler.assign(V, VonMisesBelief{});
            ev[k].directions.assign(V, Vec2(1.0, 0.0));
            symObs[k].assign(G * (1 + R), ComplexGaussianBelief{cd(0.0, 0.0), inf});
        }
        std::vector<std::vector<std::array<VonMisesBelief, 3>>> ext(K, std::vector<std::array<VonMisesBelief, 3>>(V));
        VmpIncoming in;
        VmpSurrogate sur;
        std::vector<double> norms;
        const double amp = std::sqrt(ctx.powerW);
        const double sVar = ctx.symbolPrior.variance;
        VmpOptions opt;
        opt.sweeps = cfg.innerIters;
        opt.newtonSteps = cfg.newtonSteps;
        opt.llrThreshold = cfg.llrThreshold;

        try {
            for (int j = 0; j < cfg.outerIters; ++j) {
                // Incoming phase messages from leave-one-out state beliefs.
                in.ub.assign(K, std::vector<std::array<VonMisesBelief, 3>>(G));
                in.ui.assign(K, std::vector<std::array<VonMisesBelief, 3>>(R));
                for (int k = 0; k < K; ++k) {
                    for (int v = 0; v < V; ++v)
                        ev[k].directions[v] = model.geometry(varId(k, v), UserState::fromStacked(state[k].mean)).direction;
                    for (int v = 0; v < V; ++v) {
                        const GaussianBelief loo = leaveOneOutState(prior.users[k].state, ev[k], v, sc, useDoppler);
                        const auto msg = incoming(k, v, loo, useDoppler);
                        if (v < G) in.ub[k][v] = msg;
                        else in.ui[k][v - G] = msg;
                    }
                }
                // w priors from leave-one-out symbol messages.
                const int n = K * (1 + R);
                in.wPrior.assign(G, std::vector<ComplexGaussianBelief>(n));
                in.activeVar.assign(G, std::vector<double>(n, 0.0));
                for (int k = 0; k < K; ++k)
                    for (int g = 0; g < G; ++g)
                        for (int v = 0; v < V; ++v) {
                            if (!linkAtBs(g, v)) continue;
                            const double beta = gainMagnitude(g, v, state[k].mean.head<2>());
                            const double a2 = amp * amp * beta * beta;
                            const int li = linkIndex(k, v);
                            in.activeVar[g][li] = a2 * sVar;
                            if (!ctx.gainPhaseKnown) {
                                in.wPrior[g][li] = {cd(0.0, 0.0), a2 * sVar};
                                continue;
                            }
                            cd sHat;
                            double sSpread;
                            if (pilot) {
                                sHat = ctx.pilotSymbols[k];
                                sSpread = 0.0;
                            } else {
                                std::vector<ComplexGaussianBelief> others = symObs[k];
                                others[symIndex(g, v)].var = inf;
                                const ComplexGaussianBelief sb = symbolFusion(others, ctx.symbolPrior);
                                sHat = sb.mean;
                                sSpread = sb.var;
                            }
                            const double var =
                                std::max(a2 * (sSpread + std::norm(sHat) * relRangeVar(v, state[k])), 1e-12 * a2 * sVar);
                            in.wPrior[g][li] = {amp * beta * sHat, var};
                        }

                if (j == 0) {
                    std::vector<std::vector<PhaseBelief>> ub(K, std::vector<PhaseBelief>(G)), ui(K, std::vector<PhaseBelief>(R));
                    for (int k = 0; k < K; ++k)
                        for (int v = 0; v < V; ++v) {
                            const auto& msg = v < G ? in.ub[k][v] : in.ui[k][v - G];
                            const LinkPhases mu = model.phases(varId(k, v), UserState::fromStacked(state[k].mean));
                            PhaseBelief b{mu, {msg[0].kappa, msg[1].kappa, msg[2].kappa}};
                            if (v < G) ub[k][v] = b;
                            else ui[k][v - G] = b;
                        }
                    sur = initSurrogate(model, obs, K, ub, ui, in);
                }
                sur = vmpInner(model, obs, K, in, std::move(sur), opt);

                // Extrinsic phase messages and the evidence they carry.
                for (int k = 0; k < K; ++k)
                    for (int v = 0; v < V; ++v) {
                        const auto& inc = v < G ? in.ub[k][v] : in.ui[k][v - G];
                        const PhaseBelief& pb = v < G ? sur.ub[k][v] : sur.ui[k][v - G];
                        bool any = false;
                        for (int g = 0; g < G; ++g)
                            if (linkAtBs(g, v) && sur.active[g][linkIndex(k, v)]) any = true;
                        std::array<VonMisesBelief, 3> e{};
                        if (any) {
                            const std::array<double, 3> mu = pb.mu.array();
                            const std::array<double, 3> kap{pb.kappa.tau, pb.kappa.nu, pb.kappa.theta};
                            for (int i = 0; i < 3; ++i) {
                                const VonMisesBelief post{wrapToPi(mu[i]), kap[i]};
                                VonMisesBelief q = vmDivide(post, inc[i]);
                                if (std::cos(q.mu - post.mu) < 0.0) q = {};
                                if (ext[k][v][i].informative() && q.informative())
                                    q = VonMisesBelief::fromNatural(cfg.damping * q.natural() +
                                                                    (1.0 - cfg.damping) * ext[k][v][i].natural());
                                if (!q.informative()) q = {};
                                e[i] = q;
                            }
                        }
                        ext[k][v] = e;
                        ev[k].position[v] = perLinkPositionMessage(e[2], e[0], anchor(v), state[k], sc);
                        ev[k].doppler[v] = useDoppler ? e[1] : VonMisesBelief{};
                        for (int g = 0; g < G; ++g) {
                            if (!linkAtBs(g, v)) continue;
                            const int li = linkIndex(k, v);
                            ComplexGaussianBelief& so = symObs[k][symIndex(g, v)];
                            so = {cd(0.0, 0.0), inf};
                            if (!sur.active[g][li] || !ctx.gainPhaseKnown) continue;
                            const double beta = gainMagnitude(g, v, state[k].mean.head<2>());
                            const double a2 = amp * amp * beta * beta;
                            // Extrinsic w: the posterior divided by its own prior, which was built
                            // from the other links' symbol messages.
                            cd wm = sur.w[g][li];
                            double wv = sur.cov[g](li, li).real();
                            const ComplexGaussianBelief& pw = in.wPrior[g][li];
                            if (std::isfinite(pw.var) && wv > 0.0) {
                                const double prec = 1.0 / wv - 1.0 / pw.var;
                                if (!(prec > 0.0)) continue;
                                wm = (wm / wv - pw.mean / pw.var) / prec;
                                wv = 1.0 / prec;
                            }
                            const cd sObs = wm / (amp * beta);
                            so = {sObs, wv / a2 + std::norm(sObs) * relRangeVar(v, state[k])};
                            if (!(so.var > 0.0)) so.var = 1e-15 * sVar;
                        }
                    }

                // Joint state update.
                double norm = 0.0;
                for (int k = 0; k < K; ++k) {
                    const GaussianBelief next = leaveOneOutState(prior.users[k].state, ev[k], -1, sc, useDoppler);
                    if (!next.mean.allFinite() || !next.cov.allFinite()) throw StructuralError("non-finite state");
                    norm = std::max(norm, (next.mean.head<2>() - state[k].mean.head<2>()).norm());
                    state[k] = next;
                }
                res.iterations = j + 1;
                const double elbo = surrogateElbo(model, obs, K, in, sur);
                for (int k = 0; k < K; ++k) {
                    int act = 0;
                    for (int g = 0; g < G; ++g)
                        for (int v = 0; v < V; ++v)
                            if (linkAtBs(g, v)) act += sur.active[g][linkIndex(k, v)];
                    res.trace.push_back({j, k, state[k].mean.head<2>(), elbo, act});
                }
                norms.push_back(norm);
                const std::size_t t = norms.size();
                if (!std::isfinite(norm) ||
                    (t >= 4 && norms[t - 1] > 10.0 * norms[t - 4] && norms[t - 1] > cfg.outerTolM)) {
                    spdlog::warn("position updates grew from {:.3g} m to {:.3g} m; slot falls back to the prediction",
                                 t >= 4 ? norms[t - 4] : 0.0, norm);
                    return fallback(std::move(res));
                }
                if (j >= 1 && norm < cfg.outerTolM) break;
            }
        } catch (const StructuralError& e) {
            spdlog::warn("slot estimation failed ({}); falling back to the prediction", e.what());
            return fallback(std::move(res));
        }

        // Posterior beliefs and point estimates.
        res.posterior = prior;
        SlotEstimates& est = res.estimates;
        est.alphaUB.assign(K, std::vector<int>(G, 0));
        est.alphaUI.assign(K, std::vector<std::vector<int>>(G, std::vector<int>(R, 0)));
        for (int k = 0; k < K; ++k) {
            res.posterior.users[k].state = state[k];
            const ComplexGaussianBelief sym =
                pilot ? ComplexGaussianBelief{ctx.pilotSymbols[k], 0.0} : symbolFusion(symObs[k], ctx.symbolPrior);
            res.posterior.users[k].symbol = sym;
            est.states.push_back(UserState::fromStacked(state[k].mean));
            est.symbols.push_back(sym.mean);
            for (int g = 0; g < G; ++g) {
                est.alphaUB[k][g] = sur.active[g][linkIndex(k, g)];
                for (int r = 0; r < R; ++r) est.alphaUI[k][g][r] = sur.active[g][linkIndex(k, G + r)];
            }
            for (int v = 0; v < V; ++v) {
                LinkVmBeliefs& lb = v < G ? res.posterior.ub[k][v] : res.posterior.ui[k][v - G];
                lb.incoming = v < G ? in.ub[k][v] : in.ui[k][v - G];
                lb.extrinsic = ext[k][v];
            }
        }
        return res;
    }
};

}  // namespace

SlotResult runSlot(const SignalModel& model, const ReceivedBlock& obs, const SlotBeliefState& prior,
                   const HvmpConfig& cfg, const SlotContext& ctx) {
    return SlotSolver(model, obs, prior, cfg, ctx).run();
}

}  // namespace isac
