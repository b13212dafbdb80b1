#include "isac/harness.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <ostream>
#include <thread>

namespace isac {

// ---- metrics ---------------------------------------------------------------

std::vector<MetricsRow> slotMetrics(const std::vector<std::vector<UserState>>& truth,
                                    const std::vector<std::vector<cd>>& trueSymbols,
                                    const std::vector<SlotEstimates>& estimates) {
    if (truth.size() != estimates.size() || truth.size() != trueSymbols.size())
        throw StructuralError("metrics: truth and estimate sequences differ in length");
    std::vector<MetricsRow> rows;
    for (std::size_t t = 0; t < truth.size(); ++t) {
        const std::size_t K = truth[t].size();
        if (estimates[t].states.size() != K || estimates[t].symbols.size() != K || trueSymbols[t].size() != K)
            throw StructuralError("metrics: user count mismatch in slot " + std::to_string(t + 1));
        for (std::size_t k = 0; k < K; ++k) {
            MetricsRow r;
            r.slot = static_cast<int>(t) + 1;
            r.user = static_cast<int>(k);
            r.positionRmse = (estimates[t].states[k].position - truth[t][k].position).norm();
            r.velocityRmse = (estimates[t].states[k].velocity - truth[t][k].velocity).norm();
            r.symbolMse = std::norm(estimates[t].symbols[k] - trueSymbols[t][k]);
            rows.push_back(r);
        }
    }
    return rows;
}

double timeAveragedError(const std::vector<Vec2>& truth, const std::vector<Vec2>& estimate) {
    if (truth.size() != estimate.size() || truth.empty())
        throw StructuralError("metrics: trajectories must be nonempty and aligned");
    double s = 0.0;
    for (std::size_t t = 0; t < truth.size(); ++t) s += (estimate[t] - truth[t]).norm();
    return s / static_cast<double>(truth.size());
}

double linkAccuracy(const BlockageState& truth, const SlotEstimates& est, int user) {
    const int G = static_cast<int>(truth.ib.size());
    const int R = G > 0 ? static_cast<int>(truth.ib[0].size()) : 0;
    int hits = 0, total = 0;
    for (int g = 0; g < G; ++g) {
        hits += (est.alphaUB[user][g] != 0) == (truth.ub[user][g] != 0);
        ++total;
        for (int r = 0; r < R; ++r) {
            const bool exists = truth.ui[user][r] && truth.ib[g][r];
            hits += (est.alphaUI[user][g][r] != 0) == exists;
            ++total;
        }
    }
    return total ? static_cast<double>(hits) / total : 1.0;
}

namespace {

struct Accumulator {
    double pos = 0, pos2 = 0, vel = 0, sym = 0, bound2 = 0, acc = 0;
    int n = 0;
    void add(const MetricsRow& r) {
        pos += r.positionRmse;
        pos2 += r.positionRmse * r.positionRmse;
        vel += r.velocityRmse;
        sym += r.symbolMse;
        bound2 += r.bcrbPosition * r.bcrbPosition;
        acc += r.activeLinkAccuracy;
        ++n;
    }
    SummaryRow row(int slot, int user) const {
        SummaryRow s;
        s.slot = slot;
        s.user = user;
        s.samples = n;
        if (n == 0) return s;
        s.positionRmse = pos / n;
        s.positionRms = std::sqrt(pos2 / n);
        s.velocityRmse = vel / n;
        s.symbolMse = sym / n;
        s.bcrbPosition = std::sqrt(bound2 / n);
        s.activeLinkAccuracy = acc / n;
        return s;
    }
};

/// 95% normal half-width of the mean of `x`.
double halfWidth(const std::vector<double>& x) {
    const std::size_t n = x.size();
    if (n < 2) return 0.0;
    double m = 0.0;
    for (double v : x) m += v;
    m /= n;
    double ss = 0.0;
    for (double v : x) ss += (v - m) * (v - m);
    return 1.96 * std::sqrt(ss / (n - 1) / n);
}

}  // namespace

std::vector<SummaryRow> summarize(const std::vector<MetricsRow>& rows, int slots, int users) {
    // Index -1 collects all users.
    std::vector<std::vector<Accumulator>> perSlot(slots, std::vector<Accumulator>(users + 1));
    std::vector<Accumulator> overall(users + 1);
    std::vector<std::vector<std::vector<double>>> slotErrors(slots, std::vector<std::vector<double>>(users + 1));
    std::map<std::pair<int, int>, std::pair<double, int>> perReal;  // (realization, user) -> error sum, count
    for (const MetricsRow& r : rows) {
        if (r.slot < 1 || r.slot > slots || r.user < 0 || r.user >= users)
            throw StructuralError("summary: row outside the configured slots/users");
        for (int u : {r.user, users}) {
            perSlot[r.slot - 1][u].add(r);
            overall[u].add(r);
            slotErrors[r.slot - 1][u].push_back(r.positionRmse);
            auto& acc = perReal[{r.realization, u}];
            acc.first += r.positionRmse;
            ++acc.second;
        }
    }
    std::vector<std::vector<double>> samples(users + 1);
    for (const auto& [key, v] : perReal) samples[key.second].push_back(v.first / v.second);
    std::vector<SummaryRow> out;
    for (int t = 0; t < slots; ++t)
        for (int u = 0; u <= users; ++u) {
            SummaryRow s = perSlot[t][u].row(t + 1, u == users ? -1 : u);
            s.positionHalfWidth = halfWidth(slotErrors[t][u]);
            out.push_back(s);
        }
    for (int u = 0; u <= users; ++u) {
        SummaryRow s = overall[u].row(0, u == users ? -1 : u);
        s.positionHalfWidth = halfWidth(samples[u]);
        out.push_back(s);
    }
    return out;
}

// ---- experiment ------------------------------------------------------------

namespace {

Mat4 sqrtCov(const Mat4& c) {
    const Eigen::SelfAdjointEigenSolver<Mat4> es(c);
    return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

Vec4 gaussian4(Rng& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Vec4 v;
    for (int i = 0; i < 4; ++i) v(i) = n(rng);
    return v;
}

struct RealizationOutput {
    std::vector<MetricsRow> rows;
    std::vector<RealizationTrace> trace;
    bool diverged = false;
    double wallMs = 0.0;
};

class RealizationRunner {
public:
    RealizationRunner(const RunConfig& cfg, int index)
        : cfg_(cfg), index_(index), K_(static_cast<int>(cfg.scenario.users.size())),
          G_(static_cast<int>(cfg.scenario.scene.baseStations.size())),
          R_(static_cast<int>(cfg.scenario.scene.ris.size())) {}

    RealizationOutput run() {
        const auto start = std::chrono::steady_clock::now();
        const std::uint64_t seed = cfg_.seed;
        const auto idx = static_cast<std::uint64_t>(index_);
        const std::uint64_t trajTag = cfg_.redrawTrajectory ? idx : 0;
        const std::uint64_t blockTag = cfg_.redrawBlockage ? idx : 0;
        const std::uint64_t noiseTag = cfg_.redrawNoise ? idx : 0;
        Rng trajRng = makeRng(seed, {trajTag, 1});
        BlockageSampler blockage(cfg_.channel.blockage, K_, G_, R_, deriveSeed(seed, {blockTag, 2}));
        Rng noiseRng = makeRng(seed, {noiseTag, 3});
        Rng symbolRng = makeRng(seed, {noiseTag, 4});
        Rng initRng = makeRng(seed, {trajTag, 5});
        Rng gainRng = makeRng(seed, {noiseTag, 6});
        Rng profileRng = makeRng(seed, {idx, 7});

        const MobilityModel mob = cfg_.scenario.mobility();
        const Mat4 noiseRoot = sqrtCov(mob.processNoiseCov);
        const Mat4 p0 = cfg_.scenario.initialCov();
        const Mat4 p0Root = sqrtCov(p0);
        const double powerW = dbmToWatts(cfg_.protocol.powerDbm);
        const double noiseVar = cfg_.protocol.noiseVar();
        const double symVar = cfg_.protocol.symbolPrior.variance;
        const double eff = cfg_.channel.risEfficiency;
        const Scene& scene = cfg_.scenario.scene;

        std::vector<UserState> truth = cfg_.scenario.users;
        std::vector<Vec4> initMeans;
        for (const UserState& u : truth) initMeans.push_back(u.stacked() + p0Root * gaussian4(initRng));
        SlotBeliefState beliefs = initialBeliefs(initMeans, p0, G_, R_);

        std::vector<int> risSizes;
        for (const Anchor& a : scene.ris) risSizes.push_back(a.elementCount);
        const RisSchedule initial = randomRisSchedule(profileRng, risSizes, cfg_.protocol.grid.q1);
        SignalModel truthModel(scene, cfg_.protocol.grid, initial, false);
        SignalModel estModel(scene, cfg_.protocol.grid, initial, cfg_.hvmp.intraGroupApprox);

        BimMatrix bim = initialBim(p0, K_, symVar);
        BimMatrix designBim = bim;
        const TransitionBlocks blocks = transitionBlocks(mob, K_, symVar);
        const BcrbWeights weights =
            BcrbWeights::make(K_, cfg_.bcrb.weightPosition, cfg_.bcrb.weightVelocity, cfg_.bcrb.weightSymbol);

        SlotContext ctx;
        ctx.powerW = powerW;
        ctx.risEfficiency = eff;
        ctx.symbolPrior = cfg_.protocol.symbolPrior;
        ctx.gainPhaseKnown = cfg_.channel.gainPhase == GainPhase::Zero;

        RealizationOutput out;
        for (int t = 1; t <= cfg_.slots; ++t) {
            for (UserState& u : truth) u = stepState(u, mob, noiseRoot * gaussian4(trajRng));
            const SlotBeliefState prior = forwardPredict(beliefs, mob);
            std::vector<UserState> predicted;
            for (const UserBelief& u : prior.users) predicted.push_back(UserState::fromStacked(u.state.mean));

            if (R_ > 0 && redesignDue(t)) {
                const RisSchedule s = designProfile(truthModel, predicted, designBim, blocks, weights, powerW, noiseVar);
                truthModel.setSchedule(s);
                estModel.setSchedule(s);
            }

            SlotTruth st;
            st.users = truth;
            st.alpha = blockage.next();
            st.gainUB.assign(K_, std::vector<cd>(G_));
            st.gainUI.assign(K_, std::vector<cd>(R_));
            st.gainIB.assign(G_, std::vector<cd>(R_));
            const double lam = scene.wavelength();
            for (int k = 0; k < K_; ++k) {
                for (int g = 0; g < G_; ++g)
                    st.gainUB[k][g] = complexGain(truthModel.geometry({LinkKind::UB, k, g, -1}, truth[k]).distance, lam,
                                                  cfg_.channel.gainPhase, gainRng);
                for (int r = 0; r < R_; ++r)
                    st.gainUI[k][r] = complexGain(truthModel.geometry({LinkKind::UI, k, 0, r}, truth[k]).distance, lam,
                                                  cfg_.channel.gainPhase, gainRng);
            }
            for (int g = 0; g < G_; ++g)
                for (int r = 0; r < R_; ++r)
                    st.gainIB[g][r] = complexGain(truthModel.risBs(g, r).atBs.distance, lam, cfg_.channel.gainPhase, gainRng);
            for (int k = 0; k < K_; ++k) st.symbols.push_back(cfg_.protocol.symbolPrior.sample(symbolRng));

            const ReceivedBlock obs =
                assembleObservation(truthModel, truth, effectiveSignals(st, powerW, eff), noiseVar, noiseRng);
            ctx.pilotSymbols = cfg_.hvmp.mode == EstimatorMode::Pilot ? st.symbols : std::vector<cd>{};
            const SlotResult res = runSlot(estModel, obs, prior, cfg_.hvmp, ctx);
            beliefs = res.posterior;
            out.diverged = out.diverged || res.diverged;

            if (cfg_.bcrb.enabled)
                bim = bimRecursion(bim, measurementBim(truthModel, st, powerW, eff, noiseVar), blocks);
            if (cfg_.profile == ProfileMode::Optimized)
                designBim = bimRecursion(
                    designBim, measurementBim(truthModel, nominalPoint(truthModel, predicted), powerW, eff, noiseVar),
                    blocks);

            std::vector<MetricsRow> rows = slotMetrics({truth}, {st.symbols}, {res.estimates});
            for (MetricsRow& r : rows) {
                r.realization = index_;
                r.slot = t;
                r.bcrbPosition = cfg_.bcrb.enabled ? positionBound(bim, r.user) : 0.0;
                r.activeLinkAccuracy = linkAccuracy(st.alpha, res.estimates, r.user);
                r.diverged = res.diverged;
                out.rows.push_back(r);
            }
            if (cfg_.trace)
                for (const OuterTraceRow& tr : res.trace) out.trace.push_back({t, tr});
        }
        out.wallMs = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        return out;
    }

private:
    bool redesignDue(int t) const {
        if (cfg_.profile == ProfileMode::Random) return false;
        const int every = cfg_.risopt.reoptimizeEverySlots;
        return t == 1 || (every > 0 && (t - 1) % every == 0);
    }

    RisSchedule dftSchedule(const SignalModel& m, const std::vector<UserState>& predicted) const {
        RisSchedule s;
        for (int r = 0; r < R_; ++r) {
            std::vector<std::vector<double>> targets(K_);
            for (int k = 0; k < K_; ++k)
                for (int g = 0; g < G_; ++g) {
                    const double aod = m.risBs(g, r).atRis.aoa;
                    const double aoa = m.geometry({LinkKind::UI, k, g, r}, predicted[k]).aoa;
                    targets[k].push_back(m.zetaS() * (std::cos(aod) + std::cos(aoa)));
                }
            s.perRis.push_back(dftRisProfile(m.scene().ris[r].elementCount, targets, cfg_.protocol.grid.q1));
        }
        return s;
    }

    RisSchedule designProfile(const SignalModel& m, const std::vector<UserState>& predicted, const BimMatrix& previous,
                              const TransitionBlocks& blocks, const BcrbWeights& w, double powerW,
                              double noiseVar) const {
        const RisSchedule dft = dftSchedule(m, predicted);
        if (cfg_.profile == ProfileMode::Dft) return dft;
        RisOptContext ctx;
        ctx.model = &m;
        ctx.point = nominalPoint(m, predicted);
        ctx.powerW = powerW;
        ctx.risEfficiency = cfg_.channel.risEfficiency;
        ctx.noiseVar = noiseVar;
        ctx.previous = previous;
        ctx.blocks = blocks;
        const auto [best, report] = optimize(PhaseProfile::fromSchedule(dft), ctx, w, cfg_.risopt.armijo,
                                             cfg_.risopt.eps, cfg_.risopt.maxIters);
        return best.schedule();
    }

    const RunConfig& cfg_;
    int index_;
    int K_, G_, R_;
};

}  // namespace

ExperimentResult runExperiment(const RunConfig& cfg) {
    cfg.validate();
    const int n = cfg.realizations;
    std::vector<RealizationOutput> outs(n);
    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::mutex failureMutex;
    const auto worker = [&]() {
        for (int r = next++; r < n; r = next++) {
            try {
                outs[r] = RealizationRunner(cfg, r).run();
            } catch (...) {
                std::lock_guard<std::mutex> lock(failureMutex);
                if (!failure) failure = std::current_exception();
                next = n;
            }
        }
    };
    int threads = cfg.threads > 0 ? cfg.threads : static_cast<int>(std::thread::hardware_concurrency());
    threads = std::clamp(threads, 1, n);
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    ExperimentResult res;
    for (RealizationOutput& o : outs) {
        res.rows.insert(res.rows.end(), o.rows.begin(), o.rows.end());
        if (cfg.trace) res.traces.push_back(std::move(o.trace));
        res.wallClockMs.push_back(o.wallMs);
        res.divergedRealizations += o.diverged;
    }
    res.summary = summarize(res.rows, cfg.slots, static_cast<int>(cfg.scenario.users.size()));
    return res;
}

// ---- CSV -------------------------------------------------------------------

namespace {

void prepare(std::ostream& os) {
    os << std::setprecision(12);
    os << kSchemaLine << '\n';
}

std::string allOr(int v, int all) { return v == all ? "all" : std::to_string(v); }

}  // namespace

void writeMetricsCsv(std::ostream& os, const std::vector<MetricsRow>& rows) {
    prepare(os);
    os << "realization,slot,user,position_rmse_m,velocity_rmse_mps,symbol_mse,bcrb_position_m,"
          "active_link_accuracy,diverged\n";
    for (const MetricsRow& r : rows)
        os << r.realization << ',' << r.slot << ',' << r.user << ',' << r.positionRmse << ',' << r.velocityRmse << ','
           << r.symbolMse << ',' << r.bcrbPosition << ',' << r.activeLinkAccuracy << ',' << int(r.diverged) << '\n';
}

void writeSummaryCsv(std::ostream& os, const std::vector<SummaryRow>& rows) {
    prepare(os);
    os << "slot,user,position_rmse_m,position_rms_m,position_rmse_halfwidth_m,velocity_rmse_mps,symbol_mse,"
          "bcrb_position_m,active_link_accuracy,samples\n";
    for (const SummaryRow& r : rows)
        os << allOr(r.slot, 0) << ',' << allOr(r.user, -1) << ',' << r.positionRmse << ',' << r.positionRms << ','
           << r.positionHalfWidth << ',' << r.velocityRmse << ',' << r.symbolMse << ',' << r.bcrbPosition << ','
           << r.activeLinkAccuracy << ',' << r.samples << '\n';
}

void writeTraceCsv(std::ostream& os, const std::vector<std::vector<RealizationTrace>>& traces) {
    prepare(os);
    os << "realization,slot,iteration,user,x_m,y_m,elbo,active_links\n";
    for (std::size_t r = 0; r < traces.size(); ++r)
        for (const RealizationTrace& t : traces[r])
            os << r << ',' << t.slot << ',' << t.row.iteration << ',' << t.row.user << ',' << t.row.position.x() << ','
               << t.row.position.y() << ',' << t.row.elbo << ',' << t.row.activeLinks << '\n';
}

void writeTimingCsv(std::ostream& os, const std::vector<double>& wallClockMs) {
    prepare(os);
    os << "realization,wall_clock_ms\n";
    for (std::size_t r = 0; r < wallClockMs.size(); ++r) os << r << ',' << wallClockMs[r] << '\n';
}

void writeOutputs(const std::string& dir, const ExperimentResult& r) {
    std::filesystem::create_directories(dir);
    const auto open = [&](const char* name) {
        std::ofstream f(std::filesystem::path(dir) / name);
        if (!f) throw std::runtime_error(std::string("cannot write ") + name + " in " + dir);
        return f;
    };
    {
        auto f = open("metrics.csv");
        writeMetricsCsv(f, r.rows);
    }
    {
        auto f = open("summary.csv");
        writeSummaryCsv(f, r.summary);
    }
    {
        auto f = open("timing.csv");
        writeTimingCsv(f, r.wallClockMs);
    }
    if (!r.traces.empty()) {
        auto f = open("trace.csv");
        writeTraceCsv(f, r.traces);
    }
}

}  // namespace isac
