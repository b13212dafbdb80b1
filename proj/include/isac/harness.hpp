#pragma once

// Experiment orchestration: run configs, seeded Monte-Carlo runs of the
// estimator, metrics and versioned CSV output.

#include "isac/bcrb.hpp"
#include "isac/hvmp.hpp"
#include "isac/risopt.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace isac {

enum class ProfileMode { Random, Dft, Optimized };

struct ScenarioConfig {
    Scene scene;
    double dt = 0.02;
    double accelPsd = 1.0;  // q of the white-acceleration model [m^2/s^3]
    std::vector<UserState> users;
    double initialPositionStd = 0.1;
    double initialVelocityStd = 0.5;

    MobilityModel mobility() const { return MobilityModel::whiteAcceleration(dt, accelPsd); }
    Mat4 initialCov() const;
};

struct ChannelConfig {
    BlockageProcess blockage;
    GainPhase gainPhase = GainPhase::Zero;
    double risEfficiency = 1.0;
};

struct ProtocolConfig {
    IsacGrid grid = buildGrid(4, 4, 50, 8, 1);
    SymbolPrior symbolPrior;
    double powerDbm = 30.0;
    double noisePsdDbmPerHz = -174.0;

    double noiseVar() const { return noiseVariance(noisePsdDbmPerHz, grid.subcarrierSpacing); }
};

struct BcrbConfig {
    bool enabled = true;
    double weightPosition = 1.0;
    double weightVelocity = 0.0;
    double weightSymbol = 0.0;
};

struct RisoptConfig {
    ArmijoParams armijo;
    int maxIters = 10;
    double eps = 1e-4;
    int reoptimizeEverySlots = 0;  // 0: optimize once, before the first slot
};

struct SweepSpec {
    std::string key;  // dotted path, e.g. protocol.power_dbm
    std::vector<std::string> values;
};

struct RunConfig {
    ScenarioConfig scenario;
    ChannelConfig channel;
    ProtocolConfig protocol;
    HvmpConfig hvmp;
    BcrbConfig bcrb;
    RisoptConfig risopt;
    int slots = 20;
    int realizations = 20;
    int threads = 0;  // 0: hardware concurrency
    ProfileMode profile = ProfileMode::Random;
    std::uint64_t seed = 1;
    bool trace = false;
    // Per-realization redraws; false reuses the realization-0 stream.
    bool redrawTrajectory = true;
    bool redrawBlockage = true;
    bool redrawNoise = true;

    void validate() const;
};

/// Strict parse: unknown keys, missing required keys and wrong types throw ConfigError.
RunConfig parseRunConfig(const std::string& jsonText);
RunConfig loadRunConfig(const std::string& path);
/// Parses `KEY=v1,v2,...`.
SweepSpec parseSweep(const std::string& text);
/// The config text with the dotted `key` replaced by the JSON literal (or bare string) `value`.
std::string applyOverride(const std::string& jsonText, const std::string& key, const std::string& value);

EstimatorMode parseMode(const std::string& s);
ProfileMode parseProfile(const std::string& s);
std::string modeName(EstimatorMode m);
std::string profileName(ProfileMode m);

// ---- metrics ---------------------------------------------------------------

struct MetricsRow {
    int realization = 0;
    int slot = 0;  // 1-based
    int user = 0;
    double positionRmse = 0.0;  // per-slot error norm [m]
    double velocityRmse = 0.0;  // [m/s]
    double symbolMse = 0.0;
    double bcrbPosition = 0.0;  // [m]
    double activeLinkAccuracy = 0.0;
    bool diverged = false;
};

/// Per-slot rows for one realization; trajectories indexed [slot][user].
std::vector<MetricsRow> slotMetrics(const std::vector<std::vector<UserState>>& truth,
                                    const std::vector<std::vector<cd>>& trueSymbols,
                                    const std::vector<SlotEstimates>& estimates);

/// Time-averaged error norm T^-1 sum_t ||est_t - truth_t|| of one user.
double timeAveragedError(const std::vector<Vec2>& truth, const std::vector<Vec2>& estimate);

/// Fraction of link indicators matching the truth; a cascaded link at BS g
/// exists when both its user-RIS and RIS-BS segments are LOS.
double linkAccuracy(const BlockageState& truth, const SlotEstimates& est, int user);

struct SummaryRow {
    int slot = 0;  // 0: all slots
    int user = 0;
    double positionRmse = 0.0;  // mean error norm
    double positionRms = 0.0;   // root mean squared error norm
    double positionHalfWidth = 0.0;  // 95% MC half-width of positionRmse
    double velocityRmse = 0.0;
    double symbolMse = 0.0;
    double bcrbPosition = 0.0;  // root mean squared bound
    double activeLinkAccuracy = 0.0;
    int samples = 0;
};

/// Averages over realizations per (slot, user) and over everything per user.
/// Rows of diverged slots are kept.
std::vector<SummaryRow> summarize(const std::vector<MetricsRow>& rows, int slots, int users);

// ---- experiment ------------------------------------------------------------

struct RealizationTrace {
    int slot = 0;
    OuterTraceRow row;
};

struct ExperimentResult {
    std::vector<MetricsRow> rows;  // realization-major, then slot, then user
    std::vector<SummaryRow> summary;
    std::vector<std::vector<RealizationTrace>> traces;  // per realization, when cfg.trace
    std::vector<double> wallClockMs;                    // per realization
    int divergedRealizations = 0;
};

ExperimentResult runExperiment(const RunConfig& cfg);

inline constexpr const char* kSchemaLine = "# isac-mp-sim schema v1";

void writeMetricsCsv(std::ostream& os, const std::vector<MetricsRow>& rows);
void writeSummaryCsv(std::ostream& os, const std::vector<SummaryRow>& rows);
void writeTraceCsv(std::ostream& os, const std::vector<std::vector<RealizationTrace>>& traces);
void writeTimingCsv(std::ostream& os, const std::vector<double>& wallClockMs);
/// metrics.csv, summary.csv, timing.csv and (with traces) trace.csv in `dir`.
void writeOutputs(const std::string& dir, const ExperimentResult& r);

}  // namespace isac
