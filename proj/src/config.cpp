#include "isac/harness.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace isac {

using nlohmann::json;

namespace {

/// Object reader that records consumed keys so leftovers can be rejected.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
    }

    bool has(const char* key) const { return j_.contains(key); }

    template <typename T>
    T get(const char* key, const T& fallback) {
        if (!j_.contains(key)) return fallback;
        return convert<T>(key);
    }

    template <typename T>
    T require(const char* key) {
        if (!j_.contains(key)) throw ConfigError(where(key) + ": required key missing");
        return convert<T>(key);
    }

    Section section(const char* key) {
        if (!j_.contains(key)) throw ConfigError(where(key) + ": required section missing");
        used_.insert(key);
        return Section(j_.at(key), where(key));
    }

    const json& raw(const char* key) {
        used_.insert(key);
        return j_.at(key);
    }

    std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    /// Throws on any key that was never read.
    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!used_.count(it.key())) throw ConfigError(where(it.key()) + ": unknown key");
    }

private:
    template <typename T>
    T convert(const char* key) {
        used_.insert(key);
        const json& v = j_.at(key);
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError(where(key) + ": expected a boolean");
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) throw ConfigError(where(key) + ": expected an integer");
            if constexpr (std::is_unsigned_v<T>)
                if (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)
                    throw ConfigError(where(key) + ": expected a nonnegative integer");
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ConfigError(where(key) + ": expected a number");
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw ConfigError(where(key) + ": expected a string");
        }
        return v.get<T>();
    }

    const json& j_;
    std::string path_;
    std::set<std::string> used_;
};

Vec2 vec2(const json& v, const std::string& where) {
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
        throw ConfigError(where + ": expected a two-element numeric array");
    return Vec2(v[0].get<double>(), v[1].get<double>());
}

std::vector<Anchor> anchors(Section& parent, const char* key, AnchorKind kind, bool required) {
    std::vector<Anchor> out;
    if (!parent.has(key)) {
        if (required) throw ConfigError(parent.where(key) + ": required key missing");
        return out;
    }
    const json& arr = parent.raw(key);
    if (!arr.is_array()) throw ConfigError(parent.where(key) + ": expected an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
        Section s(arr[i], parent.where(key) + "[" + std::to_string(i) + "]");
        Anchor a;
        a.kind = kind;
        a.position = vec2(s.raw("position_m"), s.where("position_m"));
        a.axis = vec2(s.raw("axis"), s.where("axis"));
        a.elementCount = s.require<int>("elements");
        s.finish();
        try {
            a.validate();
        } catch (const DomainError& e) {
            throw ConfigError(parent.where(key) + ": " + e.what());
        }
        out.push_back(a);
    }
    return out;
}

ScenarioConfig parseScenario(Section s) {
    ScenarioConfig c;
    c.scene.carrierHz = s.get("carrier_hz", c.scene.carrierHz);
    c.scene.spacingWavelengths = s.get("element_spacing_wavelengths", c.scene.spacingWavelengths);
    c.scene.baseStations = anchors(s, "base_stations", AnchorKind::BaseStation, true);
    c.scene.ris = anchors(s, "ris", AnchorKind::Ris, false);
    c.dt = s.get("dt_s", c.dt);
    c.accelPsd = s.get("accel_psd_m2_per_s3", c.accelPsd);
    c.initialPositionStd = s.get("initial_position_std_m", c.initialPositionStd);
    c.initialVelocityStd = s.get("initial_velocity_std_mps", c.initialVelocityStd);
    const json& users = s.raw("users");
    if (!users.is_array()) throw ConfigError("scenario.users: expected an array");
    for (std::size_t i = 0; i < users.size(); ++i) {
        Section u(users[i], "scenario.users[" + std::to_string(i) + "]");
        UserState st;
        st.position = vec2(u.raw("position_m"), u.where("position_m"));
        st.velocity = vec2(u.raw("velocity_mps"), u.where("velocity_mps"));
        u.finish();
        c.users.push_back(st);
    }
    s.finish();
    return c;
}

GainPhase parseGainPhase(const std::string& s) {
    if (s == "zero") return GainPhase::Zero;
    if (s == "carrier") return GainPhase::Carrier;
    if (s == "random") return GainPhase::Random;
    throw ConfigError("channel.gain_phase: expected zero|carrier|random, got '" + s + "'");
}

ChannelConfig parseChannel(Section s) {
    ChannelConfig c;
    BlockageProcess& b = c.blockage;
    b.pBlockUB = s.get("p_block_ub", b.pBlockUB);
    b.pBlockUI = s.get("p_block_ui", b.pBlockUI);
    b.pBlockIB = s.get("p_block_ib", b.pBlockIB);
    b.holdSlots = s.get("hold_slots", b.holdSlots);
    const std::string mode = s.get<std::string>("blockage_mode", "bernoulli");
    if (mode == "bernoulli") b.mode = BlockageMode::Bernoulli;
    else if (mode == "window") b.mode = BlockageMode::Window;
    else throw ConfigError("channel.blockage_mode: expected bernoulli|window");
    b.windowBegin = s.get("window_begin_slot", b.windowBegin);
    b.windowEnd = s.get("window_end_slot", b.windowEnd);
    c.gainPhase = parseGainPhase(s.get<std::string>("gain_phase", "zero"));
    c.risEfficiency = s.get("ris_efficiency", c.risEfficiency);
    s.finish();
    return c;
}

ProtocolConfig parseProtocol(Section s) {
    ProtocolConfig c;
    IsacGrid& g = c.grid;
    g.q1 = s.get("q1", g.q1);
    g.groups = s.get("groups", g.groups);
    g.deltaQ = s.get("delta_q", g.deltaQ);
    g.nI = s.get("subcarriers", g.nI);
    g.deltaN = s.get("delta_n", g.deltaN);
    g.subcarrierSpacing = s.get("subcarrier_spacing_hz", g.subcarrierSpacing);
    g.cpRatio = s.get("cp_ratio", g.cpRatio);
    const std::string prior = s.get<std::string>("symbol_prior", "gaussian");
    if (prior == "gaussian") c.symbolPrior.kind = SymbolPriorKind::ComplexGaussian;
    else if (prior == "qpsk") c.symbolPrior.kind = SymbolPriorKind::Qpsk;
    else throw ConfigError("protocol.symbol_prior: expected gaussian|qpsk");
    c.symbolPrior.variance = s.get("symbol_variance", c.symbolPrior.variance);
    c.powerDbm = s.get("power_dbm", c.powerDbm);
    c.noisePsdDbmPerHz = s.get("noise_psd_dbm_per_hz", c.noisePsdDbmPerHz);
    s.finish();
    return c;
}

HvmpConfig parseHvmp(Section s) {
    HvmpConfig c;
    c.outerIters = s.get("outer_iters", c.outerIters);
    c.innerIters = s.get("inner_iters", c.innerIters);
    c.outerTolM = s.get("outer_tol_m", c.outerTolM);
    c.newtonSteps = s.get("newton_steps", c.newtonSteps);
    c.damping = s.get("damping", c.damping);
    c.llrThreshold = s.get("llr_threshold_nats", c.llrThreshold);
    c.intraGroupApprox = s.get("intra_group_approx", c.intraGroupApprox);
    s.finish();
    return c;
}

BcrbConfig parseBcrb(Section s) {
    BcrbConfig c;
    c.enabled = s.get("enabled", c.enabled);
    c.weightPosition = s.get("weight_position", c.weightPosition);
    c.weightVelocity = s.get("weight_velocity", c.weightVelocity);
    c.weightSymbol = s.get("weight_symbol", c.weightSymbol);
    s.finish();
    return c;
}

RisoptConfig parseRisopt(Section s) {
    RisoptConfig c;
    c.maxIters = s.get("max_iters", c.maxIters);
    c.eps = s.get("eps_rad", c.eps);
    c.reoptimizeEverySlots = s.get("reoptimize_every_slots", c.reoptimizeEverySlots);
    c.armijo.c1 = s.get("armijo_c1", c.armijo.c1);
    c.armijo.shrink = s.get("backtrack_shrink", c.armijo.shrink);
    c.armijo.maxBacktracks = s.get("max_backtracks", c.armijo.maxBacktracks);
    c.armijo.maxAngleStep = s.get("max_angle_step_rad", c.armijo.maxAngleStep);
    s.finish();
    return c;
}

}  // namespace

EstimatorMode parseMode(const std::string& s) {
    if (s == "hvmp") return EstimatorMode::Hvmp;
    if (s == "pilot") return EstimatorMode::Pilot;
    if (s == "position-only" || s == "positionOnly") return EstimatorMode::PositionOnly;
    throw ConfigError("mode: expected hvmp|pilot|position-only, got '" + s + "'");
}

ProfileMode parseProfile(const std::string& s) {
    if (s == "random") return ProfileMode::Random;
    if (s == "dft") return ProfileMode::Dft;
    if (s == "optimized") return ProfileMode::Optimized;
    throw ConfigError("profile: expected random|dft|optimized, got '" + s + "'");
}

std::string modeName(EstimatorMode m) {
    switch (m) {
        case EstimatorMode::Hvmp: return "hvmp";
        case EstimatorMode::Pilot: return "pilot";
        case EstimatorMode::PositionOnly: return "position-only";
    }
    return "?";
}

std::string profileName(ProfileMode m) {
    switch (m) {
        case ProfileMode::Random: return "random";
        case ProfileMode::Dft: return "dft";
        case ProfileMode::Optimized: return "optimized";
    }
    return "?";
}

Mat4 ScenarioConfig::initialCov() const {
    const double p = initialPositionStd * initialPositionStd, v = initialVelocityStd * initialVelocityStd;
    return Vec4(p, p, v, v).asDiagonal();
}

void RunConfig::validate() const {
    try {
        scenario.scene.validate();
        scenario.mobility().validate();
        channel.blockage.validate();
        protocol.grid.validate();
    } catch (const DomainError& e) {
        throw ConfigError(e.what());
    }
    hvmp.validate();
    if (scenario.users.empty()) throw ConfigError("scenario.users: at least one user required");
    if (!(scenario.initialPositionStd > 0.0) || !(scenario.initialVelocityStd > 0.0))
        throw ConfigError("scenario: initial standard deviations must be positive");
    if (!(channel.risEfficiency >= 0.0)) throw ConfigError("channel.ris_efficiency must be nonnegative");
    if (!(protocol.symbolPrior.variance > 0.0)) throw ConfigError("protocol.symbol_variance must be positive");
    if (slots < 1) throw ConfigError("run.slots must be at least 1");
    if (realizations < 1) throw ConfigError("run.realizations must be at least 1");
    if (threads < 0) throw ConfigError("run.threads must be nonnegative");
    if (risopt.maxIters < 0 || !(risopt.eps > 0.0) || risopt.reoptimizeEverySlots < 0)
        throw ConfigError("risopt: invalid iteration settings");
    if (profile != ProfileMode::Random && scenario.scene.ris.empty())
        throw ConfigError("run.profile: dft and optimized profiles need at least one RIS");
    if (profile == ProfileMode::Dft || profile == ProfileMode::Optimized)
        for (const Anchor& r : scenario.scene.ris)
            if (protocol.grid.q1 > r.elementCount) throw ConfigError("run.profile: q1 exceeds the RIS element count");
}

RunConfig parseRunConfig(const std::string& jsonText) {
    json doc;
    try {
        doc = json::parse(jsonText);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    RunConfig c;
    Section root(doc, "");
    c.scenario = parseScenario(root.section("scenario"));
    c.channel = root.has("channel") ? parseChannel(root.section("channel")) : ChannelConfig{};
    c.protocol = root.has("protocol") ? parseProtocol(root.section("protocol")) : ProtocolConfig{};
    c.hvmp = root.has("hvmp") ? parseHvmp(root.section("hvmp")) : HvmpConfig{};
    c.bcrb = root.has("bcrb") ? parseBcrb(root.section("bcrb")) : BcrbConfig{};
    c.risopt = root.has("risopt") ? parseRisopt(root.section("risopt")) : RisoptConfig{};
    Section run = root.section("run");
    c.slots = run.get("slots", c.slots);
    c.realizations = run.get("realizations", c.realizations);
    c.threads = run.get("threads", c.threads);
    c.hvmp.mode = parseMode(run.get<std::string>("mode", "hvmp"));
    c.profile = parseProfile(run.get<std::string>("profile", "random"));
    c.seed = run.require<std::uint64_t>("seed");
    c.trace = run.get("trace", c.trace);
    c.redrawTrajectory = run.get("redraw_trajectory", c.redrawTrajectory);
    c.redrawBlockage = run.get("redraw_blockage", c.redrawBlockage);
    c.redrawNoise = run.get("redraw_noise", c.redrawNoise);
    run.finish();
    root.finish();
    c.validate();
    return c;
}

RunConfig loadRunConfig(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parseRunConfig(ss.str());
}

SweepSpec parseSweep(const std::string& text) {
    const auto eq = text.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == text.size())
        throw ConfigError("sweep: expected KEY=v1,v2,...");
    SweepSpec s;
    s.key = text.substr(0, eq);
    std::stringstream rest(text.substr(eq + 1));
    std::string v;
    while (std::getline(rest, v, ','))
        if (!v.empty()) s.values.push_back(v);
    if (s.values.empty()) throw ConfigError("sweep: no values given");
    return s;
}

std::string applyOverride(const std::string& jsonText, const std::string& key, const std::string& value) {
    json doc;
    try {
        doc = json::parse(jsonText);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    json* node = &doc;
    std::stringstream path(key);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(path, part, '.')) parts.push_back(part);
    if (parts.empty()) throw ConfigError("override: empty key");
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        if (node->is_array()) {
            const std::size_t idx = std::stoul(parts[i]);
            if (idx >= node->size()) throw ConfigError("override: index out of range in '" + key + "'");
            node = &(*node)[idx];
        } else if (node->is_object()) {
            node = &(*node)[parts[i]];
        } else {
            throw ConfigError("override: '" + key + "' does not name a config entry");
        }
    }
    json parsed;
    try {
        parsed = json::parse(value);
    } catch (const json::parse_error&) {
        parsed = value;
    }
    if (node->is_null()) *node = json::object();
    if (!node->is_object()) throw ConfigError("override: '" + key + "' does not name a config entry");
    (*node)[parts.back()] = parsed;
    return doc.dump();
}

}  // namespace isac
