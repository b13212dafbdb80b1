#pragma once

// Per-link array responses, path gains and the binary LOS blockage process.

#include "isac/rng.hpp"
#include "isac/scenario.hpp"

#include <vector>

namespace isac {

struct SteeringVector {
    CVec entries;
    double phaseStep = 0.0;  // zetaS * cos(theta)
};

/// entry_m = exp(-j * zetaS * m * cos(theta)), m = 0..count-1.
SteeringVector steering(double theta, int count, double zetaS);

/// Free-space amplitude lambda / (4 pi d).
double pathGain(double distance, double wavelength);

enum class GainPhase { Zero, Carrier, Random };

/// Complex gain of one LOS segment: pathGain times the configured phase.
cd complexGain(double distance, double wavelength, GainPhase mode, Rng& rng);

struct LinkChannelState {
    int blocked = 0;  // alpha: 1 = LOS present
    cd gain{0.0, 0.0};
    LinkGeometry geometry;
};

enum class BlockageMode { Bernoulli, Window };

struct BlockageProcess {
    double pBlockUB = 0.0;
    double pBlockUI = 0.0;
    double pBlockIB = 0.0;
    int holdSlots = 1;
    BlockageMode mode = BlockageMode::Bernoulli;
    // Window mode: user-BS links are LOS only for slots in [windowBegin, windowEnd] (1-based).
    int windowBegin = 1;
    int windowEnd = 1 << 30;

    void validate() const;
};

/// Indicators alpha for one slot; 1 = LOS available.
struct BlockageState {
    std::vector<std::vector<int>> ub;  // [k][g]
    std::vector<std::vector<int>> ui;  // [k][r]
    std::vector<std::vector<int>> ib;  // [g][r]
};

/// One independent draw per link, no holding.
BlockageState sampleBlockage(const BlockageProcess& process, int users, int bs, int ris, Rng& rng);

/// Stateful sampler with one RNG stream per link; each Bernoulli draw is held
/// for `holdSlots` consecutive slots.
class BlockageSampler {
public:
    BlockageSampler(const BlockageProcess& process, int users, int bs, int ris, std::uint64_t seed);
    /// Indicators for the next slot (slots are numbered from 1).
    BlockageState next();

private:
    struct LinkStream {
        Rng rng;
        int value = 1;
        int age = 0;
    };
    int draw(LinkStream& s, double pBlock);

    BlockageProcess process_;
    int users_, bs_, ris_;
    int slot_ = 0;
    std::vector<LinkStream> ub_, ui_, ib_;
};

}  // namespace isac
