#include "isac/channel.hpp"

namespace isac {

SteeringVector steering(double theta, int count, double zetaS) {
    if (count < 1) throw DomainError("steering needs count >= 1");
    requireFinite(theta, "steering angle");
    requireFinite(zetaS, "steering phase constant");
    SteeringVector sv;
    sv.phaseStep = zetaS * std::cos(theta);
    sv.entries.resize(count);
    for (int m = 0; m < count; ++m) sv.entries[m] = std::polar(1.0, -sv.phaseStep * m);
    return sv;
}

double pathGain(double distance, double wavelength) {
    if (!(distance > 0.0) || !std::isfinite(distance)) throw DomainError("pathGain needs d > 0");
    if (!(wavelength > 0.0)) throw DomainError("pathGain needs a positive wavelength");
    return wavelength / (4.0 * kPi * distance);
}

cd complexGain(double distance, double wavelength, GainPhase mode, Rng& rng) {
    const double mag = pathGain(distance, wavelength);
    switch (mode) {
        case GainPhase::Zero: return {mag, 0.0};
        case GainPhase::Carrier: return std::polar(mag, -kTwoPi * std::fmod(distance / wavelength, 1.0));
        case GainPhase::Random: {
            std::uniform_real_distribution<double> u(0.0, kTwoPi);
            return std::polar(mag, u(rng));
        }
    }
    return {mag, 0.0};
}

void BlockageProcess::validate() const {
    for (double p : {pBlockUB, pBlockUI, pBlockIB})
        if (!(p >= 0.0 && p <= 1.0)) throw DomainError("blockage probabilities must lie in [0,1]");
    if (holdSlots < 1) throw DomainError("holdSlots must be >= 1");
    if (windowEnd < windowBegin) throw DomainError("blockage window is empty");
}

namespace {

int bernoulliLos(double pBlock, Rng& rng) {
    if (pBlock <= 0.0) return 1;
    if (pBlock >= 1.0) return 0;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    return u(rng) >= pBlock ? 1 : 0;
}

std::vector<std::vector<int>> grid(int a, int b, int v) {
    return std::vector<std::vector<int>>(a, std::vector<int>(b, v));
}

}  // namespace

BlockageState sampleBlockage(const BlockageProcess& process, int users, int bs, int ris, Rng& rng) {
    process.validate();
    BlockageState s{grid(users, bs, 1), grid(users, ris, 1), grid(bs, ris, 1)};
    for (auto& row : s.ub)
        for (int& a : row) a = bernoulliLos(process.pBlockUB, rng);
    for (auto& row : s.ui)
        for (int& a : row) a = bernoulliLos(process.pBlockUI, rng);
    for (auto& row : s.ib)
        for (int& a : row) a = bernoulliLos(process.pBlockIB, rng);
    return s;
}

BlockageSampler::BlockageSampler(const BlockageProcess& process, int users, int bs, int ris, std::uint64_t seed)
    : process_(process), users_(users), bs_(bs), ris_(ris) {
    process_.validate();
    for (int k = 0; k < users; ++k)
        for (int g = 0; g < bs; ++g) ub_.push_back({makeRng(seed, {1, std::uint64_t(k), std::uint64_t(g)})});
    for (int k = 0; k < users; ++k)
        for (int r = 0; r < ris; ++r) ui_.push_back({makeRng(seed, {2, std::uint64_t(k), std::uint64_t(r)})});
    for (int g = 0; g < bs; ++g)
        for (int r = 0; r < ris; ++r) ib_.push_back({makeRng(seed, {3, std::uint64_t(g), std::uint64_t(r)})});
}

int BlockageSampler::draw(LinkStream& s, double pBlock) {
    if (s.age == 0) s.value = bernoulliLos(pBlock, s.rng);
    s.age = (s.age + 1) % process_.holdSlots;
    return s.value;
}

BlockageState BlockageSampler::next() {
    ++slot_;
    BlockageState s{grid(users_, bs_, 1), grid(users_, ris_, 1), grid(bs_, ris_, 1)};
    const bool inWindow = slot_ >= process_.windowBegin && slot_ <= process_.windowEnd;
    for (int k = 0; k < users_; ++k)
        for (int g = 0; g < bs_; ++g) {
            int a = draw(ub_[k * bs_ + g], process_.pBlockUB);
            if (process_.mode == BlockageMode::Window && !inWindow) a = 0;
            s.ub[k][g] = a;
        }
    for (int k = 0; k < users_; ++k)
        for (int r = 0; r < ris_; ++r) s.ui[k][r] = draw(ui_[k * ris_ + r], process_.pBlockUI);
    for (int g = 0; g < bs_; ++g)
        for (int r = 0; r < ris_; ++r) s.ib[g][r] = draw(ib_[g * ris_ + r], process_.pBlockIB);
    return s;
}

}  // namespace isac
