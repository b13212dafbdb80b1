#include <doctest.h>

#include "isac/protocol.hpp"

using namespace isac;

TEST_CASE("grid index sets") {
    IsacGrid g = buildGrid(4, 3, 9, 3, 3);
    CHECK(g.subcarrierSet() == std::vector<int>{1, 4, 7});
    CHECK(g.symbolSet() == std::vector<int>{1, 2, 3, 4, 10, 11, 12, 13, 19, 20, 21, 22});

    g = buildGrid(2, 1, 2, 1, 1);
    CHECK(g.symbolSet() == std::vector<int>{1, 2});
    CHECK(g.subcarrierSet() == std::vector<int>{1});

    g = buildGrid(12, 10, 200, 12, 1);
    CHECK(g.symbolSet().size() == 120);
    CHECK(g.elementCount() == 1440);
    const auto sym = g.symbolSet();
    for (std::size_t i = 1; i < sym.size(); ++i) CHECK(sym[i] > sym[i - 1]);

    CHECK_THROWS_AS(buildGrid(4, 2, 3, 1, 1), ConfigError);
    CHECK_THROWS_AS(buildGrid(1, 2, 3, 1, 1), ConfigError);
}

TEST_CASE("symbol period includes the cyclic prefix") {
    const IsacGrid g = buildGrid(2, 1, 2, 1, 1, 10e6 / 12, 0.25);
    CHECK(g.symbolPeriod() == doctest::Approx(1.5e-6).epsilon(1e-12));
}

TEST_CASE("random RIS profiles") {
    Rng a(5), b(5), c(6);
    const CMat pa = randomRisProfile(a, 16, 4), pb = randomRisProfile(b, 16, 4), pc = randomRisProfile(c, 16, 4);
    CHECK((pa.array().abs() - 1.0).abs().maxCoeff() < 1e-14);
    CHECK((pa - pb).norm() == 0.0);
    CHECK((pa - pc).norm() > 1.0);
    RisSchedule s{{pa, pc}};
    CHECK_NOTHROW(s.validate());
}

TEST_CASE("DFT profile picks nearest codewords") {
    const int mI = 16;
    // One user exactly on bin 5.
    const double step5 = kTwoPi * 5 / mI;
    CMat psi = dftRisProfile(mI, {{step5}}, 4);
    for (int m = 0; m < mI; ++m) CHECK(std::abs(psi(m, 0) - std::polar(1.0, kTwoPi * 5 * m / mI)) < 1e-12);

    // Three users, q1 = 12 -> four codewords each, all distinct.
    psi = dftRisProfile(48, {{0.3}, {-1.2}, {2.0}}, 12);
    RisSchedule s{{psi}};
    CHECK_NOTHROW(s.validate());
    int perUser[3] = {0, 0, 0};
    for (int c = 0; c < 12; ++c) ++perUser[c % 3];
    CHECK(perUser[0] == 4);
    CHECK(perUser[2] == 4);

    Rng rng(1);
    std::uniform_real_distribution<double> u(-kTwoPi, kTwoPi);
    for (int t = 0; t < 50; ++t) {
        RisSchedule r{{dftRisProfile(16, {{u(rng), u(rng)}, {u(rng)}}, 8)}};
        CHECK_NOTHROW(r.validate());
    }
    CHECK_THROWS_AS(dftRisProfile(4, {{0.0}}, 8), ConfigError);
}

TEST_CASE("symbol priors") {
    Rng rng(2);
    SymbolPrior qpsk{SymbolPriorKind::Qpsk, 1.0};
    for (int i = 0; i < 20; ++i) CHECK(std::abs(std::abs(qpsk.sample(rng)) - 1.0) < 1e-14);
    SymbolPrior gauss;
    double acc = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) acc += std::norm(gauss.sample(rng));
    CHECK(acc / n == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("noise variance from PSD") {
    CHECK(noiseVariance(-174.0, 1.0) == doctest::Approx(std::pow(10.0, -20.4)).epsilon(1e-12));
    CHECK_THROWS_AS(noiseVariance(-174.0, 0.0), DomainError);
}
