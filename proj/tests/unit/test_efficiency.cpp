#include <doctest.h>

#include "qdpillar/efficiency.hpp"
#include "qdpillar/error.hpp"

#include <cmath>
#include <random>

using namespace qdpillar;
using namespace qdpillar::budget;

namespace {

double hand_efficiency(double rate) { return rate / (80e6 * 0.4 * 0.291 * 0.062); }

} // namespace

TEST_CASE("biexciton and exciton budgets") {
    const DetectionChain chain;
    const auto xx = source_efficiency({401'000.0, 1'000.0}, chain, "xx");
    CHECK(xx.channel == "xx");
    CHECK(xx.efficiency == doctest::Approx(hand_efficiency(401'000.0)).epsilon(1e-14));
    CHECK(std::abs(xx.efficiency - 0.6946) <= 0.0005);
    CHECK(std::abs(xx.efficiency - 0.694) < 1e-3);

    const auto x = source_efficiency({198'000.0, 1'000.0}, chain, "x");
    CHECK(std::abs(x.efficiency - 0.3430) <= 0.0005);
    CHECK(std::abs(x.efficiency - 0.351) <= 0.01);

    CHECK(source_efficiency({0.0, 0.0}, chain).efficiency == 0.0);
}

TEST_CASE("statistical and full uncertainties") {
    const DetectionChain chain;
    const auto xx = source_efficiency({401'000.0, 1'000.0}, chain);
    CHECK(xx.sigma_statistical == doctest::Approx(xx.efficiency * 1'000.0 / 401'000.0).epsilon(1e-12));
    const double rel = std::sqrt(std::pow(1.0 / 401.0, 2) + std::pow(0.010 / 0.291, 2) + std::pow(0.010 / 0.062, 2));
    CHECK(xx.sigma_full == doctest::Approx(xx.efficiency * rel).epsilon(1e-12));
    CHECK(std::abs(xx.sigma_full / xx.efficiency - 0.165) < 0.001);
}

TEST_CASE("quadrature propagation") {
    const std::vector<Measured> one{{0.291, 0.291 * 0.034}};
    CHECK(relative_uncertainty(one) == doctest::Approx(0.034).epsilon(1e-12));
    CHECK(propagate_uncertainty(2.0, one) == doctest::Approx(0.068).epsilon(1e-12));

    const std::vector<Measured> chain_and_rate{{0.291, 0.010}, {0.062, 0.010}, {401.0, 1.0}};
    const double expected = std::sqrt(std::pow(0.010 / 0.291, 2) + std::pow(0.010 / 0.062, 2) + std::pow(1.0 / 401.0, 2));
    CHECK(relative_uncertainty(chain_and_rate) == doctest::Approx(expected).epsilon(1e-14));
    CHECK(std::abs(relative_uncertainty(chain_and_rate) - 0.165) < 0.001);

    const std::vector<Measured> exact{{0.4, 0.0}, {3.0, 0.0}};
    CHECK(relative_uncertainty(exact) == 0.0);
    CHECK(propagate_uncertainty(5.0, exact) == 0.0);

    const std::vector<Measured> wide{{1.0, 0.6}};
    CHECK_THROWS_AS(relative_uncertainty(wide), Error);
}

TEST_CASE("inverse budget") {
    const DetectionChain chain;
    CHECK(std::round(required_rate(0.85, chain)) == 490'742.0);
    CHECK(required_rate(0.85, chain) == doctest::Approx(0.85 * 80e6 * 0.4 * 0.291 * 0.062).epsilon(1e-14));

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 500; ++i) {
        DetectionChain c;
        c.rep_rate_hz = 1e6 + 1e8 * u(rng);
        c.detector.value = 0.05 + 0.95 * u(rng);
        c.fibre.value = 0.05 + 0.95 * u(rng);
        c.optics.value = 0.05 + 0.95 * u(rng);
        c.fibre.sigma = c.optics.sigma = 0.0;
        const double target = 0.01 + 0.99 * u(rng);
        const double rate = required_rate(target, c);
        CHECK(source_efficiency({rate, 0.0}, c).efficiency == doctest::Approx(target).epsilon(1e-12));
        const double eta = source_efficiency({rate * 0.5, 0.0}, c).efficiency;
        CHECK(required_rate(eta, c) == doctest::Approx(rate * 0.5).epsilon(1e-12));
    }

    DetectionChain half = chain;
    half.optics.value *= 0.5;
    CHECK(required_rate(0.85, half) == doctest::Approx(0.5 * required_rate(0.85, chain)).epsilon(1e-14));
    CHECK_THROWS_AS(required_rate(0.0, chain), Error);
    CHECK_THROWS_AS(required_rate(1.5, chain), Error);
}

TEST_CASE("efficiency is homogeneous of degree -1 in each chain factor") {
    const DetectionChain chain;
    const double base = source_efficiency({150'000.0, 0.0}, chain).efficiency;
    for (double c : {0.5, 0.8, 1.3}) {
        DetectionChain a = chain, b = chain, d = chain;
        a.optics.value *= c;
        b.fibre.value *= c;
        d.detector.value = std::min(1.0, d.detector.value * c);
        CHECK(source_efficiency({150'000.0, 0.0}, a).efficiency == doctest::Approx(base / c).epsilon(1e-14));
        CHECK(source_efficiency({150'000.0, 0.0}, b).efficiency == doctest::Approx(base / c).epsilon(1e-14));
        CHECK(source_efficiency({150'000.0, 0.0}, d).efficiency == doctest::Approx(base * 0.4 / d.detector.value).epsilon(1e-14));
    }
    DetectionChain blink = chain;
    blink.blinking = 0.5;
    CHECK(source_efficiency({100'000.0, 0.0}, blink).efficiency ==
          doctest::Approx(2.0 * source_efficiency({100'000.0, 0.0}, chain).efficiency).epsilon(1e-14));
}

TEST_CASE("pair efficiency") {
    const DetectionChain chain;
    const std::vector<NamedRate> rates{{"xx", {401'000.0, 1'000.0}}, {"x", {198'000.0, 1'000.0}}};
    const auto r = compute_budget(rates, chain);
    REQUIRE(r.channels.size() == 2);
    CHECK(r.channels[0].channel == "xx");
    CHECK(r.pair_efficiency == doctest::Approx(r.channels[0].efficiency * r.channels[1].efficiency).epsilon(1e-14));
    // The shared chain enters both channels, so its relative errors add linearly.
    const double rel = std::sqrt(std::pow(1.0 / 401.0, 2) + std::pow(1.0 / 198.0, 2) + std::pow(2.0 * 0.010 / 0.291, 2) +
                                 std::pow(2.0 * 0.010 / 0.062, 2));
    CHECK(r.pair_sigma == doctest::Approx(r.pair_efficiency * rel).epsilon(1e-12));

    const std::vector<NamedRate> single{{"xx", {401'000.0, 1'000.0}}};
    const auto s = compute_budget(single, chain);
    CHECK(s.channels.size() == 1);
    CHECK(s.pair_efficiency == 0.0);
}

TEST_CASE("impossible calibrations are rejected") {
    DetectionChain chain;
    try {
        source_efficiency({2'000'000.0, 0.0}, chain);
        FAIL("expected inconsistent_calibration");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::inconsistent_calibration);
    }
    CHECK_THROWS_AS(source_efficiency({-1.0, 0.0}, chain), Error);
    CHECK_THROWS_AS(source_efficiency({9e7, 0.0}, chain), Error);

    chain.fibre.value = 1.3;
    CHECK_THROWS_AS(chain.validate(), Error);
    chain = DetectionChain{};
    chain.rep_rate_hz = 0.0;
    CHECK_THROWS_AS(chain.validate(), Error);
    chain = DetectionChain{};
    chain.blinking = 0.0;
    CHECK_THROWS_AS(chain.validate(), Error);
    CHECK(DetectionChain{}.transmission() == doctest::Approx(0.4 * 0.291 * 0.062).epsilon(1e-15));
}
