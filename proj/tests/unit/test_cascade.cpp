#include <doctest.h>

#include "qdpillar/cascade.hpp"
#include "qdpillar/error.hpp"

#include <Eigen/Eigenvalues>
#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/minima.hpp>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>

using namespace qdpillar;
using namespace qdpillar::cascade;

namespace {

constexpr double pi = std::numbers::pi;
const double inf = std::numeric_limits<double>::infinity();

CascadeParams decay_free() {
    CascadeParams p;
    p.tau_xx_ps = inf;
    p.tau_x_ps = inf;
    return p;
}

// Fixed-step RK4 on the g / xx block: populations gg, xx, x and the
// coherence c = rho_{g,xx}, from 3 FWHM before to 1 FWHM after the pulse
// centre, with the pulse area carried inside that window.
double rk4_biexciton(double tau_xx, double tau_x, double gamma_d, double area, double fwhm, double step) {
    const double gxx = 1.0 / tau_xx, gx = 1.0 / tau_x;
    const double k = 4.0 * std::log(2.0) / (fwhm * fwhm);
    const double t0 = -3.0 * fwhm, t1 = fwhm;
    const double inside = 0.5 * (std::erf(std::sqrt(k) * t1) - std::erf(std::sqrt(k) * t0));
    auto omega = [&](double t) { return area / inside * std::sqrt(k / pi) * std::exp(-k * t * t); };
    struct S {
        double gg, xx, x;
        std::complex<double> c;
    };
    auto f = [&](double t, const S& s) {
        const double w = omega(t);
        const std::complex<double> i(0.0, 1.0);
        S d;
        d.gg = -w * s.c.imag() + gx * s.x;
        d.xx = w * s.c.imag() - gxx * s.xx;
        d.x = gxx * s.xx - gx * s.x;
        d.c = -i * 0.5 * w * (s.xx - s.gg) - (0.5 * gxx + gamma_d) * s.c;
        return d;
    };
    auto axpy = [](const S& a, double h, const S& b) {
        return S{a.gg + h * b.gg, a.xx + h * b.xx, a.x + h * b.x, a.c + h * b.c};
    };
    S s{1.0, 0.0, 0.0, {0.0, 0.0}};
    const int n = static_cast<int>(std::round((t1 - t0) / step));
    const double h = (t1 - t0) / n;
    for (int j = 0; j < n; ++j) {
        const double t = t0 + j * h;
        const S k1 = f(t, s);
        const S k2 = f(t + h / 2, axpy(s, h / 2, k1));
        const S k3 = f(t + h / 2, axpy(s, h / 2, k2));
        const S k4 = f(t + h, axpy(s, h, k3));
        s.gg += h / 6 * (k1.gg + 2 * k2.gg + 2 * k3.gg + k4.gg);
        s.xx += h / 6 * (k1.xx + 2 * k2.xx + 2 * k3.xx + k4.xx);
        s.x += h / 6 * (k1.x + 2 * k2.x + 2 * k3.x + k4.x);
        s.c += h / 6 * (k1.c + 2.0 * k2.c + 2.0 * k3.c + k4.c);
    }
    return s.xx;
}

double ks_statistic(std::vector<double> sample, const auto& cdf) {
    std::sort(sample.begin(), sample.end());
    const double n = static_cast<double>(sample.size());
    double d = 0.0;
    for (std::size_t i = 0; i < sample.size(); ++i) {
        const double f = cdf(sample[i]);
        d = std::max({d, std::abs(f - i / n), std::abs((i + 1) / n - f)});
    }
    return d;
}

} // namespace

TEST_CASE("binding energy from the emission lines") {
    const double expected = (1239.84 / 906.1 - 1239.84 / 908.5) * 1000.0;
    const double eb = binding_energy_mev(906.1, 908.5);
    CHECK(eb == doctest::Approx(expected).epsilon(1e-12));
    CHECK(std::abs(eb - 3.61) <= 0.02);
    CHECK_THROWS_AS(binding_energy_mev(0.0, 908.5), Error);
}

TEST_CASE("effective two-photon Rabi frequency") {
    const double eb = 3.61;
    const double delta = 0.5 * eb / hbar_mev_ps;
    CHECK(effective_two_photon_rabi(0.4, eb) == doctest::Approx(0.16 / (2.0 * delta)).epsilon(1e-14));
    CHECK(effective_two_photon_rabi(0.8, eb) == doctest::Approx(4.0 * effective_two_photon_rabi(0.4, eb)).epsilon(1e-14));
    CHECK(effective_two_photon_rabi(0.4, 2.0 * eb) == doctest::Approx(0.5 * effective_two_photon_rabi(0.4, eb)).epsilon(1e-14));
    CHECK_THROWS_AS(effective_two_photon_rabi(0.4, 0.0), Error);
    CHECK_THROWS_AS(effective_two_photon_rabi(0.0, eb), Error);
}

TEST_CASE("decay-free Rabi oscillation") {
    const auto p = decay_free();
    CHECK(std::abs(evolve_pulse(p, pi).biexciton_population - 1.0) < 1e-6);
    CHECK(std::abs(evolve_pulse(p, 2.0 * pi).biexciton_population) < 1e-6);
    for (double area : {0.3, 1.0, 2.2, 4.0, 5.5, 7.0}) {
        INFO("area " << area);
        CHECK(std::abs(evolve_pulse(p, area).biexciton_population - std::pow(std::sin(area / 2.0), 2)) < 1e-6);
    }
    CHECK(evolve_pulse(p, 0.0).biexciton_population == 0.0);
}

TEST_CASE("pi pulse with decay during the pulse") {
    CascadeParams p;
    p.tau_xx_ps = 250.0;
    const double pop = evolve_pulse(p, pi).biexciton_population;
    CHECK(pop >= 0.95);
    CHECK(pop <= 1.0);
    const double oracle = rk4_biexciton(250.0, p.tau_x_ps, 0.0, pi, p.pulse_fwhm_ps, 1e-3);
    CHECK(pop == doctest::Approx(oracle).epsilon(1e-7));
}

TEST_CASE("master equation against a fine-step oracle") {
    struct Case {
        double txx, tx, deph_ns, area, fwhm;
    };
    for (const Case c : {Case{218, 281, 0.0, pi, 10}, Case{331, 425, 0.5, 1.7, 10}, Case{120, 200, 2.0, 2.5 * pi, 20},
                         Case{250, 300, 0.0, 0.6, 5}}) {
        CascadeParams p;
        p.tau_xx_ps = c.txx;
        p.tau_x_ps = c.tx;
        p.dephasing_per_ns = c.deph_ns;
        p.pulse_fwhm_ps = c.fwhm;
        const double got = evolve_pulse(p, c.area).biexciton_population;
        const double ref = rk4_biexciton(c.txx, c.tx, c.deph_ns / 1000.0, c.area, c.fwhm, 1e-3);
        INFO("tau_xx " << c.txx << " area " << c.area);
        CHECK(got == doctest::Approx(ref).epsilon(1e-7));
    }
}

TEST_CASE("trace and positivity at every accepted step") {
    for (double deph : {0.0, 1.0, 10.0}) {
        CascadeParams p;
        p.dephasing_per_ns = deph;
        p.tau_xx_ps = 60.0;
        p.tau_x_ps = 90.0;
        p.pulse_fwhm_ps = 25.0;
        double worst_trace = 0.0;
        double min_eig = 1.0;
        int steps = 0;
        const auto result = evolve_pulse(p, 3.0 * pi, 1e-10, [&](double, const DensityMatrix& rho) {
            worst_trace = std::max(worst_trace, std::abs(rho.trace().real() - 1.0));
            Eigen::SelfAdjointEigenSolver<DensityMatrix> es(rho);
            min_eig = std::min(min_eig, es.eigenvalues().minCoeff());
            ++steps;
        });
        CHECK(worst_trace < 1e-8);
        CHECK(min_eig >= -1e-9);
        CHECK(steps == result.accepted_steps + 1);
        CHECK(result.final_state(1, 1).real() > 0.0);
    }
}

TEST_CASE("simulate_pulse evaluates a grid") {
    CascadeParams p;
    const std::vector<double> areas{0.0, 0.5 * pi, pi, 2.0 * pi};
    const auto pop = simulate_pulse(p, areas);
    REQUIRE(pop.size() == areas.size());
    for (std::size_t i = 0; i < areas.size(); ++i)
        CHECK(pop[i] == evolve_pulse(p, areas[i]).biexciton_population);
    CHECK(pop[2] > pop[1]);
    CHECK(pop[2] > pop[3]);
    const std::vector<double> bad{-1.0};
    CHECK_THROWS_AS(simulate_pulse(p, bad), Error);
}

TEST_CASE("emission-time densities") {
    CascadeParams p; // 218 / 281 ps
    const auto d = emission_time_densities(p);
    boost::math::quadrature::exp_sinh<double> half_line;
    const double n_xx = half_line.integrate([&](double t) { return d.biexciton(t); });
    const double n_x = half_line.integrate([&](double t) { return d.exciton(t); });
    CHECK(std::abs(n_xx - 1.0) < 1e-9);
    CHECK(std::abs(n_x - 1.0) < 1e-9);
    const double mean_x = half_line.integrate([&](double t) { return t * d.exciton(t); });
    CHECK(mean_x == doctest::Approx(218.0 + 281.0).epsilon(1e-9));
    CHECK(d.exciton_mean_ps() == 499.0);

    CHECK(d.exciton(0.0) == 0.0);
    CHECK(d.biexciton(-1.0) == 0.0);
    CHECK(d.exciton(-1.0) == 0.0);

    const double t_star = 218.0 * 281.0 * std::log(281.0 / 218.0) / (281.0 - 218.0);
    CHECK(d.exciton_peak_ps() == doctest::Approx(t_star).epsilon(1e-12));
    CHECK(std::abs(d.exciton_peak_ps() - 247.0) <= 1.0);
    const auto found =
        boost::math::tools::brent_find_minima([&](double t) { return -d.exciton(t); }, 1.0, 2000.0, 40);
    CHECK(found.first == doctest::Approx(d.exciton_peak_ps()).epsilon(1e-6));
}

TEST_CASE("exciton density is the convolution of two exponentials") {
    for (auto [txx, tx] : {std::pair{218.0, 281.0}, {331.0, 425.0}, {300.0, 120.0}, {250.0, 250.0 * (1 + 1e-11)}}) {
        CascadeParams p;
        p.tau_xx_ps = txx;
        p.tau_x_ps = tx;
        const auto d = emission_time_densities(p);
        for (double t : {1.0, 25.0, 100.0, 247.0, 600.0, 1500.0, 4000.0}) {
            const double conv = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
                [&](double s) { return std::exp(-s / txx) / txx * std::exp(-(t - s) / tx) / tx; }, 0.0, t, 10, 1e-14);
            INFO("tau_xx " << txx << " tau_x " << tx << " t " << t);
            CHECK(std::abs(d.exciton(t) - conv) <= 1e-8 * conv);
        }
    }
    CascadeParams same;
    same.tau_xx_ps = same.tau_x_ps = 250.0;
    const auto d = emission_time_densities(same);
    CHECK(d.exciton(100.0) == doctest::Approx(100.0 * std::exp(-0.4) / (250.0 * 250.0)).epsilon(1e-14));
    CHECK(d.exciton_peak_ps() == 250.0);
    same.tau_x_ps = -1.0;
    CHECK_THROWS_AS(emission_time_densities(same), Error);
}

TEST_CASE("trajectory emission times follow the analytic laws") {
    CascadeParams p;
    const auto records = trajectory_ensemble(p, 1'000'000, 2024);
    std::vector<double> t_xx, t_x;
    for (const auto& r : records) (r.channel == Channel::xx ? t_xx : t_x).push_back(r.emission_time_ps);
    REQUIRE(t_xx.size() == t_x.size());

    const double p_exc = evolve_pulse(p, p.pulse_area).biexciton_population;
    const double n = 1e6;
    CHECK(std::abs(t_xx.size() - n * p_exc) < 5.0 * std::sqrt(n * p_exc * (1.0 - p_exc)));

    const double txx = p.tau_xx_ps, tx = p.tau_x_ps;
    const double ks_xx = ks_statistic(t_xx, [&](double t) { return -std::expm1(-t / txx); });
    const double ks_x = ks_statistic(t_x, [&](double t) {
        return 1.0 - (tx * std::exp(-t / tx) - txx * std::exp(-t / txx)) / (tx - txx);
    });
    INFO("KS xx " << ks_xx << " x " << ks_x);
    CHECK(ks_xx < 0.002);
    CHECK(ks_x < 0.002);
}

TEST_CASE("trajectory records: ordering, determinism and zero area") {
    CascadeParams p;
    const auto a = trajectory_ensemble(p, 200'000, 5);
    REQUIRE(a.size() % 2 == 0);
    for (std::size_t i = 0; i < a.size(); i += 2) {
        CHECK(a[i].pulse_index == a[i + 1].pulse_index);
        CHECK(a[i].channel == Channel::xx);
        CHECK(a[i + 1].channel == Channel::x);
        CHECK(a[i].emission_time_ps < a[i + 1].emission_time_ps);
        if (i) CHECK(a[i].pulse_index > a[i - 1].pulse_index);
    }
    CHECK(trajectory_ensemble(p, 200'000, 5) == a);
    CHECK(trajectory_ensemble(p, 200'000, 5, {0.0, 3}) == a);
    CHECK(trajectory_ensemble(p, 200'000, 6) != a);

    EnsembleOptions re{0.05, 1};
    CHECK(trajectory_ensemble(p, 200'000, 5, re) == trajectory_ensemble(p, 200'000, 5, {0.05, 4}));

    p.pulse_area = 0.0;
    CHECK(trajectory_ensemble(p, 100'000, 5).empty());
    CHECK_THROWS_AS(trajectory_ensemble(p, 0, 5), Error);
    CHECK_THROWS_AS(trajectory_ensemble(CascadeParams{}, 10, 5, {1.5, 1}), Error);
}

TEST_CASE("pulsed g2 without re-excitation is zero") {
    CascadeParams p;
    const std::int64_t n = 1'000'000;
    const auto rec = trajectory_ensemble(p, n, 77);
    for (Channel ch : {Channel::x, Channel::xx}) {
        const auto g = g2_pulsed(rec, ch, n);
        CHECK(g.g2_zero == 0.0);
        CHECK(g.zero_delay_coincidences == 0.0);
        REQUIRE(g.side_peaks.size() == 10);
        for (double s : g.side_peaks) CHECK(std::abs(s - g.mean_side_coincidences) < 3.0 * std::sqrt(2.0 * g.mean_side_coincidences));
    }
}

TEST_CASE("pulsed g2 with re-excitation") {
    CascadeParams p;
    const std::int64_t n = 1'000'000;
    const auto rec = trajectory_ensemble(p, n, 78, {0.01, 1});
    for (Channel ch : {Channel::x, Channel::xx}) {
        const auto g = g2_pulsed(rec, ch, n);
        INFO(to_string(ch) << " g2 " << g.g2_zero << " +- " << g.error);
        CHECK(g.g2_zero >= 0.01);
        CHECK(g.g2_zero <= 0.03);
        CHECK(g.error > 0.0);
        CHECK(g.error < 0.5 * g.g2_zero);
        for (double s : g.side_peaks) CHECK(std::abs(s - g.mean_side_coincidences) < 3.0 * std::sqrt(2.0 * g.mean_side_coincidences));
    }
}

TEST_CASE("pulsed g2 on a hand-built record list") {
    const std::int64_t n = 10'000;
    std::vector<PhotonRecord> rec;
    for (std::int64_t i = 0; i < n; ++i) rec.push_back({i, Channel::xx, 10.0});
    rec.push_back({0, Channel::xx, 20.0}); // pulse 0 carries two photons
    const auto g = g2_pulsed(rec, Channel::xx, n, 2);
    // Zero delay: c(c-1) = 2 from pulse 0. Delay k: (n - k - 1) single-single
    // products plus 2 from pulse 0, both signs, rescaled by n / (n - k).
    double side = 0.0;
    for (int k = 1; k <= 2; ++k) side += 2.0 * (n - k + 1.0) * n / (n - k);
    side /= 2.0;
    CHECK(g.zero_delay_coincidences == 2.0);
    CHECK(g.mean_side_coincidences == doctest::Approx(side).epsilon(1e-14));
    CHECK(g.g2_zero == doctest::Approx(2.0 / side).epsilon(1e-14));

    CHECK_THROWS_AS(g2_pulsed(rec, Channel::x, n), Error);
    CHECK_THROWS_AS(g2_pulsed(rec, Channel::xx, 5000), Error);
    try {
        g2_pulsed(rec, Channel::x, n);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::insufficient_data);
    }
}

TEST_CASE("HOM visibility: analytic values and limits") {
    CascadeParams p;
    CHECK(hom_visibility_analytic(p) == doctest::Approx(218.0 / (218.0 + 281.0)).epsilon(1e-14));
    CHECK(std::abs(hom_visibility_analytic(p) - 0.437) < 5e-4);

    CascadeParams fast = p;
    fast.tau_xx_ps = 1e-6;
    CHECK(hom_visibility_analytic(fast) < 1e-8);
    CascadeParams dephased = p;
    dephased.dephasing_per_ns = 1e9;
    CHECK(hom_visibility_analytic(dephased) < 1e-8);
    dephased.dephasing_per_ns = 1.0;
    const double gx = 1.0 / 281.0, gxx = 1.0 / 218.0, gd = 1e-3;
    CHECK(hom_visibility_analytic(dephased) == doctest::Approx(gx / (gx + gxx + 2.0 * gd)).epsilon(1e-14));
}

TEST_CASE("HOM visibility: trajectory estimate converges to the analytic value") {
    for (double deph : {0.0, 0.8}) {
        CascadeParams p;
        p.dephasing_per_ns = deph;
        const auto h = hom_visibility_cascade(p, 400'000, 91);
        INFO("dephasing " << deph << " analytic " << h.analytic << " trajectory " << h.trajectory << " +- "
                          << h.standard_error);
        CHECK(h.pairs > 100'000);
        CHECK(h.standard_error > 0.0);
        CHECK(std::abs(h.trajectory - h.analytic) < 3.0 * h.standard_error);
    }
    CascadeParams p;
    const auto one = hom_visibility_cascade(p, 100'000, 3, 1);
    const auto three = hom_visibility_cascade(p, 100'000, 3, 3);
    CHECK(one.trajectory == three.trajectory);
}

TEST_CASE("visibility from the HOM g2") {
    CHECK(visibility_from_g2hom(0.5, 0.0).raw == 0.0);
    CHECK(visibility_from_g2hom(0.0, 0.0).raw == 1.0);
    const auto v = visibility_from_g2hom(0.280, 0.009);
    CHECK(v.raw == doctest::Approx(0.440).epsilon(1e-12));
    CHECK(v.corrected == doctest::Approx((0.5 * 1.009 - 0.280) / (0.5 * 0.991)).epsilon(1e-12));
    CHECK(std::abs(v.corrected - 0.45) < 0.005);
    CHECK(visibility_from_g2hom(0.3, 0.0).corrected == doctest::Approx(visibility_from_g2hom(0.3, 0.0).raw));
    CHECK_THROWS_AS(visibility_from_g2hom(1.2, 0.0), Error);
    CHECK_THROWS_AS(visibility_from_g2hom(0.2, -0.1), Error);
}

TEST_CASE("parameter validation and repetition warning") {
    CascadeParams p;
    CHECK_NOTHROW(p.validate());
    CHECK_FALSE(p.short_period_warning());
    p.rep_period_ns = 2.0;
    CHECK(p.short_period_warning());
    for (auto mutate : {+[](CascadeParams& c) { c.tau_xx_ps = 0.0; }, +[](CascadeParams& c) { c.tau_x_ps = -3.0; },
                        +[](CascadeParams& c) { c.binding_energy_mev = 0.0; },
                        +[](CascadeParams& c) { c.dephasing_per_ns = -1.0; },
                        +[](CascadeParams& c) { c.pulse_fwhm_ps = 0.0; }}) {
        CascadeParams c;
        mutate(c);
        CHECK_THROWS_AS(c.validate(), Error);
        CHECK_THROWS_AS(evolve_pulse(c, pi), Error);
    }
    CHECK(std::string(to_string(Channel::x)) == "x");
    CHECK(std::string(to_string(Channel::xx)) == "xx");
}
