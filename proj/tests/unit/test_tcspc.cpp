#include <doctest.h>

#include "qdpillar/tcspc.hpp"

#include <Eigen/Eigenvalues>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

using namespace qdpillar;
using namespace qdpillar::tcspc;

namespace {

constexpr double sigma78 = 78.0 / 2.3548200450309493;

double normal_pdf(double x, double s) { return std::exp(-0.5 * x * x / (s * s)) / (s * std::sqrt(2.0 * std::numbers::pi)); }

// Direct convolution of a (possibly two-stage) decay started at 0 with a unit
// Gaussian. `density` must vanish for s < 0.
template <class D>
double convolve(const D& density, double u, double sigma, double upper) {
    using boost::math::quadrature::gauss_kronrod;
    const double lo = std::max(0.0, u - 14.0 * sigma);
    const double hi = std::max(lo + sigma, std::min(upper, u + 14.0 * sigma));
    return gauss_kronrod<double, 61>::integrate([&](double s) { return density(s) * normal_pdf(u - s, sigma); }, lo,
                                                hi, 15, 1e-15);
}

double integral(const auto& f, double a, double b) {
    return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, a, b, 20, 1e-14);
}

// Scale that synthesize_histogram applies to the model means.
double synthesis_scale(ModelKind kind, const ModelParams& p, const SynthesisOptions& o) {
    Histogram h;
    h.bin_width_ps = o.bin_width_ps;
    h.t0_offset_ps = o.t_start_ps;
    const auto bins = static_cast<std::size_t>(std::floor(o.window_ps / o.bin_width_ps + 1e-9));
    double sum = 0.0;
    for (std::size_t i = 0; i < bins; ++i) sum += evaluate(kind, p, h.bin_center(i));
    return static_cast<double>(o.total_counts) / sum;
}

ModelParams decay(double tau, double t0 = 1000.0) {
    ModelParams p;
    p.tau = tau;
    p.sigma = sigma78;
    p.t0 = t0;
    p.amplitude = 1.0;
    p.baseline = 0.0;
    return p;
}

} // namespace

TEST_CASE("FWHM to sigma") {
    IrfModel irf;
    CHECK(irf.sigma_ps() == doctest::Approx(78.0 / (2.0 * std::sqrt(2.0 * std::log(2.0)))).epsilon(1e-14));
    CHECK(std::abs(irf.sigma_ps() - 33.12) < 0.005);
    irf.fwhm_ps = 0.0;
    CHECK_THROWS_AS(irf.validate(), Error);
}

TEST_CASE("exp_gauss matches direct convolution") {
    for (double tau : {300.0, 20.0, 1500.0}) {
        const double t0 = 1000.0, s = sigma78;
        for (double t = t0 - 5.0 * s; t <= t0 + 10.0 * tau; t += (15.0 * s + 10.0 * tau) / 97.0) {
            const double ref = convolve([&](double x) { return std::exp(-x / tau); }, t - t0, s, 60.0 * tau);
            const double got = exp_gauss(t, tau, s, t0, 1.0, 0.0);
            INFO("tau " << tau << " t " << t);
            CHECK(std::abs(got - ref) <= 1e-8 * ref);
        }
    }
    const double s = 33.12, tau = 300.0;
    const double at_t0 = 0.5 * std::exp(s * s / (2.0 * tau * tau)) * std::erfc(s / (tau * std::sqrt(2.0)));
    CHECK(exp_gauss(500.0, tau, s, 500.0, 1.0, 0.0) == doctest::Approx(at_t0).epsilon(1e-12));
    CHECK(exp_gauss(500.0, tau, s, 500.0, 2.0, 7.0) == doctest::Approx(2.0 * at_t0 + 7.0).epsilon(1e-12));
}

TEST_CASE("exp_gauss normalisation and limits") {
    for (auto [tau, s] : {std::pair{300.0, sigma78}, {50.0, 10.0}, {0.1, 100.0}}) {
        const double area = integral([&](double t) { return exp_gauss(t, tau, s, 0.0, 3.0, 0.0); }, -20.0 * s,
                                     20.0 * s + 60.0 * tau);
        INFO("tau " << tau << " sigma " << s);
        CHECK(std::abs(area - 3.0 * tau) <= 1e-6 * 3.0 * tau);
    }
    // Narrow IRF: plain exponential step.
    for (double u : {0.01, 1.0, 100.0, 900.0}) CHECK(std::abs(exp_gauss(u, 300.0, 1e-3, 0.0, 1.0, 0.0) - std::exp(-u / 300.0)) < 1e-9);
    // sigma / tau up to 1e3 stays finite and close to tau * Gaussian.
    for (double u : {-5000.0, -300.0, 0.0, 250.0, 4000.0, 20000.0}) {
        const double v = exp_gauss(u, 1.0, 1000.0, 0.0, 1.0, 0.0);
        CHECK(std::isfinite(v));
        CHECK(v >= 0.0);
        if (std::abs(u) < 4000.0) CHECK(v == doctest::Approx(normal_pdf(u - 1.0, 1000.0)).epsilon(2e-3));
    }
}

TEST_CASE("cascade_gauss matches the convolved cascade density") {
    for (auto [tf, ts] : {std::pair{218.0, 281.0}, {331.0, 425.0}, {300.0, 150.0}}) {
        const auto px = [&](double x) { return (std::exp(-x / ts) - std::exp(-x / tf)) / (ts - tf); };
        const double s = sigma78, t0 = 800.0;
        for (double t = t0 - 5.0 * s; t <= t0 + 10.0 * ts; t += (15.0 * s + 10.0 * ts) / 83.0) {
            const double ref = ts * convolve(px, t - t0, s, 60.0 * std::max(ts, tf));
            const double got = cascade_gauss(t, tf, ts, s, t0, 1.0, 0.0);
            INFO("tau_fast " << tf << " tau " << ts << " t " << t);
            CHECK(std::abs(got - ref) <= 1e-8 * ref + 1e-300);
        }
        const double area =
            integral([&](double t) { return cascade_gauss(t, tf, ts, s, 0.0, 2.0, 0.0); }, -20.0 * s, 60.0 * (ts + tf));
        CHECK(area == doctest::Approx(2.0 * ts).epsilon(1e-6));
    }
}

TEST_CASE("cascade_gauss limits") {
    for (double t : {900.0, 1000.0, 1100.0, 1500.0, 3000.0})
        CHECK(cascade_gauss(t, 1e-6, 281.0, sigma78, 1000.0, 1.0, 0.0) ==
              doctest::Approx(exp_gauss(t, 281.0, sigma78, 1000.0, 1.0, 0.0)).epsilon(1e-6));

    // Narrow IRF: peak of the exciton density, t0 + 247 ps.
    double best_t = 0.0, best = -1.0;
    for (double t = 1000.0; t < 1800.0; t += 0.05) {
        const double v = cascade_gauss(t, 218.0, 281.0, 0.01, 1000.0, 1.0, 0.0);
        if (v > best) best = v, best_t = t;
    }
    CHECK(std::abs(best_t - 1247.0) <= 1.0);

    // Degenerate lifetimes connect continuously to the general form.
    for (double t : {1000.0, 1200.0, 1600.0}) {
        const double same = cascade_gauss(t, 250.0, 250.0, sigma78, 1000.0, 1.0, 0.0);
        const double near = cascade_gauss(t, 250.0 * (1.0 - 1e-3), 250.0, sigma78, 1000.0, 1.0, 0.0);
        CHECK(same == doctest::Approx(near).epsilon(2e-3));
    }
    for (double t = 0.0; t < 4000.0; t += 17.0) CHECK(cascade_gauss(t, 218.0, 281.0, sigma78, 1000.0, 5.0, 3.0) >= 3.0);
}

TEST_CASE("synthetic histograms") {
    SynthesisOptions o;
    const auto p = decay(300.0);
    const auto h = synthesize_histogram(ModelKind::exp_gauss, p, o, 42);
    CHECK(h.counts.size() == 3250);
    CHECK(h.bin_width_ps == 4.0);
    CHECK(std::abs(static_cast<double>(h.total()) - 1e6) < 4.0 * std::sqrt(1e6));
    CHECK(synthesize_histogram(ModelKind::exp_gauss, p, o, 42).counts == h.counts);
    CHECK(synthesize_histogram(ModelKind::exp_gauss, p, o, 43).counts != h.counts);

    // Kolmogorov-Smirnov distance between empirical and model CDFs at bin edges.
    std::vector<double> mean(h.counts.size());
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] = evaluate(ModelKind::exp_gauss, p, h.bin_center(i));
    const double mean_total = std::accumulate(mean.begin(), mean.end(), 0.0);
    const double n = static_cast<double>(h.total());
    double cm = 0.0, cn = 0.0, ks = 0.0;
    for (std::size_t i = 0; i < mean.size(); ++i) {
        cm += mean[i] / mean_total;
        cn += static_cast<double>(h.counts[i]) / n;
        ks = std::max(ks, std::abs(cm - cn));
    }
    CHECK(ks < 0.005);

    // Zero amplitude: flat, mean b per bin.
    ModelParams flat = p;
    flat.amplitude = 0.0;
    flat.baseline = 1.0;
    SynthesisOptions fo = o;
    const double b = 40.0;
    fo.total_counts = static_cast<std::int64_t>(b * 3250);
    const auto fh = synthesize_histogram(ModelKind::exp_gauss, flat, fo, 9);
    const double m = static_cast<double>(fh.total()) / 3250.0;
    double var = 0.0;
    for (auto c : fh.counts) var += (c - m) * (c - m);
    var /= 3249.0;
    CHECK(std::abs(m - b) < 4.0 * std::sqrt(b / 3250.0));
    CHECK(var == doctest::Approx(b).epsilon(0.1));

    SynthesisOptions bad = o;
    bad.total_counts = 0;
    CHECK_THROWS_AS(synthesize_histogram(ModelKind::exp_gauss, p, bad, 1), Error);
}

TEST_CASE("exp_gauss fit round trip") {
    const auto p = decay(300.0);
    const auto h = synthesize_histogram(ModelKind::exp_gauss, p, {}, 1234);
    const auto r = fit_lifetime(h, ModelKind::exp_gauss);
    INFO("tau " << r.value(Param::tau) << " +- " << r.error(Param::tau));
    CHECK(r.converged);
    CHECK(r.model == ModelKind::exp_gauss);
    CHECK(std::abs(r.value(Param::tau) - 300.0) < 2.0 * r.error(Param::tau));
    CHECK(r.error(Param::tau) < 3.0);
    CHECK(r.error(Param::tau) > 0.0);
    CHECK(r.value(Param::sigma) == sigma78);
    CHECK(r.error(Param::sigma) == 0.0);
    CHECK(std::abs(r.value(Param::t0) - 1000.0) < 3.0 * r.error(Param::t0));
    CHECK(r.degrees_of_freedom == static_cast<int>(h.counts.size()) - static_cast<int>(r.free.size()));
    CHECK(r.reduced_deviance == doctest::Approx(r.deviance / r.degrees_of_freedom));

    const Eigen::MatrixXd& c = r.covariance;
    REQUIRE(c.rows() == static_cast<Eigen::Index>(r.free.size()));
    CHECK((c - c.transpose()).cwiseAbs().maxCoeff() <= 1e-9 * c.cwiseAbs().maxCoeff());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (c + c.transpose()));
    CHECK(es.eigenvalues().minCoeff() >= -1e-9 * es.eigenvalues().cwiseAbs().maxCoeff());
}

TEST_CASE("cascade fit with the fast component pinned") {
    ModelParams p = decay(281.0);
    p.tau_fast = 218.0;
    const auto h = synthesize_histogram(ModelKind::cascade_gauss, p, {}, 99);
    FitOptions o;
    o.initial.tau_fast = 218.0;
    o.initial.sigma = sigma78;
    const auto r = fit_lifetime(h, ModelKind::cascade_gauss, o);
    INFO("tau_x " << r.value(Param::tau) << " +- " << r.error(Param::tau));
    CHECK(r.value(Param::tau_fast) == 218.0);
    CHECK(std::abs(r.value(Param::tau) - 281.0) < 2.0 * r.error(Param::tau));
}

TEST_CASE("fitted lifetime is unbiased over replications") {
    const auto p = decay(300.0);
    SynthesisOptions o;
    o.total_counts = 100'000;
    double sum = 0.0;
    for (int k = 0; k < 100; ++k) sum += fit_lifetime(synthesize_histogram(ModelKind::exp_gauss, p, o, 5000 + k), ModelKind::exp_gauss).value(Param::tau);
    CHECK(std::abs(sum / 100.0 - 300.0) < 3.0);
}

TEST_CASE("deviance at the true parameters is close to the number of bins") {
    ModelParams p = decay(300.0);
    p.baseline = 2e-3; // keeps every bin mean well above zero
    SynthesisOptions o;
    const double scale = synthesis_scale(ModelKind::exp_gauss, p, o);
    ModelParams truth = p;
    truth.amplitude *= scale;
    truth.baseline *= scale;
    double sum = 0.0;
    const int reps = 20;
    std::size_t bins = 0;
    for (int k = 0; k < reps; ++k) {
        const auto h = synthesize_histogram(ModelKind::exp_gauss, p, o, 700 + k);
        bins = h.counts.size();
        sum += poisson_deviance(h, ModelKind::exp_gauss, truth);
    }
    CHECK(sum / reps == doctest::Approx(static_cast<double>(bins)).epsilon(0.1));
}

TEST_CASE("pinning never lowers the deviance below the free fit") {
    ModelParams p = decay(300.0);
    p.baseline = 1e-3;
    const auto h = synthesize_histogram(ModelKind::exp_gauss, p, {}, 31);
    FitOptions free_opt;
    free_opt.pinned.clear();
    free_opt.initial.sigma = 30.0;
    const auto free_fit = fit_lifetime(h, ModelKind::exp_gauss, free_opt);
    for (Param pin : {Param::sigma, Param::tau, Param::baseline}) {
        FitOptions o;
        o.pinned = {pin};
        o.initial = free_fit.values;
        o.initial[pin] *= 1.05;
        const auto pinned = fit_lifetime(h, ModelKind::exp_gauss, o);
        CHECK(pinned.value(pin) == o.initial[pin]);
        CHECK(free_fit.deviance <= pinned.deviance + 1e-6);
    }
}

TEST_CASE("flat histogram has no decay amplitude") {
    ModelParams flat = decay(300.0);
    flat.amplitude = 0.0;
    flat.baseline = 1.0;
    SynthesisOptions o;
    o.total_counts = 3250 * 50;
    const auto h = synthesize_histogram(ModelKind::exp_gauss, flat, o, 17);
    FitOptions f;
    f.pinned = {Param::sigma, Param::tau, Param::t0};
    f.auto_initial = false;
    f.initial = decay(300.0);
    f.initial.amplitude = 0.01;
    f.initial.baseline = 50.0;
    const auto r = fit_lifetime(h, ModelKind::exp_gauss, f);
    INFO("A " << r.value(Param::amplitude) << " +- " << r.error(Param::amplitude));
    CHECK(std::abs(r.value(Param::amplitude)) <= 2.0 * r.error(Param::amplitude));
    CHECK(r.value(Param::baseline) == doctest::Approx(50.0).epsilon(0.01));
}

TEST_CASE("fit errors") {
    Histogram tiny;
    tiny.counts.assign(40, 5);
    CHECK_THROWS_AS(fit_lifetime(tiny, ModelKind::exp_gauss), Error);
    try {
        fit_lifetime(tiny, ModelKind::exp_gauss);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::insufficient_data);
    }

    const auto h = synthesize_histogram(ModelKind::exp_gauss, decay(300.0), {}, 3);
    FitOptions o;
    o.max_iterations = 1;
    o.relative_tolerance = 1e-300;
    try {
        fit_lifetime(h, ModelKind::exp_gauss, o);
        FAIL("expected a fit failure");
    } catch (const FitError& e) {
        CHECK(e.kind() == ErrorKind::fit_failure);
        CHECK(e.best().value(Param::tau) > 0.0);
    }

    FitOptions all;
    all.pinned = model_parameters(ModelKind::exp_gauss);
    CHECK_THROWS_AS(fit_lifetime(h, ModelKind::exp_gauss, all), Error);

    CHECK(model_from_string("exp_gauss") == ModelKind::exp_gauss);
    CHECK(model_from_string("cascade_gauss") == ModelKind::cascade_gauss);
    CHECK_THROWS_AS(model_from_string("triple"), Error);

    Histogram neg;
    neg.counts = {1, -2, 3};
    CHECK_THROWS_AS(neg.validate(), Error);
    neg.counts = {1, 2};
    neg.bin_width_ps = 0.0;
    CHECK_THROWS_AS(neg.validate(), Error);
}

TEST_CASE("IRF from an attenuated-laser trace") {
    ModelParams g;
    g.sigma = sigma78;
    g.t0 = 1000.0;
    g.amplitude = 1.0;
    g.baseline = 0.0;
    SynthesisOptions o;
    o.window_ps = 2000.0;
    const auto trace = synthesize_histogram(ModelKind::gaussian, g, o, 5);
    const auto irf = irf_from_trace(trace);
    INFO("FWHM " << irf.irf.fwhm_ps << " +- " << irf.fwhm_error_ps);
    CHECK(std::abs(irf.irf.fwhm_ps - 78.0) <= 1.0);
    CHECK(std::abs(irf.irf.center_ps - 1000.0) <= 1.0);
    CHECK(irf.fwhm_error_ps > 0.0);
    CHECK(irf.fwhm_error_ps < 1.0);

    Histogram shifted = trace;
    shifted.t0_offset_ps += 100.0;
    const auto moved = irf_from_trace(shifted);
    CHECK(moved.irf.center_ps == doctest::Approx(irf.irf.center_ps + 100.0).epsilon(1e-9));
    CHECK(moved.irf.fwhm_ps == doctest::Approx(irf.irf.fwhm_ps).epsilon(1e-7));

    auto two = trace;
    Histogram second = synthesize_histogram(ModelKind::gaussian, [&] {
        ModelParams q = g;
        q.t0 = 1500.0;
        return q;
    }(), o, 6);
    for (std::size_t i = 0; i < two.counts.size(); ++i) two.counts[i] += second.counts[i];
    try {
        irf_from_trace(two);
        FAIL("expected ambiguous_irf");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::ambiguous_irf);
    }
}
