#include "qdpillar/tcspc.hpp"

#include "qdpillar/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>

#include <Eigen/Dense>

namespace qdpillar::tcspc {

namespace {

constexpr double sqrt2 = std::numbers::sqrt2;

// Unit-amplitude exponential decay convolved with a unit-area Gaussian,
// scaled so that its time integral is tau.
double exp_gauss_unit(double u, double tau, double sigma) {
    if (sigma <= 0.0) return u > 0.0 ? std::exp(-u / tau) : (u == 0.0 ? 0.5 : 0.0);
    const double z = (sigma / tau - u / sigma) / sqrt2;
    if (z >= 0.0) return 0.5 * std::exp(-0.5 * u * u / (sigma * sigma)) * numeric::erfcx(z);
    // Here u > sigma^2/tau, so the exponent is negative.
    return 0.5 * std::exp(0.5 * sigma * sigma / (tau * tau) - u / tau) * std::erfc(z);
}

// d/dtau of exp_gauss_unit.
double exp_gauss_unit_dtau(double u, double tau, double sigma) {
    const double g = exp_gauss_unit(u, tau, sigma);
    if (sigma <= 0.0) return g * u / (tau * tau);
    const double gauss = std::exp(-0.5 * u * u / (sigma * sigma));
    return g * (u / (tau * tau) - sigma * sigma / (tau * tau * tau)) +
           sigma * gauss / (std::sqrt(2.0 * std::numbers::pi) * tau * tau);
}

bool uses_log(Param p) { return p != Param::t0 && p != Param::amplitude; }

struct Problem {
    const Histogram& h;
    ModelKind kind;
    ModelParams base;
    std::vector<Param> free;
    std::vector<double> times;
    std::vector<double> scale;

    ModelParams unpack(const Eigen::VectorXd& theta) const {
        ModelParams p = base;
        for (std::size_t j = 0; j < free.size(); ++j)
            p[free[j]] = uses_log(free[j]) ? std::exp(theta[static_cast<Eigen::Index>(j)])
                                           : theta[static_cast<Eigen::Index>(j)];
        return p;
    }

    Eigen::VectorXd pack(const ModelParams& p) const {
        Eigen::VectorXd theta(static_cast<Eigen::Index>(free.size()));
        for (std::size_t j = 0; j < free.size(); ++j)
            theta[static_cast<Eigen::Index>(j)] = uses_log(free[j]) ? std::log(p[free[j]]) : p[free[j]];
        return theta;
    }

    // Model means; false if a mean is negative, not finite, or zero in a bin
    // that has counts.
    bool means(const Eigen::VectorXd& theta, Eigen::VectorXd& mu) const {
        const ModelParams p = unpack(theta);
        mu.resize(static_cast<Eigen::Index>(times.size()));
        for (std::size_t i = 0; i < times.size(); ++i) {
            const double m = evaluate(kind, p, times[i]);
            if (!(m >= 0.0) || !std::isfinite(m) || (m == 0.0 && h.counts[i] > 0)) return false;
            mu[static_cast<Eigen::Index>(i)] = m;
        }
        return true;
    }

    double deviance(const Eigen::VectorXd& mu) const {
        double d = 0.0;
        for (std::size_t i = 0; i < times.size(); ++i) {
            const double n = static_cast<double>(h.counts[i]);
            const double m = mu[static_cast<Eigen::Index>(i)];
            d += n > 0.0 ? m - n + n * std::log(n / m) : m;
        }
        return 2.0 * d;
    }

    double deviance_at(const Eigen::VectorXd& theta) const {
        Eigen::VectorXd mu;
        if (!means(theta, mu)) return std::numeric_limits<double>::infinity();
        return deviance(mu);
    }

    double step(std::size_t j, const Eigen::VectorXd& theta, double rel) const {
        return rel * std::max(std::abs(theta[static_cast<Eigen::Index>(j)]), scale[j]);
    }

    bool jacobian(const Eigen::VectorXd& theta, Eigen::MatrixXd& jac) const {
        const auto n = static_cast<Eigen::Index>(times.size());
        jac.resize(n, static_cast<Eigen::Index>(free.size()));
        Eigen::VectorXd plus;
        Eigen::VectorXd minus;
        for (std::size_t j = 0; j < free.size(); ++j) {
            const double hj = step(j, theta, 1e-6);
            Eigen::VectorXd tp = theta;
            Eigen::VectorXd tm = theta;
            tp[static_cast<Eigen::Index>(j)] += hj;
            tm[static_cast<Eigen::Index>(j)] -= hj;
            if (!means(tp, plus) || !means(tm, minus)) return false;
            jac.col(static_cast<Eigen::Index>(j)) = (plus - minus) / (2.0 * hj);
        }
        return true;
    }

    // Half the deviance Hessian, by central second differences.
    Eigen::MatrixXd observed_information(const Eigen::VectorXd& theta) const {
        const auto k = static_cast<Eigen::Index>(free.size());
        Eigen::MatrixXd info(k, k);
        const double d0 = deviance_at(theta);
        std::vector<double> hs(free.size());
        for (std::size_t j = 0; j < free.size(); ++j) hs[j] = step(j, theta, 1e-4);
        auto shifted = [&](Eigen::Index a, double da, Eigen::Index b, double db) {
            Eigen::VectorXd t = theta;
            t[a] += da;
            t[b] += db;
            return deviance_at(t);
        };
        for (Eigen::Index a = 0; a < k; ++a) {
            const double ha = hs[static_cast<std::size_t>(a)];
            info(a, a) = 0.5 * (shifted(a, ha, a, 0.0) - 2.0 * d0 + shifted(a, -ha, a, 0.0)) / (ha * ha);
            for (Eigen::Index b = 0; b < a; ++b) {
                const double hb = hs[static_cast<std::size_t>(b)];
                const double v = (shifted(a, ha, b, hb) - shifted(a, ha, b, -hb) - shifted(a, -ha, b, hb) +
                                  shifted(a, -ha, b, -hb)) /
                                 (4.0 * ha * hb);
                info(a, b) = info(b, a) = 0.5 * v;
            }
        }
        return info;
    }
};

FitResult make_result(const Problem& pr, const Eigen::VectorXd& theta, double deviance, int iterations,
                      bool converged) {
    FitResult r;
    r.model = pr.kind;
    r.values = pr.unpack(theta);
    r.free = pr.free;
    r.deviance = deviance;
    r.iterations = iterations;
    r.converged = converged;
    r.degrees_of_freedom = static_cast<int>(pr.times.size()) - static_cast<int>(pr.free.size());
    r.reduced_deviance = r.degrees_of_freedom > 0 ? deviance / r.degrees_of_freedom : 0.0;
    for (std::size_t i = 0; i < param_count; ++i) r.errors[static_cast<Param>(i)] = 0.0;
    const auto k = static_cast<Eigen::Index>(pr.free.size());
    r.covariance = Eigen::MatrixXd::Zero(k, k);
    return r;
}

// Covariance from the observed information; directions with no curvature get
// an infinite variance.
Eigen::MatrixXd invert_information(const Eigen::MatrixXd& info) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (info + info.transpose()));
    const Eigen::VectorXd ev = es.eigenvalues();
    const double top = ev.cwiseAbs().maxCoeff();
    Eigen::VectorXd inv(ev.size());
    for (Eigen::Index i = 0; i < ev.size(); ++i)
        inv[i] = ev[i] > 1e-14 * top ? 1.0 / ev[i] : std::numeric_limits<double>::infinity();
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(ev.size(), ev.size());
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (std::isinf(inv[i])) {
            for (Eigen::Index a = 0; a < ev.size(); ++a)
                for (Eigen::Index b = 0; b < ev.size(); ++b)
                    if (std::abs(es.eigenvectors()(a, i) * es.eigenvectors()(b, i)) > 1e-12)
                        cov(a, b) = a == b ? std::numeric_limits<double>::infinity() : 0.0;
            continue;
        }
        for (Eigen::Index a = 0; a < ev.size(); ++a)
            for (Eigen::Index b = 0; b < ev.size(); ++b)
                if (!std::isinf(cov(a, b)))
                    cov(a, b) += inv[i] * es.eigenvectors()(a, i) * es.eigenvectors()(b, i);
    }
    return cov;
}

void attach_uncertainties(const Problem& pr, const Eigen::VectorXd& theta, FitResult& r) {
    const Eigen::MatrixXd info = pr.observed_information(theta);
    const Eigen::MatrixXd cov_theta = invert_information(info);
    const auto k = static_cast<Eigen::Index>(pr.free.size());
    Eigen::VectorXd d(k); // d natural / d theta
    for (Eigen::Index j = 0; j < k; ++j)
        d[j] = uses_log(pr.free[static_cast<std::size_t>(j)]) ? std::exp(theta[j]) : 1.0;
    r.covariance.resize(k, k);
    for (Eigen::Index a = 0; a < k; ++a)
        for (Eigen::Index b = 0; b < k; ++b) {
            const double c = cov_theta(a, b);
            r.covariance(a, b) = c == 0.0 ? 0.0 : d[a] * d[b] * c;
        }
    for (Eigen::Index j = 0; j < k; ++j)
        r.errors[pr.free[static_cast<std::size_t>(j)]] = std::sqrt(std::max(r.covariance(j, j), 0.0));
}

std::vector<double> smoothed(const std::vector<std::int64_t>& counts, int half) {
    std::vector<double> out(counts.size());
    const auto n = static_cast<long>(counts.size());
    for (long i = 0; i < n; ++i) {
        double s = 0.0;
        int c = 0;
        for (long j = std::max(0L, i - half); j <= std::min(n - 1, i + half); ++j, ++c)
            s += static_cast<double>(counts[static_cast<std::size_t>(j)]);
        out[static_cast<std::size_t>(i)] = s / c;
    }
    return out;
}

} // namespace

std::int64_t Histogram::total() const { return std::accumulate(counts.begin(), counts.end(), std::int64_t{0}); }

void Histogram::validate() const {
    require(bin_width_ps > 0.0, "histogram bin width must be > 0");
    require(std::all_of(counts.begin(), counts.end(), [](std::int64_t c) { return c >= 0; }),
            "histogram counts must be >= 0");
}

void IrfModel::validate() const { require(fwhm_ps > 0.0, "IRF FWHM must be > 0"); }

const char* to_string(ModelKind kind) {
    switch (kind) {
    case ModelKind::exp_gauss: return "exp_gauss";
    case ModelKind::cascade_gauss: return "cascade_gauss";
    case ModelKind::gaussian: return "gaussian";
    }
    return "?";
}

ModelKind model_from_string(const std::string& name) {
    if (name == "exp_gauss") return ModelKind::exp_gauss;
    if (name == "cascade_gauss") return ModelKind::cascade_gauss;
    if (name == "gaussian") return ModelKind::gaussian;
    throw Error(ErrorKind::invalid_parameter, "unknown decay model '" + name + "'");
}

const char* to_string(Param p) {
    switch (p) {
    case Param::tau: return "tau";
    case Param::tau_fast: return "tau_fast";
    case Param::sigma: return "sigma";
    case Param::t0: return "t0";
    case Param::amplitude: return "amplitude";
    case Param::baseline: return "baseline";
    }
    return "?";
}

double& ModelParams::operator[](Param p) {
    switch (p) {
    case Param::tau: return tau;
    case Param::tau_fast: return tau_fast;
    case Param::sigma: return sigma;
    case Param::t0: return t0;
    case Param::amplitude: return amplitude;
    case Param::baseline: return baseline;
    }
    throw Error(ErrorKind::invalid_parameter, "unknown parameter");
}

double ModelParams::operator[](Param p) const { return const_cast<ModelParams&>(*this)[p]; }

double exp_gauss(double t, double tau, double sigma, double t0, double amplitude, double baseline) {
    return amplitude * exp_gauss_unit(t - t0, tau, sigma) + baseline;
}

double cascade_gauss(double t, double tau_fast, double tau, double sigma, double t0, double amplitude,
                     double baseline) {
    const double u = t - t0;
    const double diff = tau - tau_fast;
    double shape;
    if (std::abs(diff) < 1e-4 * tau) {
        const double mid = 0.5 * (tau + tau_fast);
        shape = tau * exp_gauss_unit_dtau(u, mid, sigma);
    } else {
        shape = tau * (exp_gauss_unit(u, tau, sigma) - exp_gauss_unit(u, tau_fast, sigma)) / diff;
    }
    return amplitude * std::max(shape, 0.0) + baseline;
}

double gaussian_peak(double t, double sigma, double center, double amplitude, double baseline) {
    const double x = (t - center) / sigma;
    return amplitude * std::exp(-0.5 * x * x) + baseline;
}

double evaluate(ModelKind kind, const ModelParams& p, double t) {
    switch (kind) {
    case ModelKind::exp_gauss: return exp_gauss(t, p.tau, p.sigma, p.t0, p.amplitude, p.baseline);
    case ModelKind::cascade_gauss:
        return cascade_gauss(t, p.tau_fast, p.tau, p.sigma, p.t0, p.amplitude, p.baseline);
    case ModelKind::gaussian: return gaussian_peak(t, p.sigma, p.t0, p.amplitude, p.baseline);
    }
    return 0.0;
}

std::vector<Param> model_parameters(ModelKind kind) {
    switch (kind) {
    case ModelKind::exp_gauss: return {Param::tau, Param::sigma, Param::t0, Param::amplitude, Param::baseline};
    case ModelKind::cascade_gauss:
        return {Param::tau, Param::tau_fast, Param::sigma, Param::t0, Param::amplitude, Param::baseline};
    case ModelKind::gaussian: return {Param::sigma, Param::t0, Param::amplitude, Param::baseline};
    }
    return {};
}

Histogram synthesize_histogram(ModelKind kind, const ModelParams& params, const SynthesisOptions& options,
                               std::uint64_t seed) {
    require(options.total_counts >= 1, "total_counts must be >= 1");
    require(options.bin_width_ps > 0.0, "bin width must be > 0");
    require(options.window_ps >= options.bin_width_ps, "window must hold at least one bin");
    require(params.tau > 0.0 && params.sigma >= 0.0 && params.tau_fast > 0.0, "model widths must be > 0");

    Histogram h;
    h.bin_width_ps = options.bin_width_ps;
    h.t0_offset_ps = options.t_start_ps;
    const auto bins = static_cast<std::size_t>(std::floor(options.window_ps / options.bin_width_ps + 1e-9));
    std::vector<double> mean(bins);
    for (std::size_t i = 0; i < bins; ++i) mean[i] = std::max(evaluate(kind, params, h.bin_center(i)), 0.0);
    const double sum = std::accumulate(mean.begin(), mean.end(), 0.0);
    require(sum > 0.0, "model has no weight inside the window");
    const double scale = static_cast<double>(options.total_counts) / sum;

    std::mt19937_64 rng(seed);
    h.counts.resize(bins);
    for (std::size_t i = 0; i < bins; ++i) {
        const double m = mean[i] * scale;
        if (m <= 0.0) {
            h.counts[i] = 0;
            continue;
        }
        std::poisson_distribution<std::int64_t> pois(m);
        h.counts[i] = pois(rng);
    }
    return h;
}

double poisson_deviance(const Histogram& h, ModelKind kind, const ModelParams& p) {
    double d = 0.0;
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
        const double n = static_cast<double>(h.counts[i]);
        const double m = evaluate(kind, p, h.bin_center(i));
        if (!(m >= 0.0) || (m == 0.0 && n > 0.0)) return std::numeric_limits<double>::infinity();
        d += n > 0.0 ? m - n + n * std::log(n / m) : m;
    }
    return 2.0 * d;
}

ModelParams initial_guess(const Histogram& h, ModelKind kind, const ModelParams& seed_values) {
    h.validate();
    require(!h.counts.empty(), "histogram is empty", ErrorKind::insufficient_data);
    ModelParams p = seed_values;
    const double dt = h.bin_width_ps;
    const auto n = h.counts.size();
    const auto smooth = smoothed(h.counts, 3);
    const auto peak = static_cast<std::size_t>(std::max_element(smooth.begin(), smooth.end()) - smooth.begin());

    // Baseline from the bins well before the peak, else from the last tenth.
    const double guard = std::max(5.0 * seed_values.sigma, 10.0 * dt);
    const auto pre_end = static_cast<std::size_t>(
        std::max(0.0, std::floor((h.bin_center(peak) - guard - h.t0_offset_ps) / dt)));
    double base = 0.0;
    if (pre_end >= 10) {
        for (std::size_t i = 0; i < pre_end; ++i) base += static_cast<double>(h.counts[i]);
        base /= static_cast<double>(pre_end);
    } else {
        const std::size_t from = n - std::max<std::size_t>(1, n / 10);
        for (std::size_t i = from; i < n; ++i) base += static_cast<double>(h.counts[i]);
        base /= static_cast<double>(n - from);
    }
    p.baseline = std::max(base, 1e-3);

    const double height = smooth[peak] - base;
    // Half-rise time before the peak.
    std::size_t rise = peak;
    while (rise > 0 && smooth[rise - 1] - base > 0.5 * height) --rise;
    const double t_half = h.bin_center(rise);

    if (kind == ModelKind::gaussian) {
        std::size_t fall = peak;
        while (fall + 1 < n && smooth[fall + 1] - base > 0.5 * height) ++fall;
        const double width = std::max((h.bin_center(fall) - h.bin_center(rise)) + dt, 2.0 * dt);
        p.sigma = width / fwhm_per_sigma;
        p.t0 = h.bin_center(peak);
        p.amplitude = std::max(height, 1.0);
        return p;
    }

    double w = 0.0;
    double wt = 0.0;
    for (std::size_t i = rise; i < n; ++i) {
        const double excess = static_cast<double>(h.counts[i]) - base;
        w += excess;
        wt += excess * (h.bin_center(i) - t_half);
    }
    double mean_delay = w > 0.0 ? wt / w : 10.0 * dt;
    if (kind == ModelKind::cascade_gauss) mean_delay -= p.tau_fast;
    p.tau = std::max(mean_delay, 5.0 * dt);
    p.t0 = t_half;
    p.amplitude = std::max(w * dt / p.tau, 1e-3 * (smooth[peak] + 1.0));
    return p;
}

FitResult fit_lifetime(const Histogram& h, ModelKind kind, const FitOptions& options) {
    h.validate();
    const auto nonzero = std::count_if(h.counts.begin(), h.counts.end(), [](std::int64_t c) { return c > 0; });
    require(nonzero >= 50, "fit needs at least 50 bins with counts, got " + std::to_string(nonzero),
            ErrorKind::insufficient_data);
    require(options.max_iterations > 0, "max_iterations must be > 0");

    ModelParams start = options.initial;
    if (options.auto_initial) {
        const ModelParams guess = initial_guess(h, kind, options.initial);
        for (Param p : model_parameters(kind))
            if (std::find(options.pinned.begin(), options.pinned.end(), p) == options.pinned.end())
                start[p] = guess[p];
    }
    for (Param p : model_parameters(kind))
        if (uses_log(p)) require(start[p] > 0.0, std::string(to_string(p)) + " must be > 0");

    Problem pr{h, kind, start, {}, {}, {}};
    for (Param p : model_parameters(kind))
        if (std::find(options.pinned.begin(), options.pinned.end(), p) == options.pinned.end())
            pr.free.push_back(p);
    require(!pr.free.empty(), "every model parameter is pinned");
    pr.times.resize(h.counts.size());
    for (std::size_t i = 0; i < h.counts.size(); ++i) pr.times[i] = h.bin_center(i);
    const double max_count = static_cast<double>(*std::max_element(h.counts.begin(), h.counts.end()));
    for (Param p : pr.free) {
        double s = 1.0;
        if (p == Param::amplitude) s = std::max(1e-3 * max_count, 1.0);
        pr.scale.push_back(s);
    }

    Eigen::VectorXd theta = pr.pack(start);
    Eigen::VectorXd mu;
    require(pr.means(theta, mu), "initial parameters give a non-positive model mean", ErrorKind::fit_failure);
    double dev = pr.deviance(mu);
    double lambda = 1e-3;
    const auto k = static_cast<Eigen::Index>(pr.free.size());
    Eigen::MatrixXd jac;

    for (int it = 1; it <= options.max_iterations; ++it) {
        if (!pr.jacobian(theta, jac))
            throw FitError("model mean became non-positive while differentiating",
                           make_result(pr, theta, dev, it, false));
        // Poisson scoring: gradient and expected information of the deviance.
        Eigen::VectorXd grad = Eigen::VectorXd::Zero(k);
        Eigen::MatrixXd fisher = Eigen::MatrixXd::Zero(k, k);
        for (Eigen::Index i = 0; i < jac.rows(); ++i) {
            if (mu[i] == 0.0) continue;
            const double n = static_cast<double>(h.counts[static_cast<std::size_t>(i)]);
            const auto row = jac.row(i);
            grad += 2.0 * (1.0 - n / mu[i]) * row.transpose();
            fisher += (2.0 / mu[i]) * row.transpose() * row;
        }

        bool accepted = false;
        while (lambda < 1e16) {
            Eigen::MatrixXd a = fisher;
            for (Eigen::Index j = 0; j < k; ++j) a(j, j) += lambda * std::max(fisher(j, j), 1e-300);
            const Eigen::VectorXd delta = a.ldlt().solve(-grad);
            const Eigen::VectorXd trial = theta + delta;
            Eigen::VectorXd trial_mu;
            if (delta.allFinite() && pr.means(trial, trial_mu)) {
                const double trial_dev = pr.deviance(trial_mu);
                if (trial_dev <= dev) {
                    const double change = (dev - trial_dev) / std::max(trial_dev, 1e-300);
                    theta = trial;
                    mu = std::move(trial_mu);
                    dev = trial_dev;
                    lambda = std::max(lambda * 0.1, 1e-12);
                    accepted = true;
                    if (change < options.relative_tolerance) {
                        FitResult r = make_result(pr, theta, dev, it, true);
                        attach_uncertainties(pr, theta, r);
                        return r;
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if (!accepted) {
            // No descent direction left: the deviance is at its minimum to
            // working precision.
            FitResult r = make_result(pr, theta, dev, it, true);
            attach_uncertainties(pr, theta, r);
            return r;
        }
    }
    throw FitError("fit did not converge in " + std::to_string(options.max_iterations) + " iterations",
                   make_result(pr, theta, dev, options.max_iterations, false));
}

IrfFit irf_from_trace(const Histogram& trace) {
    trace.validate();
    require(trace.counts.size() >= 8, "IRF trace is too short", ErrorKind::insufficient_data);
    const auto smooth = smoothed(trace.counts, 4);
    const double top = *std::max_element(smooth.begin(), smooth.end());
    std::vector<double> sorted = smooth;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<long>(sorted.size() / 2), sorted.end());
    const double floor_level = sorted[sorted.size() / 2];
    const double height = top - floor_level;
    require(height > 0.0, "IRF trace has no peak", ErrorKind::ambiguous_irf);

    // Distinct maxima above 20% of the peak separated by a dip below half of
    // the smaller one count as separate modes.
    std::vector<std::size_t> maxima;
    for (std::size_t i = 1; i + 1 < smooth.size(); ++i)
        if (smooth[i] - floor_level > 0.2 * height && smooth[i] >= smooth[i - 1] && smooth[i] > smooth[i + 1])
            maxima.push_back(i);
    std::size_t modes = maxima.empty() ? 0 : 1;
    for (std::size_t j = 1; j < maxima.size(); ++j) {
        const std::size_t a = maxima[j - 1];
        const std::size_t b = maxima[j];
        const double dip = *std::min_element(smooth.begin() + static_cast<long>(a), smooth.begin() + static_cast<long>(b) + 1);
        const double smaller = std::min(smooth[a], smooth[b]) - floor_level;
        if (dip - floor_level < 0.5 * smaller) ++modes;
    }
    require(modes == 1, "IRF trace has " + std::to_string(modes) + " separate peaks", ErrorKind::ambiguous_irf);

    FitOptions opt;
    opt.pinned.clear();
    opt.initial.sigma = 30.0;
    const FitResult fit = fit_lifetime(trace, ModelKind::gaussian, opt);
    IrfFit out{{fit.values.sigma * fwhm_per_sigma, fit.values.t0},
               fit.errors.sigma * fwhm_per_sigma,
               fit.errors.t0,
               fit};
    return out;
}

} // namespace qdpillar::tcspc
