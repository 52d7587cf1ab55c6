#include "qdpillar/cascade.hpp"

#include "qdpillar/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <thread>

namespace qdpillar::cascade {

namespace {

constexpr std::int64_t chunk_pulses = 1 << 16;
const std::complex<double> I{0.0, 1.0};

double rate(double tau_ps) { return std::isinf(tau_ps) ? 0.0 : 1.0 / tau_ps; }

struct MasterEquation {
    double gamma_xx;
    double gamma_x;
    double gamma_deph;
    double area;
    double fwhm;
    double t_start;
    double t_end;

    // Gaussian envelope scaled so that its area over [t_start, t_end] is exactly `area`.
    double drive(double t) const {
        const double c = 4.0 * std::numbers::ln2 / (fwhm * fwhm);
        const double inside = 0.5 * (std::erf(std::sqrt(c) * t_end) - std::erf(std::sqrt(c) * t_start));
        return area * std::sqrt(c / std::numbers::pi) * std::exp(-c * t * t) / inside;
    }

    DensityMatrix rhs(double t, const DensityMatrix& rho) const {
        DensityMatrix h = DensityMatrix::Zero();
        const double half = 0.5 * drive(t);
        h(0, 2) = half;
        h(2, 0) = half;
        DensityMatrix d = -I * (h * rho - rho * h);

        // xx -> x
        d(1, 1) += gamma_xx * rho(2, 2);
        d(2, 2) -= gamma_xx * rho(2, 2);
        // x -> g
        d(0, 0) += gamma_x * rho(1, 1);
        d(1, 1) -= gamma_x * rho(1, 1);
        // coherence damping from population decay and pure dephasing of xx
        const std::array<double, 3> out{0.0, gamma_x, gamma_xx};
        const std::array<double, 3> deph{0.0, 0.0, gamma_deph};
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                if (i == j) continue;
                d(i, j) -= (0.5 * (out[i] + out[j]) + deph[i] + deph[j]) * rho(i, j);
            }
        return d;
    }
};

double max_abs(const DensityMatrix& m) { return m.cwiseAbs().maxCoeff(); }

std::uint64_t uniform_bits(std::mt19937_64& rng) { return rng() >> 11; }

double uniform(std::mt19937_64& rng) { return static_cast<double>(uniform_bits(rng)) * 0x1.0p-53; }

double exponential(std::mt19937_64& rng, double tau) { return -tau * std::log1p(-uniform(rng)); }

std::mt19937_64 chunk_rng(std::uint64_t seed, std::int64_t chunk) {
    const auto c = static_cast<std::uint64_t>(chunk);
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(c >> 32), 0x9e3779b9u};
    return std::mt19937_64(seq);
}

} // namespace

void CascadeParams::validate() const {
    require(tau_xx_ps > 0.0, "cascade.tau_xx must be > 0");
    require(tau_x_ps > 0.0, "cascade.tau_x must be > 0");
    require(dephasing_per_ns >= 0.0, "cascade.dephasing must be >= 0");
    require(binding_energy_mev > 0.0, "cascade.binding_energy must be > 0");
    require(pulse_fwhm_ps > 0.0, "cascade.pulse_fwhm must be > 0");
    require(pulse_area >= 0.0, "cascade.pulse_area must be >= 0");
    require(rep_period_ns > 0.0, "cascade.rep_period must be > 0");
}

bool CascadeParams::short_period_warning() const { return rep_period_ns * 1000.0 < 10.0 * tau_x_ps; }

const char* to_string(Channel channel) { return channel == Channel::x ? "x" : "xx"; }

double binding_energy_mev(double exciton_nm, double biexciton_nm) {
    require(exciton_nm > 0.0 && biexciton_nm > 0.0, "emission wavelengths must be > 0");
    return 1000.0 * (hc_ev_nm / exciton_nm - hc_ev_nm / biexciton_nm);
}

double effective_two_photon_rabi(double single_photon_rabi_per_ps, double binding_energy_mev) {
    require(single_photon_rabi_per_ps > 0.0, "Rabi frequency must be > 0");
    require(binding_energy_mev > 0.0, "binding energy must be > 0 (virtual-state detuning vanishes)");
    const double detuning = 0.5 * binding_energy_mev / hbar_mev_ps;
    return single_photon_rabi_per_ps * single_photon_rabi_per_ps / (2.0 * detuning);
}

PulseResult evolve_pulse(const CascadeParams& params, double pulse_area, double tolerance,
                         const StepObserver& observer) {
    params.validate();
    require(pulse_area >= 0.0, "pulse area must be >= 0");
    const double t_start = -3.0 * params.pulse_fwhm_ps;
    const double t_end = params.pulse_fwhm_ps;
    const MasterEquation eq{rate(params.tau_xx_ps), rate(params.tau_x_ps), params.dephasing_per_ns / 1000.0,
                            pulse_area, params.pulse_fwhm_ps, t_start, t_end};

    // Dormand-Prince 5(4).
    static constexpr double a21 = 1.0 / 5, a31 = 3.0 / 40, a32 = 9.0 / 40, a41 = 44.0 / 45,
                            a42 = -56.0 / 15, a43 = 32.0 / 9, a51 = 19372.0 / 6561, a52 = -25360.0 / 2187,
                            a53 = 64448.0 / 6561, a54 = -212.0 / 729, a61 = 9017.0 / 3168, a62 = -355.0 / 33,
                            a63 = 46732.0 / 5247, a64 = 49.0 / 176, a65 = -5103.0 / 18656, b1 = 35.0 / 384,
                            b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84,
                            e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                            e6 = 22.0 / 525, e7 = -1.0 / 40;

    const double h_min = 1e-12 * (t_end - t_start);
    DensityMatrix rho = DensityMatrix::Zero();
    rho(0, 0) = 1.0;
    double t = t_start;
    double h = params.pulse_fwhm_ps / 50.0;
    int accepted = 0;
    if (observer) observer(t, rho);
    DensityMatrix k1 = eq.rhs(t, rho);
    while (t < t_end) {
        h = std::min(h, t_end - t);
        const DensityMatrix k2 = eq.rhs(t + h / 5, rho + h * a21 * k1);
        const DensityMatrix k3 = eq.rhs(t + 3 * h / 10, rho + h * (a31 * k1 + a32 * k2));
        const DensityMatrix k4 = eq.rhs(t + 4 * h / 5, rho + h * (a41 * k1 + a42 * k2 + a43 * k3));
        const DensityMatrix k5 = eq.rhs(t + 8 * h / 9, rho + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
        const DensityMatrix k6 =
            eq.rhs(t + h, rho + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
        const DensityMatrix next = rho + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
        const DensityMatrix k7 = eq.rhs(t + h, next);
        const double err = h * max_abs(e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
        if (!std::isfinite(err))
            throw Error(ErrorKind::numerical_failure, "non-finite error estimate at t = " + std::to_string(t));
        if (err <= tolerance) {
            t += h;
            rho = next;
            k1 = k7;
            ++accepted;
            if (observer) observer(t, rho);
        }
        const double factor = err > 0.0 ? 0.9 * std::pow(tolerance / err, 0.2) : 5.0;
        h *= std::clamp(factor, 0.2, 5.0);
        if (h < h_min && t < t_end)
            throw Error(ErrorKind::numerical_failure,
                        "step size underflow at t = " + std::to_string(t) + " ps (h = " + std::to_string(h) +
                            ", error " + std::to_string(err) + ")");
    }
    return {std::real(rho(2, 2)), rho, accepted};
}

std::vector<double> simulate_pulse(const CascadeParams& params, std::span<const double> areas) {
    std::vector<double> out;
    out.reserve(areas.size());
    for (double area : areas) {
        require(area >= 0.0, "pulse areas must be non-negative");
        out.push_back(evolve_pulse(params, area).biexciton_population);
    }
    return out;
}

double EmissionDensities::biexciton(double t) const {
    return t < 0.0 ? 0.0 : std::exp(-t / tau_xx_ps) / tau_xx_ps;
}

double EmissionDensities::exciton(double t) const {
    if (t < 0.0) return 0.0;
    const double diff = tau_x_ps - tau_xx_ps;
    if (std::abs(diff) < 1e-9 * tau_x_ps) {
        const double tau = 0.5 * (tau_x_ps + tau_xx_ps);
        return t * std::exp(-t / tau) / (tau * tau);
    }
    const double x = t * diff / (tau_x_ps * tau_xx_ps);
    if (std::abs(x) > 1.0) return (std::exp(-t / tau_x_ps) - std::exp(-t / tau_xx_ps)) / diff;
    // exp(-t/tx) - exp(-t/txx) written to avoid cancellation for close lifetimes
    return std::exp(-t / tau_xx_ps) * std::expm1(x) / diff;
}

double EmissionDensities::exciton_peak_ps() const {
    const double diff = tau_x_ps - tau_xx_ps;
    if (std::abs(diff) < 1e-9 * tau_x_ps) return 0.5 * (tau_x_ps + tau_xx_ps);
    return tau_xx_ps * tau_x_ps * std::log(tau_x_ps / tau_xx_ps) / diff;
}

EmissionDensities emission_time_densities(const CascadeParams& params) {
    require(params.tau_xx_ps > 0.0 && params.tau_x_ps > 0.0, "lifetimes must be > 0");
    return {params.tau_xx_ps, params.tau_x_ps};
}

std::vector<PhotonRecord> trajectory_ensemble(const CascadeParams& params, std::int64_t n_pulses,
                                              std::uint64_t seed, const EnsembleOptions& options) {
    params.validate();
    require(n_pulses >= 1, "n_pulses must be >= 1");
    require(options.reexcitation_probability >= 0.0 && options.reexcitation_probability <= 1.0,
            "re-excitation probability must lie in [0,1]");
    const double p_excite = params.pulse_area == 0.0 ? 0.0 : evolve_pulse(params, params.pulse_area).biexciton_population;

    const std::int64_t chunks = (n_pulses + chunk_pulses - 1) / chunk_pulses;
    std::vector<std::vector<PhotonRecord>> parts(static_cast<std::size_t>(chunks));

    auto run_chunk = [&](std::int64_t c) {
        auto rng = chunk_rng(seed, c);
        auto& out = parts[static_cast<std::size_t>(c)];
        const std::int64_t first = c * chunk_pulses;
        const std::int64_t last = std::min(n_pulses, first + chunk_pulses);
        out.reserve(static_cast<std::size_t>(2 * (last - first)));
        for (std::int64_t p = first; p < last; ++p) {
            if (!(uniform(rng) < p_excite)) continue;
            const double t_xx = exponential(rng, params.tau_xx_ps);
            const double t_x = t_xx + exponential(rng, params.tau_x_ps);
            out.push_back({p, Channel::xx, t_xx});
            out.push_back({p, Channel::x, t_x});
            if (options.reexcitation_probability > 0.0 && uniform(rng) < options.reexcitation_probability) {
                const double start = params.pulse_fwhm_ps * uniform(rng);
                const double t2_xx = start + exponential(rng, params.tau_xx_ps);
                out.push_back({p, Channel::xx, t2_xx});
                out.push_back({p, Channel::x, t2_xx + exponential(rng, params.tau_x_ps)});
            }
        }
    };

    const unsigned jobs = std::max(1u, std::min<unsigned>(options.jobs, static_cast<unsigned>(chunks)));
    if (jobs == 1) {
        for (std::int64_t c = 0; c < chunks; ++c) run_chunk(c);
    } else {
        std::vector<std::jthread> workers;
        for (unsigned w = 0; w < jobs; ++w)
            workers.emplace_back([&, w] {
                for (std::int64_t c = w; c < chunks; c += jobs) run_chunk(c);
            });
    }

    std::vector<PhotonRecord> records;
    std::size_t total = 0;
    for (const auto& part : parts) total += part.size();
    records.reserve(total);
    for (auto& part : parts) records.insert(records.end(), part.begin(), part.end());
    return records;
}

G2Estimate g2_pulsed(std::span<const PhotonRecord> records, Channel channel, std::int64_t n_pulses,
                     int side_peaks) {
    require(side_peaks >= 1, "need at least one side peak");
    if (n_pulses < 10000)
        throw Error(ErrorKind::insufficient_data, "g2 estimate needs records spanning >= 1e4 pulses");
    std::vector<std::uint16_t> counts(static_cast<std::size_t>(n_pulses), 0);
    std::int64_t photons = 0;
    for (const auto& r : records) {
        if (r.channel != channel) continue;
        require(r.pulse_index >= 0 && r.pulse_index < n_pulses, "record pulse index outside the span");
        ++counts[static_cast<std::size_t>(r.pulse_index)];
        ++photons;
    }
    if (photons == 0)
        throw Error(ErrorKind::insufficient_data, std::string("no photons in channel ") + to_string(channel));

    const auto n = static_cast<std::size_t>(n_pulses);
    double zero = 0.0;
    for (auto c : counts) zero += static_cast<double>(c) * (static_cast<double>(c) - 1.0);

    G2Estimate out{};
    out.side_peaks.resize(static_cast<std::size_t>(side_peaks));
    double side_sum = 0.0;
    for (int k = 1; k <= side_peaks; ++k) {
        const auto kk = static_cast<std::size_t>(k);
        double s = 0.0;
        for (std::size_t i = 0; i + kk < n; ++i) s += static_cast<double>(counts[i]) * counts[i + kk];
        // Both delay signs, rescaled to the full span.
        s *= 2.0 * static_cast<double>(n) / static_cast<double>(n - kk);
        out.side_peaks[kk - 1] = s;
        side_sum += s;
    }
    const double mean_side = side_sum / side_peaks;
    if (mean_side <= 0.0)
        throw Error(ErrorKind::insufficient_data, "no side-peak coincidences; too few photons");
    out.zero_delay_coincidences = zero;
    out.mean_side_coincidences = mean_side;
    out.g2_zero = zero / mean_side;
    const double rel_side = 1.0 / (side_sum);
    out.error = zero > 0.0 ? out.g2_zero * std::sqrt(1.0 / zero + rel_side) : 1.0 / mean_side;
    return out;
}

double hom_visibility_analytic(const CascadeParams& params) {
    require(params.tau_xx_ps > 0.0 && params.tau_x_ps > 0.0, "lifetimes must be > 0");
    require(params.dephasing_per_ns >= 0.0, "dephasing must be >= 0");
    const double gx = rate(params.tau_x_ps);
    const double gxx = rate(params.tau_xx_ps);
    const double gd = params.dephasing_per_ns / 1000.0;
    return gx / (gx + gxx + 2.0 * gd);
}

HomVisibility hom_visibility_from_records(const CascadeParams& params, std::span<const PhotonRecord> records) {
    // Jitter of each single-cascade pulse: delay between its xx and x photons.
    std::vector<double> jitter;
    std::size_t i = 0;
    while (i < records.size()) {
        std::size_t j = i;
        int n_xx = 0, n_x = 0;
        double t_xx = 0.0, t_x = 0.0;
        while (j < records.size() && records[j].pulse_index == records[i].pulse_index) {
            if (records[j].channel == Channel::xx) {
                ++n_xx;
                t_xx = records[j].emission_time_ps;
            } else {
                ++n_x;
                t_x = records[j].emission_time_ps;
            }
            ++j;
        }
        if (n_xx == 1 && n_x == 1) jitter.push_back(t_x - t_xx);
        i = j;
    }
    if (jitter.size() < 2) throw Error(ErrorKind::insufficient_data, "too few cascades for a HOM estimate");

    const double decay = rate(params.tau_xx_ps) + 2.0 * params.dephasing_per_ns / 1000.0;
    double sum = 0.0, sum2 = 0.0;
    std::int64_t pairs = 0;
    for (std::size_t k = 0; k + 1 < jitter.size(); k += 2) {
        const double overlap = std::exp(-decay * std::abs(jitter[k] - jitter[k + 1]));
        sum += overlap;
        sum2 += overlap * overlap;
        ++pairs;
    }
    const double mean = sum / static_cast<double>(pairs);
    const double var = std::max(0.0, sum2 / static_cast<double>(pairs) - mean * mean);
    return {hom_visibility_analytic(params), mean, std::sqrt(var / static_cast<double>(pairs)), pairs};
}

HomVisibility hom_visibility_cascade(const CascadeParams& params, std::int64_t n_pulses, std::uint64_t seed,
                                     unsigned jobs) {
    const auto records = trajectory_ensemble(params, n_pulses, seed, {0.0, jobs});
    return hom_visibility_from_records(params, records);
}

HomConversion visibility_from_g2hom(double g2_hom, double g2_zero) {
    require(g2_hom >= 0.0 && g2_hom <= 1.0, "g2_hom must lie in [0,1]");
    require(g2_zero >= 0.0 && g2_zero < 1.0, "g2_zero must lie in [0,1)");
    return {1.0 - 2.0 * g2_hom, (0.5 * (1.0 + g2_zero) - g2_hom) / (0.5 * (1.0 - g2_zero))};
}

} // namespace qdpillar::cascade
