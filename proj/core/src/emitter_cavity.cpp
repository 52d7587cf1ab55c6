#include "qdpillar/emitter_cavity.hpp"

#include "qdpillar/error.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <tuple>

namespace qdpillar::emitter {

void EmitterSpec::validate() const {
    require(exciton_nm > 0.0 && biexciton_nm > 0.0, "emitter wavelengths must be > 0");
    require(biexciton_nm > exciton_nm, "biexciton line must lie red of the exciton line");
    require(std::abs((biexciton_nm - exciton_nm) - splitting_nm) < 1e-6,
            "biexciton-exciton spacing must equal the configured splitting");
    require(bulk_lifetime_xx_ps > 0.0 && bulk_lifetime_x_ps > 0.0, "bulk lifetimes must be > 0");
}

double purcell_peak(double q, double v_eff_um3, double wavelength_nm, double index) {
    require(q > 0.0 && v_eff_um3 > 0.0 && wavelength_nm > 0.0 && index > 0.0,
            "Purcell factor needs positive Q, volume, wavelength and index");
    const double lambda_n = wavelength_nm * 1e-3 / index;
    return 3.0 / (4.0 * std::numbers::pi * std::numbers::pi) * lambda_n * lambda_n * lambda_n * q / v_eff_um3;
}

double mode_volume_um3(double w0_um, double effective_length_nm) {
    require(w0_um > 0.0 && effective_length_nm > 0.0, "mode radius and length must be > 0");
    return 0.5 * std::numbers::pi * w0_um * w0_um * effective_length_nm * 1e-3;
}

double cavity_purcell(double purcell, double center_nm, double linewidth_nm, double wavelength_nm) {
    require(linewidth_nm > 0.0, "cavity linewidth must be > 0");
    const double x = 2.0 * (wavelength_nm - center_nm) / linewidth_nm;
    return purcell / (1.0 + x * x);
}

std::vector<double> cavity_purcell_spectrum(double purcell, double center_nm, double linewidth_nm,
                                            std::span<const double> wavelengths_nm) {
    std::vector<double> out;
    out.reserve(wavelengths_nm.size());
    for (double l : wavelengths_nm) out.push_back(cavity_purcell(purcell, center_nm, linewidth_nm, l));
    return out;
}

void LeakyModel::validate() const {
    require(continuum > 0.0, "leaky continuum must be > 0");
    require(cladding_exponent >= 0.0, "cladding exponent must be >= 0");
    require(anchor_diameter_um > 0.0 && anchor_wavelength_nm > 0.0, "leaky anchor must be positive");
    require(anchor_value > continuum, "leaky anchor value must exceed the continuum share");
    require(upper_bound >= anchor_value, "leaky upper bound must be >= anchor value");
}

double higher_order_overlap(const modes::PillarGeometry& g, double wavelength_nm, double exponent) {
    double sum = 0.0;
    for (const auto& m : modes::solve_guided_modes(g, wavelength_nm, 0)) {
        if (m.is_fundamental()) continue;
        const auto mi = modes::mode_intensity(m, g);
        sum += mi.on_axis_um2 * std::pow(mi.cladding_fraction, exponent);
    }
    return sum;
}

double leaky_scale(const LeakyModel& model, double core_index, double cladding_index) {
    model.validate();
    using Key = std::tuple<double, double, double, double, double, double, double>;
    static std::mutex mutex;
    static std::map<Key, double> cache;
    const Key key{model.continuum,          model.cladding_exponent, model.anchor_diameter_um,
                  model.anchor_wavelength_nm, model.anchor_value,     core_index,
                  cladding_index};
    {
        std::lock_guard lock(mutex);
        if (auto it = cache.find(key); it != cache.end()) return it->second;
    }
    const modes::PillarGeometry anchor{model.anchor_diameter_um, core_index, cladding_index};
    const double s = higher_order_overlap(anchor, model.anchor_wavelength_nm, model.cladding_exponent);
    require(s > 0.0, "leaky anchor geometry supports no higher-order mode");
    const double scale = (model.anchor_value - model.continuum) / s;
    std::lock_guard lock(mutex);
    cache.emplace(key, scale);
    return scale;
}

double leaky_rate(const modes::PillarGeometry& g, double wavelength_nm, const LeakyModel& model) {
    g.validate();
    const double scale = leaky_scale(model, g.core_index, g.cladding_index);
    const double s = higher_order_overlap(g, wavelength_nm, model.cladding_exponent);
    return std::min(model.continuum + scale * s, model.upper_bound);
}

double beta_factor(double f_cav, double f_leaky) {
    require(f_cav >= 0.0 && f_leaky >= 0.0 && std::isfinite(f_cav) && std::isfinite(f_leaky),
            "rates must be finite and >= 0");
    const double total = f_cav + f_leaky;
    return total > 0.0 ? f_cav / total : 0.0;
}

EmitterCouplingResult beta_and_internal_efficiency(std::span<const double> wavelengths_nm,
                                                   std::span<const double> f_cav, double f_leaky,
                                                   double eta_top) {
    require(wavelengths_nm.size() == f_cav.size(), "wavelength and F_cav grids differ in length");
    require(eta_top >= 0.0 && eta_top <= 1.0, "eta_top must lie in [0, 1]");
    EmitterCouplingResult r;
    r.wavelengths_nm.assign(wavelengths_nm.begin(), wavelengths_nm.end());
    r.f_cav.assign(f_cav.begin(), f_cav.end());
    r.f_leaky = f_leaky;
    r.eta_top = eta_top;
    for (double f : f_cav) {
        const double b = beta_factor(f, f_leaky);
        r.beta.push_back(b);
        r.eta_int.push_back(b * eta_top);
    }
    return r;
}

double lifetime_prediction(double bulk_lifetime_ps, double total_rate) {
    require(bulk_lifetime_ps > 0.0 && total_rate > 0.0, "lifetime and total rate must be > 0");
    return bulk_lifetime_ps / total_rate;
}

DeviceCoupling couple_pillar(const optics::PlanarCavityResult& cavity, double effective_length_nm,
                             const modes::PillarGeometry& geometry, const LeakyModel& leaky) {
    geometry.validate();
    DeviceCoupling d{};
    d.cavity = cavity;
    const double lc = cavity.resonance_nm;
    const auto guided = modes::solve_guided_modes(geometry, lc, 0);
    require(!guided.empty(), "pillar supports no guided mode", ErrorKind::numerical_failure);
    d.fundamental = guided.front();
    d.pillar_resonance_nm = modes::pillar_resonance_shift(lc, d.fundamental, geometry);
    d.effective_length_nm = effective_length_nm;
    d.mode_volume_um3 = mode_volume_um3(d.fundamental.mode_field_radius_um, effective_length_nm);
    d.far_field_na = modes::far_field_na(d.fundamental, lc);
    d.purcell = purcell_peak(cavity.quality_factor, d.mode_volume_um3, lc, geometry.core_index);
    d.f_leaky = leaky_rate(geometry, lc, leaky);
    d.beta = beta_factor(d.purcell, d.f_leaky);
    d.eta_int = d.beta * cavity.top_escape_fraction;
    return d;
}

DeviceCoupling couple_device(const optics::LayerStack& stack, double design_wavelength_nm,
                             const modes::PillarGeometry& geometry, const DeviceOptions& options) {
    require(options.window_half_width_nm > 0.0, "resonance window must be > 0");
    const auto cavity = optics::find_resonance(stack, design_wavelength_nm - options.window_half_width_nm,
                                               design_wavelength_nm + options.window_half_width_nm);
    const double length = optics::field_profile(stack, cavity.resonance_nm, 0.5).effective_length_nm;
    return couple_pillar(cavity, length, geometry, options.leaky);
}

EmitterCouplingResult coupling_spectrum(const DeviceCoupling& device, std::span<const double> wavelengths_nm) {
    const auto f = cavity_purcell_spectrum(device.purcell, device.cavity.resonance_nm, device.cavity.linewidth_nm,
                                           wavelengths_nm);
    auto r = beta_and_internal_efficiency(wavelengths_nm, f, device.f_leaky, device.cavity.top_escape_fraction);
    r.mode_volume_um3 = device.mode_volume_um3;
    return r;
}

double off_cavity_total_rate(const DeviceCoupling& device, const modes::PillarGeometry& geometry,
                             const LeakyModel& model) {
    double sum = 0.0;
    for (double detuning : off_cavity_detunings_nm) {
        const double l = device.cavity.resonance_nm + detuning;
        sum += cavity_purcell(device.purcell, device.cavity.resonance_nm, device.cavity.linewidth_nm, l) +
               leaky_rate(geometry, l, model);
    }
    return sum / static_cast<double>(std::size(off_cavity_detunings_nm));
}

RateComparison on_off_rates(const DeviceCoupling& device, const modes::PillarGeometry& geometry,
                            const LeakyModel& model) {
    RateComparison c{};
    c.on_cavity = device.purcell + device.f_leaky;
    c.off_cavity = off_cavity_total_rate(device, geometry, model);
    c.ratio = c.on_cavity / c.off_cavity;
    return c;
}

} // namespace qdpillar::emitter
