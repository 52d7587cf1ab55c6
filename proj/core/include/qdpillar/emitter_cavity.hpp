#pragma once

// Emitter figures of merit for a quantum dot inside a micropillar: Purcell
// enhancement into the fundamental mode, the rate into every other channel,
// beta factor and the internal (top-collected) efficiency.

#include <span>
#include <vector>

#include "qdpillar/layered_optics.hpp"
#include "qdpillar/pillar_modes.hpp"

namespace qdpillar::emitter {

struct EmitterSpec {
    double exciton_nm = 906.1;
    double biexciton_nm = 908.5;
    double splitting_nm = 2.4;
    double bulk_lifetime_xx_ps = 410.0;
    double bulk_lifetime_x_ps = 700.0;

    void validate() const;

    friend bool operator==(const EmitterSpec&, const EmitterSpec&) = default;
};

/// 3/(4 pi^2) (lambda/n)^3 Q / V_eff with lambda in um and V_eff in um^3.
double purcell_peak(double quality_factor, double mode_volume_um3, double wavelength_nm, double index);

/// (pi w0^2 / 2) L_eff in um^3.
double mode_volume_um3(double mode_field_radius_um, double effective_length_nm);

/// Lorentzian F_p / (1 + (2 (lambda - lambda_c)/linewidth)^2).
double cavity_purcell(double purcell, double center_nm, double linewidth_nm, double wavelength_nm);

std::vector<double> cavity_purcell_spectrum(double purcell, double center_nm, double linewidth_nm,
                                            std::span<const double> wavelengths_nm);

/// Surrogate for emission into everything except the fundamental mode:
/// a constant continuum share plus, for every higher-order LP_0m mode, its
/// normalised on-axis intensity weighted by (cladding fraction)^exponent.
/// The weight scale is fixed by requiring `anchor_value` at the anchor
/// diameter and wavelength.
struct LeakyModel {
    double continuum = 0.12;
    double cladding_exponent = 2.0;
    double anchor_diameter_um = 2.0;
    double anchor_wavelength_nm = 910.0;
    double anchor_value = 0.5;
    double upper_bound = 2.0;

    void validate() const;

    friend bool operator==(const LeakyModel&, const LeakyModel&) = default;
};

/// Unscaled higher-order-mode sum for a geometry (1/um^2).
double higher_order_overlap(const modes::PillarGeometry& geometry, double wavelength_nm, double exponent);

/// Weight scale so that the anchor geometry reproduces the anchor value.
/// Results are cached per (model, indices).
double leaky_scale(const LeakyModel& model, double core_index, double cladding_index);

double leaky_rate(const modes::PillarGeometry& geometry, double wavelength_nm, const LeakyModel& model = {});

double beta_factor(double f_cav, double f_leaky);

struct EmitterCouplingResult {
    std::vector<double> wavelengths_nm;
    std::vector<double> f_cav;
    std::vector<double> beta;
    std::vector<double> eta_int;
    double f_leaky = 0.0;
    double eta_top = 0.0;
    double mode_volume_um3 = 0.0;
};

EmitterCouplingResult beta_and_internal_efficiency(std::span<const double> wavelengths_nm,
                                                   std::span<const double> f_cav, double f_leaky,
                                                   double eta_top);

/// tau_bulk / F_total.
double lifetime_prediction(double bulk_lifetime_ps, double total_rate);

/// Everything computed for one pillar device at the planar resonance.
struct DeviceCoupling {
    optics::PlanarCavityResult cavity;
    modes::GuidedMode fundamental;
    double pillar_resonance_nm;
    double effective_length_nm;
    double mode_volume_um3;
    double far_field_na;
    double purcell;
    double f_leaky;
    double beta;
    double eta_int;
};

struct DeviceOptions {
    double window_half_width_nm = 30.0;
    LeakyModel leaky;
};

/// Pillar-dependent half of couple_device for an already solved planar cavity.
DeviceCoupling couple_pillar(const optics::PlanarCavityResult& cavity, double effective_length_nm,
                             const modes::PillarGeometry& geometry, const LeakyModel& leaky = {});

DeviceCoupling couple_device(const optics::LayerStack& stack, double design_wavelength_nm,
                             const modes::PillarGeometry& geometry, const DeviceOptions& options = {});

/// Spectrum of F_cav, beta and eta_int around the resonance of a coupled device.
EmitterCouplingResult coupling_spectrum(const DeviceCoupling& device, std::span<const double> wavelengths_nm);

inline constexpr double off_cavity_detunings_nm[] = {15.0, 22.6};

/// Total emission rate (bulk units) of an emitter detuned from the cavity:
/// Lorentzian tail plus leaky rate, averaged over the detunings above.
double off_cavity_total_rate(const DeviceCoupling& device, const modes::PillarGeometry& geometry,
                             const LeakyModel& model = {});

struct RateComparison {
    double on_cavity;
    double off_cavity;
    double ratio;
};

RateComparison on_off_rates(const DeviceCoupling& device, const modes::PillarGeometry& geometry,
                            const LeakyModel& model = {});

} // namespace qdpillar::emitter
