#pragma once

// Normal-incidence transfer-matrix optics for planar multilayer stacks.
//
// Wavelengths and thicknesses are in nm throughout. The stack is described
// from the incident (top) medium downwards; "top" incidence means light
// arriving from the incident medium, "bottom" from the exit medium
// (substrate).

#include <complex>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace qdpillar::optics {

using complex = std::complex<double>;

struct IndexSample {
    double wavelength_nm;
    complex index;
};

/// A passive optical medium. An optional table of (wavelength, index) samples
/// overrides the constant index with linear interpolation; outside the table
/// the nearest sample is used.
struct OpticalMaterial {
    std::string name;
    complex refractive_index{1.0, 0.0};
    std::vector<IndexSample> table;

    complex index_at(double wavelength_nm) const;
    void validate() const;
};

/// Literature-typical values near 910 nm.
OpticalMaterial gaas();
OpticalMaterial alas();
OpticalMaterial sio2();
OpticalMaterial air();

struct Layer {
    OpticalMaterial material;
    double thickness_nm;
};

struct LayerStack {
    OpticalMaterial incident_medium = air();
    std::vector<Layer> layers;
    OpticalMaterial exit_medium = gaas();
    /// Index into `layers` of the cavity spacer, if the stack is a cavity.
    std::optional<std::size_t> spacer_index;
    /// Emitter depth inside the spacer as a fraction of its thickness.
    double source_fraction = 0.5;

    void validate() const;
    double total_thickness() const;
};

enum class Side { top, bottom };

struct StackResponse {
    complex r;
    complex t;
    double R;
    double T;
};

struct QuarterWaveDesign {
    double design_wavelength_nm = 910.0;
    int top_pairs = 5;
    int bottom_pairs = 18;
    OpticalMaterial high = gaas();
    OpticalMaterial low = alas();
    OpticalMaterial spacer = gaas();
    OpticalMaterial substrate = gaas();
    OpticalMaterial incident = air();
    /// Spacer optical thickness in units of the design wavelength.
    double spacer_optical_length = 1.0;
};

/// incident | (H L)^top | spacer | (L H)^bottom | substrate
LayerStack build_quarter_wave_cavity(const QuarterWaveDesign& design);

/// Physical thickness of a quarter-wave layer at `wavelength_nm`.
double quarter_wave_thickness(const OpticalMaterial& material, double wavelength_nm);

StackResponse stack_response(const LayerStack& stack, double wavelength_nm,
                             Side incidence = Side::top);

/// Same as stack_response but at a complex vacuum wavenumber (1/nm), used for
/// locating the cavity pole. Dispersive materials are sampled at Re(λ).
StackResponse stack_response_k(const OpticalMaterial& incident,
                               const std::vector<Layer>& layers,
                               const OpticalMaterial& exit, complex k0);

/// Mirror reflection seen from the emitter plane inside the spacer.
struct MirrorPair {
    complex r_top;
    complex r_bottom;
    complex t_top;
    complex t_bottom;
    double T_top;
    double T_bottom;
};

MirrorPair mirrors_at_source(const LayerStack& stack, complex k0);

/// Power escaping through the incident medium from a sheet source at the
/// spacer emitter plane, relative to the same source in bulk spacer material.
double top_emission(const LayerStack& stack, double wavelength_nm);

struct PlanarCavityResult {
    double resonance_nm;
    double quality_factor;
    double linewidth_nm;
    double top_reflectance;
    double bottom_reflectance;
    double top_escape_fraction;
    /// Q from the complex pole of the cavity round trip, Re(k)/(2|Im k|).
    double pole_quality_factor;
};

PlanarCavityResult find_resonance(const LayerStack& stack, double lambda_min_nm,
                                  double lambda_max_nm);

struct FieldProfile {
    std::vector<double> z_nm;
    std::vector<double> intensity;          // |E|^2, unit incident amplitude
    std::vector<double> weighted_intensity; // Re(eps)|E|^2
    std::vector<std::size_t> layer_of_sample;
    double spacer_peak_z_nm = 0.0;
    double effective_length_nm = 0.0;
};

/// Field for a unit plane wave incident from the top, sampled across every
/// finite layer. Interface depths appear twice (end of one layer, start of the
/// next) so continuity can be checked.
FieldProfile field_profile(const LayerStack& stack, double wavelength_nm,
                           double step_nm = 0.5);

/// Reflectance spectrum on a uniform grid, as (wavelength, R) pairs.
std::vector<std::pair<double, double>> reflectance_spectrum(const LayerStack& stack,
                                                            double lambda_min_nm,
                                                            double lambda_max_nm,
                                                            std::size_t points,
                                                            Side incidence = Side::top);

std::vector<std::pair<double, double>> emission_spectrum(const LayerStack& stack,
                                                         double lambda_min_nm,
                                                         double lambda_max_nm,
                                                         std::size_t points);

} // namespace qdpillar::optics
