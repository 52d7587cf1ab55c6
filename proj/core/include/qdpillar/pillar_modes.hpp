#pragma once

// Scalar (LP) guided modes of a cylindrical micropillar treated as a
// step-index waveguide.

#include <vector>

namespace qdpillar::modes {

struct PillarGeometry {
    double diameter_um = 2.02;
    double core_index = 3.53;
    double cladding_index = 1.0;

    double radius_um() const { return 0.5 * diameter_um; }
    void validate() const;
};

struct GuidedMode {
    int l = 0;     // azimuthal order
    int m = 1;     // radial order, 1-based
    double n_eff = 0.0;
    double u = 0.0; // core transverse parameter
    double w = 0.0; // cladding decay parameter
    double mode_field_radius_um = 0.0;
    bool guided = false;

    bool is_fundamental() const { return l == 0 && m == 1; }
};

double v_number(const PillarGeometry& geometry, double wavelength_nm);

/// Continuous form of the LP dispersion relation,
/// u J_{l-1}(u) + w J_l(u) K_{l-1}(w) / K_l(w), zero at a guided mode.
double characteristic(const PillarGeometry& geometry, double wavelength_nm, int l, double n_eff);

/// Fundamental-mode 1/e field radius from the Marcuse fit.
double marcuse_radius_um(double v, double core_radius_um);

/// Every guided LP_lm with l <= l_max, sorted by decreasing n_eff.
/// Bracketing uses a 1e-4 grid in n_eff; bisection runs to machine precision.
std::vector<GuidedMode> solve_guided_modes(const PillarGeometry& geometry, double wavelength_nm, int l_max);

/// Upper bound on l worth searching for this geometry.
int max_azimuthal_order(const PillarGeometry& geometry, double wavelength_nm);

/// Planar resonance scaled by n_eff / n_core.
double pillar_resonance_shift(double planar_resonance_nm, const GuidedMode& mode,
                              const PillarGeometry& geometry);

/// Gaussian-beam divergence of the mode, sin(lambda / (pi w0)).
double far_field_na(const GuidedMode& mode, double wavelength_nm);

struct ModeIntensity {
    double on_axis_um2;        // |psi(0)|^2 / integral |psi|^2 dA, 1/um^2
    double cladding_fraction;  // share of mode power outside the core
};

/// Normalised on-axis intensity and cladding power share. Only l = 0 modes
/// have a non-zero on-axis field.
ModeIntensity mode_intensity(const GuidedMode& mode, const PillarGeometry& geometry);

/// Count of guided modes per polarisation (LP_0m once, LP_lm with l > 0 twice).
int polarisation_mode_count(const std::vector<GuidedMode>& modes);

} // namespace qdpillar::modes
