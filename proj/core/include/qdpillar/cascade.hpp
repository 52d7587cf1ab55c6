#pragma once

// Biexciton-exciton cascade under pulsed two-photon resonant excitation.
//
// Times are in ps, rates in 1/ps unless a field says otherwise. The drive is
// modelled as an effective two-level g <-> xx coupling (the exciton is
// adiabatically eliminated during the pulse); radiative decay xx -> x -> g is
// kept in the full three-level density matrix.

#include <complex>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace qdpillar::cascade {

inline constexpr double hbar_mev_ps = 0.6582119569;
inline constexpr double hc_ev_nm = 1239.84;

struct CascadeParams {
    double tau_xx_ps = 218.0;
    double tau_x_ps = 281.0;
    double dephasing_per_ns = 0.0;
    double binding_energy_mev = 3.61;
    double pulse_fwhm_ps = 10.0;
    double pulse_area = 3.141592653589793;
    double rep_period_ns = 12.5;

    void validate() const;
    /// True when the repetition period is shorter than ten exciton lifetimes.
    bool short_period_warning() const;

    friend bool operator==(const CascadeParams&, const CascadeParams&) = default;
};

enum class Channel : std::uint8_t { x, xx };

const char* to_string(Channel channel);

struct PhotonRecord {
    std::int64_t pulse_index;
    Channel channel;
    double emission_time_ps;

    friend bool operator==(const PhotonRecord&, const PhotonRecord&) = default;
};

/// Biexciton binding energy from the two emission lines, in meV.
double binding_energy_mev(double exciton_nm, double biexciton_nm);

/// Effective g <-> xx Rabi frequency Omega^2 / (2 Delta), Delta = (E_B/2)/hbar.
double effective_two_photon_rabi(double single_photon_rabi_per_ps, double binding_energy_mev);

using DensityMatrix = Eigen::Matrix3cd; // basis order g, x, xx
using StepObserver = std::function<void(double t_ps, const DensityMatrix& rho)>;

struct PulseResult {
    double biexciton_population;
    DensityMatrix final_state;
    int accepted_steps;
};

/// Integrates the driven, decaying three-level master equation through one
/// Gaussian pulse and returns the state one FWHM after the pulse centre, when
/// the drive has ended. Integration starts 3 FWHM before the centre and the
/// envelope carries exactly `pulse_area` over that window. The observer, if
/// set, sees every accepted step.
PulseResult evolve_pulse(const CascadeParams& params, double pulse_area, double tolerance = 1e-10,
                         const StepObserver& observer = {});

/// Biexciton population after the pulse for each area in the grid.
std::vector<double> simulate_pulse(const CascadeParams& params, std::span<const double> areas);

/// Emission-time densities of the xx and x photons after an instantaneous
/// excitation at t = 0.
struct EmissionDensities {
    double tau_xx_ps;
    double tau_x_ps;

    double biexciton(double t_ps) const;
    double exciton(double t_ps) const;
    /// Time of the exciton-density maximum.
    double exciton_peak_ps() const;
    double exciton_mean_ps() const { return tau_xx_ps + tau_x_ps; }
};

EmissionDensities emission_time_densities(const CascadeParams& params);

struct EnsembleOptions {
    /// Probability that an excited pulse emits a second cascade.
    double reexcitation_probability = 0.0;
    unsigned jobs = 1;
};

/// Pulses are processed in fixed chunks, each with its own sub-seed derived
/// from (seed, chunk index), so the output does not depend on `jobs`.
std::vector<PhotonRecord> trajectory_ensemble(const CascadeParams& params, std::int64_t n_pulses,
                                              std::uint64_t seed, const EnsembleOptions& options = {});

struct G2Estimate {
    double g2_zero;
    double error;
    double zero_delay_coincidences;
    double mean_side_coincidences;
    std::vector<double> side_peaks; // delays 1..K
};

/// Pulsed autocorrelation from per-pulse photon numbers. `n_pulses` is the
/// number of pulses the records span.
G2Estimate g2_pulsed(std::span<const PhotonRecord> records, Channel channel, std::int64_t n_pulses,
                     int side_peaks = 10);

struct HomVisibility {
    double analytic;
    double trajectory;
    double standard_error;
    std::int64_t pairs;
};

/// Analytic gamma_x / (gamma_x + gamma_xx + 2 gamma_deph) for the biexciton
/// photon.
double hom_visibility_analytic(const CascadeParams& params);

/// Analytic value plus the pairwise wave-packet overlap estimate from a
/// sampled ensemble.
HomVisibility hom_visibility_cascade(const CascadeParams& params, std::int64_t n_pulses, std::uint64_t seed,
                                     unsigned jobs = 1);

/// Same estimator applied to an existing record list.
HomVisibility hom_visibility_from_records(const CascadeParams& params, std::span<const PhotonRecord> records);

struct HomConversion {
    double raw;
    double corrected;
};

/// 1 - 2 g2_hom, and the version corrected for the multiphoton part g2_zero.
HomConversion visibility_from_g2hom(double g2_hom, double g2_zero);

} // namespace qdpillar::cascade
