#pragma once

// Time-correlated single-photon counting: IRF-convolved decay models,
// synthetic histograms and Poisson maximum-likelihood fitting.
//
// Model values are expected counts per histogram bin, evaluated at the bin
// centre.

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "qdpillar/error.hpp"

namespace qdpillar::tcspc {

inline constexpr double fwhm_per_sigma = 2.3548200450309493; // 2 sqrt(2 ln 2)

struct Histogram {
    double bin_width_ps = 4.0;
    double t0_offset_ps = 0.0;
    std::vector<std::int64_t> counts;

    double bin_center(std::size_t i) const {
        return t0_offset_ps + (static_cast<double>(i) + 0.5) * bin_width_ps;
    }
    std::int64_t total() const;
    void validate() const;
};

struct IrfModel {
    double fwhm_ps = 78.0;
    double center_ps = 0.0;

    double sigma_ps() const { return fwhm_ps / fwhm_per_sigma; }
    void validate() const;
};

enum class ModelKind { exp_gauss, cascade_gauss, gaussian };

const char* to_string(ModelKind kind);
ModelKind model_from_string(const std::string& name);

enum class Param : std::size_t { tau, tau_fast, sigma, t0, amplitude, baseline };
inline constexpr std::size_t param_count = 6;
const char* to_string(Param p);

/// Parameter set shared by all models. `tau` is the single lifetime of
/// exp_gauss and the slow (exciton) lifetime of cascade_gauss; `tau_fast` is
/// the feeding (biexciton) lifetime. For the gaussian model t0 is the centre.
struct ModelParams {
    double tau = 300.0;
    double tau_fast = 218.0;
    double sigma = 78.0 / fwhm_per_sigma;
    double t0 = 1000.0;
    double amplitude = 1.0;
    double baseline = 0.0;

    double& operator[](Param p);
    double operator[](Param p) const;
};

/// Exponential decay started at t0 convolved with a Gaussian of width sigma:
/// A/2 exp(s^2/2tau^2 - (t-t0)/tau) erfc((s/tau - (t-t0)/s)/sqrt2) + baseline.
/// Its integral over t (baseline 0) is A tau.
double exp_gauss(double t, double tau, double sigma, double t0, double amplitude, double baseline);

/// Cascade (feeding) density convolved with the Gaussian, normalised so the
/// tau_fast -> 0 limit is exp_gauss with the same amplitude. Integral A tau.
double cascade_gauss(double t, double tau_fast, double tau, double sigma, double t0, double amplitude,
                     double baseline);

double gaussian_peak(double t, double sigma, double center, double amplitude, double baseline);

double evaluate(ModelKind kind, const ModelParams& p, double t);

/// Parameters a model actually uses.
std::vector<Param> model_parameters(ModelKind kind);

struct SynthesisOptions {
    std::int64_t total_counts = 1'000'000;
    double bin_width_ps = 4.0;
    double window_ps = 13'000.0;
    double t_start_ps = 0.0;
};

/// Independent Poisson counts per bin with means proportional to the model,
/// scaled so the means sum to total_counts.
Histogram synthesize_histogram(ModelKind kind, const ModelParams& params, const SynthesisOptions& options,
                               std::uint64_t seed);

struct FitOptions {
    /// Starting values. Pinned parameters keep these values; the others are
    /// replaced by an automatic guess unless `auto_initial` is false.
    ModelParams initial;
    bool auto_initial = true;
    std::vector<Param> pinned{Param::sigma, Param::tau_fast};
    int max_iterations = 300;
    double relative_tolerance = 1e-9;
};

struct FitResult {
    ModelKind model = ModelKind::exp_gauss;
    ModelParams values;
    ModelParams errors; // 1 sigma; zero for pinned parameters
    std::vector<Param> free;
    Eigen::MatrixXd covariance; // natural units, ordered as `free`
    double deviance = 0.0;
    int degrees_of_freedom = 0;
    double reduced_deviance = 0.0;
    int iterations = 0;
    bool converged = false;

    double value(Param p) const { return values[p]; }
    double error(Param p) const { return errors[p]; }
};

/// Thrown when the fit does not converge; carries the best parameters seen.
class FitError : public Error {
public:
    FitError(const std::string& what, FitResult best)
        : Error(ErrorKind::fit_failure, what), best_(std::move(best)) {}
    const FitResult& best() const { return best_; }

private:
    FitResult best_;
};

/// Poisson deviance 2 sum[mu - n + n ln(n/mu)].
double poisson_deviance(const Histogram& h, ModelKind kind, const ModelParams& p);

/// Automatic starting point from histogram moments.
ModelParams initial_guess(const Histogram& h, ModelKind kind, const ModelParams& seed_values);

/// Maximum-likelihood fit by Levenberg-Marquardt on the Poisson deviance.
/// Lifetimes, widths and the baseline are fitted in log space; confidence intervals come
/// from the observed information (half the deviance Hessian).
FitResult fit_lifetime(const Histogram& h, ModelKind kind, const FitOptions& options = {});

struct IrfFit {
    IrfModel irf;
    double fwhm_error_ps;
    double center_error_ps;
    FitResult fit;
};

/// Gaussian fit of an attenuated-laser trace.
IrfFit irf_from_trace(const Histogram& trace);

} // namespace qdpillar::tcspc
