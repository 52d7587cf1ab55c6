#pragma once

// Count-rate bookkeeping: detected rates through a calibrated detection chain
// back to the single-photon efficiency of the source.

#include <span>
#include <string>
#include <vector>

namespace qdpillar::budget {

/// A value with its absolute 1-sigma uncertainty.
struct Measured {
    double value = 0.0;
    double sigma = 0.0;

    double relative() const { return value != 0.0 ? sigma / value : 0.0; }

    friend bool operator==(const Measured&, const Measured&) = default;
};

struct DetectionChain {
    double rep_rate_hz = 80e6;
    Measured detector{0.4, 0.0};
    Measured fibre{0.291, 0.010};
    Measured optics{0.062, 0.010};
    /// Fraction of pulses in which the emitter is optically active.
    double blinking = 1.0;

    void validate() const;
    double transmission() const;

    friend bool operator==(const DetectionChain&, const DetectionChain&) = default;
};

struct ChannelBudget {
    std::string channel;
    Measured detected_rate;
    double efficiency = 0.0;
    /// From the count-rate uncertainty alone.
    double sigma_statistical = 0.0;
    /// First-order quadrature over the rate and every chain factor.
    double sigma_full = 0.0;
};

struct BudgetResult {
    std::vector<ChannelBudget> channels;
    double pair_efficiency = 0.0;
    double pair_sigma = 0.0;
};

/// R / (rep_rate * blinking * eta_det * eta_fibre * eta_optics).
ChannelBudget source_efficiency(const Measured& detected_rate, const DetectionChain& chain,
                                const std::string& channel = "");

/// Detected rate that corresponds to `target` source efficiency.
double required_rate(double target, const DetectionChain& chain);

/// Relative uncertainty of a product or quotient of independent factors.
double relative_uncertainty(std::span<const Measured> factors);

/// Absolute uncertainty of `value`, a product/quotient of `factors`.
double propagate_uncertainty(double value, std::span<const Measured> factors);

struct NamedRate {
    std::string channel;
    Measured rate;
};

/// Per-channel budget plus the pair efficiency of the first two channels.
/// The chain is shared, so its factors enter the pair uncertainty twice.
BudgetResult compute_budget(std::span<const NamedRate> rates, const DetectionChain& chain);

} // namespace qdpillar::budget
