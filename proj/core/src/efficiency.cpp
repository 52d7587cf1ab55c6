#include "qdpillar/efficiency.hpp"

#include "qdpillar/error.hpp"

#include <cmath>

namespace qdpillar::budget {

namespace {

void require_efficiency(const Measured& m, const char* name) {
    require(m.value > 0.0 && m.value <= 1.0, std::string(name) + " efficiency must lie in (0, 1]");
    require(m.sigma >= 0.0, std::string(name) + " uncertainty must be >= 0");
}

} // namespace

void DetectionChain::validate() const {
    require(rep_rate_hz > 0.0, "repetition rate must be > 0");
    require_efficiency(detector, "detector");
    require_efficiency(fibre, "fibre");
    require_efficiency(optics, "optics");
    require(blinking > 0.0 && blinking <= 1.0, "blinking factor must lie in (0, 1]");
}

double DetectionChain::transmission() const { return detector.value * fibre.value * optics.value; }

double relative_uncertainty(std::span<const Measured> factors) {
    double s = 0.0;
    for (const auto& f : factors) {
        if (f.sigma == 0.0) continue;
        require(f.value != 0.0, "uncertain factor has zero value");
        const double r = f.sigma / std::abs(f.value);
        require(r < 0.5, "relative uncertainty must be < 0.5 for first-order propagation");
        s += r * r;
    }
    return std::sqrt(s);
}

double propagate_uncertainty(double value, std::span<const Measured> factors) {
    return std::abs(value) * relative_uncertainty(factors);
}

ChannelBudget source_efficiency(const Measured& rate, const DetectionChain& chain, const std::string& channel) {
    chain.validate();
    require(rate.value >= 0.0, "detected rate must be >= 0");
    require(rate.value <= chain.rep_rate_hz, "detected rate exceeds the repetition rate");
    ChannelBudget b;
    b.channel = channel;
    b.detected_rate = rate;
    b.efficiency = rate.value / (chain.rep_rate_hz * chain.blinking * chain.transmission());
    if (b.efficiency > 1.0)
        throw Error(ErrorKind::inconsistent_calibration,
                    "source efficiency " + std::to_string(b.efficiency) + " exceeds 1 for channel '" + channel +
                        "'; check the chain efficiencies");
    if (rate.value > 0.0) {
        const Measured rate_only[] = {rate};
        const Measured all[] = {rate, chain.detector, chain.fibre, chain.optics};
        b.sigma_statistical = propagate_uncertainty(b.efficiency, rate_only);
        b.sigma_full = propagate_uncertainty(b.efficiency, all);
    }
    return b;
}

double required_rate(double target, const DetectionChain& chain) {
    chain.validate();
    require(target > 0.0 && target <= 1.0, "target efficiency must lie in (0, 1]");
    return target * chain.rep_rate_hz * chain.blinking * chain.transmission();
}

BudgetResult compute_budget(std::span<const NamedRate> rates, const DetectionChain& chain) {
    BudgetResult r;
    for (const auto& nr : rates) r.channels.push_back(source_efficiency(nr.rate, chain, nr.channel));
    if (r.channels.size() >= 2) {
        const auto& a = r.channels[0];
        const auto& b = r.channels[1];
        r.pair_efficiency = a.efficiency * b.efficiency;
        const double chain_rel = std::hypot(chain.detector.relative(), chain.fibre.relative(), chain.optics.relative());
        const double rel = std::sqrt(a.detected_rate.relative() * a.detected_rate.relative() +
                                     b.detected_rate.relative() * b.detected_rate.relative() +
                                     4.0 * chain_rel * chain_rel);
        r.pair_sigma = r.pair_efficiency * rel;
    }
    return r;
}

} // namespace qdpillar::budget
