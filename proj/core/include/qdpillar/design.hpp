#pragma once

// Device-level evaluation of a micropillar design and search over mirror
// counts, substrate and diameter.

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "qdpillar/emitter_cavity.hpp"
#include "qdpillar/layered_optics.hpp"

namespace qdpillar::design {

struct DesignPoint {
    double diameter_um = 2.02;
    int top_pairs = 5;
    int bottom_pairs = 18;
    optics::OpticalMaterial substrate = optics::gaas();
    double design_wavelength_nm = 910.0;

    void validate() const;
    std::string describe() const;
};

/// Everything that is held fixed while points vary.
struct DesignContext {
    optics::QuarterWaveDesign materials; // layer, spacer and incident media; counts are ignored
    emitter::LeakyModel leaky;
    double window_half_width_nm = 30.0;
    double pair_splitting_nm = 2.4;
};

struct DesignEvaluation {
    DesignPoint point;
    double eta_int = 0.0;
    double quality_factor = 0.0;
    double linewidth_nm = 0.0;
    double beta = 0.0;
    double eta_top = 0.0;
    double purcell = 0.0;
    double f_leaky = 0.0;
    double resonance_nm = 0.0;
    double mode_volume_um3 = 0.0;
    bool pair_compatible = false;
};

/// Evaluates points and memoises the planar-cavity part, which does not
/// depend on the diameter. Safe to share between threads.
class Evaluator {
public:
    explicit Evaluator(DesignContext context = {});
    ~Evaluator();
    Evaluator(const Evaluator&) = delete;
    Evaluator& operator=(const Evaluator&) = delete;

    DesignEvaluation operator()(const DesignPoint& point) const;
    const DesignContext& context() const { return context_; }

private:
    struct Cache;
    DesignContext context_;
    std::unique_ptr<Cache> cache_;
};

DesignEvaluation evaluate_design(const DesignPoint& point, const DesignContext& context = {});

/// Cartesian product of the axes. An absent axis holds the base point's
/// value; a present but empty axis makes the grid empty.
struct SweepGrid {
    std::optional<std::vector<double>> diameters_um;
    std::optional<std::vector<int>> top_pairs;
    std::optional<std::vector<int>> bottom_pairs;
    std::optional<std::vector<optics::OpticalMaterial>> substrates;
    std::optional<std::vector<double>> wavelengths_nm;

    std::size_t size() const;
    std::vector<DesignPoint> points(const DesignPoint& base) const;
    std::vector<std::string> swept_fields() const;
};

std::vector<double> linear_axis(double first, double last, double step);

struct SweepOptions {
    std::size_t max_points = 100'000;
    unsigned jobs = 1;
    std::size_t chunk = 16;
    std::function<void(std::size_t done, std::size_t total)> progress;
};

/// Rows are in grid order whatever the number of workers.
std::vector<DesignEvaluation> sweep(const DesignPoint& base, const SweepGrid& grid, const Evaluator& evaluator,
                                    const SweepOptions& options = {});

enum class Objective { eta_int, eta_int_pair_compatible };

const char* to_string(Objective objective);
Objective objective_from_string(const std::string& name);

struct Bounds {
    double diameter_min_um = 1.5;
    double diameter_max_um = 2.5;
    int top_min = 5;
    int top_max = 7;
    int bottom_min = 18;
    int bottom_max = 25;
    std::vector<optics::OpticalMaterial> substrates{optics::gaas(), optics::sio2()};
    double design_wavelength_nm = 910.0;

    void validate() const;
};

struct OptimizeOptions {
    Objective objective = Objective::eta_int_pair_compatible;
    int coarse_diameters = 11;
    int rounds = 3;
    int refine_candidates = 3;
    double shrink = 4.0;
    unsigned jobs = 1;
};

struct OptimizeResult {
    DesignEvaluation best;
    std::size_t evaluations = 0;
    std::vector<DesignEvaluation> coarse;
};

/// Exhaustive over integer counts and substrates with a coarse grid in
/// diameter, then shrinking-step coordinate refinement of the diameter for
/// the three best coarse candidates.
OptimizeResult optimize(const Bounds& bounds, const Evaluator& evaluator, const OptimizeOptions& options = {});

/// True when `a` is strictly better than `b` under the objective.
bool better(const DesignEvaluation& a, const DesignEvaluation& b, Objective objective);

} // namespace qdpillar::design
