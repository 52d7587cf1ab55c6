#include "qdpillar/design.hpp"

#include "qdpillar/error.hpp"
#include "qdpillar/pillar_modes.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>
#include <tuple>

namespace qdpillar::design {

namespace {

struct PlanarPart {
    optics::PlanarCavityResult cavity;
    double effective_length_nm;
};

struct PillarPart {
    modes::GuidedMode fundamental;
    double f_leaky;
};

using PlanarKey = std::tuple<int, int, std::string, double, double, double>;
using PillarKey = std::tuple<double, double, double, double>;

} // namespace

struct Evaluator::Cache {
    std::mutex mutex;
    std::map<PlanarKey, PlanarPart> planar;
    std::map<PillarKey, PillarPart> pillar;
};

void DesignPoint::validate() const {
    require(diameter_um >= 0.5 && diameter_um <= 5.0, "diameter must lie in [0.5, 5.0] um");
    require(top_pairs >= 1 && top_pairs <= 40, "top pair count must lie in [1, 40]");
    require(bottom_pairs >= 1 && bottom_pairs <= 40, "bottom pair count must lie in [1, 40]");
    require(design_wavelength_nm > 0.0, "design wavelength must be > 0");
    substrate.validate();
}

std::string DesignPoint::describe() const {
    std::ostringstream os;
    os.precision(6);
    os << "d=" << diameter_um << " um, top=" << top_pairs << ", bottom=" << bottom_pairs
       << ", substrate=" << substrate.name << ", lambda0=" << design_wavelength_nm << " nm";
    return os.str();
}

Evaluator::Evaluator(DesignContext context) : context_(std::move(context)), cache_(std::make_unique<Cache>()) {
    context_.leaky.validate();
    require(context_.window_half_width_nm > 0.0, "resonance window must be > 0");
    require(context_.pair_splitting_nm > 0.0, "pair splitting must be > 0");
}

Evaluator::~Evaluator() = default;

DesignEvaluation Evaluator::operator()(const DesignPoint& point) const {
    try {
        point.validate();
        const auto sub = point.substrate.index_at(point.design_wavelength_nm);
        const PlanarKey pk{point.top_pairs, point.bottom_pairs, point.substrate.name, sub.real(), sub.imag(),
                           point.design_wavelength_nm};
        std::optional<PlanarPart> planar;
        {
            std::lock_guard lock(cache_->mutex);
            if (auto it = cache_->planar.find(pk); it != cache_->planar.end()) planar = it->second;
        }
        if (!planar) {
            optics::QuarterWaveDesign qw = context_.materials;
            qw.design_wavelength_nm = point.design_wavelength_nm;
            qw.top_pairs = point.top_pairs;
            qw.bottom_pairs = point.bottom_pairs;
            qw.substrate = point.substrate;
            const auto stack = optics::build_quarter_wave_cavity(qw);
            const auto cavity = optics::find_resonance(stack, point.design_wavelength_nm - context_.window_half_width_nm,
                                                       point.design_wavelength_nm + context_.window_half_width_nm);
            planar = PlanarPart{cavity, optics::field_profile(stack, cavity.resonance_nm, 0.5).effective_length_nm};
            std::lock_guard lock(cache_->mutex);
            cache_->planar.emplace(pk, *planar);
        }

        const double lc = planar->cavity.resonance_nm;
        const modes::PillarGeometry geometry{point.diameter_um, context_.materials.spacer.index_at(lc).real(),
                                             context_.materials.incident.index_at(lc).real()};
        const PillarKey mk{point.diameter_um, lc, geometry.core_index, geometry.cladding_index};
        std::optional<PillarPart> pillar;
        {
            std::lock_guard lock(cache_->mutex);
            if (auto it = cache_->pillar.find(mk); it != cache_->pillar.end()) pillar = it->second;
        }
        emitter::DeviceCoupling device;
        if (pillar) {
            device.cavity = planar->cavity;
            device.fundamental = pillar->fundamental;
            device.effective_length_nm = planar->effective_length_nm;
            device.mode_volume_um3 =
                emitter::mode_volume_um3(pillar->fundamental.mode_field_radius_um, planar->effective_length_nm);
            device.purcell =
                emitter::purcell_peak(planar->cavity.quality_factor, device.mode_volume_um3, lc, geometry.core_index);
            device.f_leaky = pillar->f_leaky;
            device.beta = emitter::beta_factor(device.purcell, device.f_leaky);
            device.eta_int = device.beta * planar->cavity.top_escape_fraction;
        } else {
            device = emitter::couple_pillar(planar->cavity, planar->effective_length_nm, geometry, context_.leaky);
            std::lock_guard lock(cache_->mutex);
            cache_->pillar.emplace(mk, PillarPart{device.fundamental, device.f_leaky});
        }

        DesignEvaluation e;
        e.point = point;
        e.eta_int = device.eta_int;
        e.quality_factor = planar->cavity.quality_factor;
        e.linewidth_nm = planar->cavity.linewidth_nm;
        e.beta = device.beta;
        e.eta_top = planar->cavity.top_escape_fraction;
        e.purcell = device.purcell;
        e.f_leaky = device.f_leaky;
        e.resonance_nm = lc;
        e.mode_volume_um3 = device.mode_volume_um3;
        e.pair_compatible = e.linewidth_nm > context_.pair_splitting_nm;
        return e;
    } catch (const Error& err) {
        throw Error(err.kind(), std::string(err.what()) + " [design point: " + point.describe() + "]");
    }
}

DesignEvaluation evaluate_design(const DesignPoint& point, const DesignContext& context) {
    const Evaluator evaluator(context);
    return evaluator(point);
}

std::size_t SweepGrid::size() const {
    std::size_t n = 1;
    auto mul = [&n](const auto& axis) {
        if (axis) n *= axis->size();
    };
    mul(diameters_um);
    mul(top_pairs);
    mul(bottom_pairs);
    mul(substrates);
    mul(wavelengths_nm);
    return n;
}

std::vector<DesignPoint> SweepGrid::points(const DesignPoint& base) const {
    std::vector<DesignPoint> out;
    if (size() == 0) return out;
    const std::vector<double> d = diameters_um.value_or(std::vector<double>{base.diameter_um});
    const std::vector<int> t = top_pairs.value_or(std::vector<int>{base.top_pairs});
    const std::vector<int> b = bottom_pairs.value_or(std::vector<int>{base.bottom_pairs});
    const std::vector<optics::OpticalMaterial> s =
        substrates.value_or(std::vector<optics::OpticalMaterial>{base.substrate});
    const std::vector<double> w = wavelengths_nm.value_or(std::vector<double>{base.design_wavelength_nm});
    out.reserve(size());
    for (const auto& sub : s)
        for (double wl : w)
            for (int top : t)
                for (int bottom : b)
                    for (double dia : d) out.push_back(DesignPoint{dia, top, bottom, sub, wl});
    return out;
}

std::vector<std::string> SweepGrid::swept_fields() const {
    std::vector<std::string> f;
    if (substrates) f.emplace_back("substrate");
    if (wavelengths_nm) f.emplace_back("design_wavelength_nm");
    if (top_pairs) f.emplace_back("top_pairs");
    if (bottom_pairs) f.emplace_back("bottom_pairs");
    if (diameters_um) f.emplace_back("diameter_um");
    return f;
}

std::vector<double> linear_axis(double first, double last, double step) {
    require(step > 0.0, "axis step must be > 0");
    require(last >= first, "axis end must be >= axis start");
    const auto n = static_cast<std::size_t>(std::floor((last - first) / step + 1e-9)) + 1;
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = first + step * static_cast<double>(i);
    return out;
}

std::vector<DesignEvaluation> sweep(const DesignPoint& base, const SweepGrid& grid, const Evaluator& evaluator,
                                    const SweepOptions& options) {
    const std::size_t total = grid.size();
    if (total > options.max_points) {
        const double factor = std::ceil(static_cast<double>(total) / static_cast<double>(options.max_points));
        throw Error(ErrorKind::invalid_parameter,
                    "sweep grid has " + std::to_string(total) + " points, above the cap of " +
                        std::to_string(options.max_points) + "; coarsen the axes by a combined factor of at least " +
                        std::to_string(static_cast<long long>(factor)));
    }
    const auto points = grid.points(base);
    std::vector<DesignEvaluation> rows(points.size());
    if (points.empty()) return rows;

    const std::size_t chunk = std::max<std::size_t>(options.chunk, 1);
    const std::size_t chunks = (points.size() + chunk - 1) / chunk;
    std::vector<std::exception_ptr> failures(chunks);
    std::atomic<std::size_t> next{0};
    std::mutex progress_mutex;
    std::size_t done = 0;

    auto worker = [&] {
        for (std::size_t c = next++; c < chunks; c = next++) {
            const std::size_t lo = c * chunk;
            const std::size_t hi = std::min(points.size(), lo + chunk);
            try {
                for (std::size_t i = lo; i < hi; ++i) rows[i] = evaluator(points[i]);
            } catch (...) {
                failures[c] = std::current_exception();
            }
            if (options.progress) {
                std::lock_guard lock(progress_mutex);
                done += hi - lo;
                options.progress(done, points.size());
            }
        }
    };
    const unsigned jobs = std::max(1u, std::min<unsigned>(options.jobs, static_cast<unsigned>(chunks)));
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(worker);
    }
    for (const auto& f : failures)
        if (f) std::rethrow_exception(f);
    return rows;
}

const char* to_string(Objective objective) {
    return objective == Objective::eta_int ? "eta_int" : "eta_int_pair_compatible";
}

Objective objective_from_string(const std::string& name) {
    if (name == "eta_int") return Objective::eta_int;
    if (name == "eta_int_pair_compatible") return Objective::eta_int_pair_compatible;
    throw Error(ErrorKind::invalid_parameter, "unknown objective '" + name + "'");
}

void Bounds::validate() const {
    require(diameter_min_um >= 0.5 && diameter_max_um <= 5.0 && diameter_min_um <= diameter_max_um,
            "diameter bounds must satisfy 0.5 <= min <= max <= 5.0 um");
    require(top_min >= 1 && top_max <= 40 && top_min <= top_max, "top pair bounds must lie in [1, 40]");
    require(bottom_min >= 1 && bottom_max <= 40 && bottom_min <= bottom_max,
            "bottom pair bounds must lie in [1, 40]");
    require(!substrates.empty(), "at least one substrate is required");
    require(design_wavelength_nm > 0.0, "design wavelength must be > 0");
}

bool better(const DesignEvaluation& a, const DesignEvaluation& b, Objective objective) {
    if (objective == Objective::eta_int_pair_compatible && a.pair_compatible != b.pair_compatible)
        return a.pair_compatible;
    return a.eta_int > b.eta_int;
}

namespace {

void check_finite(const DesignEvaluation& e) {
    if (!std::isfinite(e.eta_int))
        throw Error(ErrorKind::numerical_failure, "objective is not finite at " + e.point.describe());
}

} // namespace

OptimizeResult optimize(const Bounds& bounds, const Evaluator& evaluator, const OptimizeOptions& options) {
    bounds.validate();
    require(options.coarse_diameters >= 1, "coarse grid needs at least one diameter");
    require(options.rounds >= 0 && options.shrink > 1.0, "refinement needs rounds >= 0 and shrink > 1");

    SweepGrid grid;
    const double span = bounds.diameter_max_um - bounds.diameter_min_um;
    const int nd = span > 0.0 ? std::max(options.coarse_diameters, 2) : 1;
    const double spacing = nd > 1 ? span / (nd - 1) : 0.0;
    std::vector<double> diameters(static_cast<std::size_t>(nd));
    for (int i = 0; i < nd; ++i)
        diameters[static_cast<std::size_t>(i)] = i + 1 == nd ? bounds.diameter_max_um : bounds.diameter_min_um + spacing * i;
    grid.diameters_um = diameters;
    std::vector<int> tops;
    for (int t = bounds.top_min; t <= bounds.top_max; ++t) tops.push_back(t);
    std::vector<int> bottoms;
    for (int b = bounds.bottom_min; b <= bounds.bottom_max; ++b) bottoms.push_back(b);
    grid.top_pairs = tops;
    grid.bottom_pairs = bottoms;
    grid.substrates = bounds.substrates;
    grid.wavelengths_nm = std::vector<double>{bounds.design_wavelength_nm};

    OptimizeResult result;
    SweepOptions so;
    so.jobs = options.jobs;
    result.coarse = sweep(DesignPoint{}, grid, evaluator, so);
    result.evaluations = result.coarse.size();
    for (const auto& e : result.coarse) check_finite(e);

    // Candidate order: best first, grid order breaking ties.
    std::vector<std::size_t> order(result.coarse.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return better(result.coarse[a], result.coarse[b], options.objective);
    });

    DesignEvaluation best = result.coarse[order.front()];
    const std::size_t candidates = std::min<std::size_t>(order.size(), static_cast<std::size_t>(
                                                                           std::max(options.refine_candidates, 1)));
    for (std::size_t c = 0; c < candidates && spacing > 0.0; ++c) {
        DesignEvaluation local = result.coarse[order[c]];
        double step = spacing;
        for (int round = 0; round < options.rounds; ++round) {
            step /= options.shrink;
            for (int moves = 0; moves < 2 * static_cast<int>(std::ceil(options.shrink)); ++moves) {
                bool moved = false;
                for (double dir : {1.0, -1.0}) {
                    const double d = std::clamp(local.point.diameter_um + dir * step, bounds.diameter_min_um,
                                                bounds.diameter_max_um);
                    if (d == local.point.diameter_um) continue;
                    DesignPoint p = local.point;
                    p.diameter_um = d;
                    const auto e = evaluator(p);
                    ++result.evaluations;
                    check_finite(e);
                    if (better(e, local, options.objective)) {
                        local = e;
                        moved = true;
                        break;
                    }
                }
                if (!moved) break;
            }
        }
        if (better(local, best, options.objective)) best = local;
    }

    for (const auto& e : result.coarse)
        if (better(e, best, options.objective))
            throw Error(ErrorKind::numerical_failure, "optimizer result is worse than a coarse-grid point");
    if (options.objective == Objective::eta_int_pair_compatible && !best.pair_compatible)
        throw Error(ErrorKind::not_found, "no pair-compatible design inside the bounds");
    result.best = best;
    return result;
}

} // namespace qdpillar::design
