#include "qdpillar/pillar_modes.hpp"

#include "qdpillar/error.hpp"
#include "qdpillar/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace qdpillar::modes {

namespace {

constexpr double grid_step = 1e-4;
constexpr double edge_offset = 1e-9;

double bessel_j(int order, double x) {
    if (order < 0) return (order % 2 ? -1.0 : 1.0) * std::cyl_bessel_j(-order, x);
    return std::cyl_bessel_j(order, x);
}

double bessel_k(int order, double x) { return std::cyl_bessel_k(std::abs(order), x); }

struct Transverse {
    double u;
    double w;
};

double normalised_frequency(const PillarGeometry& g, double wavelength_nm) {
    return std::numbers::pi * g.diameter_um * 1000.0 / wavelength_nm; // a * k0
}

Transverse transverse(const PillarGeometry& g, double wavelength_nm, double n_eff) {
    const double ak0 = normalised_frequency(g, wavelength_nm);
    const double core = g.core_index * g.core_index - n_eff * n_eff;
    const double clad = n_eff * n_eff - g.cladding_index * g.cladding_index;
    return {ak0 * std::sqrt(std::max(core, 0.0)), ak0 * std::sqrt(std::max(clad, 0.0))};
}

double rms_radius_um(const GuidedMode& mode, const PillarGeometry& g) {
    const double a = g.radius_um();
    const double ju = bessel_j(mode.l, mode.u);
    const double kw = bessel_k(mode.l, mode.w);
    auto psi2 = [&](double r) {
        if (r <= a) {
            const double v = bessel_j(mode.l, mode.u * r / a);
            return v * v;
        }
        const double v = ju * bessel_k(mode.l, mode.w * r / a) / kw;
        return v * v;
    };
    const double outer = a * (1.0 + 12.0 / std::max(mode.w, 0.5));
    auto moment = [&](int power) {
        auto f = [&](double r) { return std::pow(r, power) * psi2(r); };
        return numeric::simpson(f, 0.0, a, 400) + numeric::simpson(f, a, outer, 400);
    };
    return std::sqrt(2.0 * moment(3) / moment(1));
}

} // namespace

void PillarGeometry::validate() const {
    require(diameter_um > 0.0, "pillar diameter must be > 0");
    require(cladding_index >= 1.0, "cladding index must be >= 1");
    require(core_index > cladding_index, "core index must exceed cladding index");
}

double v_number(const PillarGeometry& g, double wavelength_nm) {
    require(wavelength_nm > 0.0, "wavelength must be > 0");
    const double contrast = g.core_index * g.core_index - g.cladding_index * g.cladding_index;
    return normalised_frequency(g, wavelength_nm) * std::sqrt(std::max(contrast, 0.0));
}

double characteristic(const PillarGeometry& g, double wavelength_nm, int l, double n_eff) {
    const auto [u, w] = transverse(g, wavelength_nm, n_eff);
    return u * bessel_j(l - 1, u) + w * bessel_j(l, u) * bessel_k(l - 1, w) / bessel_k(l, w);
}

double marcuse_radius_um(double v, double core_radius_um) {
    require(v > 0.0, "V number must be > 0 for the Marcuse radius");
    return core_radius_um * (0.65 + 1.619 * std::pow(v, -1.5) + 2.879 * std::pow(v, -6.0));
}

int max_azimuthal_order(const PillarGeometry& g, double wavelength_nm) {
    // LP_l0 cuts off near the first zero of J_{l-1}, which exceeds l - 1.
    return static_cast<int>(std::ceil(v_number(g, wavelength_nm))) + 1;
}

std::vector<GuidedMode> solve_guided_modes(const PillarGeometry& g, double wavelength_nm, int l_max) {
    g.validate();
    require(wavelength_nm > 0.0, "wavelength must be > 0");
    require(l_max >= 0, "l_max must be >= 0");
    const double v = v_number(g, wavelength_nm);
    const double lo = g.cladding_index + edge_offset;
    const double hi = g.core_index - edge_offset;

    std::vector<double> grid;
    grid.push_back(lo);
    for (double n = g.cladding_index + grid_step; n < hi; n += grid_step) grid.push_back(n);
    grid.push_back(hi);

    std::vector<GuidedMode> modes;
    for (int l = 0; l <= l_max; ++l) {
        auto f = [&](double n) { return characteristic(g, wavelength_nm, l, n); };
        std::vector<double> roots;
        double prev = f(grid.front());
        for (std::size_t i = 1; i < grid.size(); ++i) {
            const double cur = f(grid[i]);
            if (prev == 0.0 || (prev > 0.0) != (cur > 0.0)) {
                const double root = numeric::bisect(f, grid[i - 1], grid[i], 0.0);
                const double residual = std::abs(f(root));
                if (!(residual < 1e-10))
                    throw Error(ErrorKind::numerical_failure,
                                "LP" + std::to_string(l) + " root in [" + std::to_string(grid[i - 1]) +
                                    ", " + std::to_string(grid[i]) + "] has residual " +
                                    std::to_string(residual));
                if (roots.empty() || std::abs(roots.back() - root) > 1e-8) roots.push_back(root);
            }
            prev = cur;
        }
        if (l == 0 && roots.empty()) {
            // Weakly guided fundamental: n_eff sits within edge_offset of the
            // cladding index, so walk towards it on a logarithmic grid.
            double upper = grid.front();
            double f_upper = f(upper);
            for (double offset = 0.1 * edge_offset; offset > 0.0; offset *= 0.1) {
                const double lower = std::max(g.cladding_index + offset,
                                              std::nextafter(g.cladding_index, g.core_index));
                const double f_lower = f(lower);
                if ((f_lower > 0.0) != (f_upper > 0.0)) {
                    const double root = numeric::bisect(f, lower, upper, 0.0);
                    if (std::abs(f(root)) < 1e-10) roots.push_back(root);
                    break;
                }
                if (lower == std::nextafter(g.cladding_index, g.core_index)) break;
                upper = lower;
                f_upper = f_lower;
            }
        }
        std::sort(roots.begin(), roots.end(), std::greater<>());
        for (std::size_t k = 0; k < roots.size(); ++k) {
            GuidedMode mode;
            mode.l = l;
            mode.m = static_cast<int>(k) + 1;
            mode.n_eff = roots[k];
            const auto t = transverse(g, wavelength_nm, roots[k]);
            mode.u = t.u;
            mode.w = t.w;
            mode.guided = true;
            mode.mode_field_radius_um = mode.is_fundamental() ? marcuse_radius_um(v, g.radius_um())
                                                              : rms_radius_um(mode, g);
            modes.push_back(mode);
        }
        if (roots.empty() && l > 0) break; // higher l are cut off as well
    }
    std::stable_sort(modes.begin(), modes.end(),
                     [](const GuidedMode& a, const GuidedMode& b) { return a.n_eff > b.n_eff; });
    return modes;
}

double pillar_resonance_shift(double planar_resonance_nm, const GuidedMode& mode, const PillarGeometry& g) {
    require(mode.guided, "resonance shift needs a guided mode");
    return planar_resonance_nm * mode.n_eff / g.core_index;
}

double far_field_na(const GuidedMode& mode, double wavelength_nm) {
    require(mode.mode_field_radius_um > 0.0, "mode field radius must be > 0");
    const double angle = wavelength_nm * 1e-3 / (std::numbers::pi * mode.mode_field_radius_um);
    return std::sin(std::min(angle, std::numbers::pi / 2.0));
}

ModeIntensity mode_intensity(const GuidedMode& mode, const PillarGeometry& g) {
    const double a = g.radius_um();
    const int l = mode.l;
    const double ju = bessel_j(l, mode.u);
    const double ratio = bessel_k(l - 1, mode.w) * bessel_k(l + 1, mode.w) / std::pow(bessel_k(l, mode.w), 2);
    // Closed-form Bessel integrals over core and cladding, psi continuous at r = a.
    const double core = 0.5 * a * a * (ju * ju - bessel_j(l - 1, mode.u) * bessel_j(l + 1, mode.u));
    const double clad = 0.5 * a * a * ju * ju * (ratio - 1.0);
    const double azimuthal = l == 0 ? 2.0 * std::numbers::pi : std::numbers::pi;
    const double power = azimuthal * (core + clad);
    ModeIntensity out;
    out.on_axis_um2 = l == 0 ? 1.0 / power : 0.0;
    out.cladding_fraction = clad / (core + clad);
    return out;
}

int polarisation_mode_count(const std::vector<GuidedMode>& modes) {
    int count = 0;
    for (const auto& m : modes) count += m.l == 0 ? 1 : 2;
    return count;
}

} // namespace qdpillar::modes
