#include "qdpillar/layered_optics.hpp"

#include "qdpillar/error.hpp"
#include "qdpillar/numeric.hpp"

#include <algorithm>
#include <limits>
#include <array>
#include <cmath>
#include <numbers>

namespace qdpillar::optics {

namespace {

constexpr double two_pi = 2.0 * std::numbers::pi;
const complex I{0.0, 1.0};

using Matrix2 = std::array<complex, 4>; // row major

Matrix2 multiply(const Matrix2& a, const Matrix2& b) {
    return {a[0] * b[0] + a[1] * b[2], a[0] * b[1] + a[1] * b[3],
            a[2] * b[0] + a[3] * b[2], a[2] * b[1] + a[3] * b[3]};
}

Matrix2 characteristic_matrix(complex n, double d, complex k0) {
    const complex delta = k0 * n * d;
    const complex c = std::cos(delta);
    const complex s = std::sin(delta);
    return {c, -I * s / n, -I * n * s, c};
}

double real_wavelength(complex k0) { return two_pi / std::real(k0); }

StackResponse response_from_matrix(const Matrix2& m, complex n0, complex ns) {
    const complex b = n0 * m[0] + n0 * ns * m[1];
    const complex c = m[2] + ns * m[3];
    const complex r = (b - c) / (b + c);
    const complex t = 2.0 * n0 / (b + c);
    const double R = std::norm(r);
    const double T = std::real(ns) / std::real(n0) * std::norm(t);
    return {r, t, R, T};
}

std::vector<Layer> reversed(std::vector<Layer> layers) {
    std::reverse(layers.begin(), layers.end());
    return layers;
}

} // namespace

complex OpticalMaterial::index_at(double wavelength_nm) const {
    if (table.empty()) return refractive_index;
    if (wavelength_nm <= table.front().wavelength_nm) return table.front().index;
    if (wavelength_nm >= table.back().wavelength_nm) return table.back().index;
    auto hi = std::lower_bound(table.begin(), table.end(), wavelength_nm,
                               [](const IndexSample& s, double w) { return s.wavelength_nm < w; });
    auto lo = hi - 1;
    const double f = (wavelength_nm - lo->wavelength_nm) / (hi->wavelength_nm - lo->wavelength_nm);
    return lo->index + f * (hi->index - lo->index);
}

void OpticalMaterial::validate() const {
    auto check = [this](complex n) {
        require(std::real(n) > 0.0, "material '" + name + "': real part of index must be > 0");
        require(std::imag(n) >= 0.0, "material '" + name + "': imaginary part of index must be >= 0");
    };
    check(refractive_index);
    for (std::size_t i = 0; i < table.size(); ++i) {
        check(table[i].index);
        require(table[i].wavelength_nm > 0.0, "material '" + name + "': table wavelength must be > 0");
        if (i > 0)
            require(table[i].wavelength_nm > table[i - 1].wavelength_nm,
                    "material '" + name + "': table wavelengths must increase");
    }
}

OpticalMaterial gaas() { return {"GaAs", {3.53, 0.0}, {}}; }
OpticalMaterial alas() { return {"AlAs", {2.95, 0.0}, {}}; }
OpticalMaterial sio2() { return {"SiO2", {1.45, 0.0}, {}}; }
OpticalMaterial air() { return {"Air", {1.0, 0.0}, {}}; }

void LayerStack::validate() const {
    incident_medium.validate();
    exit_medium.validate();
    for (std::size_t i = 0; i < layers.size(); ++i) {
        layers[i].material.validate();
        require(layers[i].thickness_nm > 0.0,
                "layer " + std::to_string(i) + " ('" + layers[i].material.name +
                    "') has non-positive thickness");
    }
    if (spacer_index) require(*spacer_index < layers.size(), "spacer index out of range");
    require(source_fraction >= 0.0 && source_fraction <= 1.0, "source fraction must lie in [0,1]");
}

double LayerStack::total_thickness() const {
    double total = 0.0;
    for (const auto& layer : layers) total += layer.thickness_nm;
    return total;
}

double quarter_wave_thickness(const OpticalMaterial& material, double wavelength_nm) {
    return wavelength_nm / (4.0 * std::real(material.index_at(wavelength_nm)));
}

LayerStack build_quarter_wave_cavity(const QuarterWaveDesign& design) {
    require(design.design_wavelength_nm > 0.0, "design wavelength must be > 0");
    require(design.top_pairs >= 1, "top mirror needs at least one pair");
    require(design.bottom_pairs >= 1, "bottom mirror needs at least one pair");
    const double m = design.spacer_optical_length;
    require(m == 0.5 || m == 1.0 || m == 1.5 || m == 2.0,
            "spacer optical length must be one of 0.5, 1.0, 1.5, 2.0 wavelengths");
    for (const auto* mat : {&design.high, &design.low, &design.spacer, &design.substrate, &design.incident})
        mat->validate();

    const double lambda0 = design.design_wavelength_nm;
    const Layer high{design.high, quarter_wave_thickness(design.high, lambda0)};
    const Layer low{design.low, quarter_wave_thickness(design.low, lambda0)};

    LayerStack stack;
    stack.incident_medium = design.incident;
    stack.exit_medium = design.substrate;
    for (int i = 0; i < design.top_pairs; ++i) {
        stack.layers.push_back(high);
        stack.layers.push_back(low);
    }
    stack.spacer_index = stack.layers.size();
    stack.layers.push_back({design.spacer, m * lambda0 / std::real(design.spacer.index_at(lambda0))});
    for (int i = 0; i < design.bottom_pairs; ++i) {
        stack.layers.push_back(low);
        stack.layers.push_back(high);
    }
    return stack;
}

StackResponse stack_response_k(const OpticalMaterial& incident, const std::vector<Layer>& layers,
                               const OpticalMaterial& exit, complex k0) {
    const double lambda = real_wavelength(k0);
    Matrix2 m{1.0, 0.0, 0.0, 1.0};
    for (const auto& layer : layers) {
        if (layer.thickness_nm == 0.0) continue;
        m = multiply(m, characteristic_matrix(layer.material.index_at(lambda), layer.thickness_nm, k0));
    }
    return response_from_matrix(m, incident.index_at(lambda), exit.index_at(lambda));
}

StackResponse stack_response(const LayerStack& stack, double wavelength_nm, Side incidence) {
    require(wavelength_nm > 0.0, "wavelength must be > 0");
    stack.validate();
    const complex k0 = two_pi / wavelength_nm;
    if (incidence == Side::top)
        return stack_response_k(stack.incident_medium, stack.layers, stack.exit_medium, k0);
    return stack_response_k(stack.exit_medium, reversed(stack.layers), stack.incident_medium, k0);
}

MirrorPair mirrors_at_source(const LayerStack& stack, complex k0) {
    require(stack.spacer_index.has_value(), "stack has no spacer layer marked");
    const std::size_t s = *stack.spacer_index;
    const Layer& spacer = stack.layers[s];
    const double above = stack.source_fraction * spacer.thickness_nm;

    std::vector<Layer> up;
    up.push_back({spacer.material, above});
    for (std::size_t i = s; i-- > 0;) up.push_back(stack.layers[i]);

    std::vector<Layer> down;
    down.push_back({spacer.material, spacer.thickness_nm - above});
    for (std::size_t i = s + 1; i < stack.layers.size(); ++i) down.push_back(stack.layers[i]);

    const auto top = stack_response_k(spacer.material, up, stack.incident_medium, k0);
    const auto bottom = stack_response_k(spacer.material, down, stack.exit_medium, k0);
    return {top.r, bottom.r, top.t, bottom.t, top.T, bottom.T};
}

double top_emission(const LayerStack& stack, double wavelength_nm) {
    const auto m = mirrors_at_source(stack, two_pi / wavelength_nm);
    return m.T_top * std::norm(1.0 + m.r_bottom) / std::norm(1.0 - m.r_top * m.r_bottom);
}

namespace {

double golden_maximum(const auto& f, double a, double b, double tol) {
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = b - g * (b - a);
    double d = a + g * (b - a);
    double fc = f(c), fd = f(d);
    while (b - a > tol) {
        if (fc > fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    return 0.5 * (a + b);
}

double cavity_pole_q(const LayerStack& stack, double resonance_nm, double q_guess) {
    auto round_trip = [&](complex k) {
        const auto m = mirrors_at_source(stack, k);
        return 1.0 - m.r_top * m.r_bottom;
    };
    const double kr = two_pi / resonance_nm;
    complex k{kr, -kr / (2.0 * q_guess)};
    for (int it = 0; it < 100; ++it) {
        const complex h = k * 1e-7;
        const complex f = round_trip(k);
        const complex df = (round_trip(k + h) - round_trip(k - h)) / (2.0 * h);
        const complex step = f / df;
        k -= step;
        if (std::abs(step) < 1e-14 * std::abs(k)) break;
    }
    return std::real(k) / (2.0 * std::abs(std::imag(k)));
}

} // namespace

PlanarCavityResult find_resonance(const LayerStack& stack, double lambda_min_nm, double lambda_max_nm) {
    require(lambda_min_nm > 0.0 && lambda_min_nm < lambda_max_nm, "scan window must satisfy 0 < min < max");
    stack.validate();
    require(stack.spacer_index.has_value(), "stack has no spacer layer marked");

    const double step = 0.01;
    const auto n = static_cast<std::size_t>(std::ceil((lambda_max_nm - lambda_min_nm) / step)) + 1;
    std::vector<double> lam(n), val(n);
    for (std::size_t i = 0; i < n; ++i) {
        lam[i] = std::min(lambda_min_nm + step * static_cast<double>(i), lambda_max_nm);
        val[i] = top_emission(stack, lam[i]);
    }
    const double global_max = *std::max_element(val.begin(), val.end());

    // A resonance is an interior local maximum whose half-maximum crossings on
    // both sides fall inside the window.
    std::vector<std::size_t> peaks;
    for (std::size_t i = 1; i + 1 < n; ++i) {
        if (!(val[i] >= val[i - 1] && val[i] > val[i + 1])) continue;
        if (val[i] < 0.25 * global_max) continue;
        const double half = 0.5 * val[i];
        bool left = false, right = false;
        for (std::size_t j = i; j-- > 0;) {
            if (val[j] > val[i]) break;
            if (val[j] < half) { left = true; break; }
        }
        for (std::size_t j = i + 1; j < n; ++j) {
            if (val[j] > val[i]) break;
            if (val[j] < half) { right = true; break; }
        }
        if (left && right) peaks.push_back(i);
    }
    if (peaks.empty())
        throw Error(ErrorKind::not_found, "no cavity resonance in [" + std::to_string(lambda_min_nm) +
                                              ", " + std::to_string(lambda_max_nm) + "] nm");
    if (peaks.size() > 1)
        throw Error(ErrorKind::ambiguous_window,
                    std::to_string(peaks.size()) + " resonances in scan window; narrow it");

    auto f = [&](double l) { return top_emission(stack, l); };
    const std::size_t p = peaks.front();
    const double lc = golden_maximum(f, lam[p - 1], lam[p + 1], 1e-9);
    const double peak = f(lc);
    const double half = 0.5 * peak;

    auto crossing = [&](double inside, double outside_limit, double direction) {
        double a = inside, b = inside;
        while (true) {
            b = a + direction * step;
            if ((direction < 0 && b <= outside_limit) || (direction > 0 && b >= outside_limit)) {
                b = outside_limit;
                break;
            }
            if (f(b) < half) break;
            a = b;
        }
        return numeric::bisect([&](double l) { return f(l) - half; }, a, b, 1e-10);
    };
    const double left = crossing(lc, lambda_min_nm, -1.0);
    const double right = crossing(lc, lambda_max_nm, +1.0);

    PlanarCavityResult out{};
    out.resonance_nm = lc;
    out.linewidth_nm = right - left;
    out.quality_factor = lc / out.linewidth_nm;
    const auto m = mirrors_at_source(stack, two_pi / lc);
    out.top_reflectance = std::norm(m.r_top);
    out.bottom_reflectance = std::norm(m.r_bottom);
    out.top_escape_fraction = m.T_top / (m.T_top + m.T_bottom);
    out.pole_quality_factor = cavity_pole_q(stack, lc, out.quality_factor);
    return out;
}

FieldProfile field_profile(const LayerStack& stack, double wavelength_nm, double step_nm) {
    require(wavelength_nm > 0.0, "wavelength must be > 0");
    require(step_nm > 0.0 && step_nm <= 1.0, "sampling step must lie in (0, 1] nm");
    stack.validate();

    const complex k0 = two_pi / wavelength_nm;
    const auto top = stack_response(stack, wavelength_nm, Side::top);
    const complex n0 = stack.incident_medium.index_at(wavelength_nm);
    // Tangential E and (normalised) H at the first interface.
    complex e = 1.0 + top.r;
    complex h = n0 * (1.0 - top.r);

    FieldProfile out;
    double z0 = 0.0;
    std::vector<std::pair<double, double>> spacer_samples; // (z, |E|^2)
    double source_z = 0.0;
    double max_weighted = 0.0;
    double integral = 0.0;
    for (std::size_t j = 0; j < stack.layers.size(); ++j) {
        const auto& layer = stack.layers[j];
        const complex n = layer.material.index_at(wavelength_nm);
        const double eps = std::real(n * n);
        const auto samples = static_cast<std::size_t>(std::ceil(layer.thickness_nm / step_nm));
        const double dz = layer.thickness_nm / static_cast<double>(samples);
        double prev = 0.0;
        for (std::size_t i = 0; i <= samples; ++i) {
            const double s = dz * static_cast<double>(i);
            const complex delta = k0 * n * s;
            const complex es = std::cos(delta) * e + I * std::sin(delta) / n * h;
            const double intensity = std::norm(es);
            const double weighted = eps * intensity;
            out.z_nm.push_back(z0 + s);
            out.intensity.push_back(intensity);
            out.weighted_intensity.push_back(weighted);
            out.layer_of_sample.push_back(j);
            max_weighted = std::max(max_weighted, weighted);
            if (i > 0) integral += 0.5 * (prev + weighted) * dz;
            prev = weighted;
            if (stack.spacer_index && j == *stack.spacer_index) spacer_samples.emplace_back(z0 + s, intensity);
        }
        const complex delta = k0 * n * layer.thickness_nm;
        const complex e_next = std::cos(delta) * e + I * std::sin(delta) / n * h;
        const complex h_next = I * n * std::sin(delta) * e + std::cos(delta) * h;
        e = e_next;
        h = h_next;
        if (stack.spacer_index && j == *stack.spacer_index) source_z = z0 + stack.source_fraction * layer.thickness_nm;
        z0 += layer.thickness_nm;
    }
    // Equal antinodes (spacer edges and centre of a full-wave spacer) are
    // resolved in favour of the one nearest the emitter plane.
    double best = 0.0;
    for (const auto& [z, v] : spacer_samples) best = std::max(best, v);
    double nearest = std::numeric_limits<double>::infinity();
    for (const auto& [z, v] : spacer_samples)
        if (v >= best * (1.0 - 1e-6) && std::abs(z - source_z) < nearest) {
            nearest = std::abs(z - source_z);
            out.spacer_peak_z_nm = z;
        }
    out.effective_length_nm = max_weighted > 0.0 ? integral / max_weighted : 0.0;
    return out;
}

std::vector<std::pair<double, double>> reflectance_spectrum(const LayerStack& stack, double lambda_min_nm,
                                                            double lambda_max_nm, std::size_t points,
                                                            Side incidence) {
    require(points >= 2 && lambda_min_nm > 0.0 && lambda_max_nm > lambda_min_nm, "invalid spectrum grid");
    std::vector<std::pair<double, double>> out(points);
    for (std::size_t i = 0; i < points; ++i) {
        const double l = lambda_min_nm + (lambda_max_nm - lambda_min_nm) * static_cast<double>(i) /
                                             static_cast<double>(points - 1);
        out[i] = {l, stack_response(stack, l, incidence).R};
    }
    return out;
}

std::vector<std::pair<double, double>> emission_spectrum(const LayerStack& stack, double lambda_min_nm,
                                                         double lambda_max_nm, std::size_t points) {
    require(points >= 2 && lambda_min_nm > 0.0 && lambda_max_nm > lambda_min_nm, "invalid spectrum grid");
    stack.validate();
    std::vector<std::pair<double, double>> out(points);
    for (std::size_t i = 0; i < points; ++i) {
        const double l = lambda_min_nm + (lambda_max_nm - lambda_min_nm) * static_cast<double>(i) /
                                             static_cast<double>(points - 1);
        out[i] = {l, top_emission(stack, l)};
    }
    return out;
}

} // namespace qdpillar::optics
