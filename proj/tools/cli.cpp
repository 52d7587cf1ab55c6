#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "qdpillar/cascade.hpp"
#include "qdpillar/config.hpp"
#include "qdpillar/design.hpp"
#include "qdpillar/efficiency.hpp"
#include "qdpillar/emitter_cavity.hpp"
#include "qdpillar/layered_optics.hpp"
#include "qdpillar/output.hpp"
#include "qdpillar/pillar_modes.hpp"
#include "qdpillar/tcspc.hpp"

namespace qdpillar::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

struct Globals {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    std::optional<unsigned> jobs;
};

struct BudgetFlags {
    std::vector<std::string> rates;
    std::string detector, fibre, optics;
    std::optional<double> rep_rate_hz;
};

struct Overrides {
    std::optional<double> diameter_um;
    std::optional<std::int64_t> pulses;
    std::optional<double> reexcitation;
    std::string histogram;
    std::string irf_trace;
    std::string model;
    BudgetFlags budget;
};

// Everything a command needs once the configuration is settled.
struct Context {
    io::RunConfig cfg;
    fs::path out_dir;
    std::string config_hash;
    fs::path config_dir;
    std::ostream& out;
    std::ostream& err;
};

class Timer {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fixed(double v, int digits) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

std::string sig(double v, int digits = 4) {
    std::ostringstream os;
    os << std::setprecision(digits) << v;
    return os.str();
}

void commit(io::OutputSession& session, const Context& ctx, const Timer& timer, const json& extra = json::object()) {
    io::OutputSession::ManifestInfo info;
    info.config_hash = ctx.config_hash;
    info.seed = ctx.cfg.seed;
    info.wall_time_s = timer.seconds();
    if (!extra.empty()) info.extra_json = extra.dump();
    const auto files = session.commit(info);
    ctx.out << "wrote " << files.size() << " files to " << session.directory().string() << "\n";
}

std::vector<double> uniform(double a, double b, std::size_t n) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i)
        v[i] = n == 1 ? a : a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
    return v;
}

io::Table two_column(const std::string& x, const std::string& y, const std::vector<std::pair<double, double>>& data,
                     std::vector<std::string> comments = {}) {
    io::Table t;
    t.comments = std::move(comments);
    t.columns = {x, y};
    for (const auto& [a, b] : data) t.add_row({a, b});
    return t;
}

fs::path resolve(const Context& ctx, const std::string& p) {
    fs::path path(p);
    return path.is_relative() && !ctx.config_dir.empty() ? ctx.config_dir / path : path;
}

// ---------------------------------------------------------------- cavity

json cavity_json(const optics::PlanarCavityResult& r) {
    return {{"resonance_nm", r.resonance_nm},
            {"quality_factor", r.quality_factor},
            {"linewidth_nm", r.linewidth_nm},
            {"pole_quality_factor", r.pole_quality_factor},
            {"top_reflectance", r.top_reflectance},
            {"bottom_reflectance", r.bottom_reflectance},
            {"top_escape_fraction", r.top_escape_fraction}};
}

optics::PlanarCavityResult planar_resonance(const io::RunConfig& cfg, const optics::LayerStack& stack) {
    const double l0 = cfg.cavity.design_wavelength_nm;
    const double w = cfg.cavity.window_half_width_nm;
    return optics::find_resonance(stack, l0 - w, l0 + w);
}

int cmd_cavity(Context& ctx) {
    const Timer timer;
    const auto& c = ctx.cfg.cavity;
    const auto stack = ctx.cfg.stack();
    const auto res = planar_resonance(ctx.cfg, stack);
    const double lo = c.design_wavelength_nm - c.window_half_width_nm;
    const double hi = c.design_wavelength_nm + c.window_half_width_nm;
    const auto n = static_cast<std::size_t>(c.spectrum_points);
    const auto refl = optics::reflectance_spectrum(stack, lo, hi, n);
    const auto emis = optics::emission_spectrum(stack, lo, hi, n);
    const auto field = optics::field_profile(stack, res.resonance_nm, c.field_step_nm);

    io::OutputSession session(ctx.out_dir, "cavity");
    session.write_table("cavity_reflectance.csv",
                        two_column("wavelength_nm", "reflectance", refl, {"quantity: top-side reflectance"}));
    session.write_table("cavity_emission.csv",
                        two_column("wavelength_nm", "top_emission", emis,
                                   {"quantity: power escaping through the top, relative to bulk emission"}));
    io::Table ft;
    ft.comments = {"quantity: field intensity for a unit plane wave incident from the top",
                   "wavelength_nm: " + io::format_double(res.resonance_nm)};
    ft.columns = {"z_nm", "intensity", "weighted_intensity"};
    for (std::size_t i = 0; i < field.z_nm.size(); ++i)
        ft.add_row({field.z_nm[i], field.intensity[i], field.weighted_intensity[i]});
    session.write_table("cavity_field.csv", ft);

    auto summary = cavity_json(res);
    summary["effective_length_nm"] = field.effective_length_nm;
    summary["top_pairs"] = c.top_pairs;
    summary["bottom_pairs"] = c.bottom_pairs;
    summary["design_wavelength_nm"] = c.design_wavelength_nm;
    session.write_json("cavity_summary.json", summary.dump(2));
    ctx.out << "planar cavity: resonance " << fixed(res.resonance_nm, 2) << " nm, Q " << fixed(res.quality_factor, 1)
            << ", linewidth " << fixed(res.linewidth_nm, 2) << " nm, top escape " << fixed(res.top_escape_fraction, 3)
            << ", L_eff " << fixed(field.effective_length_nm, 1) << " nm\n";
    commit(session, ctx, timer);
    return ok;
}

// ---------------------------------------------------------------- modes

int cmd_modes(Context& ctx) {
    const Timer timer;
    const auto geom = ctx.cfg.pillar_geometry();
    const auto res = planar_resonance(ctx.cfg, ctx.cfg.stack());
    const double lambda = res.resonance_nm;
    const auto found = modes::solve_guided_modes(geom, lambda, modes::max_azimuthal_order(geom, lambda));
    require(!found.empty(), "no guided mode found", ErrorKind::not_found);

    io::OutputSession session(ctx.out_dir, "modes");
    io::Table t;
    t.comments = {"guided LP modes at " + io::format_double(lambda) + " nm, diameter " +
                  io::format_double(geom.diameter_um) + " um"};
    t.columns = {"l", "m", "n_eff", "w0_um", "lambda_mode_nm"};
    for (const auto& m : found)
        t.add_row({std::int64_t{m.l}, std::int64_t{m.m}, m.n_eff, m.mode_field_radius_um,
                   modes::pillar_resonance_shift(lambda, m, geom)});
    session.write_table("modes.csv", t);

    const auto& f = found.front();
    const auto mi = modes::mode_intensity(f, geom);
    const json summary = {{"wavelength_nm", lambda},
                          {"diameter_um", geom.diameter_um},
                          {"v_number", modes::v_number(geom, lambda)},
                          {"guided_modes", found.size()},
                          {"modes_per_polarisation", modes::polarisation_mode_count(found)},
                          {"fundamental",
                           {{"n_eff", f.n_eff},
                            {"w0_um", f.mode_field_radius_um},
                            {"far_field_na", modes::far_field_na(f, lambda)},
                            {"on_axis_intensity_per_um2", mi.on_axis_um2},
                            {"cladding_fraction", mi.cladding_fraction},
                            {"lambda_mode_nm", modes::pillar_resonance_shift(lambda, f, geom)}}}};
    session.write_json("modes_summary.json", summary.dump(2));
    ctx.out << "pillar " << fixed(geom.diameter_um, 3) << " um: V " << fixed(modes::v_number(geom, lambda), 2) << ", "
            << found.size() << " LP modes, fundamental n_eff " << fixed(f.n_eff, 4) << ", w0 "
            << fixed(f.mode_field_radius_um, 3) << " um, NA " << fixed(modes::far_field_na(f, lambda), 3) << "\n";
    commit(session, ctx, timer);
    return ok;
}

// ---------------------------------------------------------------- couple

int cmd_couple(Context& ctx) {
    const Timer timer;
    const auto& cfg = ctx.cfg;
    const auto geom = cfg.pillar_geometry();
    const auto dev =
        emitter::couple_device(cfg.stack(), cfg.cavity.design_wavelength_nm, geom,
                               emitter::DeviceOptions{cfg.cavity.window_half_width_nm, cfg.leaky});
    const double w = cfg.cavity.window_half_width_nm;
    const auto wl = uniform(dev.pillar_resonance_nm - w, dev.pillar_resonance_nm + w,
                            static_cast<std::size_t>(cfg.cavity.spectrum_points));
    const auto spec = emitter::coupling_spectrum(dev, wl);
    const auto rates = emitter::on_off_rates(dev, geom, cfg.leaky);

    const design::Evaluator evaluator(cfg.design_context());
    design::SweepGrid grid;
    grid.diameters_um = design::linear_axis(1.0, 3.0, 0.01);
    design::SweepOptions so;
    so.jobs = cfg.jobs;
    const auto rows = design::sweep(cfg.design_point(), grid, evaluator, so);

    io::OutputSession session(ctx.out_dir, "couple");
    io::Table t;
    t.comments = {"emitter coupling around the pillar resonance " + io::format_double(dev.pillar_resonance_nm) + " nm"};
    t.columns = {"lambda_nm", "F_cav", "beta", "eta_int"};
    for (std::size_t i = 0; i < wl.size(); ++i) t.add_row({wl[i], spec.f_cav[i], spec.beta[i], spec.eta_int[i]});
    session.write_table("couple_spectrum.csv", t);
    io::Table bd;
    bd.comments = {"beta at the pillar resonance versus diameter"};
    bd.columns = {"diameter_um", "beta_at_resonance"};
    for (const auto& r : rows) bd.add_row({r.point.diameter_um, r.beta});
    session.write_table("couple_beta_vs_diameter.csv", bd);

    // Emitter lines are evaluated where configured, not snapped to the resonance.
    const std::vector<double> lines{cfg.emitter.biexciton_nm, cfg.emitter.exciton_nm};
    const auto at_lines = emitter::coupling_spectrum(dev, lines);
    json line_info = json::object();
    const char* names[] = {"xx", "x"};
    const double bulk[] = {cfg.emitter.bulk_lifetime_xx_ps, cfg.emitter.bulk_lifetime_x_ps};
    for (int i = 0; i < 2; ++i) {
        const double total = at_lines.f_cav[i] + dev.f_leaky;
        line_info[names[i]] = {{"wavelength_nm", lines[i]},
                               {"F_cav", at_lines.f_cav[i]},
                               {"beta", at_lines.beta[i]},
                               {"eta_int", at_lines.eta_int[i]},
                               {"predicted_lifetime_ps", emitter::lifetime_prediction(bulk[i], total)}};
    }
    const json summary = {{"diameter_um", geom.diameter_um},
                          {"planar_resonance_nm", dev.cavity.resonance_nm},
                          {"pillar_resonance_nm", dev.pillar_resonance_nm},
                          {"quality_factor", dev.cavity.quality_factor},
                          {"effective_length_nm", dev.effective_length_nm},
                          {"mode_volume_um3", dev.mode_volume_um3},
                          {"far_field_na", dev.far_field_na},
                          {"purcell", dev.purcell},
                          {"f_leaky", dev.f_leaky},
                          {"beta", dev.beta},
                          {"eta_top", dev.cavity.top_escape_fraction},
                          {"eta_int", dev.eta_int},
                          {"rates",
                           {{"on_cavity", rates.on_cavity}, {"off_cavity", rates.off_cavity}, {"ratio", rates.ratio}}},
                          {"lines", line_info}};
    session.write_json("couple_summary.json", summary.dump(2));
    ctx.out << "device: F_p " << fixed(dev.purcell, 3) << ", F_leaky " << fixed(dev.f_leaky, 3) << ", beta "
            << fixed(dev.beta, 3) << ", eta_int " << fixed(dev.eta_int, 3) << ", NA " << fixed(dev.far_field_na, 3)
            << ", on/off rate ratio " << fixed(rates.ratio, 2) << "\n";
    commit(session, ctx, timer);
    return ok;
}

// ---------------------------------------------------------------- cascade

int cmd_cascade(Context& ctx) {
    const Timer timer;
    const auto& cs = ctx.cfg.cascade;
    const auto& p = cs.params;
    p.validate();
    if (p.short_period_warning())
        ctx.err << "warning: repetition period is shorter than ten exciton lifetimes; residual population carries over\n";

    const auto areas = uniform(0.0, cs.rabi_area_max, static_cast<std::size_t>(cs.rabi_points));
    const auto pop = cascade::simulate_pulse(p, areas);
    const auto records = cascade::trajectory_ensemble(
        p, cs.n_pulses, ctx.cfg.seed, cascade::EnsembleOptions{cs.reexcitation_probability, ctx.cfg.jobs});
    const auto g2x = cascade::g2_pulsed(records, cascade::Channel::x, cs.n_pulses);
    const auto g2xx = cascade::g2_pulsed(records, cascade::Channel::xx, cs.n_pulses);
    const auto hom = cascade::hom_visibility_from_records(p, records);

    io::OutputSession session(ctx.out_dir, "cascade");
    io::Table rt;
    rt.comments = {"biexciton population after one pulse versus pulse area (rad)"};
    rt.columns = {"pulse_area", "biexciton_population"};
    for (std::size_t i = 0; i < areas.size(); ++i) rt.add_row({areas[i], pop[i]});
    session.write_table("cascade_rabi.csv", rt);
    if (cs.write_records) {
        io::Table pt;
        pt.columns = {"pulse_index", "channel", "time_ps"};
        for (const auto& r : records)
            pt.add_row({r.pulse_index, std::string(r.channel == cascade::Channel::x ? "x" : "xx"), r.emission_time_ps});
        session.write_table("cascade_photons.csv", pt);
    }
    auto g2_json = [](const cascade::G2Estimate& g) {
        return json{{"g2_zero", g.g2_zero},
                    {"error", g.error},
                    {"zero_delay_coincidences", g.zero_delay_coincidences},
                    {"mean_side_coincidences", g.mean_side_coincidences}};
    };
    const json summary = {{"seed", ctx.cfg.seed},
                          {"n_pulses", cs.n_pulses},
                          {"photons", records.size()},
                          {"reexcitation_probability", cs.reexcitation_probability},
                          {"tau_xx_ps", p.tau_xx_ps},
                          {"tau_x_ps", p.tau_x_ps},
                          {"pi_pulse_population", cascade::simulate_pulse(p, std::vector<double>{p.pulse_area})[0]},
                          {"g2", {{"x", g2_json(g2x)}, {"xx", g2_json(g2xx)}}},
                          {"hom_visibility",
                           {{"analytic", hom.analytic},
                            {"trajectory", hom.trajectory},
                            {"standard_error", hom.standard_error},
                            {"pairs", hom.pairs}}}};
    session.write_json("cascade_summary.json", summary.dump(2));
    ctx.out << "cascade: " << records.size() << " photons from " << cs.n_pulses << " pulses, g2(0) x "
            << sig(g2x.g2_zero, 3) << " xx " << sig(g2xx.g2_zero, 3) << ", HOM visibility analytic "
            << fixed(hom.analytic, 3) << " trajectory " << fixed(hom.trajectory, 3) << " +- "
            << fixed(hom.standard_error, 3) << "\n";
    commit(session, ctx, timer);
    return ok;
}

// ---------------------------------------------------------------- fit

tcspc::Param param_named(const std::string& name) {
    for (std::size_t i = 0; i < tcspc::param_count; ++i)
        if (name == tcspc::to_string(static_cast<tcspc::Param>(i))) return static_cast<tcspc::Param>(i);
    throw Error(ErrorKind::invalid_parameter, "unknown fit parameter '" + name + "'");
}

json params_json(const tcspc::ModelParams& v, const std::vector<tcspc::Param>& which) {
    json j = json::object();
    for (auto p : which) j[tcspc::to_string(p)] = v[p];
    return j;
}

int cmd_fit(Context& ctx) {
    const Timer timer;
    const auto& f = ctx.cfg.fit;
    const auto kind = tcspc::model_from_string(f.model);

    json irf_info;
    double sigma = f.irf_fwhm_ps / tcspc::fwhm_per_sigma;
    if (!f.irf_trace.empty()) {
        const auto irf = tcspc::irf_from_trace(io::read_histogram(resolve(ctx, f.irf_trace)));
        sigma = irf.irf.sigma_ps();
        irf_info = {{"source", f.irf_trace},
                    {"fwhm_ps", irf.irf.fwhm_ps},
                    {"fwhm_error_ps", irf.fwhm_error_ps},
                    {"center_ps", irf.irf.center_ps},
                    {"center_error_ps", irf.center_error_ps}};
    } else {
        irf_info = {{"source", "config"}, {"fwhm_ps", f.irf_fwhm_ps}};
    }

    tcspc::Histogram h;
    const bool synthetic = f.histogram.empty();
    if (synthetic) {
        const auto& s = f.synthetic;
        tcspc::ModelParams truth;
        truth.tau = s.tau_ps;
        truth.tau_fast = f.tau_fast_ps;
        truth.sigma = sigma;
        truth.t0 = s.t0_ps;
        truth.amplitude = 1.0;
        truth.baseline = s.baseline_fraction * s.tau_ps / ((1.0 - s.baseline_fraction) * s.window_ps);
        tcspc::SynthesisOptions so;
        so.total_counts = s.total_counts;
        so.bin_width_ps = s.bin_width_ps;
        so.window_ps = s.window_ps;
        h = tcspc::synthesize_histogram(kind, truth, so, ctx.cfg.seed);
    } else {
        h = io::read_histogram(resolve(ctx, f.histogram));
    }

    tcspc::FitOptions fo;
    fo.initial.sigma = sigma;
    fo.initial.tau_fast = f.tau_fast_ps;
    fo.pinned.clear();
    for (const auto& name : f.pinned) fo.pinned.push_back(param_named(name));

    tcspc::FitResult r;
    try {
        r = tcspc::fit_lifetime(h, kind, fo);
    } catch (const tcspc::FitError& e) {
        const auto& b = e.best();
        ctx.err << "best parameters before giving up: tau " << sig(b.values.tau, 6) << " ps, deviance "
                << sig(b.deviance, 6) << " after " << b.iterations << " iterations\n";
        throw;
    }

    io::OutputSession session(ctx.out_dir, "fit");
    if (synthetic)
        session.write_text("fit_histogram.csv", [&] {
            std::ostringstream os;
            io::write_histogram(os, h,
                                {"synthetic " + std::string(tcspc::to_string(kind)) + " histogram",
                                 "seed: " + std::to_string(ctx.cfg.seed)});
            return os.str();
        }());
    io::Table curve;
    curve.comments = {"model: " + std::string(tcspc::to_string(kind))};
    curve.columns = {"time_ps", "counts", "model"};
    for (std::size_t i = 0; i < h.counts.size(); ++i)
        curve.add_row({h.bin_center(i), h.counts[i], tcspc::evaluate(kind, r.values, h.bin_center(i))});
    session.write_table("fit_curve.csv", curve);

    const auto all = tcspc::model_parameters(kind);
    std::vector<std::string> free_names;
    for (auto p : r.free) free_names.push_back(tcspc::to_string(p));
    const json report = {{"model", tcspc::to_string(kind)},
                         {"seed", ctx.cfg.seed},
                         {"histogram", synthetic ? std::string("synthetic") : f.histogram},
                         {"total_counts", h.total()},
                         {"bin_width_ps", h.bin_width_ps},
                         {"irf", irf_info},
                         {"values", params_json(r.values, all)},
                         {"errors", params_json(r.errors, all)},
                         {"free", free_names},
                         {"deviance", r.deviance},
                         {"degrees_of_freedom", r.degrees_of_freedom},
                         {"reduced_deviance", r.reduced_deviance},
                         {"iterations", r.iterations},
                         {"converged", r.converged}};
    session.write_json("fit_report.json", report.dump(2));
    ctx.out << tcspc::to_string(kind) << " fit: tau " << fixed(r.values.tau, 2) << " +- " << fixed(r.errors.tau, 2)
            << " ps, reduced deviance " << fixed(r.reduced_deviance, 3) << ", " << r.iterations << " iterations\n";
    commit(session, ctx, timer);
    return ok;
}

// ---------------------------------------------------------------- budget

budget::Measured parse_measured(const std::string& text, const std::string& what) {
    budget::Measured m;
    const auto colon = text.find(':');
    try {
        std::size_t used = 0;
        const auto head = text.substr(0, colon);
        m.value = std::stod(head, &used);
        if (used != head.size()) throw std::invalid_argument(text);
        if (colon != std::string::npos) {
            const auto tail = text.substr(colon + 1);
            m.sigma = std::stod(tail, &used);
            if (used != tail.size()) throw std::invalid_argument(text);
        }
    } catch (const std::logic_error&) {
        throw Error(ErrorKind::invalid_parameter, what + ": expected VALUE or VALUE:SIGMA, got '" + text + "'");
    }
    return m;
}

void apply_budget_flags(io::RunConfig& cfg, const BudgetFlags& b) {
    if (!b.rates.empty()) {
        cfg.budget.rates.clear();
        for (const auto& r : b.rates) {
            const auto eq = r.find('=');
            if (eq == std::string::npos || eq == 0)
                throw Error(ErrorKind::invalid_parameter, "--rate: expected CHANNEL=VALUE[:SIGMA], got '" + r + "'");
            cfg.budget.rates.push_back({r.substr(0, eq), parse_measured(r.substr(eq + 1), "--rate")});
        }
    }
    if (!b.detector.empty()) cfg.budget.chain.detector = parse_measured(b.detector, "--detector");
    if (!b.fibre.empty()) cfg.budget.chain.fibre = parse_measured(b.fibre, "--fibre");
    if (!b.optics.empty()) cfg.budget.chain.optics = parse_measured(b.optics, "--optics");
    if (b.rep_rate_hz) cfg.budget.chain.rep_rate_hz = *b.rep_rate_hz;
}

int cmd_budget(Context& ctx) {
    const Timer timer;
    const auto& b = ctx.cfg.budget;
    const auto rates = ctx.cfg.budget_rates();
    require(!rates.empty(), "no count rates given", ErrorKind::insufficient_data);
    const auto result = budget::compute_budget(rates, b.chain);
    const double needed = budget::required_rate(b.target_efficiency, b.chain);

    json channels = json::array();
    ctx.out << std::left << std::setw(10) << "channel" << std::setw(16) << "rate (c/s)" << std::setw(12) << "efficiency"
            << std::setw(12) << "+- stat" << "+- full\n";
    for (const auto& c : result.channels) {
        ctx.out << std::left << std::setw(10) << c.channel << std::setw(16) << fixed(c.detected_rate.value, 0)
                << std::setw(12) << fixed(c.efficiency, 4) << std::setw(12) << fixed(c.sigma_statistical, 4)
                << fixed(c.sigma_full, 4) << "\n";
        channels.push_back({{"channel", c.channel},
                            {"detected_rate", c.detected_rate.value},
                            {"detected_rate_sigma", c.detected_rate.sigma},
                            {"efficiency", c.efficiency},
                            {"sigma_statistical", c.sigma_statistical},
                            {"sigma_full", c.sigma_full}});
    }
    if (result.channels.size() >= 2)
        ctx.out << "pair efficiency " << fixed(result.pair_efficiency, 4) << " +- " << fixed(result.pair_sigma, 4)
                << "\n";
    ctx.out << "rate needed for " << fixed(b.target_efficiency, 3) << " efficiency: " << fixed(needed, 0) << " c/s\n";

    auto chain_json = [](const budget::Measured& m) { return json{{"value", m.value}, {"sigma", m.sigma}}; };
    const json summary = {{"chain",
                           {{"rep_rate_hz", b.chain.rep_rate_hz},
                            {"detector", chain_json(b.chain.detector)},
                            {"fibre", chain_json(b.chain.fibre)},
                            {"optics", chain_json(b.chain.optics)},
                            {"blinking", b.chain.blinking},
                            {"transmission", b.chain.transmission()}}},
                          {"channels", channels},
                          {"pair_efficiency", result.pair_efficiency},
                          {"pair_sigma", result.pair_sigma},
                          {"target_efficiency", b.target_efficiency},
                          {"required_rate", needed}};
    io::OutputSession session(ctx.out_dir, "budget");
    session.write_json("budget.json", summary.dump(2));
    commit(session, ctx, timer);
    return ok;
}

// ---------------------------------------------------------------- sweep / optimize

io::Table evaluation_table(const std::vector<design::DesignEvaluation>& rows, std::vector<std::string> comments) {
    io::Table t;
    t.comments = std::move(comments);
    t.columns = {"diameter_um",  "top_pairs",  "bottom_pairs",    "substrate", "design_wavelength_nm",
                 "eta_int",      "quality_factor", "linewidth_nm", "beta",      "eta_top",
                 "purcell",      "f_leaky",    "resonance_nm",    "mode_volume_um3", "pair_compatible"};
    for (const auto& r : rows)
        t.add_row({r.point.diameter_um, std::int64_t{r.point.top_pairs}, std::int64_t{r.point.bottom_pairs},
                   r.point.substrate.name, r.point.design_wavelength_nm, r.eta_int, r.quality_factor, r.linewidth_nm,
                   r.beta, r.eta_top, r.purcell, r.f_leaky, r.resonance_nm, r.mode_volume_um3,
                   std::int64_t{r.pair_compatible ? 1 : 0}});
    return t;
}

json evaluation_json(const design::DesignEvaluation& r) {
    return {{"diameter_um", r.point.diameter_um},
            {"top_pairs", r.point.top_pairs},
            {"bottom_pairs", r.point.bottom_pairs},
            {"substrate", r.point.substrate.name},
            {"design_wavelength_nm", r.point.design_wavelength_nm},
            {"eta_int", r.eta_int},
            {"quality_factor", r.quality_factor},
            {"linewidth_nm", r.linewidth_nm},
            {"beta", r.beta},
            {"eta_top", r.eta_top},
            {"purcell", r.purcell},
            {"f_leaky", r.f_leaky},
            {"resonance_nm", r.resonance_nm},
            {"mode_volume_um3", r.mode_volume_um3},
            {"pair_compatible", r.pair_compatible}};
}

int cmd_sweep(Context& ctx) {
    const Timer timer;
    const auto grid = ctx.cfg.sweep_grid();
    const design::Evaluator evaluator(ctx.cfg.design_context());
    design::SweepOptions so;
    so.max_points = ctx.cfg.sweep.max_points;
    so.jobs = ctx.cfg.jobs;
    std::size_t last_percent = 101;
    so.progress = [&](std::size_t done, std::size_t total) {
        const std::size_t percent = total ? 100 * done / total : 100;
        if (percent != last_percent) {
            last_percent = percent;
            ctx.err << "\rsweep " << done << "/" << total << " (" << percent << "%)" << std::flush;
        }
    };
    const auto rows = design::sweep(ctx.cfg.design_point(), grid, evaluator, so);
    ctx.err << "\n";

    const auto fields = grid.swept_fields();
    std::string swept;
    for (const auto& f : fields) swept += (swept.empty() ? "" : ",") + f;
    io::OutputSession session(ctx.out_dir, "sweep");
    session.write_table("sweep.csv",
                        evaluation_table(rows, {"swept fields: " + (swept.empty() ? std::string("none") : swept),
                                                "points: " + std::to_string(rows.size())}));
    json grid_json = json::object();
    const auto& s = ctx.cfg.sweep;
    if (s.diameters_um) grid_json["diameter_um"] = *s.diameters_um;
    if (s.top_pairs) grid_json["top_pairs"] = *s.top_pairs;
    if (s.bottom_pairs) grid_json["bottom_pairs"] = *s.bottom_pairs;
    if (s.substrates) grid_json["substrates"] = *s.substrates;
    if (s.wavelengths_nm) grid_json["design_wavelength_nm"] = *s.wavelengths_nm;

    const auto best = std::max_element(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
        return a.eta_int < b.eta_int;
    });
    if (best != rows.end())
        ctx.out << "sweep: " << rows.size() << " points, best eta_int " << fixed(best->eta_int, 4) << " at "
                << best->point.describe() << "\n";
    commit(session, ctx, timer, json{{"grid", grid_json}, {"points", rows.size()}});
    return ok;
}

int cmd_optimize(Context& ctx) {
    const Timer timer;
    const design::Evaluator evaluator(ctx.cfg.design_context());
    design::OptimizeOptions oo;
    oo.objective = design::objective_from_string(ctx.cfg.optimize.objective);
    oo.coarse_diameters = ctx.cfg.optimize.coarse_diameters;
    oo.jobs = ctx.cfg.jobs;
    const auto result = design::optimize(ctx.cfg.optimize_bounds(), evaluator, oo);

    io::OutputSession session(ctx.out_dir, "optimize");
    session.write_table("optimize_coarse.csv", evaluation_table(result.coarse, {"coarse grid of the optimizer"}));
    const json summary = {{"objective", design::to_string(oo.objective)},
                          {"evaluations", result.evaluations},
                          {"best", evaluation_json(result.best)}};
    session.write_json("optimize.json", summary.dump(2));
    ctx.out << "optimum (" << design::to_string(oo.objective) << "): eta_int " << fixed(result.best.eta_int, 4)
            << " at " << result.best.point.describe() << ", Q " << fixed(result.best.quality_factor, 1)
            << ", linewidth " << fixed(result.best.linewidth_nm, 2) << " nm, " << result.evaluations
            << " evaluations\n";
    commit(session, ctx, timer);
    return ok;
}

int exit_code_for(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::invalid_parameter:
    case ErrorKind::config:
    case ErrorKind::io:
        return invalid;
    default:
        return failure;
    }
}

void print_diagnostics(std::ostream& err, const std::string& source, const std::vector<io::Diagnostic>& d) {
    err << source << ": " << d.size() << (d.size() == 1 ? " problem" : " problems") << "\n";
    for (const auto& x : d) err << "  " << x.str() << "\n";
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Quantum-dot micropillar source toolkit: cavity design, emitter coupling, cascade dynamics, "
                 "lifetime fitting and efficiency budgets.",
                 "qdpillar"};
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    Overrides o;
    std::uint64_t seed_value = 0;
    unsigned jobs_value = 1;
    app.add_option("-c,--config", g.config_path, "YAML run configuration (defaults to the built-in baseline)");
    auto* seed_opt = app.add_option("--seed", seed_value, "override the configuration seed");
    app.add_option("-o,--out", g.out_dir, "output directory (overrides config, then $QDPILLAR_OUT)");
    auto* jobs_opt = app.add_option("-j,--jobs", jobs_value, "maximum worker threads")->check(CLI::PositiveNumber);

    auto* cavity = app.add_subcommand("cavity", "planar cavity resonance, Q, spectra and field profile");
    auto* modes_cmd = app.add_subcommand("modes", "guided modes of the pillar");
    auto* couple = app.add_subcommand("couple", "Purcell factor, beta and internal efficiency of the device");
    auto* cascade_cmd = app.add_subcommand("cascade", "biexciton cascade: Rabi curve, g2 and HOM visibility");
    auto* fit = app.add_subcommand("fit", "maximum-likelihood lifetime fit of a TCSPC histogram");
    auto* budget_cmd = app.add_subcommand("budget", "source efficiency from detected count rates");
    auto* sweep_cmd = app.add_subcommand("sweep", "evaluate designs on a parameter grid");
    auto* optimize_cmd = app.add_subcommand("optimize", "search the design space for the best internal efficiency");
    auto* validate_cmd = app.add_subcommand("validate", "check a configuration file and list every problem");

    double diameter = 0.0;
    auto* diameter_opt = app.add_option("--diameter", diameter, "override the pillar diameter in um");
    std::int64_t pulses = 0;
    double reexc = 0.0;
    auto* pulses_opt = cascade_cmd->add_option("--pulses", pulses, "number of simulated pulses")->check(CLI::PositiveNumber);
    auto* reexc_opt = cascade_cmd->add_option("--reexcitation", reexc, "re-excitation probability")->check(CLI::Range(0.0, 1.0));
    fit->add_option("--histogram", o.histogram, "histogram file (time_ps, counts); synthesizes one when absent");
    fit->add_option("--irf-trace", o.irf_trace, "attenuated-laser trace for the IRF width");
    fit->add_option("--model", o.model, "exp_gauss or cascade_gauss");
    budget_cmd->add_option("--rate", o.budget.rates, "CHANNEL=RATE[:SIGMA], repeatable");
    budget_cmd->add_option("--detector", o.budget.detector, "detector efficiency VALUE[:SIGMA]");
    budget_cmd->add_option("--fibre", o.budget.fibre, "fibre coupling efficiency VALUE[:SIGMA]");
    budget_cmd->add_option("--optics", o.budget.optics, "optics transmission VALUE[:SIGMA]");
    double rep_rate = 0.0;
    auto* rep_opt = budget_cmd->add_option("--rep-rate", rep_rate, "laser repetition rate in Hz");
    std::string validate_path;
    validate_cmd->add_option("file", validate_path, "configuration file to check");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return e.get_exit_code() == 0 ? code : usage;
    }
    if (seed_opt->count()) g.seed = seed_value;
    if (jobs_opt->count()) g.jobs = jobs_value;
    if (diameter_opt->count()) o.diameter_um = diameter;
    if (pulses_opt->count()) o.pulses = pulses;
    if (reexc_opt->count()) o.reexcitation = reexc;
    if (rep_opt->count()) o.budget.rep_rate_hz = rep_rate;

    try {
        if (validate_cmd->parsed()) {
            const std::string path = validate_path.empty() ? g.config_path : validate_path;
            if (path.empty()) {
                err << "validate: no configuration file given\n";
                return usage;
            }
            const auto diags = io::validate_config(path);
            if (diags.empty()) {
                out << path << ": ok\n";
                return ok;
            }
            print_diagnostics(err, path, diags);
            return invalid;
        }

        io::RunConfig cfg = io::default_config();
        std::string hash_source;
        fs::path config_dir;
        if (!g.config_path.empty()) {
            std::ifstream in(g.config_path, std::ios::binary);
            if (!in) throw Error(ErrorKind::io, "cannot read configuration file '" + g.config_path + "'");
            std::ostringstream ss;
            ss << in.rdbuf();
            hash_source = ss.str();
            auto parsed = io::parse_config(hash_source);
            if (!parsed.ok()) {
                print_diagnostics(err, g.config_path, parsed.diagnostics);
                return invalid;
            }
            cfg = std::move(parsed.config);
            config_dir = fs::path(g.config_path).parent_path();
        } else {
            hash_source = io::to_yaml(cfg);
        }

        if (g.seed) cfg.seed = *g.seed;
        if (g.jobs) cfg.jobs = *g.jobs;
        if (o.diameter_um) cfg.pillar.diameter_um = *o.diameter_um;
        if (o.pulses) cfg.cascade.n_pulses = *o.pulses;
        if (o.reexcitation) cfg.cascade.reexcitation_probability = *o.reexcitation;
        if (!o.model.empty()) cfg.fit.model = o.model;
        apply_budget_flags(cfg, o.budget);
        // Paths given on the command line are relative to the working directory.
        if (!o.histogram.empty()) cfg.fit.histogram = fs::absolute(o.histogram).string();
        if (!o.irf_trace.empty()) cfg.fit.irf_trace = fs::absolute(o.irf_trace).string();
        if (const auto diags = io::validate(cfg); !diags.empty()) {
            print_diagnostics(err, g.config_path.empty() ? std::string("command line") : g.config_path, diags);
            return invalid;
        }

        fs::path out_dir;
        if (!g.out_dir.empty())
            out_dir = g.out_dir;
        else if (!cfg.output_dir.empty())
            out_dir = cfg.output_dir;
        else if (const char* env = std::getenv("QDPILLAR_OUT"); env && *env)
            out_dir = env;
        else
            out_dir = "qdpillar-out";

        Context ctx{cfg, out_dir, io::content_hash(hash_source), config_dir, out, err};
        if (cavity->parsed()) return cmd_cavity(ctx);
        if (modes_cmd->parsed()) return cmd_modes(ctx);
        if (couple->parsed()) return cmd_couple(ctx);
        if (cascade_cmd->parsed()) return cmd_cascade(ctx);
        if (fit->parsed()) return cmd_fit(ctx);
        if (budget_cmd->parsed()) return cmd_budget(ctx);
        if (sweep_cmd->parsed()) return cmd_sweep(ctx);
        if (optimize_cmd->parsed()) return cmd_optimize(ctx);
        err << app.help();
        return usage;
    } catch (const io::ConfigError& e) {
        print_diagnostics(err, g.config_path, e.diagnostics());
        return invalid;
    } catch (const Error& e) {
        err << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return failure;
    }
}

} // namespace qdpillar::cli
