#include "qdpillar/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

namespace qdpillar::io {

std::string Diagnostic::str() const {
    std::string s = key.empty() ? std::string("<root>") : key;
    if (line > 0) s += " (line " + std::to_string(line) + ")";
    return s + ": " + reason;
}

namespace {

std::string join_diagnostics(const std::vector<Diagnostic>& d) {
    std::string s = "configuration is invalid:";
    for (const auto& x : d) s += "\n  " + x.str();
    return s;
}

std::string child(const std::string& prefix, const std::string& key) {
    return prefix.empty() ? key : prefix + "." + key;
}

// Reads typed values out of YAML nodes, turning every problem into a
// diagnostic and remembering the source line of each key it saw.
class Reader {
public:
    std::vector<Diagnostic> diagnostics;
    std::map<std::string, int> lines;

    void fail(const std::string& key, const std::string& reason, const YAML::Node& node = YAML::Node()) {
        diagnostics.push_back({key, reason, line_of(node, key)});
    }

    int line_of(const YAML::Node& node, const std::string& key) const {
        if (node.IsDefined() && node.Mark().line >= 0) return node.Mark().line + 1;
        if (auto it = lines.find(key); it != lines.end()) return it->second;
        return 0;
    }

    bool is_map(const YAML::Node& node, const std::string& key) {
        if (!node.IsDefined() || node.IsNull()) return false;
        if (!node.IsMap()) {
            fail(key, "expected a mapping", node);
            return false;
        }
        return true;
    }

    void allow(const YAML::Node& node, const std::string& prefix, std::initializer_list<const char*> keys) {
        if (!node.IsMap()) return;
        std::set<std::string> allowed(keys.begin(), keys.end());
        for (const auto& kv : node) {
            const auto k = kv.first.as<std::string>();
            const auto path = child(prefix, k);
            lines[path] = kv.first.Mark().line + 1;
            if (!allowed.count(k)) fail(path, "unknown key", kv.first);
        }
    }

    void number(const YAML::Node& parent, const char* key, const std::string& prefix, double& out) {
        const auto n = parent[key];
        if (!n.IsDefined() || n.IsNull()) return;
        try {
            out = n.as<double>();
            if (!std::isfinite(out)) fail(child(prefix, key), "must be a finite number", n);
        } catch (const YAML::Exception&) {
            fail(child(prefix, key), "expected a number", n);
        }
    }

    template <class Int>
    void integer(const YAML::Node& parent, const char* key, const std::string& prefix, Int& out) {
        const auto n = parent[key];
        if (!n.IsDefined() || n.IsNull()) return;
        out = to_integer<Int>(n, child(prefix, key), out);
    }

    template <class Int>
    Int to_integer(const YAML::Node& n, const std::string& path, Int fallback) {
        try {
            return n.as<Int>();
        } catch (const YAML::Exception&) {
        }
        try {
            const double d = n.as<double>();
            if (std::floor(d) == d && std::abs(d) < 9.0e15) return static_cast<Int>(d);
        } catch (const YAML::Exception&) {
        }
        fail(path, "expected an integer", n);
        return fallback;
    }

    void text(const YAML::Node& parent, const char* key, const std::string& prefix, std::string& out) {
        const auto n = parent[key];
        if (!n.IsDefined() || n.IsNull()) return;
        if (!n.IsScalar()) {
            fail(child(prefix, key), "expected a string", n);
            return;
        }
        out = n.as<std::string>();
    }

    void boolean(const YAML::Node& parent, const char* key, const std::string& prefix, bool& out) {
        const auto n = parent[key];
        if (!n.IsDefined() || n.IsNull()) return;
        try {
            out = n.as<bool>();
        } catch (const YAML::Exception&) {
            fail(child(prefix, key), "expected true or false", n);
        }
    }

    void strings(const YAML::Node& parent, const char* key, const std::string& prefix,
                 std::vector<std::string>& out) {
        const auto n = parent[key];
        if (!n.IsDefined() || n.IsNull()) return;
        if (!n.IsSequence()) {
            fail(child(prefix, key), "expected a list of strings", n);
            return;
        }
        out.clear();
        for (const auto& item : n) out.push_back(item.as<std::string>());
    }

    // A list of numbers, or a {start, stop, step} range.
    void number_axis(const YAML::Node& parent, const char* key, const std::string& prefix,
                     std::optional<std::vector<double>>& out) {
        const auto n = parent[key];
        const auto path = child(prefix, key);
        if (!n.IsDefined() || n.IsNull()) return;
        if (n.IsSequence()) {
            std::vector<double> v;
            for (const auto& item : n) {
                try {
                    v.push_back(item.as<double>());
                } catch (const YAML::Exception&) {
                    fail(path, "expected a list of numbers", item);
                    return;
                }
            }
            out = v;
            return;
        }
        if (n.IsMap()) {
            allow(n, path, {"start", "stop", "step"});
            double start = 0, stop = 0, step = 0;
            if (!n["start"] || !n["stop"] || !n["step"]) {
                fail(path, "a range needs start, stop and step", n);
                return;
            }
            number(n, "start", path, start);
            number(n, "stop", path, stop);
            number(n, "step", path, step);
            if (!(step > 0.0) || stop < start) {
                fail(path, "range needs step > 0 and stop >= start", n);
                return;
            }
            const double count = std::floor((stop - start) / step + 1e-9) + 1.0;
            if (count > 1e7) {
                fail(path, "range has too many points", n);
                return;
            }
            out = design::linear_axis(start, stop, step);
            return;
        }
        fail(path, "expected a list or a {start, stop, step} range", n);
    }

    void int_axis(const YAML::Node& parent, const char* key, const std::string& prefix,
                  std::optional<std::vector<int>>& out) {
        const auto n = parent[key];
        const auto path = child(prefix, key);
        if (!n.IsDefined() || n.IsNull()) return;
        if (n.IsSequence()) {
            std::vector<int> v;
            for (const auto& item : n) v.push_back(to_integer<int>(item, path, 0));
            out = v;
            return;
        }
        if (n.IsMap()) {
            allow(n, path, {"start", "stop"});
            int a = 0, b = -1;
            integer(n, "start", path, a);
            integer(n, "stop", path, b);
            if (b < a) {
                fail(path, "integer range needs stop >= start", n);
                return;
            }
            std::vector<int> v;
            for (int i = a; i <= b; ++i) v.push_back(i);
            out = v;
            return;
        }
        fail(path, "expected a list or a {start, stop} range", n);
    }

    void measured(const YAML::Node& parent, const char* key, const std::string& prefix, budget::Measured& out) {
        const auto n = parent[key];
        const auto path = child(prefix, key);
        if (!n.IsDefined() || n.IsNull()) return;
        if (n.IsScalar()) {
            number(parent, key, prefix, out.value);
            out.sigma = 0.0;
            return;
        }
        if (!is_map(n, path)) return;
        allow(n, path, {"value", "sigma"});
        number(n, "value", path, out.value);
        number(n, "sigma", path, out.sigma);
    }
};

void read_materials(Reader& rd, const YAML::Node& node, RunConfig& c) {
    if (!rd.is_map(node, "materials")) return;
    for (const auto& kv : node) {
        const auto name = kv.first.as<std::string>();
        const auto path = child("materials", name);
        rd.lines[path] = kv.first.Mark().line + 1;
        MaterialSpec m;
        const auto& v = kv.second;
        if (v.IsScalar()) {
            try {
                m.index = v.as<double>();
            } catch (const YAML::Exception&) {
                rd.fail(path, "expected an index or a mapping", v);
            }
        } else if (rd.is_map(v, path)) {
            rd.allow(v, path, {"index", "extinction", "table"});
            rd.number(v, "index", path, m.index);
            rd.number(v, "extinction", path, m.extinction);
            if (const auto t = v["table"]; t.IsDefined() && !t.IsNull()) {
                if (!t.IsSequence()) {
                    rd.fail(child(path, "table"), "expected a list of [wavelength_nm, n, k] rows", t);
                } else {
                    for (const auto& row : t) {
                        if (!row.IsSequence() || row.size() < 2 || row.size() > 3) {
                            rd.fail(child(path, "table"), "each row is [wavelength_nm, n] or [wavelength_nm, n, k]",
                                    row);
                            break;
                        }
                        try {
                            m.table.push_back({row[0].as<double>(), row[1].as<double>(),
                                               row.size() == 3 ? row[2].as<double>() : 0.0});
                        } catch (const YAML::Exception&) {
                            rd.fail(child(path, "table"), "table entries must be numbers", row);
                            break;
                        }
                    }
                }
            }
        } else {
            rd.fail(path, "expected an index or a mapping", v);
        }
        c.materials[name] = m;
    }
}

void read_document(Reader& rd, const YAML::Node& root, RunConfig& c) {
    if (root.IsNull()) return;
    if (!root.IsMap()) {
        rd.fail("", "the configuration must be a mapping", root);
        return;
    }
    rd.allow(root, "",
             {"seed", "output_dir", "jobs", "materials", "cavity", "pillar", "emitter", "leaky", "cascade", "fit",
              "budget", "sweep", "optimize"});
    rd.integer(root, "seed", "", c.seed);
    rd.text(root, "output_dir", "", c.output_dir);
    rd.integer(root, "jobs", "", c.jobs);
    read_materials(rd, root["materials"], c);

    if (const auto n = root["cavity"]; rd.is_map(n, "cavity")) {
        const std::string p = "cavity";
        rd.allow(n, p,
                 {"design_wavelength_nm", "high", "low", "spacer", "substrate", "incident", "top_pairs",
                  "bottom_pairs", "spacer_optical_length", "window_half_width_nm", "spectrum_points",
                  "field_step_nm"});
        auto& s = c.cavity;
        rd.number(n, "design_wavelength_nm", p, s.design_wavelength_nm);
        rd.text(n, "high", p, s.high);
        rd.text(n, "low", p, s.low);
        rd.text(n, "spacer", p, s.spacer);
        rd.text(n, "substrate", p, s.substrate);
        rd.text(n, "incident", p, s.incident);
        rd.integer(n, "top_pairs", p, s.top_pairs);
        rd.integer(n, "bottom_pairs", p, s.bottom_pairs);
        rd.number(n, "spacer_optical_length", p, s.spacer_optical_length);
        rd.number(n, "window_half_width_nm", p, s.window_half_width_nm);
        rd.integer(n, "spectrum_points", p, s.spectrum_points);
        rd.number(n, "field_step_nm", p, s.field_step_nm);
    }
    if (const auto n = root["pillar"]; rd.is_map(n, "pillar")) {
        rd.allow(n, "pillar", {"diameter_um"});
        rd.number(n, "diameter_um", "pillar", c.pillar.diameter_um);
    }
    if (const auto n = root["emitter"]; rd.is_map(n, "emitter")) {
        const std::string p = "emitter";
        rd.allow(n, p, {"exciton_nm", "biexciton_nm", "splitting_nm", "bulk_lifetime_xx_ps", "bulk_lifetime_x_ps"});
        rd.number(n, "exciton_nm", p, c.emitter.exciton_nm);
        rd.number(n, "biexciton_nm", p, c.emitter.biexciton_nm);
        rd.number(n, "splitting_nm", p, c.emitter.splitting_nm);
        rd.number(n, "bulk_lifetime_xx_ps", p, c.emitter.bulk_lifetime_xx_ps);
        rd.number(n, "bulk_lifetime_x_ps", p, c.emitter.bulk_lifetime_x_ps);
    }
    if (const auto n = root["leaky"]; rd.is_map(n, "leaky")) {
        const std::string p = "leaky";
        rd.allow(n, p,
                 {"continuum", "cladding_exponent", "anchor_diameter_um", "anchor_wavelength_nm", "anchor_value",
                  "upper_bound"});
        rd.number(n, "continuum", p, c.leaky.continuum);
        rd.number(n, "cladding_exponent", p, c.leaky.cladding_exponent);
        rd.number(n, "anchor_diameter_um", p, c.leaky.anchor_diameter_um);
        rd.number(n, "anchor_wavelength_nm", p, c.leaky.anchor_wavelength_nm);
        rd.number(n, "anchor_value", p, c.leaky.anchor_value);
        rd.number(n, "upper_bound", p, c.leaky.upper_bound);
    }
    if (const auto n = root["cascade"]; rd.is_map(n, "cascade")) {
        const std::string p = "cascade";
        rd.allow(n, p,
                 {"tau_xx_ps", "tau_x_ps", "dephasing_per_ns", "binding_energy_mev", "pulse_fwhm_ps", "pulse_area",
                  "rep_period_ns", "n_pulses", "reexcitation_probability", "rabi_area_max", "rabi_points",
                  "write_records"});
        auto& s = c.cascade;
        rd.number(n, "tau_xx_ps", p, s.params.tau_xx_ps);
        rd.number(n, "tau_x_ps", p, s.params.tau_x_ps);
        rd.number(n, "dephasing_per_ns", p, s.params.dephasing_per_ns);
        rd.number(n, "binding_energy_mev", p, s.params.binding_energy_mev);
        rd.number(n, "pulse_fwhm_ps", p, s.params.pulse_fwhm_ps);
        rd.number(n, "pulse_area", p, s.params.pulse_area);
        rd.number(n, "rep_period_ns", p, s.params.rep_period_ns);
        rd.integer(n, "n_pulses", p, s.n_pulses);
        rd.number(n, "reexcitation_probability", p, s.reexcitation_probability);
        rd.number(n, "rabi_area_max", p, s.rabi_area_max);
        rd.integer(n, "rabi_points", p, s.rabi_points);
        rd.boolean(n, "write_records", p, s.write_records);
    }
    if (const auto n = root["fit"]; rd.is_map(n, "fit")) {
        const std::string p = "fit";
        rd.allow(n, p, {"histogram", "irf_trace", "model", "irf_fwhm_ps", "tau_fast_ps", "pinned", "synthetic"});
        auto& s = c.fit;
        rd.text(n, "histogram", p, s.histogram);
        rd.text(n, "irf_trace", p, s.irf_trace);
        rd.text(n, "model", p, s.model);
        rd.number(n, "irf_fwhm_ps", p, s.irf_fwhm_ps);
        rd.number(n, "tau_fast_ps", p, s.tau_fast_ps);
        rd.strings(n, "pinned", p, s.pinned);
        if (const auto m = n["synthetic"]; rd.is_map(m, "fit.synthetic")) {
            const std::string q = "fit.synthetic";
            rd.allow(m, q, {"tau_ps", "t0_ps", "baseline_fraction", "total_counts", "bin_width_ps", "window_ps"});
            rd.number(m, "tau_ps", q, s.synthetic.tau_ps);
            rd.number(m, "t0_ps", q, s.synthetic.t0_ps);
            rd.number(m, "baseline_fraction", q, s.synthetic.baseline_fraction);
            rd.integer(m, "total_counts", q, s.synthetic.total_counts);
            rd.number(m, "bin_width_ps", q, s.synthetic.bin_width_ps);
            rd.number(m, "window_ps", q, s.synthetic.window_ps);
        }
    }
    if (const auto n = root["budget"]; rd.is_map(n, "budget")) {
        const std::string p = "budget";
        rd.allow(n, p, {"rep_rate_hz", "detector", "fibre", "optics", "blinking", "rates", "target_efficiency"});
        auto& s = c.budget;
        rd.number(n, "rep_rate_hz", p, s.chain.rep_rate_hz);
        rd.measured(n, "detector", p, s.chain.detector);
        rd.measured(n, "fibre", p, s.chain.fibre);
        rd.measured(n, "optics", p, s.chain.optics);
        rd.number(n, "blinking", p, s.chain.blinking);
        rd.number(n, "target_efficiency", p, s.target_efficiency);
        if (const auto r = n["rates"]; r.IsDefined() && !r.IsNull()) {
            if (!r.IsSequence()) {
                rd.fail("budget.rates", "expected a list of {channel, value, sigma}", r);
            } else {
                s.rates.clear();
                for (std::size_t i = 0; i < r.size(); ++i) {
                    const auto path = "budget.rates[" + std::to_string(i) + "]";
                    if (!rd.is_map(r[i], path)) continue;
                    rd.allow(r[i], path, {"channel", "value", "sigma"});
                    RateEntry e;
                    rd.text(r[i], "channel", path, e.channel);
                    rd.number(r[i], "value", path, e.rate.value);
                    rd.number(r[i], "sigma", path, e.rate.sigma);
                    s.rates.push_back(e);
                }
            }
        }
    }
    if (const auto n = root["sweep"]; rd.is_map(n, "sweep")) {
        const std::string p = "sweep";
        rd.allow(n, p, {"diameter_um", "top_pairs", "bottom_pairs", "substrates", "design_wavelength_nm", "max_points"});
        auto& s = c.sweep;
        rd.number_axis(n, "diameter_um", p, s.diameters_um);
        rd.int_axis(n, "top_pairs", p, s.top_pairs);
        rd.int_axis(n, "bottom_pairs", p, s.bottom_pairs);
        rd.number_axis(n, "design_wavelength_nm", p, s.wavelengths_nm);
        if (n["substrates"].IsDefined() && !n["substrates"].IsNull()) {
            std::vector<std::string> v;
            rd.strings(n, "substrates", p, v);
            s.substrates = v;
        }
        rd.integer(n, "max_points", p, s.max_points);
    }
    if (const auto n = root["optimize"]; rd.is_map(n, "optimize")) {
        const std::string p = "optimize";
        rd.allow(n, p,
                 {"objective", "diameter_min_um", "diameter_max_um", "top_min", "top_max", "bottom_min", "bottom_max",
                  "substrates", "coarse_diameters"});
        auto& s = c.optimize;
        rd.text(n, "objective", p, s.objective);
        rd.number(n, "diameter_min_um", p, s.diameter_min_um);
        rd.number(n, "diameter_max_um", p, s.diameter_max_um);
        rd.integer(n, "top_min", p, s.top_min);
        rd.integer(n, "top_max", p, s.top_max);
        rd.integer(n, "bottom_min", p, s.bottom_min);
        rd.integer(n, "bottom_max", p, s.bottom_max);
        rd.strings(n, "substrates", p, s.substrates);
        rd.integer(n, "coarse_diameters", p, s.coarse_diameters);
    }
}

// Range checks with key paths; mirrors the preconditions of each module.
class Checker {
public:
    explicit Checker(const RunConfig& c) : c_(c) {}
    std::vector<Diagnostic> out;

    void positive(const std::string& key, double v) {
        if (!(v > 0.0)) add(key, "must be > 0");
    }
    void non_negative(const std::string& key, double v) {
        if (!(v >= 0.0)) add(key, "must be >= 0");
    }
    void efficiency(const std::string& key, double v) {
        if (!(v > 0.0 && v <= 1.0)) add(key, "efficiency outside (0, 1]");
    }
    void range(const std::string& key, double v, double lo, double hi) {
        if (!(v >= lo && v <= hi)) add(key, "must lie in [" + fmt(lo) + ", " + fmt(hi) + "]");
    }
    void material(const std::string& key, const std::string& name) {
        if (!c_.materials.count(name)) add(key, "material '" + name + "' is not defined under materials");
    }
    void add(const std::string& key, const std::string& reason) { out.push_back({key, reason, 0}); }

private:
    static std::string fmt(double v) {
        std::ostringstream os;
        os << v;
        return os.str();
    }
    const RunConfig& c_;
};

} // namespace

ConfigError::ConfigError(std::vector<Diagnostic> diagnostics)
    : Error(ErrorKind::config, join_diagnostics(diagnostics)), diagnostics_(std::move(diagnostics)) {}

optics::OpticalMaterial MaterialSpec::to_material(const std::string& name) const {
    optics::OpticalMaterial m;
    m.name = name;
    m.refractive_index = {index, extinction};
    for (const auto& row : table) m.table.push_back({row[0], {row[1], row[2]}});
    return m;
}

std::map<std::string, MaterialSpec> default_materials() {
    std::map<std::string, MaterialSpec> m;
    for (const auto& mat : {optics::gaas(), optics::alas(), optics::sio2(), optics::air()})
        m[mat.name] = MaterialSpec{mat.refractive_index.real(), mat.refractive_index.imag(), {}};
    return m;
}

RunConfig default_config() {
    RunConfig c;
    c.materials = default_materials();
    return c;
}

optics::OpticalMaterial RunConfig::material(const std::string& name) const {
    const auto it = materials.find(name);
    if (it == materials.end()) throw Error(ErrorKind::config, "material '" + name + "' is not defined");
    return it->second.to_material(name);
}

optics::QuarterWaveDesign RunConfig::quarter_wave() const {
    optics::QuarterWaveDesign q;
    q.design_wavelength_nm = cavity.design_wavelength_nm;
    q.top_pairs = cavity.top_pairs;
    q.bottom_pairs = cavity.bottom_pairs;
    q.high = material(cavity.high);
    q.low = material(cavity.low);
    q.spacer = material(cavity.spacer);
    q.substrate = material(cavity.substrate);
    q.incident = material(cavity.incident);
    q.spacer_optical_length = cavity.spacer_optical_length;
    return q;
}

optics::LayerStack RunConfig::stack() const { return optics::build_quarter_wave_cavity(quarter_wave()); }

modes::PillarGeometry RunConfig::pillar_geometry() const {
    const double l = cavity.design_wavelength_nm;
    return {pillar.diameter_um, material(cavity.spacer).index_at(l).real(),
            material(cavity.incident).index_at(l).real()};
}

design::DesignContext RunConfig::design_context() const {
    design::DesignContext ctx;
    ctx.materials = quarter_wave();
    ctx.leaky = leaky;
    ctx.window_half_width_nm = cavity.window_half_width_nm;
    ctx.pair_splitting_nm = emitter.splitting_nm;
    return ctx;
}

design::DesignPoint RunConfig::design_point() const {
    return {pillar.diameter_um, cavity.top_pairs, cavity.bottom_pairs, material(cavity.substrate),
            cavity.design_wavelength_nm};
}

design::SweepGrid RunConfig::sweep_grid() const {
    design::SweepGrid g;
    g.diameters_um = sweep.diameters_um;
    g.top_pairs = sweep.top_pairs;
    g.bottom_pairs = sweep.bottom_pairs;
    g.wavelengths_nm = sweep.wavelengths_nm;
    if (sweep.substrates) {
        std::vector<optics::OpticalMaterial> subs;
        for (const auto& s : *sweep.substrates) subs.push_back(material(s));
        g.substrates = subs;
    }
    return g;
}

design::Bounds RunConfig::optimize_bounds() const {
    design::Bounds b;
    b.diameter_min_um = optimize.diameter_min_um;
    b.diameter_max_um = optimize.diameter_max_um;
    b.top_min = optimize.top_min;
    b.top_max = optimize.top_max;
    b.bottom_min = optimize.bottom_min;
    b.bottom_max = optimize.bottom_max;
    b.substrates.clear();
    for (const auto& s : optimize.substrates) b.substrates.push_back(material(s));
    b.design_wavelength_nm = cavity.design_wavelength_nm;
    return b;
}

std::vector<budget::NamedRate> RunConfig::budget_rates() const {
    std::vector<budget::NamedRate> r;
    for (const auto& e : budget.rates) r.push_back({e.channel, e.rate});
    return r;
}

std::vector<Diagnostic> validate(const RunConfig& c) {
    Checker ck(c);
    if (c.jobs < 1) ck.add("jobs", "must be >= 1");
    for (const auto& [name, m] : c.materials) {
        const auto p = "materials." + name;
        ck.positive(p + ".index", m.index);
        ck.non_negative(p + ".extinction", m.extinction);
        for (std::size_t i = 0; i < m.table.size(); ++i) {
            if (!(m.table[i][0] > 0.0) || !(m.table[i][1] > 0.0) || m.table[i][2] < 0.0)
                ck.add(p + ".table", "rows need wavelength > 0, n > 0 and k >= 0");
            if (i > 0 && !(m.table[i][0] > m.table[i - 1][0]))
                ck.add(p + ".table", "wavelengths must increase strictly");
        }
    }

    const auto& cv = c.cavity;
    ck.positive("cavity.design_wavelength_nm", cv.design_wavelength_nm);
    ck.material("cavity.high", cv.high);
    ck.material("cavity.low", cv.low);
    ck.material("cavity.spacer", cv.spacer);
    ck.material("cavity.substrate", cv.substrate);
    ck.material("cavity.incident", cv.incident);
    ck.range("cavity.top_pairs", cv.top_pairs, 1, 40);
    ck.range("cavity.bottom_pairs", cv.bottom_pairs, 1, 40);
    {
        const double l = cv.spacer_optical_length;
        if (l != 0.5 && l != 1.0 && l != 1.5 && l != 2.0)
            ck.add("cavity.spacer_optical_length", "must be one of 0.5, 1, 1.5, 2");
    }
    ck.positive("cavity.window_half_width_nm", cv.window_half_width_nm);
    if (cv.spectrum_points < 2) ck.add("cavity.spectrum_points", "must be >= 2");
    if (!(cv.field_step_nm > 0.0 && cv.field_step_nm <= 1.0)) ck.add("cavity.field_step_nm", "must lie in (0, 1]");

    ck.range("pillar.diameter_um", c.pillar.diameter_um, 0.5, 5.0);
    if (c.materials.count(cv.spacer) && c.materials.count(cv.incident) &&
        !(c.materials.at(cv.spacer).index > c.materials.at(cv.incident).index))
        ck.add("cavity.spacer", "pillar core index must exceed the surrounding medium");

    const auto& e = c.emitter;
    ck.positive("emitter.exciton_nm", e.exciton_nm);
    ck.positive("emitter.biexciton_nm", e.biexciton_nm);
    if (!(e.biexciton_nm > e.exciton_nm)) ck.add("emitter.biexciton_nm", "must lie red of exciton_nm");
    ck.positive("emitter.splitting_nm", e.splitting_nm);
    if (std::abs((e.biexciton_nm - e.exciton_nm) - e.splitting_nm) > 1e-6)
        ck.add("emitter.splitting_nm", "must equal biexciton_nm - exciton_nm");
    ck.positive("emitter.bulk_lifetime_xx_ps", e.bulk_lifetime_xx_ps);
    ck.positive("emitter.bulk_lifetime_x_ps", e.bulk_lifetime_x_ps);

    const auto& lk = c.leaky;
    ck.positive("leaky.continuum", lk.continuum);
    ck.non_negative("leaky.cladding_exponent", lk.cladding_exponent);
    ck.positive("leaky.anchor_diameter_um", lk.anchor_diameter_um);
    ck.positive("leaky.anchor_wavelength_nm", lk.anchor_wavelength_nm);
    if (!(lk.anchor_value > lk.continuum)) ck.add("leaky.anchor_value", "must exceed leaky.continuum");
    if (!(lk.upper_bound >= lk.anchor_value)) ck.add("leaky.upper_bound", "must be >= leaky.anchor_value");

    const auto& cs = c.cascade;
    ck.positive("cascade.tau_xx_ps", cs.params.tau_xx_ps);
    ck.positive("cascade.tau_x_ps", cs.params.tau_x_ps);
    ck.non_negative("cascade.dephasing_per_ns", cs.params.dephasing_per_ns);
    ck.positive("cascade.binding_energy_mev", cs.params.binding_energy_mev);
    ck.positive("cascade.pulse_fwhm_ps", cs.params.pulse_fwhm_ps);
    ck.non_negative("cascade.pulse_area", cs.params.pulse_area);
    ck.positive("cascade.rep_period_ns", cs.params.rep_period_ns);
    if (cs.n_pulses < 1) ck.add("cascade.n_pulses", "must be >= 1");
    ck.range("cascade.reexcitation_probability", cs.reexcitation_probability, 0.0, 1.0);
    ck.non_negative("cascade.rabi_area_max", cs.rabi_area_max);
    if (cs.rabi_points < 2) ck.add("cascade.rabi_points", "must be >= 2");

    const auto& f = c.fit;
    if (f.model != "exp_gauss" && f.model != "cascade_gauss") ck.add("fit.model", "must be exp_gauss or cascade_gauss");
    ck.positive("fit.irf_fwhm_ps", f.irf_fwhm_ps);
    ck.positive("fit.tau_fast_ps", f.tau_fast_ps);
    for (const auto& name : f.pinned) {
        bool known = false;
        for (std::size_t i = 0; i < tcspc::param_count; ++i)
            known = known || name == tcspc::to_string(static_cast<tcspc::Param>(i));
        if (!known) ck.add("fit.pinned", "unknown parameter '" + name + "'");
    }
    ck.positive("fit.synthetic.tau_ps", f.synthetic.tau_ps);
    if (!(f.synthetic.baseline_fraction >= 0.0 && f.synthetic.baseline_fraction < 1.0))
        ck.add("fit.synthetic.baseline_fraction", "must lie in [0, 1)");
    if (f.synthetic.total_counts < 1) ck.add("fit.synthetic.total_counts", "must be >= 1");
    ck.positive("fit.synthetic.bin_width_ps", f.synthetic.bin_width_ps);
    if (!(f.synthetic.window_ps >= f.synthetic.bin_width_ps))
        ck.add("fit.synthetic.window_ps", "must hold at least one bin");

    const auto& b = c.budget;
    ck.positive("budget.rep_rate_hz", b.chain.rep_rate_hz);
    ck.efficiency("budget.detector", b.chain.detector.value);
    ck.efficiency("budget.fibre", b.chain.fibre.value);
    ck.efficiency("budget.optics", b.chain.optics.value);
    ck.non_negative("budget.detector.sigma", b.chain.detector.sigma);
    ck.non_negative("budget.fibre.sigma", b.chain.fibre.sigma);
    ck.non_negative("budget.optics.sigma", b.chain.optics.sigma);
    ck.efficiency("budget.blinking", b.chain.blinking);
    if (!(b.target_efficiency > 0.0 && b.target_efficiency <= 1.0))
        ck.add("budget.target_efficiency", "must lie in (0, 1]");
    for (std::size_t i = 0; i < b.rates.size(); ++i) {
        const auto p = "budget.rates[" + std::to_string(i) + "]";
        if (b.rates[i].channel.empty()) ck.add(p + ".channel", "must not be empty");
        ck.non_negative(p + ".value", b.rates[i].rate.value);
        if (b.rates[i].rate.value > b.chain.rep_rate_hz) ck.add(p + ".value", "exceeds the repetition rate");
        ck.non_negative(p + ".sigma", b.rates[i].rate.sigma);
    }

    const auto& sw = c.sweep;
    if (sw.diameters_um)
        for (double d : *sw.diameters_um) ck.range("sweep.diameter_um", d, 0.5, 5.0);
    if (sw.top_pairs)
        for (int v : *sw.top_pairs) ck.range("sweep.top_pairs", v, 1, 40);
    if (sw.bottom_pairs)
        for (int v : *sw.bottom_pairs) ck.range("sweep.bottom_pairs", v, 1, 40);
    if (sw.wavelengths_nm)
        for (double v : *sw.wavelengths_nm) ck.positive("sweep.design_wavelength_nm", v);
    if (sw.substrates)
        for (const auto& s : *sw.substrates) ck.material("sweep.substrates", s);
    if (sw.max_points < 1) ck.add("sweep.max_points", "must be >= 1");

    const auto& op = c.optimize;
    if (op.objective != "eta_int" && op.objective != "eta_int_pair_compatible")
        ck.add("optimize.objective", "must be eta_int or eta_int_pair_compatible");
    ck.range("optimize.diameter_min_um", op.diameter_min_um, 0.5, 5.0);
    ck.range("optimize.diameter_max_um", op.diameter_max_um, 0.5, 5.0);
    if (op.diameter_max_um < op.diameter_min_um) ck.add("optimize.diameter_max_um", "must be >= diameter_min_um");
    ck.range("optimize.top_min", op.top_min, 1, 40);
    ck.range("optimize.top_max", op.top_max, 1, 40);
    if (op.top_max < op.top_min) ck.add("optimize.top_max", "must be >= top_min");
    ck.range("optimize.bottom_min", op.bottom_min, 1, 40);
    ck.range("optimize.bottom_max", op.bottom_max, 1, 40);
    if (op.bottom_max < op.bottom_min) ck.add("optimize.bottom_max", "must be >= bottom_min");
    if (op.substrates.empty()) ck.add("optimize.substrates", "must list at least one material");
    for (const auto& s : op.substrates) ck.material("optimize.substrates", s);
    if (op.coarse_diameters < 1) ck.add("optimize.coarse_diameters", "must be >= 1");
    return ck.out;
}

ParseOutcome parse_config(const std::string& yaml_text) {
    ParseOutcome out;
    out.config = default_config();
    Reader rd;
    YAML::Node root;
    try {
        root = YAML::Load(yaml_text);
    } catch (const YAML::ParserException& e) {
        out.diagnostics.push_back({"", "YAML syntax error: " + e.msg, e.mark.line + 1});
        return out;
    }
    read_document(rd, root, out.config);
    out.diagnostics = std::move(rd.diagnostics);
    for (auto d : validate(out.config)) {
        // Point at the key itself, or the closest enclosing key that was written.
        std::string k = d.key;
        while (!k.empty()) {
            if (auto it = rd.lines.find(k); it != rd.lines.end()) {
                d.line = it->second;
                break;
            }
            const auto dot = k.find_last_of('.');
            k = dot == std::string::npos ? std::string() : k.substr(0, dot);
        }
        out.diagnostics.push_back(d);
    }
    return out;
}

ParseOutcome read_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot read configuration file '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::vector<Diagnostic> validate_config(const std::filesystem::path& path) { return read_config(path).diagnostics; }

RunConfig load_config(const std::filesystem::path& path) {
    auto outcome = read_config(path);
    if (!outcome.ok()) throw ConfigError(std::move(outcome.diagnostics));
    return outcome.config;
}

namespace {

void emit_measured(YAML::Emitter& y, const char* key, const budget::Measured& m) {
    y << YAML::Key << key << YAML::Value << YAML::Flow << YAML::BeginMap << YAML::Key << "value" << YAML::Value
      << m.value << YAML::Key << "sigma" << YAML::Value << m.sigma << YAML::EndMap;
}

template <class T>
void emit_list(YAML::Emitter& y, const char* key, const std::vector<T>& v) {
    y << YAML::Key << key << YAML::Value << YAML::Flow << YAML::BeginSeq;
    for (const auto& x : v) y << x;
    y << YAML::EndSeq;
}

} // namespace

std::string to_yaml(const RunConfig& c) {
    YAML::Emitter y;
    y.SetDoublePrecision(17);
    y << YAML::BeginMap;
    y << YAML::Key << "seed" << YAML::Value << c.seed;
    y << YAML::Key << "output_dir" << YAML::Value << YAML::DoubleQuoted << c.output_dir;
    y << YAML::Key << "jobs" << YAML::Value << c.jobs;

    y << YAML::Key << "materials" << YAML::Value << YAML::BeginMap;
    for (const auto& [name, m] : c.materials) {
        y << YAML::Key << name << YAML::Value << YAML::BeginMap;
        y << YAML::Key << "index" << YAML::Value << m.index;
        y << YAML::Key << "extinction" << YAML::Value << m.extinction;
        if (!m.table.empty()) {
            y << YAML::Key << "table" << YAML::Value << YAML::BeginSeq;
            for (const auto& row : m.table) y << YAML::Flow << YAML::BeginSeq << row[0] << row[1] << row[2] << YAML::EndSeq;
            y << YAML::EndSeq;
        }
        y << YAML::EndMap;
    }
    y << YAML::EndMap;

    const auto& cv = c.cavity;
    y << YAML::Key << "cavity" << YAML::Value << YAML::BeginMap;
    y << YAML::Key << "design_wavelength_nm" << YAML::Value << cv.design_wavelength_nm;
    y << YAML::Key << "high" << YAML::Value << cv.high;
    y << YAML::Key << "low" << YAML::Value << cv.low;
    y << YAML::Key << "spacer" << YAML::Value << cv.spacer;
    y << YAML::Key << "substrate" << YAML::Value << cv.substrate;
    y << YAML::Key << "incident" << YAML::Value << cv.incident;
    y << YAML::Key << "top_pairs" << YAML::Value << cv.top_pairs;
    y << YAML::Key << "bottom_pairs" << YAML::Value << cv.bottom_pairs;
    y << YAML::Key << "spacer_optical_length" << YAML::Value << cv.spacer_optical_length;
    y << YAML::Key << "window_half_width_nm" << YAML::Value << cv.window_half_width_nm;
    y << YAML::Key << "spectrum_points" << YAML::Value << cv.spectrum_points;
    y << YAML::Key << "field_step_nm" << YAML::Value << cv.field_step_nm;
    y << YAML::EndMap;

    y << YAML::Key << "pillar" << YAML::Value << YAML::BeginMap;
    y << YAML::Key << "diameter_um" << YAML::Value << c.pillar.diameter_um;
    y << YAML::EndMap;

    const auto& e = c.emitter;
    y << YAML::Key << "emitter" << YAML::Value << YAML::BeginMap;
    y << YAML::Key << "exciton_nm" << YAML::Value << e.exciton_nm;
    y << YAML::Key << "biexciton_nm" << YAML::Value << e.biexciton_nm;
    y << YAML::Key << "splitting_nm" << YAML::Value << e.splitting_nm;
    y << YAML::Key << "bulk_lifetime_xx_ps" << YAML::Value << e.bulk_lifetime_xx_ps;
    y << YAML::Key << "bulk_lifetime_x_ps" << YAML::Value << e.bulk_lifetime_x_ps;
    y << YAML::EndMap;

    const auto& lk = c.leaky;
    y << YAML::Key << "leaky" << YAML::Value << YAML::BeginMap;
    y << YAML::Key << "continuum" << YAML::Value << lk.continuum;
    y << YAML::Key << "cladding_exponent" << YAML::Value << lk.cladding_exponent;
    y << YAML::Key << "anchor_diameter_um" << YAML::Value << lk.anchor_diameter_um;
    y << YAML::Key << "anchor_wavelength_nm" << YAML::Value << lk.anchor_wavelength_nm;
    y << YAML::Key << "anchor_value" << YAML::Value << lk.anchor_value;
    y << YAML::Key << "upper_bound" << YAML::Value << lk.upper_bound;
    y << YAML::EndMap;

    const auto& cs = c.cascade;
    y << YAML::Key << "cascade" << YAML::Value << YAML::BeginMap;
    y << YAML::Key << "tau_xx_ps" << YAML::Value << cs.params.tau_xx_ps;
    y << YAML::Key << "tau_x_ps" << YAML::Value << cs.params.tau_x_ps;
    y << YAML::Key << "dephasing_per_ns" << YAML::Value << cs.params.dephasing_per_ns;
    y << YAML::Key << "binding_energy_mev" << YAML::Value << cs.params.binding_energy_mev;
    y << YAML::Key << "pulse_fwhm_ps" << YAML::Value << cs.params.pulse_fwhm_ps;
    y << YAML::Key << "pulse_area" << YAML::Value << cs.params.pulse_area;
    y << YAML::Key << "rep_period_ns" << YAML::Value << cs.params.rep_period_ns;
    y << YAML::Key << "n_pulses" << YAML::Value << cs.n_pulses;
    y << YAML::Key << "reexcitation_probability" << YAML::Value << cs.reexcitation_probability;
    y << YAML::Key << "rabi_area_max" << YAML::Value << cs.rabi_area_max;
    y << YAML::Key << "rabi_points" << YAML::Value << cs.rabi_points;
    y << YAML::Key << "write_records" << YAML::Value << cs.write_records;
    y << YAML::EndMap;

    const auto& f = c.fit;
    y << YAML::Key << "fit" << YAML::Value << YAML::BeginMap;
    y << YAML::Key << "histogram" << YAML::Value << YAML::DoubleQuoted << f.histogram;
    y << YAML::Key << "irf_trace" << YAML::Value << YAML::DoubleQuoted << f.irf_trace;
    y << YAML::Key << "model" << YAML::Value << f.model;
    y << YAML::Key << "irf_fwhm_ps" << YAML::Value << f.irf_fwhm_ps;
    y << YAML::Key << "tau_fast_ps" << YAML::Value << f.tau_fast_ps;
    emit_list(y, "pinned", f.pinned);
    y << YAML::Key << "synthetic" << YAML::Value << YAML::BeginMap;
    y << YAML::Key << "tau_ps" << YAML::Value << f.synthetic.tau_ps;
    y << YAML::Key << "t0_ps" << YAML::Value << f.synthetic.t0_ps;
    y << YAML::Key << "baseline_fraction" << YAML::Value << f.synthetic.baseline_fraction;
    y << YAML::Key << "total_counts" << YAML::Value << f.synthetic.total_counts;
    y << YAML::Key << "bin_width_ps" << YAML::Value << f.synthetic.bin_width_ps;
    y << YAML::Key << "window_ps" << YAML::Value << f.synthetic.window_ps;
    y << YAML::EndMap << YAML::EndMap;

    const auto& b = c.budget;
    y << YAML::Key << "budget" << YAML::Value << YAML::BeginMap;
    y << YAML::Key << "rep_rate_hz" << YAML::Value << b.chain.rep_rate_hz;
    emit_measured(y, "detector", b.chain.detector);
    emit_measured(y, "fibre", b.chain.fibre);
    emit_measured(y, "optics", b.chain.optics);
    y << YAML::Key << "blinking" << YAML::Value << b.chain.blinking;
    y << YAML::Key << "rates" << YAML::Value << YAML::BeginSeq;
    for (const auto& r : b.rates)
        y << YAML::Flow << YAML::BeginMap << YAML::Key << "channel" << YAML::Value << r.channel << YAML::Key << "value"
          << YAML::Value << r.rate.value << YAML::Key << "sigma" << YAML::Value << r.rate.sigma << YAML::EndMap;
    y << YAML::EndSeq;
    y << YAML::Key << "target_efficiency" << YAML::Value << b.target_efficiency;
    y << YAML::EndMap;

    const auto& sw = c.sweep;
    y << YAML::Key << "sweep" << YAML::Value << YAML::BeginMap;
    if (sw.diameters_um) emit_list(y, "diameter_um", *sw.diameters_um);
    if (sw.top_pairs) emit_list(y, "top_pairs", *sw.top_pairs);
    if (sw.bottom_pairs) emit_list(y, "bottom_pairs", *sw.bottom_pairs);
    if (sw.substrates) emit_list(y, "substrates", *sw.substrates);
    if (sw.wavelengths_nm) emit_list(y, "design_wavelength_nm", *sw.wavelengths_nm);
    y << YAML::Key << "max_points" << YAML::Value << sw.max_points;
    y << YAML::EndMap;

    const auto& op = c.optimize;
    y << YAML::Key << "optimize" << YAML::Value << YAML::BeginMap;
    y << YAML::Key << "objective" << YAML::Value << op.objective;
    y << YAML::Key << "diameter_min_um" << YAML::Value << op.diameter_min_um;
    y << YAML::Key << "diameter_max_um" << YAML::Value << op.diameter_max_um;
    y << YAML::Key << "top_min" << YAML::Value << op.top_min;
    y << YAML::Key << "top_max" << YAML::Value << op.top_max;
    y << YAML::Key << "bottom_min" << YAML::Value << op.bottom_min;
    y << YAML::Key << "bottom_max" << YAML::Value << op.bottom_max;
    emit_list(y, "substrates", op.substrates);
    y << YAML::Key << "coarse_diameters" << YAML::Value << op.coarse_diameters;
    y << YAML::EndMap;

    y << YAML::EndMap;
    return std::string(y.c_str()) + "\n";
}

} // namespace qdpillar::io
