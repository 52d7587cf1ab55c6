#pragma once

// Run configuration: one YAML document feeding every command. Parsing never
// throws on bad content; it collects diagnostics that name the offending key.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qdpillar/cascade.hpp"
#include "qdpillar/design.hpp"
#include "qdpillar/efficiency.hpp"
#include "qdpillar/emitter_cavity.hpp"
#include "qdpillar/error.hpp"
#include "qdpillar/layered_optics.hpp"
#include "qdpillar/pillar_modes.hpp"
#include "qdpillar/tcspc.hpp"

namespace qdpillar::io {

struct Diagnostic {
    std::string key;    // dotted path, e.g. "cascade.tau_xx_ps"
    std::string reason;
    int line = 0;       // 1-based line in the source, 0 when unknown

    std::string str() const;
};

/// Raised when a configuration does not validate; carries every diagnostic.
class ConfigError : public Error {
public:
    explicit ConfigError(std::vector<Diagnostic> diagnostics);
    const std::vector<Diagnostic>& diagnostics() const { return diagnostics_; }

private:
    std::vector<Diagnostic> diagnostics_;
};

struct MaterialSpec {
    double index = 1.0;
    double extinction = 0.0;
    /// Optional dispersion table rows (wavelength_nm, n, k).
    std::vector<std::array<double, 3>> table;

    optics::OpticalMaterial to_material(const std::string& name) const;
    friend bool operator==(const MaterialSpec&, const MaterialSpec&) = default;
};

struct CavitySection {
    double design_wavelength_nm = 910.0;
    std::string high = "GaAs";
    std::string low = "AlAs";
    std::string spacer = "GaAs";
    std::string substrate = "GaAs";
    std::string incident = "Air";
    int top_pairs = 5;
    int bottom_pairs = 18;
    double spacer_optical_length = 1.0;
    double window_half_width_nm = 30.0;
    int spectrum_points = 3001;
    double field_step_nm = 0.5;

    friend bool operator==(const CavitySection&, const CavitySection&) = default;
};

struct PillarSection {
    double diameter_um = 2.02;

    friend bool operator==(const PillarSection&, const PillarSection&) = default;
};

struct CascadeSection {
    cascade::CascadeParams params;
    std::int64_t n_pulses = 1'000'000;
    double reexcitation_probability = 0.0;
    double rabi_area_max = 12.566370614359172; // 4 pi
    int rabi_points = 81;
    bool write_records = false;

    friend bool operator==(const CascadeSection&, const CascadeSection&) = default;
};

struct SyntheticHistogram {
    double tau_ps = 300.0;
    double t0_ps = 1000.0;
    double baseline_fraction = 0.0; // flat share of the total counts
    std::int64_t total_counts = 1'000'000;
    double bin_width_ps = 4.0;
    double window_ps = 13'000.0;

    friend bool operator==(const SyntheticHistogram&, const SyntheticHistogram&) = default;
};

struct FitSection {
    std::string histogram;   // path; empty means synthesize
    std::string irf_trace;   // path; empty means use irf_fwhm_ps
    std::string model = "exp_gauss";
    double irf_fwhm_ps = 78.0;
    double tau_fast_ps = 218.0;
    std::vector<std::string> pinned{"sigma", "tau_fast"};
    SyntheticHistogram synthetic;

    friend bool operator==(const FitSection&, const FitSection&) = default;
};

struct RateEntry {
    std::string channel;
    budget::Measured rate;

    friend bool operator==(const RateEntry&, const RateEntry&) = default;
};

struct BudgetSection {
    budget::DetectionChain chain;
    std::vector<RateEntry> rates{{"xx", {401'000.0, 1'000.0}}, {"x", {198'000.0, 1'000.0}}};
    double target_efficiency = 0.85;

    friend bool operator==(const BudgetSection&, const BudgetSection&) = default;
};

struct SweepSection {
    std::optional<std::vector<double>> diameters_um;
    std::optional<std::vector<int>> top_pairs;
    std::optional<std::vector<int>> bottom_pairs;
    std::optional<std::vector<std::string>> substrates;
    std::optional<std::vector<double>> wavelengths_nm;
    std::size_t max_points = 100'000;

    friend bool operator==(const SweepSection&, const SweepSection&) = default;
};

struct OptimizeSection {
    std::string objective = "eta_int_pair_compatible";
    double diameter_min_um = 1.5;
    double diameter_max_um = 2.5;
    int top_min = 5;
    int top_max = 7;
    int bottom_min = 18;
    int bottom_max = 25;
    std::vector<std::string> substrates{"GaAs", "SiO2"};
    int coarse_diameters = 11;

    friend bool operator==(const OptimizeSection&, const OptimizeSection&) = default;
};

struct RunConfig {
    std::uint64_t seed = 20'240'101;
    std::string output_dir;
    unsigned jobs = 1;
    std::map<std::string, MaterialSpec> materials;
    CavitySection cavity;
    PillarSection pillar;
    emitter::EmitterSpec emitter;
    emitter::LeakyModel leaky;
    CascadeSection cascade;
    FitSection fit;
    BudgetSection budget;
    SweepSection sweep;
    OptimizeSection optimize;

    friend bool operator==(const RunConfig&, const RunConfig&) = default;

    optics::OpticalMaterial material(const std::string& name) const;
    optics::QuarterWaveDesign quarter_wave() const;
    optics::LayerStack stack() const;
    modes::PillarGeometry pillar_geometry() const;
    design::DesignContext design_context() const;
    design::DesignPoint design_point() const;
    design::SweepGrid sweep_grid() const;
    design::Bounds optimize_bounds() const;
    std::vector<budget::NamedRate> budget_rates() const;
};

/// Built-in materials, available to every configuration.
std::map<std::string, MaterialSpec> default_materials();

/// The baseline configuration used when no file is given.
RunConfig default_config();

struct ParseOutcome {
    RunConfig config;
    std::vector<Diagnostic> diagnostics;
    bool ok() const { return diagnostics.empty(); }
};

/// Parses and validates YAML text. Never throws for content problems.
ParseOutcome parse_config(const std::string& yaml_text);

/// Reads and parses a file; an unreadable file raises an io Error.
ParseOutcome read_config(const std::filesystem::path& path);

/// Diagnostics for a file, empty when it is valid. No side effects.
std::vector<Diagnostic> validate_config(const std::filesystem::path& path);

/// read_config, throwing ConfigError when diagnostics exist.
RunConfig load_config(const std::filesystem::path& path);

/// Checks an in-memory configuration against every module precondition.
std::vector<Diagnostic> validate(const RunConfig& config);

/// Canonical YAML form; parse_config(to_yaml(c)) reproduces c.
std::string to_yaml(const RunConfig& config);

} // namespace qdpillar::io
