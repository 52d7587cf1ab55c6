#include <doctest.h>

#include "qdpillar/config.hpp"
#include "qdpillar/output.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace qdpillar;
using namespace qdpillar::io;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        std::random_device rd;
        path = fs::temp_directory_path() / ("qdpillar-test-" + std::to_string(rd()) + std::to_string(rd()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const Diagnostic* find_key(const std::vector<Diagnostic>& d, const std::string& key) {
    auto it = std::find_if(d.begin(), d.end(), [&](const Diagnostic& x) { return x.key == key; });
    return it == d.end() ? nullptr : &*it;
}

std::vector<std::string> listing(const fs::path& dir) {
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(dir)) names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    return names;
}

} // namespace

TEST_CASE("default configuration round-trips and validates") {
    const auto c = default_config();
    CHECK(validate(c).empty());
    const auto back = parse_config(to_yaml(c));
    for (const auto& d : back.diagnostics) INFO(d.str());
    REQUIRE(back.ok());
    CHECK(back.config == c);
    CHECK(to_yaml(back.config) == to_yaml(c));
}

TEST_CASE("randomised configurations round-trip") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 60; ++trial) {
        RunConfig c = default_config();
        c.seed = rng();
        c.jobs = 1 + static_cast<unsigned>(rng() % 8);
        c.cavity.top_pairs = 1 + static_cast<int>(rng() % 20);
        c.cavity.bottom_pairs = 1 + static_cast<int>(rng() % 40);
        c.cavity.design_wavelength_nm = 850.0 + 100.0 * u(rng);
        c.pillar.diameter_um = 0.5 + 4.5 * u(rng);
        c.cascade.params.tau_xx_ps = 50.0 + 500.0 * u(rng);
        c.cascade.params.tau_x_ps = 50.0 + 500.0 * u(rng);
        c.cascade.params.pulse_area = 10.0 * u(rng);
        c.cascade.n_pulses = 1 + static_cast<std::int64_t>(rng() % 10'000'000);
        c.fit.synthetic.tau_ps = 10.0 + 1000.0 * u(rng);
        c.budget.chain.fibre = {0.01 + 0.98 * u(rng), 0.01 * u(rng)};
        c.budget.rates = {{"xx", {1e5 * (1.0 + u(rng)), 10.0 * u(rng)}}};
        c.leaky.continuum = 0.05 + 0.3 * u(rng);
        c.materials["Custom"] = MaterialSpec{2.0 + u(rng), 0.01 * u(rng), {}};
        if (trial % 3 == 0) c.materials["Disp"] = MaterialSpec{3.0, 0.0, {{{900.0, 3.5, 0.0}, {950.0, 3.4, 0.001}}}};
        if (trial % 2 == 0) c.sweep.diameters_um = design::linear_axis(1.0, 1.0 + u(rng), 0.05);
        if (trial % 4 == 1) c.sweep.substrates = std::vector<std::string>{"GaAs", "SiO2"};
        c.output_dir = trial % 5 == 0 ? "out dir/" + std::to_string(trial) : "";
        const auto text = to_yaml(c);
        const auto back = parse_config(text);
        for (const auto& d : back.diagnostics) INFO(d.str());
        REQUIRE(back.ok());
        CHECK(back.config == c);
    }
}

TEST_CASE("bundled example configuration validates") {
    const fs::path example = QDPILLAR_EXAMPLE_CONFIG;
    CHECK(validate_config(example).empty());
    const auto c = load_config(example);
    CHECK(c.pillar.diameter_um == 2.02);
    CHECK(c.cavity.top_pairs == 5);
    CHECK(c.cavity.bottom_pairs == 18);
    CHECK(c.budget.chain.fibre == budget::Measured{0.291, 0.010});
}

TEST_CASE("negative lifetime is reported on cascade.tau_xx") {
    const std::string text = "seed: 3\ncascade:\n  tau_x_ps: 281\n  tau_xx_ps: -5\n";
    const auto out = parse_config(text);
    CHECK_FALSE(out.ok());
    const auto* d = find_key(out.diagnostics, "cascade.tau_xx_ps");
    REQUIRE(d != nullptr);
    CHECK(d->line == 4);
    CHECK(d->reason.find("> 0") != std::string::npos);
    CHECK(d->str().find("cascade.tau_xx_ps (line 4)") == 0);
}

TEST_CASE("fibre efficiency outside (0, 1]") {
    const auto out = parse_config("budget:\n  fibre: 1.3\n");
    const auto* d = find_key(out.diagnostics, "budget.fibre");
    REQUIRE(d != nullptr);
    CHECK(d->reason.find("efficiency outside (0, 1]") != std::string::npos);
    CHECK(d->line == 2);

    const auto with_sigma = parse_config("budget:\n  optics: {value: 0.0, sigma: 0.01}\n");
    CHECK(find_key(with_sigma.diagnostics, "budget.optics") != nullptr);
}

TEST_CASE("missing material is named") {
    const auto out = parse_config("cavity:\n  low: Unobtainium\n");
    const auto* d = find_key(out.diagnostics, "cavity.low");
    REQUIRE(d != nullptr);
    CHECK(d->reason.find("Unobtainium") != std::string::npos);
    CHECK(d->line == 2);
}

TEST_CASE("several problems are reported together") {
    const std::string text = "cavity:\n"
                             "  top_pairs: 50\n"
                             "  colour: blue\n"
                             "pillar:\n"
                             "  diameter_um: fat\n"
                             "cascade:\n"
                             "  tau_x_ps: 0\n";
    const auto out = parse_config(text);
    CHECK(find_key(out.diagnostics, "cavity.top_pairs") != nullptr);
    const auto* unknown = find_key(out.diagnostics, "cavity.colour");
    REQUIRE(unknown != nullptr);
    CHECK(unknown->line == 3);
    const auto* type = find_key(out.diagnostics, "pillar.diameter_um");
    REQUIRE(type != nullptr);
    CHECK(type->line == 5);
    CHECK(find_key(out.diagnostics, "cascade.tau_x_ps") != nullptr);
}

TEST_CASE("malformed YAML gives a located diagnostic") {
    const auto out = parse_config("cavity:\n  top_pairs: [1, 2\n");
    REQUIRE_FALSE(out.ok());
    CHECK(out.diagnostics.front().line > 0);
    const auto scalar_root = parse_config("just a string");
    CHECK_FALSE(scalar_root.ok());
}

TEST_CASE("integral doubles are accepted for counts") {
    const auto out = parse_config("cascade:\n  n_pulses: 2e5\n");
    REQUIRE(out.ok());
    CHECK(out.config.cascade.n_pulses == 200'000);
    const auto frac = parse_config("cascade:\n  n_pulses: 2.5\n");
    CHECK(find_key(frac.diagnostics, "cascade.n_pulses") != nullptr);
}

TEST_CASE("file access") {
    TempDir tmp;
    CHECK_THROWS_AS(read_config(tmp.path / "absent.yaml"), Error);
    try {
        validate_config(tmp.path / "absent.yaml");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::io);
    }
    const auto file = tmp.path / "bad.yaml";
    {
        std::ofstream(file) << "budget:\n  fibre: 1.3\n";
    }
    const auto before = slurp(file);
    const auto diags = validate_config(file);
    CHECK(diags.size() == 1);
    CHECK(slurp(file) == before);
    CHECK(listing(tmp.path) == std::vector<std::string>{"bad.yaml"});
    try {
        load_config(file);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.kind() == ErrorKind::config);
        CHECK(e.diagnostics().size() == 1);
        CHECK(std::string(e.what()).find("budget.fibre") != std::string::npos);
    }
}

TEST_CASE("configuration helpers build module inputs") {
    auto c = default_config();
    CHECK(c.material("GaAs").index_at(910.0).real() == 3.53);
    CHECK_THROWS_AS(c.material("nothing"), Error);
    CHECK(c.pillar_geometry().diameter_um == 2.02);
    CHECK(c.quarter_wave().top_pairs == 5);
    CHECK(c.stack().layers.size() == 47);
    CHECK(c.design_point().bottom_pairs == 18);
    CHECK(c.budget_rates().size() == 2);
    CHECK(c.optimize_bounds().substrates.size() == 2);
    c.sweep.diameters_um = std::vector<double>{1.0, 2.0};
    CHECK(c.sweep_grid().size() == 2);
}

TEST_CASE("full-precision number formatting") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int i = 0; i < 2000; ++i) {
        const double x = u(rng) * std::pow(10.0, static_cast<int>(rng() % 40) - 20);
        CHECK(std::strtod(format_double(x).c_str(), nullptr) == x);
    }
    CHECK(format_double(0.5) == "0.5");
    CHECK(format_double(910.0) == "910");
}

TEST_CASE("delimited tables") {
    Table t;
    t.comments = {"swept: diameter_um"};
    t.columns = {"diameter_um", "count", "label"};
    t.add_row({1.5, std::int64_t{3}, std::string("a")});
    t.add_row({0.1, std::int64_t{-2}, std::string("b")});
    std::ostringstream os;
    write_table(os, t);
    CHECK(os.str() == "# swept: diameter_um\ndiameter_um,count,label\n1.5,3,a\n0.10000000000000001,-2,b\n");
    CHECK_THROWS_AS(t.add_row({1.0}), Error);
}

TEST_CASE("histogram files") {
    tcspc::Histogram h;
    h.bin_width_ps = 4.0;
    h.t0_offset_ps = -10.0;
    h.counts = {0, 5, 12, 7, 3, 1};
    std::ostringstream os;
    write_histogram(os, h, {"synthetic"});
    CHECK(os.str().rfind("# synthetic\n", 0) == 0);
    std::istringstream is(os.str());
    const auto back = read_histogram(is);
    CHECK(back.counts == h.counts);
    CHECK(back.bin_width_ps == doctest::Approx(4.0).epsilon(1e-15));
    CHECK(back.t0_offset_ps == doctest::Approx(-10.0).epsilon(1e-15));

    for (const std::string sep : {",", "\t", " ", ";"}) {
        std::istringstream in("# c\ntime" + sep + "counts\n2" + sep + "1\n6" + sep + "4\n10" + sep + "9\n");
        const auto r = read_histogram(in);
        CHECK(r.counts == std::vector<std::int64_t>{1, 4, 9});
        CHECK(r.bin_width_ps == 4.0);
        CHECK(r.t0_offset_ps == 0.0);
    }

    std::istringstream uneven("0,1\n4,2\n9,3\n");
    CHECK_THROWS_AS(read_histogram(uneven), Error);
    std::istringstream single("0,1\n");
    try {
        read_histogram(single);
        FAIL("expected insufficient_data");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::insufficient_data);
    }
    std::istringstream negative("0,1\n4,-2\n8,3\n");
    CHECK_THROWS_AS(read_histogram(negative), Error);
    std::istringstream garbage("0,1\n4,x\n");
    CHECK_THROWS_AS(read_histogram(garbage), Error);
    CHECK_THROWS_AS(read_histogram(fs::path("/nonexistent/trace.csv")), Error);
}

TEST_CASE("content hash") {
    CHECK(content_hash("") == "cbf29ce484222325");
    CHECK(content_hash("a") == "af63dc4c8601ec8c");
    CHECK(content_hash("foobar") == "85944171f73967e8");
}

TEST_CASE("output session publishes files with a manifest") {
    TempDir tmp;
    const auto dir = tmp.path / "out";
    {
        OutputSession s(dir, "demo");
        s.write_text("a.txt", "alpha\n");
        Table t;
        t.columns = {"x"};
        t.add_row({1.0});
        s.write_table("b.csv", t);
        s.write_json("c.json", "{\"k\": 1}");
        CHECK_FALSE(fs::exists(dir / "a.txt"));
        const auto published = s.commit({"00ff", 42, 1.5, "{\"grid\": [1, 2]}"});
        REQUIRE(published.size() == 4);
        CHECK(published.back() == dir / "demo.manifest.json");
    }
    CHECK(listing(dir) == std::vector<std::string>{"a.txt", "b.csv", "c.json", "demo.manifest.json"});
    CHECK(slurp(dir / "a.txt") == "alpha\n");
    const auto m = nlohmann::json::parse(slurp(dir / "demo.manifest.json"));
    CHECK(m["command"] == "demo");
    CHECK(m["config_hash"] == "00ff");
    CHECK(m["seed"] == 42);
    CHECK(m["toolkit_version"] == toolkit_version());
    CHECK(m["files"] == nlohmann::json::array({"a.txt", "b.csv", "c.json"}));
    CHECK(m["grid"] == nlohmann::json::array({1, 2}));
}

TEST_CASE("an abandoned session leaves nothing behind") {
    TempDir tmp;
    const auto dir = tmp.path / "out";
    {
        OutputSession s(dir, "demo");
        s.write_text("a.txt", "alpha\n");
        s.write_text("b.txt", "beta\n");
    }
    CHECK((!fs::exists(dir) || fs::is_empty(dir)));

    // A failing command on top of earlier results keeps the earlier set intact.
    {
        OutputSession s(dir, "demo");
        s.write_text("a.txt", "first\n");
        s.commit({"h", 1, 0.0, ""});
    }
    try {
        OutputSession s(dir, "demo");
        s.write_text("a.txt", "second\n");
        throw std::runtime_error("computation failed");
    } catch (const std::runtime_error&) {
    }
    CHECK(listing(dir) == std::vector<std::string>{"a.txt", "demo.manifest.json"});
    CHECK(slurp(dir / "a.txt") == "first\n");
}

TEST_CASE("recommitting replaces results and manifest") {
    TempDir tmp;
    const auto dir = tmp.path / "out";
    for (int run = 0; run < 2; ++run) {
        OutputSession s(dir, "demo");
        s.write_text("a.txt", "run " + std::to_string(run) + "\n");
        s.commit({"h", static_cast<std::uint64_t>(run), 0.0, ""});
    }
    CHECK(slurp(dir / "a.txt") == "run 1\n");
    CHECK(nlohmann::json::parse(slurp(dir / "demo.manifest.json"))["seed"] == 1);
    CHECK(listing(dir) == std::vector<std::string>{"a.txt", "demo.manifest.json"});
}

TEST_CASE("invalid staged names are refused") {
    TempDir tmp;
    OutputSession s(tmp.path, "demo");
    CHECK_THROWS_AS(s.write_text("../escape.txt", "x"), Error);
    CHECK_THROWS_AS(s.write_text("", "x"), Error);
    CHECK_THROWS_AS(s.write_text("demo.manifest.json", "x"), Error);
}
