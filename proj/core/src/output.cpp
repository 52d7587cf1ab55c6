#include "qdpillar/output.hpp"

#include <cinttypes>
#include <cmath>
#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

namespace qdpillar::io {

namespace fs = std::filesystem;

const char* toolkit_version() { return "0.3.0"; }

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void Table::add_row(std::vector<Cell> row) {
    require(row.size() == columns.size(), "table row has " + std::to_string(row.size()) + " cells, expected " +
                                              std::to_string(columns.size()));
    rows.push_back(std::move(row));
}

void write_table(std::ostream& out, const Table& table) {
    for (const auto& c : table.comments) out << "# " << c << '\n';
    for (std::size_t i = 0; i < table.columns.size(); ++i) out << (i ? "," : "") << table.columns[i];
    out << '\n';
    for (const auto& row : table.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out << ',';
            std::visit(
                [&](const auto& v) {
                    using T = std::decay_t<decltype(v)>;
                    if constexpr (std::is_same_v<T, double>)
                        out << format_double(v);
                    else
                        out << v;
                },
                row[i]);
        }
        out << '\n';
    }
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',' || ch == '\t' || ch == ' ' || ch == ';') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

bool parse_number(const std::string& s, double& v) {
    char* end = nullptr;
    v = std::strtod(s.c_str(), &end);
    return end && *end == '\0' && end != s.c_str();
}

} // namespace

tcspc::Histogram read_histogram(std::istream& in, const std::string& source) {
    std::vector<double> times;
    std::vector<std::int64_t> counts;
    std::string line;
    int line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        const auto fields = split_fields(line);
        if (fields.empty() || fields[0][0] == '#') continue;
        const auto where = source + ":" + std::to_string(line_no);
        double t = 0, c = 0;
        if (!parse_number(fields[0], t)) {
            if (!header_seen && times.empty()) {
                header_seen = true;
                continue;
            }
            throw Error(ErrorKind::io, where + ": expected a number in the time column");
        }
        if (fields.size() < 2 || !parse_number(fields[1], c))
            throw Error(ErrorKind::io, where + ": expected two columns (time_ps, counts)");
        if (c < 0 || std::floor(c) != c) throw Error(ErrorKind::io, where + ": counts must be non-negative integers");
        times.push_back(t);
        counts.push_back(static_cast<std::int64_t>(c));
    }
    if (times.size() < 2) throw Error(ErrorKind::insufficient_data, source + ": fewer than two histogram bins");
    const double width = (times.back() - times.front()) / static_cast<double>(times.size() - 1);
    if (!(width > 0.0)) throw Error(ErrorKind::io, source + ": time column must increase");
    for (std::size_t i = 1; i < times.size(); ++i)
        if (std::abs(times[i] - times[i - 1] - width) > 1e-6 * width + 1e-9)
            throw Error(ErrorKind::io, source + ": time column is not uniformly spaced");
    tcspc::Histogram h;
    h.bin_width_ps = width;
    h.t0_offset_ps = times.front() - 0.5 * width;
    h.counts = std::move(counts);
    return h;
}

tcspc::Histogram read_histogram(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot read histogram '" + path.string() + "'");
    return read_histogram(in, path.string());
}

void write_histogram(std::ostream& out, const tcspc::Histogram& h, const std::vector<std::string>& comments) {
    for (const auto& c : comments) out << "# " << c << '\n';
    out << "time_ps,counts\n";
    for (std::size_t i = 0; i < h.counts.size(); ++i) out << format_double(h.bin_center(i)) << ',' << h.counts[i] << '\n';
}

std::string content_hash(const std::string& bytes) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
    return buf;
}

OutputSession::OutputSession(fs::path directory, std::string command)
    : directory_(std::move(directory)), command_(std::move(command)) {
    std::error_code ec;
    fs::create_directories(directory_, ec);
    if (ec) throw Error(ErrorKind::io, "cannot create output directory '" + directory_.string() + "': " + ec.message());
    std::random_device rd;
    for (int attempt = 0; attempt < 16; ++attempt) {
        char tag[17];
        std::snprintf(tag, sizeof tag, "%08x", rd());
        auto candidate = directory_ / ("." + command_ + ".staging-" + tag);
        if (fs::create_directory(candidate, ec)) {
            staging_ = std::move(candidate);
            return;
        }
    }
    throw Error(ErrorKind::io, "cannot create a staging directory in '" + directory_.string() + "'");
}

OutputSession::~OutputSession() {
    std::error_code ec;
    if (!staging_.empty()) fs::remove_all(staging_, ec);
}

fs::path OutputSession::stage(const std::string& file_name) {
    require(!file_name.empty() && file_name != "." && file_name != ".." && file_name.find('/') == std::string::npos,
            "invalid output file name '" + file_name + "'");
    require(file_name != command_ + ".manifest.json", "'" + file_name + "' is reserved for the manifest");
    require(!committed_, "output session already committed");
    if (std::find(files_.begin(), files_.end(), file_name) == files_.end()) files_.push_back(file_name);
    return staging_ / file_name;
}

void OutputSession::write_text(const std::string& file_name, const std::string& content) {
    const auto p = stage(file_name);
    std::ofstream out(p, std::ios::binary);
    out << content;
    out.close();
    if (!out) throw Error(ErrorKind::io, "failed writing '" + p.string() + "'");
}

void OutputSession::write_table(const std::string& file_name, const Table& table) {
    std::ostringstream ss;
    io::write_table(ss, table);
    write_text(file_name, ss.str());
}

void OutputSession::write_json(const std::string& file_name, const std::string& json_text) {
    write_text(file_name, json_text.empty() || json_text.back() != '\n' ? json_text + "\n" : json_text);
}

std::vector<fs::path> OutputSession::commit(const ManifestInfo& info) {
    require(!committed_, "output session already committed");
    std::vector<fs::path> published;
    const auto manifest_name = command_ + ".manifest.json";
    const auto manifest_path = directory_ / manifest_name;
    std::error_code ec;
    // An older manifest would vouch for files that are about to be replaced.
    fs::remove(manifest_path, ec);
    for (const auto& f : files_) {
        const auto target = directory_ / f;
        fs::rename(staging_ / f, target, ec);
        if (ec) throw Error(ErrorKind::io, "cannot publish '" + target.string() + "': " + ec.message());
        published.push_back(target);
    }

    nlohmann::ordered_json m;
    m["command"] = command_;
    m["toolkit_version"] = toolkit_version();
    m["config_hash"] = info.config_hash;
    m["seed"] = info.seed;
    m["wall_time_s"] = info.wall_time_s;
    m["files"] = files_;
    if (!info.extra_json.empty()) {
        const auto extra = nlohmann::ordered_json::parse(info.extra_json);
        for (const auto& [k, v] : extra.items()) m[k] = v;
    }
    const auto tmp = staging_ / manifest_name;
    {
        std::ofstream out(tmp, std::ios::binary);
        out << m.dump(2) << '\n';
        out.close();
        if (!out) throw Error(ErrorKind::io, "failed writing '" + tmp.string() + "'");
    }
    fs::rename(tmp, manifest_path, ec);
    if (ec) throw Error(ErrorKind::io, "cannot publish manifest: " + ec.message());
    published.push_back(manifest_path);
    committed_ = true;
    fs::remove_all(staging_, ec);
    staging_.clear();
    return published;
}

} // namespace qdpillar::io
