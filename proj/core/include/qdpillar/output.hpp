#pragma once

// Result files: delimited text tables, JSON summaries and the run manifest
// that marks a command's outputs as complete.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <variant>
#include <vector>

#include "qdpillar/tcspc.hpp"

namespace qdpillar::io {

/// 17 significant digits, so the text reads back to the same double.
std::string format_double(double v);

using Cell = std::variant<double, std::int64_t, std::string>;

struct Table {
    std::vector<std::string> comments; // written as "# ..." lines
    std::vector<std::string> columns;
    std::vector<std::vector<Cell>> rows;

    void add_row(std::vector<Cell> row);
};

void write_table(std::ostream& out, const Table& table);

/// Two-column (time_ps, counts) text with '#' comments. The bin width is taken
/// from the spacing of the time column, which must be uniform.
tcspc::Histogram read_histogram(std::istream& in, const std::string& source = "histogram");
tcspc::Histogram read_histogram(const std::filesystem::path& path);
void write_histogram(std::ostream& out, const tcspc::Histogram& h, const std::vector<std::string>& comments = {});

/// 64-bit FNV-1a of the bytes, as 16 lowercase hex digits.
std::string content_hash(const std::string& bytes);

/// Stages every file of one command in a private directory and publishes them
/// together with `<command>.manifest.json` on commit. If commit is never
/// reached, the staging directory is removed and nothing appears.
class OutputSession {
public:
    OutputSession(std::filesystem::path directory, std::string command);
    ~OutputSession();
    OutputSession(const OutputSession&) = delete;
    OutputSession& operator=(const OutputSession&) = delete;

    /// Path inside the staging area for a result file.
    std::filesystem::path stage(const std::string& file_name);
    void write_text(const std::string& file_name, const std::string& content);
    void write_table(const std::string& file_name, const Table& table);
    /// Writes already serialized JSON text.
    void write_json(const std::string& file_name, const std::string& json_text);

    struct ManifestInfo {
        std::string config_hash;
        std::uint64_t seed = 0;
        double wall_time_s = 0.0;
        std::string extra_json; // JSON object merged into the manifest when non-empty
    };

    /// Moves staged files into place, then writes the manifest atomically.
    /// Returns the list of published paths, manifest last.
    std::vector<std::filesystem::path> commit(const ManifestInfo& info);

    const std::filesystem::path& directory() const { return directory_; }

private:
    std::filesystem::path directory_;
    std::filesystem::path staging_;
    std::string command_;
    std::vector<std::string> files_;
    bool committed_ = false;
};

/// Toolkit version string recorded in manifests.
const char* toolkit_version();

} // namespace qdpillar::io
