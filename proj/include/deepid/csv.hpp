#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "error.hpp"

namespace deepid {

// Deterministic real formatting for CSV/SVG artifacts; never locale-dependent
// because the process never calls setlocale.
inline std::string format_real(double v, int sig_digits = 9) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.*g", sig_digits, v);
    return buf;
}

inline std::string csv_join(const std::vector<std::string>& cells) {
    std::string line;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) line += ',';
        line += cells[i];
    }
    line += '\n';
    return line;
}

class CsvWriter {
public:
    explicit CsvWriter(const std::filesystem::path& path) : out_(path, std::ios::binary) {
        if (!out_) throw io_error("cannot open " + path.string() + " for writing");
    }

    void row(const std::vector<std::string>& cells) { out_ << csv_join(cells); }

private:
    std::ofstream out_;
};

} // namespace deepid
