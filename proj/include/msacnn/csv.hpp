#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "msacnn/errors.hpp"

namespace msacnn {

struct NumericCsv {
    std::vector<std::string> header;           // column names
    std::vector<std::vector<double>> columns;  // per-column samples
    std::size_t rows = 0;
};

// Reads a comma-separated file with a header row of names and decimal-point
// real values. Errors name the offending 1-based row and column.
inline NumericCsv read_numeric_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open CSV: " + path);
    NumericCsv csv;
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty CSV: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) csv.header.push_back(cell);
    }
    if (csv.header.empty()) throw DataError("CSV header has no columns: " + path);
    csv.columns.assign(csv.header.size(), {});
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::size_t col = 0;
        while (std::getline(ss, cell, ',')) {
            if (col >= csv.header.size())
                throw DataError(path + ": row " + std::to_string(row) +
                                " has more cells than the header");
            try {
                std::size_t used = 0;
                double v = std::stod(cell, &used);
                if (used != cell.size()) throw std::invalid_argument(cell);
                csv.columns[col].push_back(v);
            } catch (const std::exception&) {
                throw DataError(path + ": non-numeric cell at row " + std::to_string(row) +
                                ", column " + std::to_string(col + 1) + " ('" + cell + "')");
            }
            ++col;
        }
        if (col != csv.header.size())
            throw DataError(path + ": row " + std::to_string(row) + " has " +
                            std::to_string(col) + " cells, expected " +
                            std::to_string(csv.header.size()));
        ++csv.rows;
    }
    return csv;
}

// Stable float formatting for reproducible CSV/report output.
inline std::string format_double(double v, int precision = 9) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
    return buf;
}

class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> header) {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (i) out_ << ',';
            out_ << header[i];
        }
        out_ << '\n';
        n_cols_ = header.size();
    }

    void row(const std::vector<std::string>& cells) {
        if (cells.size() != n_cols_)
            throw UsageError("CSV row width mismatch");
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out_ << ',';
            out_ << cells[i];
        }
        out_ << '\n';
    }

    std::string str() const { return out_.str(); }

    void write_file(const std::string& path) const {
        std::ofstream f(path, std::ios::trunc);
        if (!f) throw DataError("cannot open for writing: " + path);
        f << out_.str();
    }

private:
    std::ostringstream out_;
    std::size_t n_cols_ = 0;
};

} // namespace msacnn
