#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "wbmae/errors.hpp"

namespace wbmae {

// 17 significant digits: shortest fixed width that round-trips every finite
// double through strtod exactly.
inline std::string csv_cell(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string csv_cell(long v) { return std::to_string(v); }
inline std::string csv_cell(int v) { return std::to_string(v); }
inline std::string csv_cell(bool v) { return v ? "1" : "0"; }

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

inline void write_csv(std::ostream& os, const CsvTable& t) {
    for (std::size_t j = 0; j < t.header.size(); ++j) os << (j ? "," : "") << t.header[j];
    os << "\n";
    for (const auto& row : t.rows) {
        for (std::size_t j = 0; j < row.size(); ++j) os << (j ? "," : "") << row[j];
        os << "\n";
    }
}

inline void write_csv(const std::string& path, const CsvTable& t) {
    std::ofstream os(path, std::ios::binary); // binary: no newline translation, bytes are the contract
    if (!os) throw FormatError("write_csv: cannot open " + path);
    write_csv(os, t);
}

inline CsvTable read_csv(std::istream& is) {
    CsvTable t;
    std::string line;
    bool first = true;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::vector<std::string> cells;
        std::string cell;
        std::stringstream ss(line);
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (line.empty()) continue;
        if (line.back() == ',') cells.push_back("");
        if (first) {
            t.header = std::move(cells);
            first = false;
        } else {
            if (cells.size() != t.header.size())
                throw FormatError("read_csv: ragged row (" + std::to_string(cells.size()) + " cells, header has "
                                  + std::to_string(t.header.size()) + ")");
            t.rows.push_back(std::move(cells));
        }
    }
    if (first) throw FormatError("read_csv: empty input");
    return t;
}

inline CsvTable read_csv(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("read_csv: cannot open " + path);
    return read_csv(is);
}

inline double csv_to_double(const std::string& s) {
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str()) throw FormatError("csv: not a number: '" + s + "'");
    return v;
}

inline std::uint8_t pixel_byte(double v) {
    double scaled = v * 255.0 + 0.5;
    if (scaled <= 0.0) return 0;
    if (scaled >= 255.0) return 255;
    return std::uint8_t(scaled);
}

// binary PPM (P6), 8 bits per channel
inline void write_ppm(const std::string& path, int width, int height, const std::vector<std::uint8_t>& rgb) {
    if (int(rgb.size()) != width * height * 3) throw FormatError("write_ppm: buffer size != 3*w*h");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("write_ppm: cannot open " + path);
    os << "P6\n" << width << " " << height << "\n255\n";
    os.write(reinterpret_cast<const char*>(rgb.data()), std::streamsize(rgb.size()));
}

} // namespace wbmae
