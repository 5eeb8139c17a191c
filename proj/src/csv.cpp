#include "heparl/csv.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "heparl/errors.hpp"

namespace heparl::csv {

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    for (char c : line) {
        if (c == ',') {
            cells.push_back(cell);
            cell.clear();
        } else if (c != '\r') {
            cell.push_back(c);
        }
    }
    cells.push_back(cell);
    return cells;
}

} // namespace

Table read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open CSV file: " + path);
    Table table;
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("empty CSV file: " + path);
    table.header = split_line(line);
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        auto cells = split_line(line);
        if (cells.size() != table.header.size()) {
            throw ValidationError("CSV row has " + std::to_string(cells.size()) +
                                  " cells, expected " + std::to_string(table.header.size()) +
                                  " in " + path);
        }
        table.rows.push_back(std::move(cells));
    }
    return table;
}

void write_file(const std::string& path, const Table& table) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot open CSV file for writing: " + path);
    std::ostringstream buf;
    for (size_t i = 0; i < table.header.size(); ++i) {
        if (i) buf << ',';
        buf << table.header[i];
    }
    buf << '\n';
    for (const auto& row : table.rows) {
        for (size_t i = 0; i < row.size(); ++i) {
            if (i) buf << ',';
            buf << row[i];
        }
        buf << '\n';
    }
    out << buf.str();
    if (!out) throw ValidationError("write failed: " + path);
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double parse_double(const std::string& cell, const std::string& context) {
    const char* begin = cell.c_str();
    char* end = nullptr;
    double v = std::strtod(begin, &end);
    if (end == begin || *end != '\0') {
        throw ValidationError("cannot parse number '" + cell + "' in " + context);
    }
    return v;
}

} // namespace heparl::csv
