#pragma once

#include <string>
#include <vector>

namespace heparl::csv {

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

/// Strict reader for the flat numeric CSVs used by this project: comma
/// separated, no quoting, UTF-8, optional trailing newline. Empty cells are
/// kept as empty strings (they mean "missing" in the cohort schema).
Table read_file(const std::string& path);

void write_file(const std::string& path, const Table& table);

/// Shortest round-trip formatting for doubles (17 significant digits), so
/// load(write(x)) reproduces x bit-exactly and reports are byte-stable.
std::string format_double(double v);

/// Parses a full cell as a double; throws ValidationError on garbage.
double parse_double(const std::string& cell, const std::string& context);

} // namespace heparl::csv
