#pragma once

#include <string>
#include <vector>

namespace mqf {

// Minimal comma-separated I/O: no quoting or escaping, one record per line.
// Good enough for the numeric/id data this project moves around.

std::vector<std::vector<std::string>> read_csv(const std::string& path);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

// Shortest representation that parses back to the same double (%.17g would
// always round-trip but is noisy; this probes 15/16/17 digits).
std::string format_double(double v);

std::string join_csv(const std::vector<std::string>& fields);

}  // namespace mqf
