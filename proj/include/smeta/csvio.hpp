#pragma once

#include <string>
#include <vector>

namespace smeta {

// All numeric output goes through this: %.17g round-trips IEEE doubles
// exactly, which the byte-identical-rerun guarantee relies on.
std::string format_g17(double x);

// Parse one comma-separated line of doubles. line_no is only for error text.
std::vector<double> parse_csv_doubles(const std::string& line, int line_no);

// Split a CSV line into raw fields (no quoting -- none of our formats use it).
std::vector<std::string> split_csv_line(const std::string& line);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace smeta
