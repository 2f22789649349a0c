#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace qf {

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

double parse_double(std::string_view text);

/// Minimal CSV table: one header row, numeric body.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

CsvTable read_csv(const std::filesystem::path& path);
void write_csv(const std::filesystem::path& path, const CsvTable& table);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);

}  // namespace qf
