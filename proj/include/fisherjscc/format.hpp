#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

namespace fisherjscc {

// Shortest decimal that parses back to the same double.
std::string format_double(double v);

/// CSV output with a fixed column order. The first line is a schema row
/// "# schema=<name> version=<n>", the second the column header.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, std::string_view schema, int version,
            std::vector<std::string> columns);

  CsvWriter& cell(std::string_view text);
  CsvWriter& cell(double v);
  CsvWriter& cell(std::size_t v);
  void end_row();

 private:
  std::ofstream out_;
  std::size_t columns_;
  std::size_t in_row_ = 0;
};

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace fisherjscc
