#pragma once

// Minimal RFC 4180 style CSV reading and writing (quoted fields, embedded
// commas, quotes and newlines).

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace worldscale::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::filesystem::path source;

  std::optional<std::size_t> find_column(std::string_view name) const;
  /// Throws DataError naming the file when the column is missing.
  std::size_t column(std::string_view name) const;
  /// "file:line" for row index `row` (header is line 1).
  std::string where(std::size_t row) const;
};

Table parse(std::string_view text, std::filesystem::path source = {});
Table read(const std::filesystem::path& path);

std::string escape(std::string_view field);
void write_row(std::ostream& out, const std::vector<std::string>& fields);

/// Locale-independent number parsing; throws DataError with `where`.
double to_double(std::string_view text, std::string_view where);
std::size_t to_count(std::string_view text, std::string_view where);

}  // namespace worldscale::csv
