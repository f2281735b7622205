#pragma once

#include <cstddef>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace dshift::csv {

struct Row {
  std::size_t line = 0;  // 1-based line where the row starts
  std::vector<std::string> fields;
};

/// RFC 4180 reader: quoted fields, doubled quotes, CRLF or LF line ends,
/// optional UTF-8 BOM. Blank lines are skipped. Throws MalformedCsv on an
/// unterminated quote or stray characters after a closing quote.
std::vector<Row> parse(std::string_view text);

std::string escape(std::string_view field);
void write_row(std::ostream& out, const std::vector<std::string>& fields);

/// Index of a header column, or nullopt. Header names are trimmed and
/// compared case-insensitively.
std::optional<std::size_t> column(const Row& header, std::string_view name);

/// Shortest round-trip decimal form of a double; used for every report
/// number so outputs are byte-stable.
std::string format_double(double value);

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);

}  // namespace dshift::csv
