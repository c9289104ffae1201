#pragma once

// CSV artifacts: a block of "# key: value" metadata lines, one column
// header line, then data rows. '.' decimal separator, '\n' line endings.

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace rdrl::csv {

inline constexpr const char* kArtifactVersion = "1";

/// Shortest round-trip representation; "nan", "inf", "-inf" for non-finite.
std::string format_double(double v);

struct Table {
  std::vector<std::pair<std::string, std::string>> meta;  // emitted in order
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  void add_meta(std::string key, std::string value);
  /// Value of the first metadata entry with this key; throws if absent.
  const std::string& meta_value(const std::string& key) const;
  std::size_t column(const std::string& name) const;
  std::string render() const;
  /// Rows only, as rendered (used by determinism checks).
  std::string render_data() const;
};

void write_table(const std::filesystem::path& path, const Table& table);
Table read_table(const std::filesystem::path& path);
Table parse_table(const std::string& text);

}  // namespace rdrl::csv
