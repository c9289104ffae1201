#include "rdrl/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "rdrl/errors.hpp"

namespace rdrl::csv {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void Table::add_meta(std::string key, std::string value) {
  meta.emplace_back(std::move(key), std::move(value));
}

const std::string& Table::meta_value(const std::string& key) const {
  for (const auto& [k, v] : meta) {
    if (k == key) return v;
  }
  throw InvalidArgument("csv: no metadata entry '" + key + "'");
}

std::size_t Table::column(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i] == name) return i;
  }
  throw InvalidArgument("csv: no column '" + name + "'");
}

namespace {

void join(std::string& out, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out += ',';
    if (cells[i].find_first_of(",\n\"") != std::string::npos) {
      throw InvalidArgument("csv: cell needs quoting, which this format does not support: " + cells[i]);
    }
    out += cells[i];
  }
  out += '\n';
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  cells.push_back(cur);
  return cells;
}

}  // namespace

std::string Table::render_data() const {
  std::string out;
  for (const auto& r : rows) {
    if (r.size() != columns.size()) throw InvalidArgument("csv: row width does not match the header");
    join(out, r);
  }
  return out;
}

std::string Table::render() const {
  std::string out;
  for (const auto& [k, v] : meta) {
    if (v.find('\n') != std::string::npos) throw InvalidArgument("csv: metadata value contains a newline");
    out += "# " + k + ": " + v + '\n';
  }
  join(out, columns);
  return out + render_data();
}

void write_table(const std::filesystem::path& path, const Table& table) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::string text = table.render();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("csv: cannot open " + path.string() + " for writing");
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw Error("csv: write failed for " + path.string());
}

Table parse_table(const std::string& text) {
  Table t;
  std::istringstream in(text);
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!have_header && line.rfind("# ", 0) == 0) {
      const auto colon = line.find(": ", 2);
      if (colon == std::string::npos) throw InvalidArgument("csv: malformed metadata line: " + line);
      t.add_meta(line.substr(2, colon - 2), line.substr(colon + 2));
      continue;
    }
    if (line.empty()) continue;
    if (!have_header) {
      t.columns = split(line);
      have_header = true;
      continue;
    }
    auto cells = split(line);
    if (cells.size() != t.columns.size()) throw InvalidArgument("csv: ragged row: " + line);
    t.rows.push_back(std::move(cells));
  }
  if (!have_header) throw InvalidArgument("csv: missing column header");
  return t;
}

Table read_table(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("csv: cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_table(ss.str());
}

}  // namespace rdrl::csv
