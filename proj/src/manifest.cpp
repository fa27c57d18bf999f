#include "pagkd/manifest.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "pagkd/archive.hpp"
#include "pagkd/error.hpp"

namespace pagkd {
namespace {

std::vector<std::string> split_line(std::string_view line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.emplace_back(line.substr(start));
      break;
    }
    cells.emplace_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return cells;
}

template <typename T>
T parse_number(const std::string& text, std::size_t line_no, const char* column) {
  T value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ManifestError("manifest line " + std::to_string(line_no) + ": bad " + column + " '" + text + "'");
  }
  return value;
}

}  // namespace

std::string_view modality_name(Modality m) { return m == Modality::kWli ? "WLI" : "NBI"; }

Modality parse_modality(std::string_view text) {
  if (text == "WLI" || text == "wli") return Modality::kWli;
  if (text == "NBI" || text == "nbi") return Modality::kNbi;
  throw ManifestError("unknown modality '" + std::string(text) + "'");
}

Manifest Manifest::parse_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line)) throw ManifestError("manifest is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_line(line);
  auto column = [&](std::string_view name) -> std::optional<std::size_t> {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto c_id = column("id"), c_path = column("path"), c_class = column("class"), c_mod = column("modality");
  if (!c_id || !c_path || !c_class || !c_mod) {
    throw ManifestError("manifest header must contain id, path, class and modality columns");
  }
  const auto c_pair = column("pair_id"), c_split = column("split"), c_fold = column("fold");

  Manifest m;
  m.has_fold_column = c_fold.has_value();
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_line(line);
    if (cells.size() != header.size()) {
      throw ManifestError("manifest line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                          " cells, header has " + std::to_string(header.size()));
    }
    ManifestRow row;
    row.id = cells[*c_id];
    row.path = cells[*c_path];
    row.label = parse_number<std::size_t>(cells[*c_class], line_no, "class");
    row.modality = parse_modality(cells[*c_mod]);
    if (c_pair) row.pair_id = cells[*c_pair];
    if (c_split) row.split = cells[*c_split];
    if (c_fold && !cells[*c_fold].empty()) row.fold = parse_number<int>(cells[*c_fold], line_no, "fold");
    m.rows.push_back(std::move(row));
  }
  return m;
}

Manifest Manifest::read_csv(const std::filesystem::path& path) {
  try {
    return parse_csv(read_file_bytes(path));
  } catch (const ArchiveError&) {
    throw ManifestError("cannot read manifest " + path.string());
  }
}

std::string Manifest::to_csv() const {
  std::ostringstream os;
  os << "id,path,class,modality,pair_id,split,fold\n";
  for (const auto& r : rows) {
    os << r.id << ',' << r.path << ',' << r.label << ',' << modality_name(r.modality) << ',' << r.pair_id << ','
       << r.split << ',';
    if (r.fold) os << *r.fold;
    os << '\n';
  }
  return os.str();
}

void Manifest::write_csv(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ManifestError("cannot write manifest " + path.string());
  os << to_csv();
}

std::size_t Manifest::num_classes() const {
  std::size_t c = 0;
  for (const auto& r : rows) c = std::max(c, r.label + 1);
  return c;
}

const ManifestRow* Manifest::find(std::string_view id) const {
  for (const auto& r : rows) {
    if (r.id == id) return &r;
  }
  return nullptr;
}

}  // namespace pagkd
