#include "poleimg/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <utility>

#include "poleimg/errors.hpp"

namespace poleimg {

void require_unique_observations(const ObservationSet& obs) {
  std::set<std::pair<std::int64_t, std::uint32_t>> seen;
  for (const auto& o : obs) {
    if (!seen.emplace(o.pole_id, o.session_id).second) {
      throw ContractError("duplicate observation for pole " + std::to_string(o.pole_id) +
                          " in session " + std::to_string(o.session_id));
    }
  }
}

std::vector<std::int64_t> pole_ids(const ObservationSet& obs) {
  std::vector<std::int64_t> ids;
  ids.reserve(obs.size());
  for (const auto& o : obs) ids.push_back(o.pole_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

ImageMatrix<double> to_matrix(const BinaryGrid& grid) { return grid.cast<double>(); }

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  std::vector<ManifestRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) throw ParseError("expected three tab-separated fields", line_no);
    ManifestRow row;
    const char* b = line.data();
    auto r1 = std::from_chars(b, b + t1, row.pole_id);
    auto r2 = std::from_chars(b + t1 + 1, b + t2, row.session_id);
    if (r1.ec != std::errc{} || r1.ptr != b + t1 || r2.ec != std::errc{} || r2.ptr != b + t2) {
      throw ParseError("malformed pole_id or session_id", line_no);
    }
    row.image_path = line.substr(t2 + 1);
    if (row.image_path.empty()) throw ParseError("empty image path", line_no);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_manifest(const std::vector<ManifestRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const auto& r : rows) out << r.pole_id << '\t' << r.session_id << '\t' << r.image_path << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

ObservationSet load_observations(const std::filesystem::path& manifest) {
  const auto rows = read_manifest(manifest);
  const auto base = manifest.parent_path();
  ObservationSet obs;
  obs.reserve(rows.size());
  for (const auto& row : rows) {
    std::filesystem::path p(row.image_path);
    if (p.is_relative()) p = base / p;
    Observation o;
    o.pole_id = row.pole_id;
    o.session_id = row.session_id;
    o.image = read_pgm(p);
    o.image.pole_id = row.pole_id;
    o.image.session_id = row.session_id;
    obs.push_back(std::move(o));
  }
  require_unique_observations(obs);
  return obs;
}

}  // namespace poleimg
