#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "poleimg/encoder.hpp"
#include "poleimg/pole_image.hpp"

namespace poleimg {

struct Observation {
  std::int64_t pole_id = 0;
  std::uint32_t session_id = 0;
  PoleImage image;
};

using ObservationSet = std::vector<Observation>;

// Throws ContractError on a repeated (pole_id, session_id).
void require_unique_observations(const ObservationSet& obs);

// Distinct pole ids in ascending order.
std::vector<std::int64_t> pole_ids(const ObservationSet& obs);

ImageMatrix<double> to_matrix(const BinaryGrid& grid);

struct ManifestRow {
  std::int64_t pole_id = 0;
  std::uint32_t session_id = 0;
  std::string image_path;  // relative paths resolve against the manifest directory
};

// TSV, one `pole_id<TAB>session_id<TAB>image_path` row per observation.
std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::vector<ManifestRow>& rows, const std::filesystem::path& path);

// Reads the manifest and every image it references. The manifest's ids win
// over ids stored in the image metadata.
ObservationSet load_observations(const std::filesystem::path& manifest);

}  // namespace poleimg
