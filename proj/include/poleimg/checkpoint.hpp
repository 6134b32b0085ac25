#pragma once

#include <filesystem>
#include <optional>

#include "poleimg/adam.hpp"
#include "poleimg/encoder.hpp"
#include "poleimg/tensor.hpp"

namespace poleimg {

// Little-endian binary checkpoint:
//   "PICK" u32 version=1 u32 emb_dim u32 input_rows u32 input_cols u32 n_tensors
//   n_tensors x { u32 name_len, name bytes, u32 rank, rank x u32 dims, f64 values }
// Values are the row-major flattening of `dims`. Optimizer state, when
// present, is stored as extra tensors "adam.hparams", "adam.step",
// "adam.m/<name>" and "adam.v/<name>".
struct Checkpoint {
  EncoderShape shape;
  ParameterSet<double> params;
  std::optional<AdamState<double>> optimizer;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace poleimg
