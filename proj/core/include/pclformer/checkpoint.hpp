#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pclformer/tensor.hpp"
#include "pclformer/transformer.hpp"

namespace pclformer {

// Binary container, little-endian:
//   "PCLFCKPT" | u32 version | u64 meta_len | meta (UTF-8 JSON) |
//   u64 tensor_count | per tensor: u32 name_len | name | u32 rank |
//   u64 extents[rank] | float64 values[numel]
struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

struct CheckpointFile {
  std::string metadata;
  std::vector<CheckpointTensor> tensors;
};

void write_checkpoint(const std::filesystem::path& path, const std::string& metadata, const ParameterStore& params);
CheckpointFile read_checkpoint(const std::filesystem::path& path);

// Copies tensors into the store by name. Throws CheckpointError on a
// missing or extra name or on a shape mismatch, naming expected and found.
void load_parameters(const CheckpointFile& file, ParameterStore& params);

}  // namespace pclformer
