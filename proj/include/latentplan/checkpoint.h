#pragma once

// Checkpoint file layout: one line of compact JSON (the manifest), a '\n',
// then a blob of little-endian 32-bit floats. The manifest lists every
// entry's name, shape, dtype ("f32") and byte offset into the blob, plus the
// blob size and free-form metadata.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "latentplan/tensor.h"

namespace latentplan {

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct CheckpointData {
  std::vector<NamedArray> arrays;
  std::string metadata_json = "{}";  // arbitrary JSON object

  const NamedArray* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const CheckpointData& data);

// Throws IntegrityError on malformed manifests, size mismatches or a
// truncated blob.
CheckpointData load_checkpoint(const std::filesystem::path& path);

// Copies arrays into tensors by name after validating every shape first, so
// a mismatch leaves all targets untouched.
template <std::floating_point T>
void assign_arrays(const CheckpointData& data, const std::vector<std::pair<std::string, Tensor<T>>>& targets,
                   const std::string& prefix = "");

template <std::floating_point T>
void append_arrays(CheckpointData& data, const std::vector<std::pair<std::string, Tensor<T>>>& sources,
                   const std::string& prefix = "");

}  // namespace latentplan
