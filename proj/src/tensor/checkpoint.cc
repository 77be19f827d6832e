#include "latentplan/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace latentplan {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint blob is written in native order; big-endian hosts need byte swapping");

const NamedArray* CheckpointData::find(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
  json manifest;
  manifest["format"] = "latentplan-checkpoint";
  manifest["version"] = 1;
  json entries = json::array();
  uint64_t offset = 0;
  for (const auto& a : data.arrays) {
    if (static_cast<int64_t>(a.values.size()) != shape_numel(a.shape)) {
      throw ShapeError("checkpoint entry '" + a.name + "' has inconsistent shape");
    }
    entries.push_back({{"name", a.name}, {"shape", a.shape}, {"dtype", "f32"}, {"offset", offset}});
    offset += a.values.size() * sizeof(float);
  }
  manifest["entries"] = std::move(entries);
  manifest["blob_bytes"] = offset;
  manifest["metadata"] = json::parse(data.metadata_json);

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + tmp);
    out << manifest.dump() << '\n';
    for (const auto& a : data.arrays) {
      out.write(reinterpret_cast<const char*>(a.values.data()),
                static_cast<std::streamsize>(a.values.size() * sizeof(float)));
    }
    if (!out) throw std::runtime_error("failed writing checkpoint: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

CheckpointData load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IntegrityError("cannot open checkpoint: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IntegrityError("checkpoint has no manifest");
  json manifest;
  try {
    manifest = json::parse(line);
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("corrupt checkpoint manifest: ") + e.what());
  }
  CheckpointData data;
  try {
    if (manifest.at("format") != "latentplan-checkpoint") throw IntegrityError("unknown format");
    const auto blob_bytes = manifest.at("blob_bytes").get<uint64_t>();
    std::vector<char> blob(blob_bytes);
    in.read(blob.data(), static_cast<std::streamsize>(blob_bytes));
    if (static_cast<uint64_t>(in.gcount()) != blob_bytes) {
      throw IntegrityError("checkpoint blob truncated");
    }
    if (in.peek() != std::char_traits<char>::eof()) {
      throw IntegrityError("checkpoint has trailing bytes after blob");
    }
    uint64_t expected_offset = 0;
    for (const auto& e : manifest.at("entries")) {
      NamedArray a;
      a.name = e.at("name").get<std::string>();
      a.shape = e.at("shape").get<Shape>();
      if (e.at("dtype") != "f32") throw IntegrityError("unsupported dtype in entry " + a.name);
      const auto offset = e.at("offset").get<uint64_t>();
      int64_t n = 0;
      try {
        n = shape_numel(a.shape);
      } catch (const ShapeError&) {
        throw IntegrityError("invalid shape for entry " + a.name);
      }
      const uint64_t bytes = static_cast<uint64_t>(n) * sizeof(float);
      if (offset != expected_offset || offset + bytes > blob_bytes) {
        throw IntegrityError("entry " + a.name + " lies outside the blob");
      }
      a.values.resize(static_cast<size_t>(n));
      std::memcpy(a.values.data(), blob.data() + offset, bytes);
      expected_offset = offset + bytes;
      data.arrays.push_back(std::move(a));
    }
    if (expected_offset != blob_bytes) throw IntegrityError("blob size does not match entries");
    data.metadata_json = manifest.value("metadata", json::object()).dump();
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("malformed checkpoint manifest: ") + e.what());
  }
  return data;
}

template <std::floating_point T>
void assign_arrays(const CheckpointData& data,
                   const std::vector<std::pair<std::string, Tensor<T>>>& targets,
                   const std::string& prefix) {
  std::vector<const NamedArray*> found;
  for (const auto& [name, tensor] : targets) {
    const NamedArray* a = data.find(prefix + name);
    if (a == nullptr) throw IntegrityError("checkpoint is missing parameter " + prefix + name);
    if (a->shape != tensor.shape()) {
      throw IntegrityError("shape mismatch for " + prefix + name + ": checkpoint " +
                           shape_str(a->shape) + " vs model " + shape_str(tensor.shape()));
    }
    found.push_back(a);
  }
  for (size_t i = 0; i < targets.size(); ++i) {
    Tensor<T> t = targets[i].second;
    auto dst = t.data();
    for (size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<T>(found[i]->values[j]);
  }
}

template <std::floating_point T>
void append_arrays(CheckpointData& data,
                   const std::vector<std::pair<std::string, Tensor<T>>>& sources,
                   const std::string& prefix) {
  for (const auto& [name, tensor] : sources) {
    NamedArray a;
    a.name = prefix + name;
    a.shape = tensor.shape();
    a.values.assign(tensor.values().begin(), tensor.values().end());
    data.arrays.push_back(std::move(a));
  }
}

template void assign_arrays(const CheckpointData&,
                            const std::vector<std::pair<std::string, Tensor<float>>>&,
                            const std::string&);
template void assign_arrays(const CheckpointData&,
                            const std::vector<std::pair<std::string, Tensor<double>>>&,
                            const std::string&);
template void append_arrays(CheckpointData&, const std::vector<std::pair<std::string, Tensor<float>>>&,
                            const std::string&);
template void append_arrays(CheckpointData&,
                            const std::vector<std::pair<std::string, Tensor<double>>>&,
                            const std::string&);

}  // namespace latentplan
