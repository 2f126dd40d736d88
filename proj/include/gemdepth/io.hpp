#pragma once

#include <string>
#include <utility>
#include <vector>

#include "gemdepth/tensor.hpp"

namespace gemdepth {

// GEMT tensor file: magic "GEMT", version u16=1, rank u16, dims as u64
// little-endian, then the f32 little-endian row-major payload. Round-trips
// bit-exactly.
void write_gemt(const std::string& path, const Tensor& t);
Tensor read_gemt(const std::string& path);

// Named-tensor container ("GEMC"): a manifest of (name, shape) entries
// followed by the payloads, used for parameter/optimizer checkpoints.
struct NamedTensor {
  std::string name;
  Tensor tensor;
};

void write_checkpoint(const std::string& path,
                      const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> read_checkpoint(const std::string& path);
/// Names and shapes only; payloads are skipped.
std::vector<std::pair<std::string, Shape>> checkpoint_manifest(
    const std::string& path);

}  // namespace gemdepth
