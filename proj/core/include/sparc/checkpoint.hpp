#pragma once

#include <string>

#include "sparc/common.hpp"
#include "sparc/model.hpp"

namespace sparc {

// Checkpoint directory layout:
//   manifest.json  format_version, config, vocabulary, tensor index
//                  (name -> shape / dtype / byte_offset), provenance
//   weights.bin    raw little-endian f32, row-major, concatenated in
//                  manifest index order
void save_checkpoint(const Model& model, const std::string& dir, const Provenance& provenance);

// Validates every manifest entry (known name, declared shape, dtype, blob
// bounds) before materializing any matrix. Errors name the offending tensor.
Model load_checkpoint(const std::string& dir);

}  // namespace sparc
