#pragma once

#include <string>
#include <utility>
#include <vector>

#include "pfa/params.hpp"
#include "pfa/tensor.hpp"

namespace pfa {

/// Checkpoint container format, all integers little-endian:
///   "PFAC" | u32 version (=1) | u32 tensor count |
///   per tensor: u32 name length, UTF-8 name, u32 rank, u32 dims...,
///               raw IEEE-754 single-precision values.
/// save -> load round trips reproduce every tensor bit-exactly.

std::vector<std::pair<std::string, Tensor<float>>> read_checkpoint(const std::string& path);

/// Writes to a temp file and renames into place, so failures leave no
/// partial checkpoint behind.
void write_checkpoint(const std::string& path,
                      const std::vector<std::pair<std::string, Tensor<float>>>& tensors);

void save_checkpoint(const std::string& path, const ModelParams<float>& params);

/// Strict application: every model parameter must appear with its exact
/// shape and no stray tensors may remain; violations name the tensor.
void load_checkpoint(const std::string& path, ModelParams<float>& params);

}  // namespace pfa
