#pragma once

// Parameter checkpoints: a text manifest followed by little-endian doubles.
//
//   retina-checkpoint 1
//   leaves <count>
//   <name> <rank> <dims...> <byte offset>
//   end
//   <raw data>

#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>

#include "retina/tensor.hpp"

namespace retina {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_checkpoint(std::ostream& os, std::span<ParamLeaf* const> leaves);
/// Fills `leaves` in place. Names, order and shapes must match the manifest.
void load_checkpoint(std::istream& is, std::span<ParamLeaf* const> leaves);

void save_checkpoint(const std::filesystem::path& path, std::span<ParamLeaf* const> leaves);
void load_checkpoint(const std::filesystem::path& path, std::span<ParamLeaf* const> leaves);

}  // namespace retina
