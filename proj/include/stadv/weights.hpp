#ifndef STADV_WEIGHTS_HPP
#define STADV_WEIGHTS_HPP

#include "stadv/models.hpp"

#include <filesystem>
#include <string>

namespace stadv {

// Text header followed by a little-endian float32 payload:
//
//   stadv-weights 1
//   architecture A
//   meta {"seed":0}              (optional, single line)
//   tensor conv1.b 64 0          name, shape (x-separated), byte offset
//   tensor conv1.w 64x1x5x5 256
//   payload 4413696
//   <payload bytes>
//
// Tensors are listed in name order and packed back to back.
void save_weights(const Classifier& g, const std::filesystem::path& path, const std::string& meta = "");

// Verifies the architecture name and every tensor shape before touching g.
// Returns the meta line ("" when absent).
std::string load_weights(Classifier& g, const std::filesystem::path& path);

// Architecture recorded in a weight file, without loading it.
std::string weights_architecture(const std::filesystem::path& path);

}  // namespace stadv

#endif  // STADV_WEIGHTS_HPP
