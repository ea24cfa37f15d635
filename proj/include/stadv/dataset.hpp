#ifndef STADV_DATASET_HPP
#define STADV_DATASET_HPP

#include "stadv/image.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace stadv {

struct Dataset {
  std::vector<Image> images;
  std::vector<int> labels;
  std::string split;
  std::uint64_t checksum = 0;  // FNV-1a over the source file bytes
  int num_classes = 10;

  std::size_t size() const { return images.size(); }
  bool empty() const { return images.empty(); }
  // Throws ValueError on count mismatch, out-of-range labels or mixed geometry.
  void validate() const;
  // First n items (all when n exceeds the size).
  Dataset head(std::size_t n) const;
};

std::uint64_t fnv1a(std::span<const unsigned char> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

// IDX containers. Pixels are scaled to [0,1].
std::vector<Image> load_idx_images(const std::filesystem::path& path);
std::vector<int> load_idx_labels(const std::filesystem::path& path);

// split "train" reads train-*-ubyte, "test" reads t10k-*-ubyte.
Dataset load_mnist(const std::filesystem::path& dir, const std::string& split = "train");

// One binary batch: records of 1 label byte + 3072 channel-planar pixels.
Dataset load_cifar10_batch(const std::filesystem::path& file);
// split "train" concatenates data_batch_1..5.bin, "test" reads test_batch.bin.
Dataset load_cifar10(const std::filesystem::path& dir, const std::string& split = "train");

}  // namespace stadv

#endif  // STADV_DATASET_HPP
