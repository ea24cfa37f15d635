#include "stadv/dataset.hpp"

#include "stadv/error.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iterator>

namespace stadv {

namespace fs = std::filesystem;

namespace {

std::vector<unsigned char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t at, const fs::path& path) {
  if (at + 4 > b.size()) throw ParseError(path.string(), b.size(), "truncated header");
  return (std::uint32_t(b[at]) << 24) | (std::uint32_t(b[at + 1]) << 16) | (std::uint32_t(b[at + 2]) << 8) |
         std::uint32_t(b[at + 3]);
}

void expect_magic(const std::vector<unsigned char>& b, std::uint32_t magic, const fs::path& path) {
  const std::uint32_t got = be32(b, 0, path);
  if (got != magic) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "bad magic 0x%08x (expected 0x%08x)", got, magic);
    throw ParseError(path.string(), 0, buf);
  }
}

void expect_size(const std::vector<unsigned char>& b, std::size_t needed, const fs::path& path) {
  if (b.size() < needed) {
    throw ParseError(path.string(), b.size(),
                     "truncated payload: need " + std::to_string(needed) + " bytes, file has " +
                         std::to_string(b.size()));
  }
  if (b.size() > needed) throw ParseError(path.string(), needed, "trailing bytes after payload");
}

}  // namespace

std::uint64_t fnv1a(std::span<const unsigned char> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void Dataset::validate() const {
  if (images.size() != labels.size()) {
    throw ValueError("dataset '" + split + "': " + std::to_string(images.size()) + " images vs " +
                     std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw ValueError("dataset '" + split + "': label " + std::to_string(labels[i]) + " at index " +
                       std::to_string(i) + " outside [0," + std::to_string(num_classes) + ")");
    }
    if (!images[i].same_geometry(images[0])) {
      throw ValueError("dataset '" + split + "': image " + std::to_string(i) + " has geometry " +
                       images[i].geometry() + ", expected " + images[0].geometry());
    }
  }
}

Dataset Dataset::head(std::size_t n) const {
  Dataset d;
  d.split = split;
  d.checksum = checksum;
  d.num_classes = num_classes;
  n = std::min(n, images.size());
  d.images.assign(images.begin(), images.begin() + static_cast<std::ptrdiff_t>(n));
  d.labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n));
  return d;
}

namespace {

std::vector<Image> parse_idx_images(const std::vector<unsigned char>& b, const fs::path& path) {
  expect_magic(b, 0x00000803, path);
  const std::uint32_t n = be32(b, 4, path), rows = be32(b, 8, path), cols = be32(b, 12, path);
  if (rows == 0 || cols == 0) throw ParseError(path.string(), 8, "zero image dimension");
  const std::size_t per = std::size_t(rows) * cols;
  expect_size(b, 16 + per * n, path);
  std::vector<Image> out;
  out.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    Image x(static_cast<int>(rows), static_cast<int>(cols), 1);
    const unsigned char* src = b.data() + 16 + per * i;
    for (std::size_t p = 0; p < per; ++p) x.pixels[static_cast<Eigen::Index>(p)] = src[p] / 255.0;
    out.push_back(std::move(x));
  }
  return out;
}

std::vector<int> parse_idx_labels(const std::vector<unsigned char>& b, const fs::path& path) {
  expect_magic(b, 0x00000801, path);
  const std::uint32_t n = be32(b, 4, path);
  expect_size(b, 8 + std::size_t(n), path);
  return std::vector<int>(b.begin() + 8, b.end());
}

}  // namespace

std::vector<Image> load_idx_images(const fs::path& path) { return parse_idx_images(read_bytes(path), path); }

std::vector<int> load_idx_labels(const fs::path& path) { return parse_idx_labels(read_bytes(path), path); }

Dataset load_mnist(const fs::path& dir, const std::string& split) {
  if (split != "train" && split != "test") throw ValueError("mnist split must be train or test, got '" + split + "'");
  const std::string prefix = split == "train" ? "train" : "t10k";
  const fs::path ip = dir / (prefix + "-images-idx3-ubyte");
  const fs::path lp = dir / (prefix + "-labels-idx1-ubyte");
  const auto ib = read_bytes(ip);
  const auto lb = read_bytes(lp);
  Dataset d;
  d.split = "mnist-" + split;
  d.images = parse_idx_images(ib, ip);
  d.labels = parse_idx_labels(lb, lp);
  if (d.images.size() != d.labels.size()) {
    throw ParseError(lp.string(), 4,
                     "label count " + std::to_string(d.labels.size()) + " does not match image count " +
                         std::to_string(d.images.size()));
  }
  if (!d.images.empty() && (d.images[0].height != 28 || d.images[0].width != 28)) {
    throw ParseError(ip.string(), 8, "MNIST images must be 28x28, got " + d.images[0].geometry());
  }
  d.checksum = fnv1a(lb, fnv1a(ib));
  d.validate();
  return d;
}

Dataset load_cifar10_batch(const fs::path& file) {
  constexpr std::size_t record = 1 + 3072;
  const auto b = read_bytes(file);
  if (b.empty() || b.size() % record != 0) {
    throw ParseError(file.string(), b.size() - b.size() % record,
                     "size " + std::to_string(b.size()) + " is not a positive multiple of 3073");
  }
  Dataset d;
  d.split = file.stem().string();
  const std::size_t n = b.size() / record;
  d.images.reserve(n);
  d.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* r = b.data() + i * record;
    if (r[0] > 9) throw ParseError(file.string(), i * record, "label " + std::to_string(r[0]) + " outside [0,10)");
    d.labels.push_back(r[0]);
    Image x(32, 32, 3);
    for (int c = 0; c < 3; ++c)
      for (int p = 0; p < 1024; ++p) x(p / 32, p % 32, c) = r[1 + c * 1024 + p] / 255.0;
    d.images.push_back(std::move(x));
  }
  d.checksum = fnv1a(b);
  return d;
}

Dataset load_cifar10(const fs::path& dir, const std::string& split) {
  std::vector<fs::path> files;
  if (split == "train") {
    for (int i = 1; i <= 5; ++i) files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
  } else if (split == "test") {
    files.push_back(dir / "test_batch.bin");
  } else {
    throw ValueError("cifar10 split must be train or test, got '" + split + "'");
  }
  Dataset all;
  all.split = "cifar10-" + split;
  all.checksum = 0xcbf29ce484222325ULL;
  for (const fs::path& f : files) {
    Dataset part = load_cifar10_batch(f);
    all.checksum = (all.checksum ^ part.checksum) * 0x100000001b3ULL;
    std::move(part.images.begin(), part.images.end(), std::back_inserter(all.images));
    all.labels.insert(all.labels.end(), part.labels.begin(), part.labels.end());
  }
  all.validate();
  return all;
}

}  // namespace stadv
