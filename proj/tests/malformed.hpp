#ifndef STADV_TESTS_MALFORMED_HPP
#define STADV_TESTS_MALFORMED_HPP

// Crafted IDX and CIFAR files that every parser must reject. Shared by the
// unit tests and the acceptance runner.

#include "stadv/dataset.hpp"
#include "stadv/error.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

namespace stadv::testing {

using Bytes = std::vector<unsigned char>;

inline void put_be32(Bytes& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<unsigned char>(v >> s));
}

inline Bytes idx_images(std::uint32_t n, std::uint32_t rows, std::uint32_t cols, std::uint32_t magic = 0x803) {
  Bytes b;
  put_be32(b, magic);
  put_be32(b, n);
  put_be32(b, rows);
  put_be32(b, cols);
  for (std::uint32_t i = 0; i < n * rows * cols; ++i) b.push_back(static_cast<unsigned char>(i * 7));
  return b;
}

inline Bytes idx_labels(const std::vector<int>& labels, std::uint32_t magic = 0x801) {
  Bytes b;
  put_be32(b, magic);
  put_be32(b, static_cast<std::uint32_t>(labels.size()));
  for (int l : labels) b.push_back(static_cast<unsigned char>(l));
  return b;
}

inline Bytes cifar_records(const std::vector<int>& labels) {
  Bytes b;
  for (int l : labels) {
    b.push_back(static_cast<unsigned char>(l));
    for (int p = 0; p < 3072; ++p) b.push_back(static_cast<unsigned char>((p * 31 + l) & 0xff));
  }
  return b;
}

inline void write_bytes(const std::filesystem::path& p, const Bytes& b) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

struct MalformedCase {
  std::string name;
  std::function<void()> load;
};

// Writes the files under `dir` and returns loaders that should each throw a
// ParseError or ValueError.
inline std::vector<MalformedCase> malformed_cases(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::vector<MalformedCase> cases;
  auto file = [&](const std::string& name, const Bytes& b) {
    const fs::path p = dir / name;
    write_bytes(p, b);
    return p;
  };
  auto images_case = [&](const std::string& name, Bytes b) {
    const fs::path p = file(name, b);
    cases.push_back({name, [p] { (void)load_idx_images(p); }});
  };
  auto labels_case = [&](const std::string& name, Bytes b) {
    const fs::path p = file(name, b);
    cases.push_back({name, [p] { (void)load_idx_labels(p); }});
  };
  auto cifar_case = [&](const std::string& name, Bytes b) {
    const fs::path p = file(name, b);
    cases.push_back({name, [p] { (void)load_cifar10_batch(p); }});
  };
  auto mnist_case = [&](const std::string& name, const Bytes& images, const Bytes& labels) {
    const fs::path sub = dir / name;
    fs::create_directories(sub);
    write_bytes(sub / "t10k-images-idx3-ubyte", images);
    write_bytes(sub / "t10k-labels-idx1-ubyte", labels);
    cases.push_back({name, [sub] { (void)load_mnist(sub, "test"); }});
  };

  images_case("images_bad_magic", idx_images(2, 28, 28, 0x801));
  {
    Bytes b = idx_images(1, 28, 28);
    b.resize(10);
    images_case("images_short_header", b);
  }
  {
    Bytes b = idx_images(3, 28, 28);
    b.resize(b.size() - 100);
    images_case("images_truncated_payload", b);
  }
  {
    Bytes b = idx_images(2, 28, 28);
    b.push_back(0);
    images_case("images_trailing_byte", b);
  }
  images_case("images_zero_rows", idx_images(1, 0, 28));
  labels_case("labels_bad_magic", idx_labels({1, 2, 3}, 0x803));
  {
    Bytes b = idx_labels({1, 2, 3, 4});
    b.pop_back();
    labels_case("labels_truncated_payload", b);
  }
  mnist_case("mnist_label_ten", idx_images(3, 28, 28), idx_labels({0, 10, 1}));
  mnist_case("mnist_count_mismatch", idx_images(3, 28, 28), idx_labels({0, 1}));
  {
    Bytes b = cifar_records({1, 2});
    b.resize(b.size() - 1);
    cifar_case("cifar_partial_record", b);
  }
  cifar_case("cifar_label_out_of_range", cifar_records({3, 10}));
  cifar_case("cifar_empty", {});
  return cases;
}

// Empty string when the loader threw a structured error, else a description.
inline std::string check_rejected(const MalformedCase& c) {
  try {
    c.load();
  } catch (const ParseError&) {
    return "";
  } catch (const ValueError&) {
    return "";
  } catch (const std::exception& e) {
    return c.name + ": unstructured error: " + e.what();
  }
  return c.name + ": accepted";
}

}  // namespace stadv::testing

#endif  // STADV_TESTS_MALFORMED_HPP
