#include "stadv/weights.hpp"

#include "stadv/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace stadv {

namespace fs = std::filesystem;

namespace {

constexpr const char* kMagic = "stadv-weights 1";

std::string shape_token(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xff) << 24) | ((v & 0xff00) << 8) | ((v >> 8) & 0xff00) | (v >> 24);
  }
  return v;
}

struct Entry {
  std::string name;
  Shape shape;
  std::uint64_t offset = 0;
};

struct Parsed {
  std::string architecture;
  std::string meta;
  std::vector<Entry> entries;
  std::size_t payload_start = 0;
  std::uint64_t payload_size = 0;
  std::vector<unsigned char> bytes;
};

Parsed parse(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open weight file");
  Parsed p;
  p.bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  const std::string file = path.string();

  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    const std::size_t start = pos;
    while (pos < p.bytes.size() && p.bytes[pos] != '\n') ++pos;
    if (pos >= p.bytes.size()) throw ParseError(file, start, "unterminated header line");
    std::string line(p.bytes.begin() + static_cast<std::ptrdiff_t>(start),
                     p.bytes.begin() + static_cast<std::ptrdiff_t>(pos));
    ++pos;
    return line;
  };

  if (next_line() != kMagic) throw ParseError(file, 0, "not a stadv weight file (version line)");
  while (true) {
    const std::size_t line_start = pos;
    const std::string line = next_line();
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "architecture") {
      ls >> p.architecture;
    } else if (key == "meta") {
      p.meta = line.size() > 5 ? line.substr(5) : "";
    } else if (key == "tensor") {
      Entry e;
      std::string dims;
      if (!(ls >> e.name >> dims >> e.offset)) throw ParseError(file, line_start, "malformed tensor line");
      std::istringstream ds(dims);
      std::string d;
      while (std::getline(ds, d, 'x')) {
        try {
          e.shape.push_back(std::stoi(d));
        } catch (const std::exception&) {
          throw ParseError(file, line_start, "bad shape '" + dims + "'");
        }
        if (e.shape.back() <= 0) throw ParseError(file, line_start, "bad shape '" + dims + "'");
      }
      p.entries.push_back(std::move(e));
    } else if (key == "payload") {
      if (!(ls >> p.payload_size)) throw ParseError(file, line_start, "malformed payload line");
      p.payload_start = pos;
      break;
    } else {
      throw ParseError(file, line_start, "unknown header key '" + key + "'");
    }
  }
  if (p.architecture.empty()) throw ParseError(file, 0, "missing architecture line");
  const std::uint64_t available = p.bytes.size() - p.payload_start;
  if (available != p.payload_size) {
    throw ParseError(file, p.payload_start,
                     "payload declares " + std::to_string(p.payload_size) + " bytes, file holds " +
                         std::to_string(available));
  }
  // Manifest must tile the payload exactly, in order.
  std::uint64_t expected = 0;
  for (const Entry& e : p.entries) {
    const std::uint64_t len = static_cast<std::uint64_t>(numel(e.shape)) * 4;
    if (e.offset != expected || e.offset + len > p.payload_size) {
      throw ParseError(file, p.payload_start + std::min<std::uint64_t>(e.offset, p.payload_size),
                       "tensor " + e.name + " at offset " + std::to_string(e.offset) + " (+" +
                           std::to_string(len) + ") out of bounds or overlapping; expected offset " +
                           std::to_string(expected) + " within " + std::to_string(p.payload_size) + " bytes");
    }
    expected += len;
  }
  if (expected != p.payload_size) {
    throw ParseError(file, p.payload_start + expected, "payload has bytes not covered by the manifest");
  }
  return p;
}

}  // namespace

void save_weights(const Classifier& g, const fs::path& path, const std::string& meta) {
  if (meta.find('\n') != std::string::npos) throw ValueError("weight meta must be a single line");
  std::ostringstream header;
  header << kMagic << "\n" << "architecture " << g.architecture() << "\n";
  if (!meta.empty()) header << "meta " << meta << "\n";
  std::uint64_t offset = 0;
  for (const auto& [name, t] : g.parameters()) {
    header << "tensor " << name << " " << shape_token(t.shape()) << " " << offset << "\n";
    offset += static_cast<std::uint64_t>(t.size()) * 4;
  }
  header << "payload " << offset << "\n";

  std::vector<char> payload(offset);
  std::size_t at = 0;
  for (const auto& [name, t] : g.parameters()) {
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const std::uint32_t bits = to_le(std::bit_cast<std::uint32_t>(static_cast<float>(t.value()[i])));
      std::memcpy(payload.data() + at, &bits, 4);
      at += 4;
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string() + ": cannot write weight file");
  const std::string h = header.str();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError(path.string() + ": write failed");
}

std::string load_weights(Classifier& g, const fs::path& path) {
  Parsed p = parse(path);
  const std::string file = path.string();
  if (p.architecture != g.architecture()) {
    throw ValueError(file + ": weights are for architecture '" + p.architecture + "', model is '" +
                     g.architecture() + "'");
  }
  auto& params = g.parameters();
  if (p.entries.size() != params.size()) {
    throw ValueError(file + ": manifest lists " + std::to_string(p.entries.size()) + " tensors, architecture '" +
                     g.architecture() + "' has " + std::to_string(params.size()));
  }
  for (const Entry& e : p.entries) {
    auto it = params.find(e.name);
    if (it == params.end()) {
      throw ValueError(file + ": tensor " + e.name + " is not part of architecture '" + g.architecture() + "'");
    }
    if (it->second.shape() != e.shape) {
      throw ValueError(file + ": tensor " + e.name + " has shape " + shape_string(e.shape) + ", architecture '" +
                       g.architecture() + "' expects " + shape_string(it->second.shape()));
    }
  }
  // Everything checked; now copy.
  for (const Entry& e : p.entries) {
    Tensor& t = params.at(e.name);
    const unsigned char* src = p.bytes.data() + p.payload_start + e.offset;
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, src + 4 * i, 4);
      t.value_mut()[i] = static_cast<double>(std::bit_cast<float>(to_le(bits)));
    }
  }
  return p.meta;
}

std::string weights_architecture(const fs::path& path) { return parse(path).architecture; }

}  // namespace stadv
