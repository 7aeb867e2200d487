#include "retina/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace retina {

namespace {

constexpr const char* kMagic = "retina-checkpoint";
constexpr int kVersion = 1;

void put_double(std::ostream& os, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  std::array<char, 8> b{};
  for (auto& c : b) {
    c = static_cast<char>(bits & 0xffu);
    bits >>= 8;
  }
  os.write(b.data(), b.size());
}

double get_double(std::istream& is) {
  std::array<unsigned char, 8> b{};
  is.read(reinterpret_cast<char*>(b.data()), b.size());
  std::uint64_t bits = 0;
  for (std::size_t i = b.size(); i-- > 0;) bits = (bits << 8) | b[i];
  return std::bit_cast<double>(bits);
}

struct Entry {
  std::string name;
  Shape shape;
  std::uint64_t offset = 0;
};

}  // namespace

void save_checkpoint(std::ostream& os, std::span<ParamLeaf* const> leaves) {
  os << kMagic << ' ' << kVersion << '\n' << "leaves " << leaves.size() << '\n';
  std::uint64_t offset = 0;
  for (const ParamLeaf* l : leaves) {
    os << l->name << ' ' << l->value.rank();
    for (std::size_t d : l->value.shape()) os << ' ' << d;
    os << ' ' << offset << '\n';
    offset += 8 * l->value.size();
  }
  os << "end\n";
  for (const ParamLeaf* l : leaves)
    for (double v : l->value.data()) put_double(os, v);
  if (!os) throw CheckpointError("checkpoint: write failed");
}

void load_checkpoint(std::istream& is, std::span<ParamLeaf* const> leaves) {
  std::string line;
  if (!std::getline(is, line)) throw CheckpointError("checkpoint: empty stream");
  {
    std::istringstream hs(line);
    std::string magic;
    int version = 0;
    if (!(hs >> magic >> version) || magic != kMagic || version != kVersion) {
      throw CheckpointError("checkpoint: unrecognised header '" + line + "'");
    }
  }
  std::size_t count = 0;
  {
    std::getline(is, line);
    std::istringstream cs(line);
    std::string word;
    if (!(cs >> word >> count) || word != "leaves") {
      throw CheckpointError("checkpoint: malformed leaf count line '" + line + "'");
    }
  }
  std::vector<Entry> entries;
  while (std::getline(is, line) && line != "end") {
    std::istringstream es(line);
    Entry e;
    std::size_t rank = 0;
    if (!(es >> e.name >> rank)) throw CheckpointError("checkpoint: malformed entry '" + line + "'");
    e.shape.resize(rank);
    for (auto& d : e.shape) es >> d;
    if (!(es >> e.offset)) throw CheckpointError("checkpoint: malformed entry '" + line + "'");
    entries.push_back(std::move(e));
  }
  if (line != "end") throw CheckpointError("checkpoint: manifest has no end marker");
  if (entries.size() != count) {
    throw CheckpointError("checkpoint: manifest lists " + std::to_string(entries.size()) +
                          " leaves but declares " + std::to_string(count));
  }
  if (entries.size() != leaves.size()) {
    throw CheckpointError("checkpoint: holds " + std::to_string(entries.size()) +
                          " leaves, model expects " + std::to_string(leaves.size()));
  }
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    const ParamLeaf& l = *leaves[i];
    const Entry& e = entries[i];
    if (e.name != l.name) {
      throw CheckpointError("checkpoint: leaf " + std::to_string(i) + " is '" + e.name +
                            "', model expects '" + l.name + "'");
    }
    if (e.shape != l.value.shape()) {
      throw CheckpointError("checkpoint: leaf '" + l.name + "' has shape " + shape_str(e.shape) +
                            ", model expects " + shape_str(l.value.shape()));
    }
    if (e.offset != offset) {
      throw CheckpointError("checkpoint: leaf '" + l.name + "' has an inconsistent byte offset");
    }
    offset += 8 * l.value.size();
  }
  std::vector<std::vector<double>> data(leaves.size());
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    data[i].resize(leaves[i]->value.size());
    for (double& v : data[i]) v = get_double(is);
    if (!is) throw CheckpointError("checkpoint: data truncated in leaf '" + leaves[i]->name + "'");
  }
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    std::copy(data[i].begin(), data[i].end(), leaves[i]->value.ptr());
    leaves[i]->zero_grad();
  }
}

void save_checkpoint(const std::filesystem::path& path, std::span<ParamLeaf* const> leaves) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("checkpoint: cannot open " + path.string() + " for writing");
  save_checkpoint(os, leaves);
}

void load_checkpoint(const std::filesystem::path& path, std::span<ParamLeaf* const> leaves) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("checkpoint: cannot open " + path.string());
  load_checkpoint(is, leaves);
}

}  // namespace retina
