#pragma once

// Parameter checkpoint file:
//   "FRNK"
//   repeated until end of file:
//     u32 name length, name bytes (UTF-8, no terminator)
//     u32 rank, rank x u64 dims
//     prod(dims) x f64 payload
// All integers and reals little-endian.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "frnet/error.hpp"
#include "frnet/io_util.hpp"
#include "frnet/nn/gradcheck.hpp"
#include "frnet/nn/tensor.hpp"

namespace frnet::nn {

inline constexpr char kCheckpointMagic[4] = {'F', 'R', 'N', 'K'};

inline std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedVar>& params) {
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
  for (const NamedVar& p : params) {
    io::put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out.insert(out.end(), p.name.begin(), p.name.end());
    const Shape& shape = p.var.shape();
    io::put_u32(out, static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) io::put_u64(out, d);
    for (double v : p.var.data()) io::put_f64(out, v);
  }
  return out;
}

inline std::map<std::string, Tensor> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || !std::equal(kCheckpointMagic, kCheckpointMagic + 4, bytes.begin())) {
    throw FormatError("checkpoint: bad magic");
  }
  std::map<std::string, Tensor> out;
  std::size_t pos = 4;
  auto need = [&](std::size_t n) {
    if (bytes.size() - pos < n) throw FormatError("checkpoint: truncated record");
  };
  while (pos < bytes.size()) {
    need(4);
    const std::uint32_t name_len = io::get_u32(bytes.data() + pos);
    pos += 4;
    need(name_len);
    std::string name(bytes.begin() + static_cast<long>(pos), bytes.begin() + static_cast<long>(pos + name_len));
    pos += name_len;
    need(4);
    const std::uint32_t rank = io::get_u32(bytes.data() + pos);
    pos += 4;
    need(8ull * rank);
    Shape shape(rank);
    for (auto& d : shape) {
      d = io::get_u64(bytes.data() + pos);
      pos += 8;
    }
    const std::size_t count = shape_size(shape);
    need(8 * count);
    std::vector<double> data(count);
    for (auto& v : data) {
      v = io::get_f64(bytes.data() + pos);
      pos += 8;
    }
    out[name] = Tensor(shape, std::move(data));
  }
  return out;
}

inline void save_checkpoint(const std::vector<NamedVar>& params, const std::filesystem::path& path) {
  io::write_atomic(path, encode_checkpoint(params));
}

// Copies stored values into the given parameters; names and shapes must match
// exactly.
inline void load_checkpoint(std::vector<NamedVar>& params, const std::filesystem::path& path) {
  auto stored = decode_checkpoint(io::read_bytes(path));
  if (stored.size() != params.size()) {
    throw FormatError("checkpoint holds " + std::to_string(stored.size()) + " parameters, model has " +
                      std::to_string(params.size()));
  }
  for (NamedVar& p : params) {
    auto it = stored.find(p.name);
    if (it == stored.end()) throw FormatError("checkpoint: missing parameter '" + p.name + "'");
    if (it->second.shape() != p.var.shape()) {
      throw FormatError("checkpoint: shape mismatch for '" + p.name + "': " + shape_str(it->second.shape()) +
                        " vs " + shape_str(p.var.shape()));
    }
    auto src = std::as_const(it->second).data();
    std::copy(src.begin(), src.end(), p.var.data().begin());
  }
}

}  // namespace frnet::nn
