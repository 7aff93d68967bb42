#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "rnac/error.hpp"
#include "rnac/nn.hpp"
#include "rnac/tensor.hpp"

namespace rnac {

// Binary tensor-map layout shared by parameter and optimizer checkpoints:
// header line, then per tensor in lexicographic name order:
//   u32 LE name length, name bytes, u32 LE rank, u32 LE dims, f64 LE data.
namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw FormatError("checkpoint truncated while reading u32");
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 |
         std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

inline void put_f64(std::ostream& os, double v) {
  std::uint64_t u;
  std::memcpy(&u, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline double get_f64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw FormatError("checkpoint truncated while reading f64");
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= std::uint64_t(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

inline void write_tensor_map(std::ostream& os, const char* header,
                             const std::map<std::string, Tensor>& tensors) {
  os << header << "\n";
  for (const auto& [name, t] : tensors) {  // std::map iterates lexicographically
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_u32(os, static_cast<std::uint32_t>(d));
    for (double v : t.values()) put_f64(os, v);
  }
}

inline std::map<std::string, Tensor> read_tensor_map(std::istream& is,
                                                     const char* header) {
  std::string line;
  if (!std::getline(is, line) || line != header)
    throw VersionError(std::string("bad checkpoint header, expected ") + header);
  std::map<std::string, Tensor> out;
  while (is.peek() != std::char_traits<char>::eof()) {
    const std::uint32_t name_len = get_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw FormatError("checkpoint truncated while reading name");
    const std::uint32_t rank = get_u32(is);
    std::vector<std::size_t> shape(rank);
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      shape[i] = get_u32(is);
      count *= shape[i];
    }
    Tensor t(shape);
    for (std::size_t i = 0; i < count; ++i) t[i] = get_f64(is);
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

}  // namespace detail

inline void save_params(const ParameterStore& params, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  detail::write_tensor_map(os, "RNAC1", params);
  if (!os) throw IoError("write failed: " + path);
}

inline ParameterStore load_params(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path);
  return detail::read_tensor_map(is, "RNAC1");
}

inline void save_optimizer(const OptimizerState& opt, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  detail::write_tensor_map(os, "RNOPT1", opt.mean_square);
  if (!os) throw IoError("write failed: " + path);
}

inline std::map<std::string, Tensor> load_optimizer_tensors(
    const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path);
  return detail::read_tensor_map(is, "RNOPT1");
}

}  // namespace rnac
