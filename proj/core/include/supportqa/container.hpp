#pragma once

// Versioned binary container shared by encoder checkpoints, training states,
// and baseline models.
//
// Layout (all integers little-endian):
//   magic      8 bytes  "SQACKPT\0"
//   version    u32      kContainerVersion
//   kind       u32 length + UTF-8 bytes
//   metadata   u64 length + UTF-8 JSON text
//   count      u32 number of tensors
//   tensor*    u32 name length + name, u8 dtype (1 = f64 IEEE-754 LE),
//              u32 rank, u64 dims[rank], dtype-sized elements in row-major order
//   trailer    4 bytes "END!"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "supportqa/tensor.hpp"

namespace supportqa {

inline constexpr std::uint32_t kContainerVersion = 1;

struct ContainerTensor {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<double> values;

  static ContainerTensor from_matrix(std::string name, const Matrix& m);
  Matrix to_matrix() const;
};

struct Container {
  std::string kind;
  std::string metadata;  // JSON text
  std::vector<ContainerTensor> tensors;

  const ContainerTensor& tensor(std::string_view name) const;
  bool has_tensor(std::string_view name) const;
};

std::string encode_container(const Container& c);
Container decode_container(std::string_view bytes);

// Reads and validates; throws FormatError on any structural problem.
Container read_container(const std::filesystem::path& path);
// Write to a temporary sibling then rename over `path`.
void write_container(const std::filesystem::path& path, const Container& c);

std::string read_file(const std::filesystem::path& path);
void atomic_write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace supportqa
