#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "rfsr/autograd.hpp"

namespace rfsr {

// An ordered set of named tensors. On disk: the magic "RFSRTA01", a u32
// entry count, then per entry u32 name length, name bytes, u32 rank, i32
// dims, u64 element count and raw little-endian doubles. Values round-trip
// bit-exactly.
struct NamedTensor {
  std::string name;
  ad::Shape shape;
  std::vector<double> values;

  bool operator==(const NamedTensor&) const = default;
};

class TensorArchive {
 public:
  void add(std::string name, ad::Shape shape, std::vector<double> values);
  void add(std::string name, const ad::Tensor& tensor);

  const NamedTensor& at(const std::string& name) const;
  const NamedTensor* find(const std::string& name) const;
  bool contains(const std::string& name) const { return find(name) != nullptr; }

  const std::vector<NamedTensor>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  bool operator==(const TensorArchive&) const = default;

 private:
  std::vector<NamedTensor> entries_;
};

void save_archive(const std::filesystem::path& path, const TensorArchive& archive);
TensorArchive load_archive(const std::filesystem::path& path);

}  // namespace rfsr
