#include "rfsr/tensor_archive.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include <fmt/core.h>

#include "rfsr/errors.hpp"

namespace rfsr {

static_assert(std::endian::native == std::endian::little, "tensor archives assume a little-endian host");

namespace {

constexpr char kMagic[8] = {'R', 'F', 'S', 'R', 'T', 'A', '0', '1'};

template <typename T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IoError(fmt::format("{}: truncated archive", path.string()));
  return v;
}

}  // namespace

void TensorArchive::add(std::string name, ad::Shape shape, std::vector<double> values) {
  if (values.size() != ad::numel(shape))
    throw DimensionError(fmt::format("archive entry {}: {} values for shape {}", name, values.size(), ad::shape_str(shape)));
  if (find(name)) throw std::invalid_argument(fmt::format("duplicate archive entry {}", name));
  entries_.push_back({std::move(name), std::move(shape), std::move(values)});
}

void TensorArchive::add(std::string name, const ad::Tensor& tensor) {
  add(std::move(name), tensor.shape(), tensor.to_vector());
}

const NamedTensor* TensorArchive::find(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return &e;
  return nullptr;
}

const NamedTensor& TensorArchive::at(const std::string& name) const {
  if (const auto* e = find(name)) return *e;
  throw IoError(fmt::format("archive has no tensor named '{}'", name));
}

void save_archive(const std::filesystem::path& path, const TensorArchive& archive) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(archive.size()));
  for (const auto& e : archive.entries()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.shape.size()));
    for (int d : e.shape) put<std::int32_t>(out, d);
    put<std::uint64_t>(out, e.values.size());
    out.write(reinterpret_cast<const char*>(e.values.data()), static_cast<std::streamsize>(e.values.size() * sizeof(double)));
  }
  out.flush();
  if (!out) throw IoError(fmt::format("write failed for {}", path.string()));
}

TensorArchive load_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoError(fmt::format("{} is not a tensor archive", path.string()));
  TensorArchive archive;
  const auto count = get<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = get<std::uint32_t>(in, path);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw IoError(fmt::format("{}: truncated archive", path.string()));
    const auto rank = get<std::uint32_t>(in, path);
    ad::Shape shape(rank);
    for (auto& d : shape) d = get<std::int32_t>(in, path);
    const auto n = get<std::uint64_t>(in, path);
    std::vector<double> values(n);
    if (!in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(n * sizeof(double))))
      throw IoError(fmt::format("{}: truncated archive", path.string()));
    archive.add(std::move(name), std::move(shape), std::move(values));
  }
  return archive;
}

}  // namespace rfsr
