#include "pclformer/checkpoint.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "pclformer/error.hpp"

namespace pclformer {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'P', 'C', 'L', 'F', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof value);
}

template <class T>
T take(std::istream& is) {
  T value{};
  if (!is.read(reinterpret_cast<char*>(&value), sizeof value)) throw CheckpointError("truncated checkpoint");
  return value;
}

std::string take_string(std::istream& is, std::uint64_t len) {
  if (len > (1ULL << 32)) throw CheckpointError("corrupt checkpoint string length");
  std::string s(len, '\0');
  if (!is.read(s.data(), static_cast<std::streamsize>(len))) throw CheckpointError("truncated checkpoint");
  return s;
}

}  // namespace

void write_checkpoint(const fs::path& path, const std::string& metadata, const ParameterStore& params) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + path.string());
    out.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kVersion);
    put<std::uint64_t>(out, metadata.size());
    out.write(metadata.data(), static_cast<std::streamsize>(metadata.size()));
    put<std::uint64_t>(out, params.entries().size());
    for (const auto& e : params.entries()) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
      out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
      put<std::uint32_t>(out, static_cast<std::uint32_t>(e.tensor.rank()));
      for (auto extent : e.tensor.shape()) put<std::uint64_t>(out, extent);
      const auto data = e.tensor.data();
      out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
    }
    if (!out) throw CheckpointError("write failed for " + path.string());
  }
  fs::rename(tmp, path);
}

CheckpointFile read_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[sizeof kMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint");
  }
  if (const auto version = take<std::uint32_t>(in); version != kVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  CheckpointFile file;
  file.metadata = take_string(in, take<std::uint64_t>(in));
  const auto count = take<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    t.name = take_string(in, take<std::uint32_t>(in));
    const auto rank = take<std::uint32_t>(in);
    for (std::uint32_t r = 0; r < rank; ++r) t.shape.push_back(take<std::uint64_t>(in));
    t.data.resize(shape_numel(t.shape));
    if (!in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(double)))) {
      throw CheckpointError("truncated checkpoint tensor " + t.name);
    }
    file.tensors.push_back(std::move(t));
  }
  return file;
}

void load_parameters(const CheckpointFile& file, ParameterStore& params) {
  if (file.tensors.size() != params.entries().size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(file.tensors.size()) + " tensors, model expects " +
                          std::to_string(params.entries().size()));
  }
  for (const auto& t : file.tensors) {
    Tensor target = params.find(t.name);
    if (target.shape() != t.shape) {
      throw CheckpointError("tensor " + t.name + ": expected " + shape_to_string(target.shape()) + ", found " +
                            shape_to_string(t.shape));
    }
    auto dst = target.mutable_data();
    std::copy(t.data.begin(), t.data.end(), dst.begin());
  }
}

}  // namespace pclformer
