#include "treelm/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace treelm {

namespace {

constexpr char kMagic[8] = {'T', 'L', 'M', 'C', 'K', 'P', 'T', '1'};

template <typename V>
void write_pod(std::ostream& out, const V& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::istream& in) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

void write_string(std::ostream& out, const std::string& s) {
  write_pod<uint32_t>(out, static_cast<uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  const uint32_t len = read_pod<uint32_t>(in);
  std::string s(len, '\0');
  in.read(s.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("checkpoint: truncated string");
  return s;
}

template <typename T>
void write_array(std::ostream& out, const Array<T>& a) {
  write_pod<uint32_t>(out, static_cast<uint32_t>(a.shape.size()));
  for (int d : a.shape) write_pod<int32_t>(out, d);
  out.write(reinterpret_cast<const char*>(a.data.data()),
            static_cast<std::streamsize>(a.data.size() * sizeof(T)));
}

template <typename T>
Array<T> read_array(std::istream& in) {
  const uint32_t ndim = read_pod<uint32_t>(in);
  std::vector<int> shape(ndim);
  for (uint32_t i = 0; i < ndim; ++i) shape[i] = read_pod<int32_t>(in);
  Array<T> a(shape);
  in.read(reinterpret_cast<char*>(a.data.data()),
          static_cast<std::streamsize>(a.data.size() * sizeof(T)));
  if (!in) throw std::runtime_error("checkpoint: truncated array data");
  return a;
}

}  // namespace

template <typename T>
void save_checkpoint(const Checkpoint<T>& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(kMagic, sizeof(kMagic));
  write_pod<uint32_t>(out, ckpt.version);
  write_string(out, ckpt.config_json);
  write_pod<uint64_t>(out, ckpt.step);
  write_pod<uint8_t>(out, static_cast<uint8_t>(sizeof(T)));
  write_pod<uint32_t>(out, static_cast<uint32_t>(ckpt.params.size()));
  for (const auto& [name, a] : ckpt.params) {
    write_string(out, name);
    write_array(out, a);
  }
  write_pod<uint8_t>(out, ckpt.has_optimizer ? 1 : 0);
  if (ckpt.has_optimizer) {
    write_pod<int64_t>(out, ckpt.adam_t);
    for (const auto& a : ckpt.adam_m) write_array(out, a);
    for (const auto& a : ckpt.adam_v) write_array(out, a);
  }
  if (!out) throw std::runtime_error("checkpoint: write failed: " + path);
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  Checkpoint<T> ckpt;
  ckpt.version = read_pod<uint32_t>(in);
  if (ckpt.version != 1) throw std::runtime_error("checkpoint: unsupported version");
  ckpt.config_json = read_string(in);
  ckpt.step = read_pod<uint64_t>(in);
  const uint8_t dtype = read_pod<uint8_t>(in);
  if (dtype != sizeof(T))
    throw std::runtime_error("checkpoint: stored precision (" + std::to_string(dtype * 8) +
                             "-bit) does not match requested " + std::to_string(sizeof(T) * 8) +
                             "-bit load");
  const uint32_t nparams = read_pod<uint32_t>(in);
  for (uint32_t i = 0; i < nparams; ++i) {
    std::string name = read_string(in);
    ckpt.params.emplace_back(std::move(name), read_array<T>(in));
  }
  ckpt.has_optimizer = read_pod<uint8_t>(in) != 0;
  if (ckpt.has_optimizer) {
    ckpt.adam_t = read_pod<int64_t>(in);
    for (uint32_t i = 0; i < nparams; ++i) ckpt.adam_m.push_back(read_array<T>(in));
    for (uint32_t i = 0; i < nparams; ++i) ckpt.adam_v.push_back(read_array<T>(in));
  }
  return ckpt;
}

template void save_checkpoint<float>(const Checkpoint<float>&, const std::string&);
template void save_checkpoint<double>(const Checkpoint<double>&, const std::string&);
template Checkpoint<float> load_checkpoint<float>(const std::string&);
template Checkpoint<double> load_checkpoint<double>(const std::string&);

}  // namespace treelm
