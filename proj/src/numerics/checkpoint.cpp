#include "cicr/numerics/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace cicr::num {

namespace {

constexpr char kMagic[8] = {'C', 'I', 'C', 'R', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kMaxNameLength = 1u << 16;

template <typename T>
void put_le(std::ostream& out, T value) {
  static_assert(std::is_unsigned_v<T>);
  char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  out.write(bytes, sizeof(T));
}

class Reader {
 public:
  Reader(std::istream& in, std::uint64_t origin) : in_(in), origin_(origin) {}

  template <typename T>
  T get_le(const char* what) {
    unsigned char bytes[sizeof(T)];
    read(reinterpret_cast<char*>(bytes), sizeof(T), what);
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[i]) << (8 * i);
    return value;
  }

  void read(char* dst, std::size_t n, const char* what) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n)
      throw CheckpointError(std::string("truncated checkpoint: missing ") + what + " at byte offset " +
                            std::to_string(origin_ + offset_ + static_cast<std::uint64_t>(in_.gcount())));
    offset_ += n;
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw CheckpointError(msg + " at byte offset " + std::to_string(origin_ + offset_));
  }

 private:
  std::istream& in_;
  std::uint64_t origin_;
  std::uint64_t offset_ = 0;
};

}  // namespace

void write_entries(std::ostream& out, const std::vector<NamedTensor>& entries) {
  out.write(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, entries.size());
  for (const auto& e : entries) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.value.rank()));
    for (auto d : e.value.shape()) put_le<std::uint64_t>(out, d);
    for (double v : e.value.values()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw CheckpointError("write failed");
}

std::vector<NamedTensor> read_entries(std::istream& in, std::uint64_t origin) {
  Reader r(in, origin);
  char magic[8];
  r.read(magic, sizeof(magic), "magic");
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) r.fail("bad checkpoint magic");
  const auto version = r.get_le<std::uint32_t>("version");
  if (version != kCheckpointVersion) r.fail("unsupported checkpoint version " + std::to_string(version));
  const auto count = r.get_le<std::uint64_t>("entry count");

  std::vector<NamedTensor> entries;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = r.get_le<std::uint32_t>("name length");
    if (name_len == 0 || name_len > kMaxNameLength) r.fail("invalid name length " + std::to_string(name_len));
    std::string name(name_len, '\0');
    r.read(name.data(), name_len, "name");
    const auto rank = r.get_le<std::uint32_t>("rank");
    if (rank > 3) r.fail("invalid rank " + std::to_string(rank) + " for " + name);
    Shape shape(rank);
    std::uint64_t total = 1;
    for (auto& d : shape) {
      const auto dim = r.get_le<std::uint64_t>("dimension");
      if (dim == 0 || dim > (1ull << 32)) r.fail("invalid dimension for " + name);
      d = static_cast<std::size_t>(dim);
      total *= dim;
      if (total > (1ull << 32)) r.fail("tensor too large: " + name);
    }
    std::vector<double> values(static_cast<std::size_t>(total));
    for (auto& v : values) v = std::bit_cast<double>(r.get_le<std::uint64_t>("payload"));
    entries.push_back(NamedTensor{std::move(name), Tensor(std::move(shape), std::move(values))});
  }
  return entries;
}

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& entries) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  write_entries(out, entries);
}

std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  return read_entries(in);
}

std::vector<NamedTensor> store_entries(const ParameterStore& store, bool with_optimizer) {
  std::vector<NamedTensor> out;
  for (const auto& name : store.names()) out.push_back({name, store.get(name).detach()});
  if (with_optimizer) {
    for (const auto& name : store.names()) {
      const auto& mom = store.moments(name);
      const Shape& shape = store.get(name).shape();
      out.push_back({"adam.m." + name, Tensor(shape, mom.m)});
      out.push_back({"adam.v." + name, Tensor(shape, mom.v)});
    }
    out.push_back({"adam.step", Tensor::scalar(static_cast<double>(store.step()))});
  }
  return out;
}

void load_store(ParameterStore& store, const std::vector<NamedTensor>& entries, bool with_optimizer) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e.value;
  auto fetch = [&](const std::string& name, const Shape& shape) -> const Tensor& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError("checkpoint has no entry " + name);
    if (it->second->shape() != shape)
      throw CheckpointError("entry " + name + " has shape " + shape_str(it->second->shape()) + ", expected " +
                            shape_str(shape));
    return *it->second;
  };
  for (const auto& name : store.names()) {
    Tensor& p = store.get(name);
    const Tensor& src = fetch(name, p.shape());
    std::copy(src.values().begin(), src.values().end(), p.values_mut().begin());
    if (with_optimizer) {
      auto& mom = store.moments(name);
      const auto m = fetch("adam.m." + name, p.shape()).values();
      const auto v = fetch("adam.v." + name, p.shape()).values();
      mom.m.assign(m.begin(), m.end());
      mom.v.assign(v.begin(), v.end());
    }
  }
  if (with_optimizer) store.set_step(static_cast<long long>(fetch("adam.step", Shape{}).item()));
}

}  // namespace cicr::num
