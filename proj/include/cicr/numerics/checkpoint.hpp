#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "cicr/numerics/optim.hpp"
#include "cicr/numerics/tensor.hpp"

// Binary tensor container.
//
//   magic "CICRCKPT" | u32 version | u64 entry count
//   per entry: u32 name length | name bytes | u32 rank | u64 dims[rank] | f64 payload
//
// All integers and floats are little-endian. Values are written bit-for-bit,
// so a write/read round trip is exact.
namespace cicr::num {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

void write_entries(std::ostream& out, const std::vector<NamedTensor>& entries);
// `origin` is only used to report byte offsets relative to the start of a file.
std::vector<NamedTensor> read_entries(std::istream& in, std::uint64_t origin = 0);

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path);

// Parameters, and optionally the Adam moments ("adam.m.<name>", "adam.v.<name>",
// "adam.step"), as checkpoint entries.
std::vector<NamedTensor> store_entries(const ParameterStore& store, bool with_optimizer);
// Copies matching entries back into an existing store. Every parameter must be present.
void load_store(ParameterStore& store, const std::vector<NamedTensor>& entries, bool with_optimizer);

}  // namespace cicr::num
