#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ssp/tensor.hpp"

namespace ssp {

/// Checkpoint bytes could not be decoded. `reason()` distinguishes the
/// failure for diagnostics and exit codes.
class CheckpointError : public std::runtime_error {
 public:
  enum class Reason { bad_magic, unknown_version, truncated, checksum_mismatch, malformed };
  CheckpointError(Reason reason, const std::string& what) : std::runtime_error(what), reason_(reason) {}
  Reason reason() const { return reason_; }

 private:
  Reason reason_;
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline constexpr char kCheckpointMagic[4] = {'S', 'S', 'P', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::uint64_t fnv1a64(std::string_view bytes);

/// Layout (all integers little-endian):
///   "SSPK" | u32 version | u32 entry count |
///   per entry: u32 name length, name bytes, u32 rank, u64 dims..., f64 data |
///   u64 FNV-1a of every preceding byte.
/// Entries are written in name order, so the bytes depend only on the
/// name -> value mapping. Duplicate names are rejected.
std::string store(const NamedTensors& tensors);
/// Parses and verifies; entries come back in name order.
NamedTensors load(std::string_view bytes);

/// FNV-1a of the canonical store() bytes.
std::uint64_t checksum_of(const NamedTensors& tensors);

std::string read_file(const std::filesystem::path& path);
/// Writes atomically enough for our purposes: truncate then write.
void write_file(const std::filesystem::path& path, std::string_view bytes);

const Tensor& find_tensor(const NamedTensors& tensors, std::string_view name);

}  // namespace ssp
