#include "ssp/persist.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include <fmt/format.h>

namespace ssp {

namespace {

static_assert(sizeof(double) == 8);

template <typename T>
void put_le(std::string& out, T v) {
  std::uint64_t bits;
  if constexpr (std::is_same_v<T, double>) bits = std::bit_cast<std::uint64_t>(v);
  else bits = static_cast<std::uint64_t>(v);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    if (pos_ + sizeof(T) > bytes_.size()) {
      throw CheckpointError(CheckpointError::Reason::truncated,
                            fmt::format("checkpoint truncated while reading {} at byte {}", what, pos_));
    }
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    if constexpr (std::is_same_v<T, double>) return std::bit_cast<double>(bits);
    else return static_cast<T>(bits);
  }

  std::string_view take(std::size_t n, const char* what) {
    if (n > bytes_.size() - pos_) {
      throw CheckpointError(CheckpointError::Reason::truncated,
                            fmt::format("checkpoint truncated while reading {} at byte {}", what, pos_));
    }
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string store(const NamedTensors& tensors) {
  std::vector<const std::pair<std::string, Tensor>*> order;
  std::set<std::string_view> seen;
  for (const auto& entry : tensors) {
    if (!seen.insert(entry.first).second) throw std::invalid_argument("store: duplicate tensor name '" + entry.first + "'");
    order.push_back(&entry);
  }
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->first < b->first; });

  std::string out(kCheckpointMagic, 4);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(order.size()));
  for (const auto* entry : order) {
    const auto& [name, t] = *entry;
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put_le<std::uint64_t>(out, d);
    for (double v : t.data()) put_le<double>(out, v);
  }
  put_le<std::uint64_t>(out, fnv1a64(out));
  return out;
}

NamedTensors load(std::string_view bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw CheckpointError(CheckpointError::Reason::bad_magic, "checkpoint: missing SSPK magic");
  }
  if (bytes.size() < 4 + 4 + 4 + 8) {
    throw CheckpointError(CheckpointError::Reason::truncated, "checkpoint: shorter than the fixed header");
  }
  Reader header(bytes.substr(4));
  const auto version = header.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointError::Reason::unknown_version,
                          fmt::format("checkpoint: unknown format version {}", version));
  }
  const std::string_view body = bytes.substr(0, bytes.size() - 8);
  Reader tail(bytes.substr(bytes.size() - 8));
  const auto stored = tail.get<std::uint64_t>("checksum");
  const auto actual = fnv1a64(body);
  if (stored != actual) {
    throw CheckpointError(CheckpointError::Reason::checksum_mismatch,
                          fmt::format("checkpoint: checksum mismatch (stored {:016x}, computed {:016x})", stored, actual));
  }

  Reader r(body.substr(8));
  const auto count = r.get<std::uint32_t>("entry count");
  NamedTensors out;
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto name_len = r.get<std::uint32_t>("name length");
    std::string name(r.take(name_len, "name"));
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank == 0 || rank > 8) {
      throw CheckpointError(CheckpointError::Reason::malformed, fmt::format("checkpoint: entry '{}' has rank {}", name, rank));
    }
    Shape shape;
    std::size_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto d = r.get<std::uint64_t>("dim");
      if (d == 0 || d > r.remaining() / 8 + 1) {
        throw CheckpointError(CheckpointError::Reason::malformed, fmt::format("checkpoint: entry '{}' has bad extent", name));
      }
      shape.push_back(static_cast<std::size_t>(d));
      numel *= static_cast<std::size_t>(d);
    }
    if (numel > r.remaining() / 8) {
      throw CheckpointError(CheckpointError::Reason::truncated, fmt::format("checkpoint: payload of '{}' truncated", name));
    }
    std::vector<double> data(numel);
    for (auto& v : data) v = r.get<double>("payload");
    if (!out.empty() && !(out.back().first < name)) {
      throw CheckpointError(CheckpointError::Reason::malformed, "checkpoint: entries not in canonical order");
    }
    try {
      out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
    } catch (const NumericError& e) {
      throw CheckpointError(CheckpointError::Reason::malformed, std::string("checkpoint: ") + e.what());
    }
  }
  if (r.remaining() != 0) {
    throw CheckpointError(CheckpointError::Reason::malformed,
                          fmt::format("checkpoint: {} trailing bytes after last entry", r.remaining()));
  }
  return out;
}

std::uint64_t checksum_of(const NamedTensors& tensors) { return fnv1a64(store(tensors)); }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::filesystem::filesystem_error("cannot open", path, std::make_error_code(std::errc::no_such_file_or_directory));
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::filesystem::filesystem_error("cannot write", path, std::make_error_code(std::errc::permission_denied));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::filesystem::filesystem_error("write failed", path, std::make_error_code(std::errc::io_error));
}

const Tensor& find_tensor(const NamedTensors& tensors, std::string_view name) {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw std::invalid_argument(fmt::format("missing tensor '{}'", name));
}

}  // namespace ssp
