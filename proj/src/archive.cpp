#include "pagkd/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "pagkd/error.hpp"

namespace pagkd {
namespace {

static_assert(sizeof(double) == 8, "archive payload is IEEE-754 binary64");

template <typename T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      value |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return value;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw ArchiveError("archive truncated at byte " + std::to_string(pos_));
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_archive(std::span<const NamedParam> entries) {
  std::string out = "PGKD";
  put_le<std::uint32_t>(out, kArchiveVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.tensor.rank()));
    for (auto d : e.tensor.shape()) put_le<std::uint64_t>(out, d);
    for (double v : e.tensor.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

std::vector<NamedParam> decode_archive(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(4) != "PGKD") throw ArchiveError("bad archive magic");
  const auto version = in.get<std::uint32_t>();
  if (version != kArchiveVersion) throw ArchiveError("unsupported archive version " + std::to_string(version));
  const auto count = in.get<std::uint32_t>();
  std::vector<NamedParam> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = in.get<std::uint32_t>();
    std::string name(in.take(name_len));
    const auto rank = in.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(in.get<std::uint64_t>());
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = std::bit_cast<double>(in.get<std::uint64_t>());
    Tensor t = Tensor::from(std::move(shape), std::move(data));
    t.set_name(name);
    entries.push_back(NamedParam{std::move(name), std::move(t)});
  }
  if (!in.done()) throw ArchiveError("trailing bytes after archive entries");
  return entries;
}

void write_archive(const std::filesystem::path& path, std::span<const NamedParam> entries) {
  const std::string bytes = encode_archive(entries);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ArchiveError("cannot open " + path.string() + " for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw ArchiveError("write failed: " + path.string());
}

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ArchiveError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::vector<NamedParam> read_archive(const std::filesystem::path& path) {
  return decode_archive(read_file_bytes(path));
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << value;
  return os.str();
}

}  // namespace pagkd
