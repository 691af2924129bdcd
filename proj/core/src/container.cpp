#include "supportqa/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <unistd.h>

#include "supportqa/errors.hpp"

namespace supportqa {
namespace {

constexpr char kMagic[8] = {'S', 'Q', 'A', 'C', 'K', 'P', 'T', '\0'};
constexpr char kTrailer[4] = {'E', 'N', 'D', '!'};
constexpr std::uint8_t kDtypeF64 = 1;

template <class T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
  }
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <class T>
  T le() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t offset() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError("container truncated at byte " + std::to_string(pos_));
    }
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

ContainerTensor ContainerTensor::from_matrix(std::string name, const Matrix& m) {
  ContainerTensor t;
  t.name = std::move(name);
  t.shape = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  t.values.assign(m.data(), m.data() + m.size());
  return t;
}

Matrix ContainerTensor::to_matrix() const {
  if (shape.size() != 2) throw FormatError("tensor " + name + " is not rank 2");
  Matrix m(static_cast<Eigen::Index>(shape[0]), static_cast<Eigen::Index>(shape[1]));
  if (static_cast<std::size_t>(m.size()) != values.size()) {
    throw FormatError("tensor " + name + " element count mismatch");
  }
  std::memcpy(m.data(), values.data(), values.size() * sizeof(double));
  return m;
}

const ContainerTensor& Container::tensor(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw FormatError("missing tensor '" + std::string(name) + "' in " + kind + " container");
}

bool Container::has_tensor(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return true;
  }
  return false;
}

std::string encode_container(const Container& c) {
  std::string out;
  std::size_t payload = 0;
  for (const auto& t : c.tensors) payload += t.values.size() * 8 + t.name.size() + 16;
  out.reserve(64 + c.kind.size() + c.metadata.size() + payload);

  out.append(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kContainerVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.kind.size()));
  out.append(c.kind);
  put_le<std::uint64_t>(out, c.metadata.size());
  out.append(c.metadata);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    std::uint64_t count = 1;
    for (auto d : t.shape) count *= d;
    if (count != t.values.size()) throw ShapeError("tensor " + t.name + " shape/value mismatch");
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out.append(t.name);
    out.push_back(static_cast<char>(kDtypeF64));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put_le<std::uint64_t>(out, d);
    for (double v : t.values) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  out.append(kTrailer, sizeof(kTrailer));
  return out;
}

Container decode_container(std::string_view bytes) {
  Reader r(bytes);
  if (r.remaining() < sizeof(kMagic) ||
      std::memcmp(r.take(sizeof(kMagic)).data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("not a supportqa container (bad magic)");
  }
  const auto version = r.le<std::uint32_t>();
  if (version != kContainerVersion) {
    throw FormatError("unsupported container version " + std::to_string(version));
  }
  Container c;
  c.kind = std::string(r.take(r.le<std::uint32_t>()));
  const auto meta_len = r.le<std::uint64_t>();
  if (meta_len > r.remaining()) throw FormatError("metadata length exceeds file size");
  c.metadata = std::string(r.take(static_cast<std::size_t>(meta_len)));
  const auto count = r.le<std::uint32_t>();
  c.tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    ContainerTensor t;
    t.name = std::string(r.take(r.le<std::uint32_t>()));
    const auto dtype = r.le<std::uint8_t>();
    if (dtype != kDtypeF64) {
      throw FormatError("tensor " + t.name + ": unsupported dtype " + std::to_string(dtype));
    }
    const auto rank = r.le<std::uint32_t>();
    if (rank > 8) throw FormatError("tensor " + t.name + ": implausible rank");
    std::uint64_t elements = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto d = r.le<std::uint64_t>();
      if (d != 0 && elements > (r.remaining() / 8) / d + 1) {
        throw FormatError("tensor " + t.name + ": shape exceeds file size");
      }
      elements *= d;
      t.shape.push_back(d);
    }
    if (elements * 8 > r.remaining()) {
      throw FormatError("tensor " + t.name + ": data truncated");
    }
    t.values.resize(static_cast<std::size_t>(elements));
    for (auto& v : t.values) v = std::bit_cast<double>(r.le<std::uint64_t>());
    c.tensors.push_back(std::move(t));
  }
  if (r.remaining() != sizeof(kTrailer) ||
      std::memcmp(r.take(sizeof(kTrailer)).data(), kTrailer, sizeof(kTrailer)) != 0) {
    throw FormatError("container trailer missing or trailing garbage at byte " +
                      std::to_string(r.offset()));
  }
  return c;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void atomic_write_file(const std::filesystem::path& path, std::string_view bytes) {
  namespace fs = std::filesystem;
  std::random_device rd;
  const auto tmp = fs::path(path.string() + ".tmp-" + std::to_string(::getpid()) + "-" +
                            std::to_string(rd()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw IoError("write failed for " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("rename to " + path.string() + " failed");
  }
}

Container read_container(const std::filesystem::path& path) {
  return decode_container(read_file(path));
}

void write_container(const std::filesystem::path& path, const Container& c) {
  atomic_write_file(path, encode_container(c));
}

}  // namespace supportqa
