#include "darqn/io.hpp"

#include <bit>
#include <istream>
#include <ostream>

namespace darqn::io {
namespace {

template <typename T>
void write_le(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  }
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) {
    throw FormatError("unexpected end of file");
  }
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<T>(buf[i]) << (8 * i);
  }
  return v;
}

// Guards against absurd sizes in corrupt files before allocating.
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

}  // namespace

void write_u32(std::ostream& os, std::uint32_t v) { write_le(os, v); }
void write_u64(std::ostream& os, std::uint64_t v) { write_le(os, v); }
void write_f64(std::ostream& os, double v) {
  write_le(os, std::bit_cast<std::uint64_t>(v));
}

void write_string(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void write_tensor(std::ostream& os, const Tensor& t) {
  write_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) write_u64(os, d);
  for (double v : t.data()) write_f64(os, v);
}

std::uint32_t read_u32(std::istream& is) { return read_le<std::uint32_t>(is); }
std::uint64_t read_u64(std::istream& is) { return read_le<std::uint64_t>(is); }
double read_f64(std::istream& is) {
  return std::bit_cast<double>(read_le<std::uint64_t>(is));
}

std::string read_string(std::istream& is) {
  const std::uint64_t n = read_u64(is);
  if (n > kMaxElements) throw FormatError("string length out of range");
  std::string s(n, '\0');
  if (!is.read(s.data(), static_cast<std::streamsize>(n))) {
    throw FormatError("unexpected end of file in string");
  }
  return s;
}

Tensor read_tensor(std::istream& is) {
  const std::uint32_t rank = read_u32(is);
  if (rank == 0 || rank > 8) throw FormatError("tensor rank out of range");
  Shape shape(rank);
  std::uint64_t total = 1;
  for (auto& d : shape) {
    const std::uint64_t v = read_u64(is);
    if (v == 0 || v > kMaxElements) throw FormatError("bad tensor dimension");
    d = v;
    total *= v;
    if (total > kMaxElements) throw FormatError("tensor too large");
  }
  std::vector<double> data(total);
  for (auto& v : data) v = read_f64(is);
  return Tensor(std::move(shape), std::move(data));
}

void expect_magic(std::istream& is, const std::string& magic) {
  std::string got(magic.size(), '\0');
  if (!is.read(got.data(), static_cast<std::streamsize>(got.size())) ||
      got != magic) {
    throw FormatError("bad file signature, expected '" + magic + "'");
  }
}

}  // namespace darqn::io
