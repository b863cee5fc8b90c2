#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>

#include "darqn/tensor.hpp"

/// Little-endian binary primitives shared by the on-disk containers.
namespace darqn::io {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f64(std::ostream& os, double v);
void write_string(std::ostream& os, const std::string& s);
/// rank (u32), dims (u64 each), data (f64 each).
void write_tensor(std::ostream& os, const Tensor& t);

std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
double read_f64(std::istream& is);
std::string read_string(std::istream& is);
Tensor read_tensor(std::istream& is);

void expect_magic(std::istream& is, const std::string& magic);

}  // namespace darqn::io
