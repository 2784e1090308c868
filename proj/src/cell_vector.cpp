#include "tsclab/cell_vector.hpp"

#include <bit>

#include "tsclab/errors.hpp"

namespace tsclab {

CellVector::CellVector(int length, std::uint64_t bits) : length_(length) {
  if (length < 0 || length > kMaxLength) {
    throw ConfigError("cell vector length must be in [0, 64], got " + std::to_string(length));
  }
  bits_ = bits & mask();
}

CellVector CellVector::from_string(std::string_view bits) {
  CellVector out(static_cast<int>(bits.size()));
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i] == '1') {
      out.set(static_cast<int>(i), true);
    } else if (bits[i] != '0') {
      throw ParseError("cell string must contain only 0 and 1: '" + std::string(bits) + "'");
    }
  }
  return out;
}

void CellVector::set(int i, bool value) noexcept {
  const std::uint64_t bit = std::uint64_t{1} << i;
  bits_ = value ? (bits_ | bit) : (bits_ & ~bit);
}

int CellVector::count() const noexcept { return std::popcount(bits_); }

std::string CellVector::to_string() const {
  std::string s(static_cast<std::size_t>(length_), '0');
  for (int i = 0; i < length_; ++i) {
    if ((*this)[i]) s[static_cast<std::size_t>(i)] = '1';
  }
  return s;
}

// With bit i = cell i, (c >> 1) holds each cell's downstream neighbour and
// (c << 1) its upstream neighbour. Rule 184: keep if blocked, fill if fed.
CellVector rule184_interior(const CellVector& cells) {
  const int n = cells.size();
  if (n < 3) return cells;
  const std::uint64_t c = cells.bits();
  const std::uint64_t updated = (c & (c >> 1)) | ((c << 1) & ~c);
  const std::uint64_t boundary = std::uint64_t{1} | (std::uint64_t{1} << (n - 1));
  const std::uint64_t interior = cells.mask() & ~boundary;
  return CellVector(n, (updated & interior) | (c & boundary));
}

CellVector rule184_ring(const CellVector& cells) {
  const int n = cells.size();
  if (n == 0) return cells;
  const std::uint64_t mask = cells.mask();
  const std::uint64_t c = cells.bits();
  const std::uint64_t downstream = (c >> 1) | ((c & 1U) << (n - 1));
  const std::uint64_t upstream = ((c << 1) & mask) | ((c >> (n - 1)) & 1U);
  return CellVector(n, ((c & downstream) | (upstream & ~c)) & mask);
}

int ring_moves(const CellVector& cells) {
  const int n = cells.size();
  if (n == 0) return 0;
  const std::uint64_t c = cells.bits();
  const std::uint64_t downstream = (c >> 1) | ((c & 1U) << (n - 1));
  return std::popcount(c & ~downstream & cells.mask());
}

}  // namespace tsclab
