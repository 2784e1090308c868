#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace tsclab {

/// Occupancy of one directed lane segment packed into a machine word.
/// Bit i is cell i; cell size()-1 is the most downstream cell (stop line).
class CellVector {
 public:
  static constexpr int kMaxLength = 64;

  CellVector() = default;
  explicit CellVector(int length, std::uint64_t bits = 0);

  /// Parses a 0/1 string, first character = cell 0 (upstream end).
  static CellVector from_string(std::string_view bits);

  int size() const noexcept { return length_; }
  std::uint64_t bits() const noexcept { return bits_; }
  std::uint64_t mask() const noexcept { return mask_for(length_); }

  bool operator[](int i) const noexcept { return (bits_ >> i) & 1U; }
  void set(int i, bool value) noexcept;
  void assign_bits(std::uint64_t bits) noexcept { bits_ = bits & mask(); }

  int count() const noexcept;
  bool empty_cells() const noexcept { return bits_ == 0; }
  bool full() const noexcept { return bits_ == mask(); }

  std::string to_string() const;

  friend bool operator==(const CellVector&, const CellVector&) = default;

  static constexpr std::uint64_t mask_for(int length) noexcept {
    return length >= 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << length) - 1;
  }

 private:
  std::uint64_t bits_ = 0;
  int length_ = 0;
};

/// Rule 184 truth table for one cell given (left, centre, right).
constexpr bool rule184_cell(bool left, bool centre, bool right) noexcept {
  return centre ? right : left;
}

/// Rule 184 applied to cells 1..n-2; cells 0 and n-1 are returned unchanged
/// because their neighbours live across an intersection.
CellVector rule184_interior(const CellVector& cells);

/// Rule 184 on an isolated periodic ring (cell n-1 feeds cell 0).
CellVector rule184_ring(const CellVector& cells);

/// Number of vehicles that advance during one rule184_ring step.
int ring_moves(const CellVector& cells);

}  // namespace tsclab
