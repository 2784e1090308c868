#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "tsclab/cell_vector.hpp"
#include "tsclab/rng.hpp"

namespace tsclab {

enum class Heading : std::uint8_t { North = 0, South = 1, East = 2, West = 3 };
enum class Axis : std::uint8_t { NorthSouth = 0, EastWest = 1 };
enum class Phase : std::uint8_t { NsGreen, EwGreen, AllRed };
enum class Turn : std::uint8_t { Left, Straight, Right };

/// Per-intersection decision. NoDecision keeps the current phase.
enum class Action : std::uint8_t { NsGreen = 0, NsRed = 1, NoDecision = 2 };

enum class Routing : std::uint8_t {
  Uniform,       // left/straight/right with probability 1/3 each
  StraightOnly,  // diagnostic: every street behaves as an isolated ring
};

inline constexpr std::array<Heading, 4> kHeadings{Heading::North, Heading::South,
                                                  Heading::East, Heading::West};

constexpr Axis axis_of(Heading h) noexcept {
  return (h == Heading::North || h == Heading::South) ? Axis::NorthSouth : Axis::EastWest;
}
constexpr Heading opposite(Heading h) noexcept {
  switch (h) {
    case Heading::North: return Heading::South;
    case Heading::South: return Heading::North;
    case Heading::East: return Heading::West;
    case Heading::West: return Heading::East;
  }
  return h;
}
Heading turn_heading(Heading travel, Turn turn) noexcept;
char heading_char(Heading h) noexcept;
Heading heading_from_char(char c);
const char* phase_name(Phase p) noexcept;

struct GridConfig {
  int rows = 10;
  int cols = 10;
  int segment_length = 5;
  int min_green = 3;
  Routing routing = Routing::Uniform;

  /// Throws ConfigError on rows/cols < 2, segment length outside [3, 64], min_green < 1.
  void validate() const;
  int intersections() const noexcept { return rows * cols; }
  int link_count() const noexcept { return 4 * rows * cols; }
  long total_cells() const noexcept { return static_cast<long>(link_count()) * segment_length; }
};

struct Link {
  CellVector cells;
  int from = 0;
  int to = 0;
  Heading heading = Heading::North;
  Axis axis() const noexcept { return axis_of(heading); }
};

struct PhaseState {
  Phase current = Phase::NsGreen;
  int steps_in_phase = 0;
  Phase pending = Phase::NsGreen;  // phase that follows an ALL_RED step
};

/// Moves made during one CA step.
struct FlowSample {
  long vehicles_moved = 0;
  long total_cells = 0;
  long ns_moved = 0;  // moves made by vehicles on NS-axis links
  long ns_cells = 0;
};

/// Result of one decision iteration (min_green CA steps).
struct IterationResult {
  std::vector<FlowSample> samples;
  std::vector<int> crossings;  // vehicles that crossed each intersection

  /// Per-lane flow through the four incoming approaches of an intersection.
  double intersection_flow(int node) const;
};

/// The 8 x n bit matrix an intersection agent observes. Rows 0-3 are the
/// incoming approaches from the N, S, E, W sides (stop line in the last
/// column); rows 4-7 are the outgoing links toward N, S, E, W (cell next to
/// the intersection in the first column).
class Observation {
 public:
  static constexpr int kRows = 8;
  static constexpr int kIncomingRows = 4;

  explicit Observation(int segment_length = 5);

  int segment_length() const noexcept { return n_; }
  bool at(int row, int col) const noexcept { return rows_[row][col]; }
  const CellVector& row(int r) const noexcept { return rows_[r]; }
  void set_row(int r, const CellVector& cells);
  void set(int row, int col, bool v) noexcept { rows_[row].set(col, v); }

  int incoming_count(Axis axis) const noexcept;

  /// Row-major 0/1 features over the first `rows` rows.
  void features(std::span<double> out, int rows = kRows) const noexcept;
  std::vector<double> features(int rows = kRows) const;

  /// s1 (axis = EastWest jammed, NS empty) or s2 (NorthSouth jammed, EW empty);
  /// all outgoing links empty.
  static Observation extreme(int segment_length, Axis jammed_axis);

  friend bool operator==(const Observation&, const Observation&) = default;

 private:
  int n_;
  std::array<CellVector, kRows> rows_;
};

inline int incoming_row(Heading side) noexcept { return static_cast<int>(side); }
inline int outgoing_row(Heading dir) noexcept { return 4 + static_cast<int>(dir); }

/// Uniform left/straight/right draw.
Turn sample_route(Rng& rng);

/// Homogeneous bidirectional grid on a torus with one signal per intersection.
/// Link 4*node + heading leaves `node` in direction `heading`.
class Network {
 public:
  /// Bernoulli(density) occupancy of every cell, drawn link by link,
  /// upstream cell first. All signals start NS_GREEN and switchable.
  Network(const GridConfig& config, double density, std::uint64_t seed);

  /// Rebuilds a network from explicit link contents (snapshot loading).
  Network(const GridConfig& config, std::vector<Link> links, long step, std::uint64_t seed);

  const GridConfig& config() const noexcept { return config_; }
  int intersections() const noexcept { return config_.intersections(); }
  int segment_length() const noexcept { return config_.segment_length; }
  long step_count() const noexcept { return step_; }
  long total_cells() const noexcept { return config_.total_cells(); }

  int node_id(int row, int col) const noexcept;
  int neighbour(int node, Heading dir) const noexcept;
  int outgoing_link(int node, Heading dir) const noexcept { return 4 * node + static_cast<int>(dir); }
  /// Link arriving at `node` from its `side` neighbour.
  int incoming_link(int node, Heading side) const noexcept {
    return outgoing_link(neighbour(node, side), opposite(side));
  }

  const std::vector<Link>& links() const noexcept { return links_; }
  void set_cells(int link_id, const CellVector& cells);
  const PhaseState& phase(int node) const { return phases_.at(static_cast<std::size_t>(node)); }

  long vehicle_count() const noexcept;
  double density() const noexcept;

  /// Advances one CA step. `actions` is empty (no decisions this step) or has
  /// one entry per intersection; throws UsageError otherwise.
  FlowSample step(std::span<const Action> actions = {});

  /// One decision iteration: applies `actions` on the first step, then
  /// runs the remaining min_green - 1 steps without decisions.
  IterationResult advance(std::span<const Action> actions);

  Observation observe(int node) const;

 private:
  void build_topology();
  void apply_decisions(std::span<const Action> actions);
  bool is_green(const PhaseState& ps, Axis axis) const noexcept;

  GridConfig config_;
  std::vector<Link> links_;
  std::vector<PhaseState> phases_;
  long step_ = 0;
  Rng rng_;

  // scratch buffers reused across steps
  std::vector<std::uint64_t> prev_bits_;
  std::vector<std::uint8_t> leaves_;
  std::vector<std::uint8_t> enters_;
  std::vector<int> step_crossings_;
};

Network init_network(int rows, int cols, int n, double density, std::uint64_t seed);

/// Average flow (vehicle moves per cell per step) over a window of samples.
double measure_flow(std::span<const FlowSample> samples);

/// Text snapshot: header `rows cols n step`, then `from to heading bits`
/// per link with bits upstream-first (stop line last).
void write_snapshot(std::ostream& os, const Network& net);
Network read_snapshot(std::istream& is, int min_green = 3, std::uint64_t seed = 0);

}  // namespace tsclab
