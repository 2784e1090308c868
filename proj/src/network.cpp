#include "tsclab/network.hpp"

#include <bit>
#include <istream>
#include <ostream>
#include <sstream>

#include "tsclab/errors.hpp"

namespace tsclab {

Heading turn_heading(Heading travel, Turn turn) noexcept {
  if (turn == Turn::Straight) return travel;
  const bool left = turn == Turn::Left;
  switch (travel) {
    case Heading::North: return left ? Heading::West : Heading::East;
    case Heading::South: return left ? Heading::East : Heading::West;
    case Heading::East: return left ? Heading::North : Heading::South;
    case Heading::West: return left ? Heading::South : Heading::North;
  }
  return travel;
}

char heading_char(Heading h) noexcept { return "NSEW"[static_cast<int>(h)]; }

Heading heading_from_char(char c) {
  switch (c) {
    case 'N': return Heading::North;
    case 'S': return Heading::South;
    case 'E': return Heading::East;
    case 'W': return Heading::West;
    default: throw ParseError(std::string("unknown heading '") + c + "'");
  }
}

const char* phase_name(Phase p) noexcept {
  switch (p) {
    case Phase::NsGreen: return "NS_GREEN";
    case Phase::EwGreen: return "EW_GREEN";
    case Phase::AllRed: return "ALL_RED";
  }
  return "?";
}

void GridConfig::validate() const {
  if (rows < 2 || cols < 2) {
    throw ConfigError("grid must be at least 2x2, got " + std::to_string(rows) + "x" +
                      std::to_string(cols));
  }
  if (segment_length < 3 || segment_length > CellVector::kMaxLength) {
    throw ConfigError("segment length must be in [3, 64], got " + std::to_string(segment_length));
  }
  if (min_green < 1) throw ConfigError("min green must be >= 1");
}

double IterationResult::intersection_flow(int node) const {
  if (samples.empty()) return 0.0;
  return static_cast<double>(crossings[static_cast<std::size_t>(node)]) /
         (4.0 * static_cast<double>(samples.size()));
}

// ---------------------------------------------------------------------------
// Observation

Observation::Observation(int segment_length) : n_(segment_length) {
  for (auto& r : rows_) r = CellVector(segment_length);
}

void Observation::set_row(int r, const CellVector& cells) {
  if (cells.size() != n_) throw UsageError("observation row length mismatch");
  rows_[static_cast<std::size_t>(r)] = cells;
}

int Observation::incoming_count(Axis axis) const noexcept {
  if (axis == Axis::NorthSouth) {
    return rows_[incoming_row(Heading::North)].count() + rows_[incoming_row(Heading::South)].count();
  }
  return rows_[incoming_row(Heading::East)].count() + rows_[incoming_row(Heading::West)].count();
}

void Observation::features(std::span<double> out, int rows) const noexcept {
  std::size_t k = 0;
  for (int r = 0; r < rows; ++r) {
    const std::uint64_t bits = rows_[static_cast<std::size_t>(r)].bits();
    for (int c = 0; c < n_; ++c) out[k++] = static_cast<double>((bits >> c) & 1U);
  }
}

std::vector<double> Observation::features(int rows) const {
  std::vector<double> out(static_cast<std::size_t>(rows * n_));
  features(out, rows);
  return out;
}

Observation Observation::extreme(int segment_length, Axis jammed_axis) {
  Observation obs(segment_length);
  const CellVector full(segment_length, CellVector::mask_for(segment_length));
  if (jammed_axis == Axis::EastWest) {
    obs.set_row(incoming_row(Heading::East), full);
    obs.set_row(incoming_row(Heading::West), full);
  } else {
    obs.set_row(incoming_row(Heading::North), full);
    obs.set_row(incoming_row(Heading::South), full);
  }
  return obs;
}

// ---------------------------------------------------------------------------
// Network

Turn sample_route(Rng& rng) {
  // two random bits, rejecting the fourth value
  for (;;) {
    const auto v = rng() >> 62;
    if (v < 3) return static_cast<Turn>(v);
  }
}

Network::Network(const GridConfig& config, double density, std::uint64_t seed)
    : config_(config), rng_(seed) {
  config_.validate();
  if (!(density >= 0.0 && density <= 1.0)) {
    throw ConfigError("density must be in [0, 1], got " + std::to_string(density));
  }
  build_topology();
  for (auto& link : links_) {
    for (int i = 0; i < config_.segment_length; ++i) link.cells.set(i, bernoulli(rng_, density));
  }
}

Network::Network(const GridConfig& config, std::vector<Link> links, long step, std::uint64_t seed)
    : config_(config), step_(step), rng_(seed) {
  config_.validate();
  build_topology();
  if (links.size() != links_.size()) {
    throw ParseError("expected " + std::to_string(links_.size()) + " links, got " +
                     std::to_string(links.size()));
  }
  // links may arrive in any order; place each by (from, heading)
  std::vector<bool> seen(links_.size(), false);
  for (const auto& in : links) {
    if (in.from < 0 || in.from >= intersections()) throw ParseError("link origin out of range");
    const auto id = static_cast<std::size_t>(outgoing_link(in.from, in.heading));
    if (links_[id].to != in.to) throw ParseError("link endpoints inconsistent with torus grid");
    if (in.cells.size() != config_.segment_length) throw ParseError("link length mismatch");
    if (seen[id]) throw ParseError("duplicate link");
    seen[id] = true;
    links_[id].cells = in.cells;
  }
}

void Network::build_topology() {
  const int nodes = config_.intersections();
  links_.assign(static_cast<std::size_t>(config_.link_count()), Link{});
  for (int node = 0; node < nodes; ++node) {
    for (Heading h : kHeadings) {
      auto& link = links_[static_cast<std::size_t>(outgoing_link(node, h))];
      link.cells = CellVector(config_.segment_length);
      link.from = node;
      link.to = neighbour(node, h);
      link.heading = h;
    }
  }
  phases_.assign(static_cast<std::size_t>(nodes),
                 PhaseState{Phase::NsGreen, config_.min_green, Phase::NsGreen});
  prev_bits_.resize(links_.size());
  leaves_.resize(links_.size());
  enters_.resize(links_.size());
  step_crossings_.resize(static_cast<std::size_t>(nodes));
}

int Network::node_id(int row, int col) const noexcept {
  const int r = ((row % config_.rows) + config_.rows) % config_.rows;
  const int c = ((col % config_.cols) + config_.cols) % config_.cols;
  return r * config_.cols + c;
}

int Network::neighbour(int node, Heading dir) const noexcept {
  const int r = node / config_.cols;
  const int c = node % config_.cols;
  switch (dir) {
    case Heading::North: return node_id(r - 1, c);
    case Heading::South: return node_id(r + 1, c);
    case Heading::East: return node_id(r, c + 1);
    case Heading::West: return node_id(r, c - 1);
  }
  return node;
}

void Network::set_cells(int link_id, const CellVector& cells) {
  if (cells.size() != config_.segment_length) throw UsageError("cell vector length mismatch");
  links_.at(static_cast<std::size_t>(link_id)).cells = cells;
}

long Network::vehicle_count() const noexcept {
  long total = 0;
  for (const auto& l : links_) total += l.cells.count();
  return total;
}

double Network::density() const noexcept {
  return static_cast<double>(vehicle_count()) / static_cast<double>(total_cells());
}

bool Network::is_green(const PhaseState& ps, Axis axis) const noexcept {
  return (ps.current == Phase::NsGreen && axis == Axis::NorthSouth) ||
         (ps.current == Phase::EwGreen && axis == Axis::EastWest);
}

void Network::apply_decisions(std::span<const Action> actions) {
  for (std::size_t node = 0; node < phases_.size(); ++node) {
    auto& ps = phases_[node];
    if (ps.current == Phase::AllRed) {
      ps.current = ps.pending;
      ps.steps_in_phase = 0;
      continue;
    }
    if (actions.empty() || actions[node] == Action::NoDecision) continue;
    const Phase wanted = actions[node] == Action::NsRed ? Phase::EwGreen : Phase::NsGreen;
    if (wanted != ps.current && ps.steps_in_phase >= config_.min_green) {
      ps.current = Phase::AllRed;
      ps.pending = wanted;
      ps.steps_in_phase = 0;
    }
  }
}

FlowSample Network::step(std::span<const Action> actions) {
  if (!actions.empty() && actions.size() != phases_.size()) {
    throw UsageError("action vector has " + std::to_string(actions.size()) +
                     " entries, expected " + std::to_string(phases_.size()));
  }
  apply_decisions(actions);

  const int n = config_.segment_length;
  const std::uint64_t stop_bit = std::uint64_t{1} << (n - 1);
  for (std::size_t l = 0; l < links_.size(); ++l) prev_bits_[l] = links_[l].cells.bits();
  std::fill(leaves_.begin(), leaves_.end(), std::uint8_t{0});
  std::fill(enters_.begin(), enters_.end(), std::uint8_t{0});
  std::fill(step_crossings_.begin(), step_crossings_.end(), 0);

  // Stop-line vehicles on green approaches claim the first cell of their
  // sampled outgoing link; claims are served in random order.
  struct Claim {
    int in_link;
    int out_link;
  };
  for (int node = 0; node < intersections(); ++node) {
    const PhaseState& ps = phases_[static_cast<std::size_t>(node)];
    if (ps.current == Phase::AllRed) continue;
    std::array<Claim, 4> claims{};
    int count = 0;
    for (Heading side : kHeadings) {
      if (!is_green(ps, axis_of(side))) continue;
      const int in = incoming_link(node, side);
      if (!(prev_bits_[static_cast<std::size_t>(in)] & stop_bit)) continue;
      const Heading travel = opposite(side);
      const Turn turn = config_.routing == Routing::Uniform ? sample_route(rng_) : Turn::Straight;
      claims[static_cast<std::size_t>(count++)] = {in, outgoing_link(node, turn_heading(travel, turn))};
    }
    for (int i = count - 1; i > 0; --i) {
      const auto j = static_cast<int>(uniform_below(rng_, static_cast<std::uint64_t>(i + 1)));
      std::swap(claims[static_cast<std::size_t>(i)], claims[static_cast<std::size_t>(j)]);
    }
    for (int i = 0; i < count; ++i) {
      const auto out = static_cast<std::size_t>(claims[static_cast<std::size_t>(i)].out_link);
      if ((prev_bits_[out] & 1U) || enters_[out]) continue;
      enters_[out] = 1;
      leaves_[static_cast<std::size_t>(claims[static_cast<std::size_t>(i)].in_link)] = 1;
      ++step_crossings_[static_cast<std::size_t>(node)];
    }
  }

  FlowSample sample;
  sample.total_cells = total_cells();
  sample.ns_cells = sample.total_cells / 2;
  const std::uint64_t mask = CellVector::mask_for(n);
  for (std::size_t l = 0; l < links_.size(); ++l) {
    const std::uint64_t c = prev_bits_[l];
    const std::uint64_t downstream = (c >> 1) | (leaves_[l] ? 0U : stop_bit);
    const std::uint64_t upstream = (c << 1) | (enters_[l] ? 1U : 0U);
    links_[l].cells.assign_bits(((c & downstream) | (upstream & ~c)) & mask);
    const long moved = std::popcount(c & ~downstream & mask);
    sample.vehicles_moved += moved;
    if (links_[l].axis() == Axis::NorthSouth) sample.ns_moved += moved;
  }

  for (auto& ps : phases_) ++ps.steps_in_phase;
  ++step_;
  return sample;
}

IterationResult Network::advance(std::span<const Action> actions) {
  IterationResult result;
  result.samples.reserve(static_cast<std::size_t>(config_.min_green));
  result.crossings.assign(static_cast<std::size_t>(intersections()), 0);
  for (int s = 0; s < config_.min_green; ++s) {
    result.samples.push_back(s == 0 ? step(actions) : step());
    for (std::size_t i = 0; i < step_crossings_.size(); ++i) result.crossings[i] += step_crossings_[i];
  }
  return result;
}

Observation Network::observe(int node) const {
  if (node < 0 || node >= intersections()) {
    throw UsageError("intersection id " + std::to_string(node) + " out of range");
  }
  Observation obs(config_.segment_length);
  for (Heading h : kHeadings) {
    obs.set_row(incoming_row(h), links_[static_cast<std::size_t>(incoming_link(node, h))].cells);
    obs.set_row(outgoing_row(h), links_[static_cast<std::size_t>(outgoing_link(node, h))].cells);
  }
  return obs;
}

Network init_network(int rows, int cols, int n, double density, std::uint64_t seed) {
  GridConfig cfg;
  cfg.rows = rows;
  cfg.cols = cols;
  cfg.segment_length = n;
  return Network(cfg, density, seed);
}

double measure_flow(std::span<const FlowSample> samples) {
  if (samples.empty()) throw UsageError("measure_flow needs at least one sample");
  long moved = 0;
  long cells = 0;
  for (const auto& s : samples) {
    moved += s.vehicles_moved;
    cells += s.total_cells;
  }
  if (cells == 0) return 0.0;
  return static_cast<double>(moved) / static_cast<double>(cells);
}

// ---------------------------------------------------------------------------
// Snapshots

void write_snapshot(std::ostream& os, const Network& net) {
  const auto& cfg = net.config();
  os << cfg.rows << ' ' << cfg.cols << ' ' << cfg.segment_length << ' ' << net.step_count() << '\n';
  for (const auto& link : net.links()) {
    os << link.from << ' ' << link.to << ' ' << heading_char(link.heading) << ' '
       << link.cells.to_string() << '\n';
  }
}

Network read_snapshot(std::istream& is, int min_green, std::uint64_t seed) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError("empty snapshot");
  std::istringstream header(line);
  GridConfig cfg;
  long step = 0;
  if (!(header >> cfg.rows >> cfg.cols >> cfg.segment_length >> step)) {
    throw ParseError("bad snapshot header: '" + line + "'");
  }
  cfg.min_green = min_green;
  std::vector<Link> links;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    Link link;
    std::string heading;
    std::string bits;
    if (!(row >> link.from >> link.to >> heading >> bits) || heading.size() != 1) {
      throw ParseError("bad snapshot link line: '" + line + "'");
    }
    link.heading = heading_from_char(heading[0]);
    link.cells = CellVector::from_string(bits);
    links.push_back(std::move(link));
  }
  return Network(cfg, std::move(links), step, seed);
}

}  // namespace tsclab
