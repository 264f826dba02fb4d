#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "impsym/grid.hpp"
#include "impsym/integrator.hpp"
#include "impsym/system.hpp"

namespace impsym {

enum class Mode : std::uint8_t { Flow = 0, Jump = 1 };

const char* mode_name(Mode m);

/// Flow needs c <= z_max - 1; jump needs z_min <= c <= z_max.
bool mode_admissible(int z_min, int z_max, int c, Mode m);
bool mode_admissible(const SubsystemSpec& spec, int c, Mode m);

/// A quantized state paired with its jump counter.
struct AbstractState {
  std::size_t cell = 0;
  int counter = 0;

  auto operator<=>(const AbstractState&) const = default;
};

/// One transition of the sampled-data system: flow integrates over a period
/// with constant inputs and increments c; jump applies g and resets c.
/// Throws InputError when the mode is not admissible at the counter.
HybridState concrete_step(const SubsystemSpec& spec, const HybridState& state,
                          std::span<const double> w, std::span<const double> u, Mode mode,
                          const IntegratorConfig& config);

/// Continuous successor from a grid point with constant inputs.
std::vector<double> continuous_successor(const SubsystemSpec& spec, std::span<const double> x,
                                         std::span<const double> w, std::span<const double> u,
                                         Mode mode, const IntegratorConfig& config);

struct BlockedTriple {
  std::size_t cell = 0;
  int counter = 0;
  std::size_t w = 0;
  std::size_t u = 0;
  Mode mode = Mode::Flow;
  std::string reason;
};

struct BuildReport {
  std::size_t cells = 0;
  std::size_t abstract_states = 0;
  std::size_t internal_points = 0;
  std::size_t external_points = 0;
  std::size_t entries = 0;       // admissible (state, w, u, mode) keys
  std::size_t transitions = 0;   // total stored successors
  std::vector<BlockedTriple> blocked;
  std::map<std::size_t, std::size_t> out_degree_histogram;
};

struct Successors {
  std::vector<AbstractState> states;
  bool blocked = false;      // no successor at all
  bool any_blocked = false;  // some admissible mode contributing to a union is blocked
};

/// Finite abstraction of one subsystem. Successor sets are stored in a
/// compressed sparse row layout indexed by the packed key
/// ((state_id * |W| + w) * |U| + u) * 2 + mode, state_id = cell * (z_max+1) + c.
/// Only the successor cells are stored; the counter is implied by the mode.
class TransitionTable {
public:
  std::string name;
  Arity arity;
  Grid state_grid;
  Grid internal_grid;
  Grid external_grid;
  double tau = 0.0;
  int z_min = 1;
  int z_max = 1;
  IntegratorConfig integrator;

  std::size_t num_cells() const noexcept { return state_grid.size(); }
  std::size_t num_counters() const noexcept { return static_cast<std::size_t>(z_max) + 1; }
  std::size_t num_states() const noexcept { return num_cells() * num_counters(); }
  std::size_t num_w() const noexcept { return internal_grid.size(); }
  std::size_t num_u() const noexcept { return external_grid.size(); }
  std::size_t num_keys() const noexcept { return num_states() * num_w() * num_u() * 2; }

  std::size_t state_id(const AbstractState& s) const;
  AbstractState state_of(std::size_t id) const;
  std::size_t key(const AbstractState& s, std::size_t w, std::size_t u, Mode m) const;

  /// Stored successor cells for an admissible key; empty span when the key is
  /// inadmissible or blocked.
  std::span<const std::uint32_t> successor_cells(const AbstractState& s, std::size_t w,
                                                 std::size_t u, Mode m) const;
  bool is_blocked(const AbstractState& s, std::size_t w, std::size_t u, Mode m) const;

  /// Exact stored set in ascending order. Inadmissible or blocked keys give an
  /// empty set with `blocked` set.
  Successors successors(const AbstractState& s, std::size_t w, std::size_t u, Mode m) const;
  /// Union over the admissible modes at the state's counter.
  Successors successors(const AbstractState& s, std::size_t w, std::size_t u) const;

  void write_json(std::ostream& os) const;
  std::string to_json() const;
  /// Throws InputError on an unknown format, a version mismatch or
  /// inconsistent entries.
  static TransitionTable read_json(std::istream& is, const std::string& origin = "<table>");
  static TransitionTable load(const std::string& path);
  void save(const std::string& path) const;

  bool operator==(const TransitionTable& o) const;

  static constexpr int kFormatVersion = 1;

private:
  friend TransitionTable build_abstraction(const SubsystemSpec&, double, double, double,
                                           const IntegratorConfig&, std::size_t, BuildReport*);
  void init_storage();

  std::vector<std::uint64_t> offsets_;   // num_keys + 1
  std::vector<std::uint32_t> cells_;
  std::vector<std::uint8_t> blocked_;    // per key
};

/// Builds the finite abstraction. Cells are processed in `jobs` contiguous
/// chunks; the result does not depend on `jobs`.
TransitionTable build_abstraction(const SubsystemSpec& spec, double eta_x, double eta_w,
                                  double eta_u, const IntegratorConfig& config,
                                  std::size_t jobs = 1, BuildReport* report = nullptr);

}  // namespace impsym
