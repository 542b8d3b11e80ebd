#pragma once

#include <Eigen/Dense>
#include <array>
#include <complex>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "voltreg/errors.hpp"

namespace voltreg {

inline constexpr int kPhaseCount = 3;

constexpr char phase_letter(int ph) { return static_cast<char>('a' + ph); }
int parse_phase(char c);

/// Set of phases present at a node or on a line, encoded as a 3-bit mask.
class PhaseSet {
 public:
  PhaseSet() = default;
  static PhaseSet parse(std::string_view s);
  static PhaseSet all() { return PhaseSet(0b111); }
  static PhaseSet single(int ph) { return PhaseSet(static_cast<std::uint8_t>(1u << ph)); }

  void add(int ph) { mask_ |= static_cast<std::uint8_t>(1u << ph); }
  bool has(int ph) const { return (mask_ >> ph) & 1u; }
  int count() const;
  bool empty() const { return mask_ == 0; }
  bool subset_of(PhaseSet other) const { return (mask_ & ~other.mask_) == 0; }
  std::string str() const;
  std::uint8_t mask() const { return mask_; }

  friend bool operator==(PhaseSet a, PhaseSet b) { return a.mask_ == b.mask_; }
  friend bool operator!=(PhaseSet a, PhaseSet b) { return a.mask_ != b.mask_; }

 private:
  explicit PhaseSet(std::uint8_t m) : mask_(m) {}
  std::uint8_t mask_ = 0;
};

struct QuadraticCost {
  double cp = 1.0;  // curvature/2 of the p axis: cost term cp*(p-p0)^2
  double cq = 1.0;
  double p0 = 0.0;
  double q0 = 0.0;

  double value(double p, double q) const {
    const double dp = p - p0, dq = q - q0;
    return cp * dp * dp + cq * dq * dq;
  }
  double grad_p(double p) const { return 2.0 * cp * (p - p0); }
  double grad_q(double q) const { return 2.0 * cq * (q - q0); }
};

enum class DeviceKind { box, pv_inverter, storage };

std::string device_kind_name(DeviceKind k);
DeviceKind parse_device_kind(std::string_view s);

/// A dispatchable resource attached to one (node, phase) coordinate.
/// The feasible set is a box (box kind) or the intersection of a p-interval
/// with an apparent-power disk of radius `cap` (pv_inverter, storage).
struct Device {
  int node = -1;
  int phase = 0;
  DeviceKind kind = DeviceKind::box;
  double p_min = 0.0;
  double p_max = 0.0;
  double q_min = 0.0;  // box kind only
  double q_max = 0.0;
  double cap = 0.0;    // disk radius for pv_inverter/storage
  QuadraticCost cost;

  std::pair<double, double> witness() const;  // a point inside the feasible set
  void validate() const;                      // non-empty set, positive curvature
};

struct SubstationCost {
  double alpha = 0.0;      // weight, >= 0
  double p0_target = 0.0;

  double value(double p0) const {
    const double d = p0 - p0_target;
    return alpha * d * d;
  }
  double derivative(double p0) const { return 2.0 * alpha * (p0 - p0_target); }
};

struct Line {
  int from = -1;  // parent side
  int to = -1;
  PhaseSet phases;
  // Phase impedance matrix in p.u.; entries for phases outside `phases` are zero.
  Eigen::Matrix3cd z = Eigen::Matrix3cd::Zero();
};

struct NodeInfo {
  std::string name;
  PhaseSet phases;
  int parent = -1;       // -1 for the slack
  int parent_line = -1;  // index into lines(), -1 for the slack
  int depth = 0;
};

/// Radial feeder. Node 0 is the slack; nodes are indexed so that every
/// parent precedes its children. Immutable after construction.
class Feeder {
 public:
  Feeder() = default;

  /// Validates tree structure and phase consistency, reindexes nodes
  /// breadth-first from the slack. `slack` names the root node.
  static Feeder build(std::vector<NodeInfo> nodes, std::vector<Line> lines,
                      const std::string& slack_name,
                      std::array<double, 3> slack_v2,
                      std::array<double, 3> inelastic, double base_mva);

  int node_count() const { return static_cast<int>(nodes_.size()); }
  int line_count() const { return static_cast<int>(lines_.size()); }
  const NodeInfo& node(int i) const { return nodes_.at(i); }
  const Line& line(int l) const { return lines_.at(l); }
  const std::vector<Line>& lines() const { return lines_; }
  const std::vector<int>& children_of(int i) const { return children_.at(i); }
  PhaseSet slack_phases() const { return nodes_[0].phases; }

  int index_of(std::string_view name) const;  // UnknownNodeError if absent

  /// Lines on the unique path from the slack to node i, ordered root-first.
  std::vector<int> path_lines(int i) const;
  int depth(int i) const { return nodes_.at(i).depth; }
  /// True when a lies on the path from the slack to b (a == b counts).
  bool is_ancestor_or_self(int a, int b) const;
  int lowest_common_ancestor(int i, int j) const;
  /// Nodes of the subtree rooted at i (i plus all descendants), ascending.
  std::vector<int> subtree_nodes(int i) const;

  std::array<double, 3> slack_v2{1.0, 1.0, 1.0};
  std::array<double, 3> inelastic{0.0, 0.0, 0.0};
  double base_mva = 1.0;

 private:
  void check_node(int i) const;
  std::vector<NodeInfo> nodes_;
  std::vector<Line> lines_;
  std::vector<std::vector<int>> children_;
  std::vector<int> tin_, tout_;  // Euler intervals for ancestor queries
  std::unordered_map<std::string, int> name_index_;
  friend bool same_feeder(const Feeder&, const Feeder&);
};

/// Dense index over non-slack (node, phase) coordinates; the vector layout
/// used by sensitivity matrices, injections and dual variables.
class PhaseIndexMap {
 public:
  PhaseIndexMap() = default;
  explicit PhaseIndexMap(const Feeder& feeder);

  int size() const { return static_cast<int>(coords_.size()); }
  /// Row/column of (node, phase), or -1 when the node lacks that phase.
  int index(int node, int phase) const;
  std::pair<int, int> coord(int idx) const { return coords_.at(idx); }
  std::string label(const Feeder& feeder, int idx) const;

 private:
  std::vector<std::pair<int, int>> coords_;
  std::vector<std::array<int, 3>> lookup_;
};

struct FeederCase {
  Feeder feeder;
  std::vector<Device> devices;  // sorted by (node, phase); at most one per coordinate
  SubstationCost substation;
  std::vector<int> cluster_roots;  // optional partition hint from the input file
};

FeederCase load_feeder(const std::string& path);
FeederCase load_feeder_text(const std::string& text);
std::string save_feeder(const FeederCase& c);

bool same_feeder(const Feeder& a, const Feeder& b);
bool same_case(const FeederCase& a, const FeederCase& b);

}  // namespace voltreg
