#include "voltreg/feeder.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace voltreg {

using nlohmann::json;

int parse_phase(char c) {
  if (c < 'a' || c > 'c') {
    throw ParseError(std::string("invalid phase letter '") + c + "'");
  }
  return c - 'a';
}

PhaseSet PhaseSet::parse(std::string_view s) {
  PhaseSet out;
  for (char c : s) out.add(parse_phase(c));
  if (out.empty()) throw ParseError("empty phase set");
  return out;
}

int PhaseSet::count() const {
  int n = 0;
  for (int ph = 0; ph < kPhaseCount; ++ph) n += has(ph) ? 1 : 0;
  return n;
}

std::string PhaseSet::str() const {
  std::string s;
  for (int ph = 0; ph < kPhaseCount; ++ph) {
    if (has(ph)) s += phase_letter(ph);
  }
  return s;
}

std::string device_kind_name(DeviceKind k) {
  switch (k) {
    case DeviceKind::box: return "box";
    case DeviceKind::pv_inverter: return "pv";
    case DeviceKind::storage: return "storage";
  }
  return "box";
}

DeviceKind parse_device_kind(std::string_view s) {
  if (s == "box") return DeviceKind::box;
  if (s == "pv" || s == "pv_inverter") return DeviceKind::pv_inverter;
  if (s == "storage") return DeviceKind::storage;
  throw ParseError("unknown device kind '" + std::string(s) + "'");
}

std::pair<double, double> Device::witness() const {
  switch (kind) {
    case DeviceKind::box:
      return {std::clamp(0.0, p_min, p_max), std::clamp(0.0, q_min, q_max)};
    case DeviceKind::pv_inverter:
      return {0.0, 0.0};
    case DeviceKind::storage: {
      double p = std::clamp(0.0, p_min, p_max);
      if (std::abs(p) > cap) p = (p > 0 ? cap : -cap);
      return {p, 0.0};
    }
  }
  return {0.0, 0.0};
}

void Device::validate() const {
  if (cost.cp <= 0.0 || cost.cq <= 0.0) {
    throw ParseError("device cost curvature must be positive");
  }
  switch (kind) {
    case DeviceKind::box:
      if (p_min > p_max || q_min > q_max) throw ParseError("empty box feasible set");
      break;
    case DeviceKind::pv_inverter:
      if (p_min != 0.0) throw ParseError("pv feasible set starts at zero");
      if (p_max < 0.0) throw ParseError("pv available power must be nonnegative");
      if (cap <= 0.0) throw ParseError("pv capacity must be positive");
      break;
    case DeviceKind::storage:
      if (p_min > p_max) throw ParseError("empty storage feasible set");
      if (cap <= 0.0) throw ParseError("storage capacity must be positive");
      if (p_min > cap || p_max < -cap) throw ParseError("storage box misses the disk");
      break;
  }
  auto [wp, wq] = witness();
  const bool in_p = wp >= p_min - 1e-15 && wp <= p_max + 1e-15;
  const bool in_disk = kind == DeviceKind::box
                           ? (wq >= q_min - 1e-15 && wq <= q_max + 1e-15)
                           : (wp * wp + wq * wq <= cap * cap + 1e-15);
  if (!in_p || !in_disk) throw ParseError("device feasible set is empty");
}

Feeder Feeder::build(std::vector<NodeInfo> nodes, std::vector<Line> lines,
                     const std::string& slack_name, std::array<double, 3> slack_v2,
                     std::array<double, 3> inelastic, double base_mva) {
  const int n = static_cast<int>(nodes.size());
  if (n == 0) throw TopologyError("feeder has no nodes");
  if (static_cast<int>(lines.size()) != n - 1) {
    throw TopologyError("line count must be node count minus one");
  }

  std::unordered_map<std::string, int> raw_index;
  for (int i = 0; i < n; ++i) {
    if (!raw_index.emplace(nodes[i].name, i).second) {
      throw ParseError("duplicate node id '" + nodes[i].name + "'");
    }
    if (nodes[i].phases.empty()) {
      throw PhaseError("node '" + nodes[i].name + "' has an empty phase set");
    }
  }
  auto slack_it = raw_index.find(slack_name);
  if (slack_it == raw_index.end()) {
    throw TopologyError("slack node '" + slack_name + "' not found");
  }
  const int raw_slack = slack_it->second;

  // Parent assignment; duplicates and self-loops are topology faults.
  std::vector<int> parent(n, -1), parent_line(n, -1);
  std::vector<std::vector<int>> raw_children(n);
  for (int l = 0; l < static_cast<int>(lines.size()); ++l) {
    const Line& ln = lines[l];
    if (ln.from < 0 || ln.from >= n || ln.to < 0 || ln.to >= n) {
      throw TopologyError("line endpoint out of range");
    }
    if (ln.from == ln.to) throw TopologyError("self-loop line");
    if (ln.to == raw_slack) throw TopologyError("slack node has a parent line");
    if (parent[ln.to] != -1) {
      throw TopologyError("node '" + nodes[ln.to].name + "' has multiple parents");
    }
    parent[ln.to] = ln.from;
    parent_line[ln.to] = l;
    raw_children[ln.from].push_back(ln.to);
  }

  // Breadth-first reindex from the slack; unreachable nodes mean a cycle or
  // a disconnected component.
  std::vector<int> order;
  order.reserve(n);
  std::vector<int> new_index(n, -1);
  std::deque<int> frontier{raw_slack};
  new_index[raw_slack] = 0;
  while (!frontier.empty()) {
    const int u = frontier.front();
    frontier.pop_front();
    order.push_back(u);
    for (int c : raw_children[u]) {
      new_index[c] = static_cast<int>(order.size()) + static_cast<int>(frontier.size());
      frontier.push_back(c);
    }
  }
  if (static_cast<int>(order.size()) != n) {
    throw TopologyError("feeder is not a tree rooted at the slack (cycle or disconnected part)");
  }

  Feeder f;
  f.slack_v2 = slack_v2;
  f.inelastic = inelastic;
  f.base_mva = base_mva;
  f.nodes_.resize(n);
  f.lines_.resize(lines.size());
  f.children_.resize(n);
  for (int rank = 0; rank < n; ++rank) {
    const int raw = order[rank];
    NodeInfo info = nodes[raw];
    info.parent = parent[raw] == -1 ? -1 : new_index[parent[raw]];
    info.parent_line = -1;  // filled below once lines are renumbered
    info.depth = info.parent == -1 ? 0 : f.nodes_[info.parent].depth + 1;
    f.nodes_[rank] = std::move(info);
    f.name_index_.emplace(f.nodes_[rank].name, rank);
  }
  // Line i enters node i+1 in the new numbering.
  for (int rank = 1; rank < n; ++rank) {
    const int raw = order[rank];
    Line ln = lines[parent_line[raw]];
    ln.from = f.nodes_[rank].parent;
    ln.to = rank;
    f.lines_[rank - 1] = std::move(ln);
    f.nodes_[rank].parent_line = rank - 1;
    f.children_[f.nodes_[rank].parent].push_back(rank);
  }

  // Euler intervals for O(1) ancestor queries.
  f.tin_.assign(n, 0);
  f.tout_.assign(n, 0);
  int clock = 0;
  std::vector<std::pair<int, int>> stack{{0, 0}};
  while (!stack.empty()) {
    auto& [u, next_child] = stack.back();
    if (next_child == 0) f.tin_[u] = clock++;
    if (next_child < static_cast<int>(f.children_[u].size())) {
      int c = f.children_[u][next_child++];
      stack.emplace_back(c, 0);
    } else {
      f.tout_[u] = clock++;
      stack.pop_back();
    }
  }

  // Phase consistency along the tree.
  for (int i = 1; i < n; ++i) {
    const NodeInfo& nd = f.nodes_[i];
    const Line& ln = f.lines_[nd.parent_line];
    if (ln.phases.empty()) throw PhaseError("line into '" + nd.name + "' has no phases");
    if (!nd.phases.subset_of(ln.phases)) {
      throw PhaseError("node '" + nd.name + "' carries phases outside its parent line");
    }
    if (!ln.phases.subset_of(f.nodes_[ln.from].phases)) {
      throw PhaseError("line into '" + nd.name + "' carries phases absent at '" +
                       f.nodes_[ln.from].name + "'");
    }
    for (int a = 0; a < kPhaseCount; ++a) {
      if (ln.phases.has(a) && ln.z(a, a).real() < 0.0) {
        throw ParseError("negative series resistance on line into '" + nd.name + "'");
      }
    }
  }
  for (int ph = 0; ph < kPhaseCount; ++ph) {
    if (f.nodes_[0].phases.has(ph) && slack_v2[ph] <= 0.0) {
      throw ParseError("slack voltage squared must be positive on present phases");
    }
  }
  return f;
}

void Feeder::check_node(int i) const {
  if (i < 0 || i >= node_count()) {
    throw UnknownNodeError("node index " + std::to_string(i) + " out of range");
  }
}

int Feeder::index_of(std::string_view name) const {
  auto it = name_index_.find(std::string(name));
  if (it == name_index_.end()) {
    throw UnknownNodeError("unknown node id '" + std::string(name) + "'");
  }
  return it->second;
}

std::vector<int> Feeder::path_lines(int i) const {
  check_node(i);
  if (i == 0) throw UnknownNodeError("the slack has no path to itself");
  std::vector<int> path;
  for (int u = i; u != 0; u = nodes_[u].parent) path.push_back(nodes_[u].parent_line);
  std::reverse(path.begin(), path.end());
  return path;
}

bool Feeder::is_ancestor_or_self(int a, int b) const {
  check_node(a);
  check_node(b);
  return tin_[a] <= tin_[b] && tout_[b] <= tout_[a];
}

int Feeder::lowest_common_ancestor(int i, int j) const {
  check_node(i);
  check_node(j);
  while (i != j) {
    if (nodes_[i].depth >= nodes_[j].depth) {
      i = nodes_[i].parent;
    } else {
      j = nodes_[j].parent;
    }
  }
  return i;
}

std::vector<int> Feeder::subtree_nodes(int i) const {
  check_node(i);
  std::vector<int> out;
  for (int u = i; u < node_count(); ++u) {
    if (is_ancestor_or_self(i, u)) out.push_back(u);
  }
  return out;
}

PhaseIndexMap::PhaseIndexMap(const Feeder& feeder) {
  lookup_.assign(feeder.node_count(), {-1, -1, -1});
  for (int i = 1; i < feeder.node_count(); ++i) {
    for (int ph = 0; ph < kPhaseCount; ++ph) {
      if (feeder.node(i).phases.has(ph)) {
        lookup_[i][ph] = static_cast<int>(coords_.size());
        coords_.emplace_back(i, ph);
      }
    }
  }
}

int PhaseIndexMap::index(int node, int phase) const {
  if (node < 0 || node >= static_cast<int>(lookup_.size()) || phase < 0 ||
      phase >= kPhaseCount) {
    return -1;
  }
  return lookup_[node][phase];
}

std::string PhaseIndexMap::label(const Feeder& feeder, int idx) const {
  auto [node, ph] = coords_.at(idx);
  return feeder.node(node).name + ":" + phase_letter(ph);
}

namespace {

std::array<double, 3> parse_phase_map(const json& j, const char* what) {
  std::array<double, 3> out{0.0, 0.0, 0.0};
  if (j.is_null()) return out;
  if (!j.is_object()) throw ParseError(std::string(what) + " must be a phase map");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    if (key.size() != 1) throw ParseError(std::string("bad phase key in ") + what);
    out[static_cast<std::size_t>(parse_phase(key[0]))] = it.value().get<double>();
  }
  return out;
}

std::complex<double> parse_complex(const json& j) {
  if (!j.is_array() || j.size() != 2) {
    throw ParseError("complex entries must be [re, im] pairs");
  }
  return {j[0].get<double>(), j[1].get<double>()};
}

// z accepts a full matrix of [re,im] pairs, a diagonal list (off-diagonals
// default to zero), or a bare pair for single-phase lines.
Eigen::Matrix3cd parse_line_z(const json& j, const std::vector<int>& phases,
                              const std::string& line_desc) {
  Eigen::Matrix3cd z = Eigen::Matrix3cd::Zero();
  const std::size_t np = phases.size();
  if (!j.is_array() || j.empty()) throw ParseError("line " + line_desc + ": bad z");
  if (j[0].is_number()) {  // bare [re, im]
    if (np != 1) throw ParseError("line " + line_desc + ": scalar z on a multi-phase line");
    z(phases[0], phases[0]) = parse_complex(j);
    return z;
  }
  if (j.size() != np) throw ParseError("line " + line_desc + ": z dimension mismatch");
  if (j[0].is_array() && !j[0].empty() && j[0][0].is_number()) {  // diagonal form
    for (std::size_t a = 0; a < np; ++a) z(phases[a], phases[a]) = parse_complex(j[a]);
    return z;
  }
  for (std::size_t a = 0; a < np; ++a) {
    if (!j[a].is_array() || j[a].size() != np) {
      throw ParseError("line " + line_desc + ": z must be square over the line phases");
    }
    for (std::size_t b = 0; b < np; ++b) z(phases[a], phases[b]) = parse_complex(j[a][b]);
  }
  return z;
}

std::vector<int> phase_list(PhaseSet s) {
  std::vector<int> out;
  for (int ph = 0; ph < kPhaseCount; ++ph) {
    if (s.has(ph)) out.push_back(ph);
  }
  return out;
}

}  // namespace

FeederCase load_feeder_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what());
  }
  try {
    if (!doc.is_object()) throw ParseError("top level must be an object");

    std::vector<NodeInfo> nodes;
    std::unordered_map<std::string, int> ids;
    for (const auto& jn : doc.at("nodes")) {
      NodeInfo info;
      info.name = jn.at("id").is_string() ? jn.at("id").get<std::string>()
                                          : jn.at("id").dump();
      info.phases = PhaseSet::parse(jn.at("phases").get<std::string>());
      if (!ids.emplace(info.name, static_cast<int>(nodes.size())).second) {
        throw ParseError("duplicate node id '" + info.name + "'");
      }
      nodes.push_back(std::move(info));
    }

    auto lookup = [&](const json& j) {
      const std::string name = j.is_string() ? j.get<std::string>() : j.dump();
      auto it = ids.find(name);
      if (it == ids.end()) throw ParseError("line references unknown node '" + name + "'");
      return it->second;
    };

    std::vector<Line> lines;
    std::vector<bool> has_parent(nodes.size(), false);
    for (const auto& jl : doc.at("lines")) {
      Line ln;
      ln.from = lookup(jl.at("from"));
      ln.to = lookup(jl.at("to"));
      ln.phases = jl.contains("phases")
                      ? PhaseSet::parse(jl.at("phases").get<std::string>())
                      : nodes[ln.to].phases;
      ln.z = parse_line_z(jl.at("z"), phase_list(ln.phases),
                          nodes[ln.from].name + "-" + nodes[ln.to].name);
      if (ln.to >= 0 && ln.to < static_cast<int>(has_parent.size())) {
        has_parent[ln.to] = true;
      }
      lines.push_back(std::move(ln));
    }

    // The slack is the unique node that no line feeds.
    int slack = -1;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (!has_parent[i]) {
        if (slack != -1) throw TopologyError("multiple root nodes (disconnected feeder)");
        slack = static_cast<int>(i);
      }
    }
    if (slack == -1) throw TopologyError("no root node (cycle)");

    FeederCase out;
    out.feeder = Feeder::build(
        nodes, lines, nodes[slack].name, parse_phase_map(doc.value("slack_v2", json()), "slack_v2"),
        parse_phase_map(doc.value("inelastic", json()), "inelastic"),
        doc.value("base_mva", 1.0));
    if (!doc.contains("slack_v2")) {
      out.feeder.slack_v2 = {1.0, 1.0, 1.0};  // default 1 p.u.
    }

    if (doc.contains("devices")) {
      for (const auto& jd : doc.at("devices")) {
        Device d;
        d.node = out.feeder.index_of(jd.at("node").is_string()
                                         ? jd.at("node").get<std::string>()
                                         : jd.at("node").dump());
        const std::string ph = jd.at("phase").get<std::string>();
        if (ph.size() != 1) throw ParseError("device phase must be a single letter");
        d.phase = parse_phase(ph[0]);
        if (!out.feeder.node(d.node).phases.has(d.phase)) {
          throw PhaseError("device on '" + out.feeder.node(d.node).name +
                           "' uses a phase the node lacks");
        }
        const json& set = jd.at("set");
        d.kind = parse_device_kind(set.at("kind").get<std::string>());
        switch (d.kind) {
          case DeviceKind::box:
            d.p_min = set.at("p_min").get<double>();
            d.p_max = set.at("p_max").get<double>();
            d.q_min = set.at("q_min").get<double>();
            d.q_max = set.at("q_max").get<double>();
            break;
          case DeviceKind::pv_inverter:
            d.p_min = 0.0;
            d.p_max = set.at("p_av").get<double>();
            d.cap = set.at("cap").get<double>();
            break;
          case DeviceKind::storage:
            d.p_min = set.at("p_min").get<double>();
            d.p_max = set.at("p_max").get<double>();
            d.cap = set.at("cap").get<double>();
            break;
        }
        if (jd.contains("cost")) {
          const json& jc = jd.at("cost");
          d.cost.cp = jc.value("cp", 1.0);
          d.cost.cq = jc.value("cq", 1.0);
          d.cost.p0 = jc.value("p0", 0.0);
          d.cost.q0 = jc.value("q0", 0.0);
        }
        d.validate();
        out.devices.push_back(d);
      }
    }
    std::sort(out.devices.begin(), out.devices.end(), [](const Device& a, const Device& b) {
      return std::tie(a.node, a.phase) < std::tie(b.node, b.phase);
    });
    for (std::size_t i = 1; i < out.devices.size(); ++i) {
      if (out.devices[i].node == out.devices[i - 1].node &&
          out.devices[i].phase == out.devices[i - 1].phase) {
        throw ParseError("two devices share one (node, phase) coordinate");
      }
    }

    if (doc.contains("substation_cost")) {
      const json& js = doc.at("substation_cost");
      out.substation.alpha = js.value("alpha", 0.0);
      out.substation.p0_target = js.value("p0_target", 0.0);
      if (out.substation.alpha < 0.0) throw ParseError("substation weight must be >= 0");
    }

    if (doc.contains("clusters")) {
      for (const auto& jc : doc.at("clusters")) {
        const json& jr = jc.is_object() ? jc.at("root") : jc;
        out.cluster_roots.push_back(out.feeder.index_of(
            jr.is_string() ? jr.get<std::string>() : jr.dump()));
      }
    }
    return out;
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad feeder document: ") + e.what());
  }
}

FeederCase load_feeder(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return load_feeder_text(buf.str());
}

std::string save_feeder(const FeederCase& c) {
  const Feeder& f = c.feeder;
  json doc;
  doc["base_mva"] = f.base_mva;
  json v2 = json::object(), inel = json::object();
  for (int ph = 0; ph < kPhaseCount; ++ph) {
    const std::string key(1, phase_letter(ph));
    if (f.slack_phases().has(ph)) v2[key] = f.slack_v2[ph];
    inel[key] = f.inelastic[ph];
  }
  doc["slack_v2"] = v2;
  doc["inelastic"] = inel;

  doc["nodes"] = json::array();
  for (int i = 0; i < f.node_count(); ++i) {
    doc["nodes"].push_back({{"id", f.node(i).name}, {"phases", f.node(i).phases.str()}});
  }
  doc["lines"] = json::array();
  for (int l = 0; l < f.line_count(); ++l) {
    const Line& ln = f.line(l);
    json z = json::array();
    for (int a = 0; a < kPhaseCount; ++a) {
      if (!ln.phases.has(a)) continue;
      json row = json::array();
      for (int b = 0; b < kPhaseCount; ++b) {
        if (!ln.phases.has(b)) continue;
        row.push_back({ln.z(a, b).real(), ln.z(a, b).imag()});
      }
      z.push_back(row);
    }
    doc["lines"].push_back({{"from", f.node(ln.from).name},
                            {"to", f.node(ln.to).name},
                            {"phases", ln.phases.str()},
                            {"z", z}});
  }
  doc["devices"] = json::array();
  for (const Device& d : c.devices) {
    json set;
    set["kind"] = device_kind_name(d.kind);
    switch (d.kind) {
      case DeviceKind::box:
        set["p_min"] = d.p_min;
        set["p_max"] = d.p_max;
        set["q_min"] = d.q_min;
        set["q_max"] = d.q_max;
        break;
      case DeviceKind::pv_inverter:
        set["p_av"] = d.p_max;
        set["cap"] = d.cap;
        break;
      case DeviceKind::storage:
        set["p_min"] = d.p_min;
        set["p_max"] = d.p_max;
        set["cap"] = d.cap;
        break;
    }
    doc["devices"].push_back({{"node", f.node(d.node).name},
                              {"phase", std::string(1, phase_letter(d.phase))},
                              {"set", set},
                              {"cost",
                               {{"cp", d.cost.cp},
                                {"cq", d.cost.cq},
                                {"p0", d.cost.p0},
                                {"q0", d.cost.q0}}}});
  }
  doc["substation_cost"] = {{"alpha", c.substation.alpha},
                            {"p0_target", c.substation.p0_target}};
  if (!c.cluster_roots.empty()) {
    json roots = json::array();
    for (int r : c.cluster_roots) roots.push_back(f.node(r).name);
    doc["clusters"] = roots;
  }
  return doc.dump(2) + "\n";
}

bool same_feeder(const Feeder& a, const Feeder& b) {
  if (a.node_count() != b.node_count() || a.line_count() != b.line_count()) return false;
  if (a.base_mva != b.base_mva || a.slack_v2 != b.slack_v2 || a.inelastic != b.inelastic) {
    return false;
  }
  for (int i = 0; i < a.node_count(); ++i) {
    const NodeInfo &na = a.node(i), &nb = b.node(i);
    if (na.name != nb.name || na.phases != nb.phases || na.parent != nb.parent) return false;
  }
  for (int l = 0; l < a.line_count(); ++l) {
    const Line &la = a.line(l), &lb = b.line(l);
    if (la.from != lb.from || la.to != lb.to || la.phases != lb.phases) return false;
    if ((la.z - lb.z).cwiseAbs().maxCoeff() != 0.0) return false;
  }
  return true;
}

bool same_case(const FeederCase& a, const FeederCase& b) {
  if (!same_feeder(a.feeder, b.feeder)) return false;
  if (a.devices.size() != b.devices.size()) return false;
  for (std::size_t i = 0; i < a.devices.size(); ++i) {
    const Device &da = a.devices[i], &db = b.devices[i];
    if (da.node != db.node || da.phase != db.phase || da.kind != db.kind) return false;
    if (da.p_min != db.p_min || da.p_max != db.p_max || da.q_min != db.q_min ||
        da.q_max != db.q_max || da.cap != db.cap) {
      return false;
    }
    if (da.cost.cp != db.cost.cp || da.cost.cq != db.cost.cq ||
        da.cost.p0 != db.cost.p0 || da.cost.q0 != db.cost.q0) {
      return false;
    }
  }
  return a.substation.alpha == b.substation.alpha &&
         a.substation.p0_target == b.substation.p0_target &&
         a.cluster_roots == b.cluster_roots;
}

}  // namespace voltreg
