#include "scd/alignment/global_align.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <optional>
#include <set>
#include <sstream>
#include <tuple>

#include "scd/alignment/umeyama.hpp"
#include "scd/errors.hpp"

namespace scd {

namespace {

struct JointPoints {
  std::vector<Eigen::Vector3d> a, b;
  std::vector<std::size_t> pixels;
};

JointPoints joint_valid(const PointMap& a, const PointMap& b) {
  if (a.height != b.height || a.width != b.width) {
    throw DimensionError("pointmaps of frames " + std::to_string(a.frame_id) + " and " +
                         std::to_string(b.frame_id) + " differ in resolution");
  }
  JointPoints out;
  for (std::size_t i = 0; i < a.pixels(); ++i) {
    if (a.is_valid(i) && b.is_valid(i)) {
      out.a.push_back(a.point(i));
      out.b.push_back(b.point(i));
      out.pixels.push_back(i);
    }
  }
  return out;
}

std::string pair_name(int ref, int src) {
  return "(" + std::to_string(ref) + "," + std::to_string(src) + ")";
}

std::vector<const PairPrediction*> sorted_pairs(const std::vector<PairPrediction>& pairs) {
  std::vector<const PairPrediction*> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    check_pair(p);
    out.push_back(&p);
  }
  std::sort(out.begin(), out.end(), [](const PairPrediction* x, const PairPrediction* y) {
    return std::tie(x->ref_id, x->src_id) < std::tie(y->ref_id, y->src_id);
  });
  for (std::size_t k = 1; k < out.size(); ++k) {
    if (out[k]->ref_id == out[k - 1]->ref_id && out[k]->src_id == out[k - 1]->src_id) {
      throw ContractError("duplicate pair " + pair_name(out[k]->ref_id, out[k]->src_id));
    }
  }
  return out;
}

// Shared state for edge estimation and residuals: sorted pairs, the self map
// of every frame, and which pair (if any) that self map was taken from.
struct Graph {
  std::vector<const PairPrediction*> pairs;
  std::map<int, PointMap> self;
  std::map<int, int> canonical_src;  // frame -> src id of its self-map pair

  Graph(const std::vector<PairPrediction>& input, const std::map<int, PointMap>& overrides)
      : pairs(sorted_pairs(input)) {
    for (const PairPrediction* p : pairs) {
      if (overrides.count(p->ref_id) || self.count(p->ref_id)) continue;
      self[p->ref_id] = p->map_ref;
      self[p->ref_id].frame_id = p->ref_id;
      canonical_src[p->ref_id] = p->src_id;
    }
    for (const auto& [id, pm] : overrides) {
      check_pointmap(pm);
      self[id] = pm;
      self[id].frame_id = id;
    }
  }

  // Similarity taking points expressed at this pair's frame-ref scale into the
  // ref frame's self-map coordinates. Identity when the pair supplied the
  // self map; otherwise fitted from map_ref onto the self map.
  Sim3 ref_correction(const PairPrediction& p) const {
    auto it = canonical_src.find(p.ref_id);
    if (it != canonical_src.end() && it->second == p.src_id) return Sim3::identity();
    const JointPoints j = joint_valid(p.map_ref, self.at(p.ref_id));
    return umeyama(j.a, j.b, true);
  }
};

std::optional<EdgeResidual> residual_for(const Graph& g, const PairPrediction& p,
                                         const std::map<int, Sim3>& world) {
  auto wi = world.find(p.ref_id), wj = world.find(p.src_id);
  auto sj = g.self.find(p.src_id);
  if (wi == world.end() || wj == world.end() || sj == g.self.end()) return std::nullopt;
  Sim3 correction;
  try {
    correction = g.ref_correction(p);
  } catch (const DegenerateError&) {
    return std::nullopt;
  }
  const JointPoints j = joint_valid(p.map_src, sj->second);
  if (j.pixels.size() < 3) return std::nullopt;
  const Sim3 via_ref = compose(wi->second, correction);
  double sum = 0.0;
  for (std::size_t k = 0; k < j.pixels.size(); ++k) {
    sum += (via_ref.apply(j.a[k]) - wj->second.apply(j.b[k])).squaredNorm();
  }
  return EdgeResidual{p.ref_id, p.src_id, std::sqrt(sum / static_cast<double>(j.pixels.size())),
                      j.pixels.size()};
}

std::string describe_components(const std::set<int>& nodes,
                                const std::map<int, std::set<int>>& adjacency) {
  std::set<int> seen;
  std::ostringstream out;
  bool first = true;
  for (int start : nodes) {
    if (seen.count(start)) continue;
    std::vector<int> component;
    std::deque<int> queue{start};
    seen.insert(start);
    while (!queue.empty()) {
      const int f = queue.front();
      queue.pop_front();
      component.push_back(f);
      auto it = adjacency.find(f);
      if (it == adjacency.end()) continue;
      for (int n : it->second) {
        if (seen.insert(n).second) queue.push_back(n);
      }
    }
    std::sort(component.begin(), component.end());
    out << (first ? "" : " ") << "{";
    for (std::size_t k = 0; k < component.size(); ++k) out << (k ? ", " : "") << component[k];
    out << "}";
    first = false;
  }
  return out.str();
}

}  // namespace

EdgeEstimate estimate_edge(const PairPrediction& pair, const PointMap& self_map_src) {
  const JointPoints j = joint_valid(self_map_src, pair.map_src);
  if (j.pixels.size() < 3) {
    throw DegenerateError("edge " + pair_name(pair.ref_id, pair.src_id) + " has " +
                          std::to_string(j.pixels.size()) + " jointly valid pixels (need 3)");
  }
  EdgeEstimate e;
  e.ref_id = pair.ref_id;
  e.src_id = pair.src_id;
  try {
    e.transform = umeyama(j.a, j.b, true);
  } catch (const DegenerateError& err) {
    throw DegenerateError("edge " + pair_name(pair.ref_id, pair.src_id) + ": " + err.what());
  }
  e.rmse = transform_rmse(e.transform, j.a, j.b);
  e.points = j.pixels.size();
  return e;
}

std::map<int, PointMap> self_maps_from_pairs(const std::vector<PairPrediction>& pairs,
                                             const std::map<int, PointMap>& overrides) {
  return Graph(pairs, overrides).self;
}

AlignmentResult global_align(const std::vector<PairPrediction>& pairs, int origin,
                             const std::map<int, PointMap>& self_map_overrides) {
  const Graph g(pairs, self_map_overrides);
  AlignmentResult result;
  result.origin = origin;

  std::set<int> nodes;
  for (const PairPrediction* p : g.pairs) {
    nodes.insert(p->ref_id);
    nodes.insert(p->src_id);
  }
  for (const auto& [id, pm] : g.self) nodes.insert(id);
  if (!nodes.count(origin)) {
    throw AlignmentError("origin frame " + std::to_string(origin) + " is not in the pair graph");
  }
  if (!g.self.count(origin)) {
    throw AlignmentError("origin frame " + std::to_string(origin) + " has no self pointmap");
  }

  // Directed edges: transform taking frame src's self-map coordinates into
  // frame ref's self-map coordinates.
  std::map<std::pair<int, int>, Sim3> edges;
  std::map<int, std::set<int>> adjacency;
  for (const PairPrediction* p : g.pairs) {
    auto self_src = g.self.find(p->src_id);
    if (self_src == g.self.end()) {
      result.warnings.push_back("dropped edge " + pair_name(p->ref_id, p->src_id) +
                                ": frame " + std::to_string(p->src_id) + " has no self pointmap");
      continue;
    }
    try {
      const EdgeEstimate e = estimate_edge(*p, self_src->second);
      edges[{p->ref_id, p->src_id}] = compose(g.ref_correction(*p), e.transform);
      adjacency[p->ref_id].insert(p->src_id);
      adjacency[p->src_id].insert(p->ref_id);
    } catch (const DegenerateError& err) {
      result.warnings.push_back("dropped edge " + pair_name(p->ref_id, p->src_id) + ": " +
                                err.what());
    }
  }

  std::map<int, Sim3> world;
  std::map<int, int> parent;
  world[origin] = Sim3::identity();
  parent[origin] = -1;
  std::deque<int> queue{origin};
  while (!queue.empty()) {
    const int p = queue.front();
    queue.pop_front();
    auto it = adjacency.find(p);
    if (it == adjacency.end()) continue;
    for (int c : it->second) {  // std::set iterates in ascending id order
      if (world.count(c)) continue;
      auto direct = edges.find({p, c});
      const Sim3 p_from_c =
          direct != edges.end() ? direct->second : inverse(edges.at({c, p}));
      world[c] = compose(world[p], p_from_c);
      parent[c] = p;
      queue.push_back(c);
    }
  }
  if (world.size() != nodes.size()) {
    throw AlignmentError("alignment graph is disconnected; components: " +
                         describe_components(nodes, adjacency));
  }

  for (const auto& [id, t] : world) {
    AlignedFrame f;
    f.frame_id = id;
    f.parent = parent[id];
    f.to_world = t;
    f.world = apply_sim3(t, g.self.at(id));
    result.frames.emplace(id, std::move(f));
  }
  for (const PairPrediction* p : g.pairs) {
    if (!edges.count({p->ref_id, p->src_id})) continue;
    if (auto r = residual_for(g, *p, world)) result.residuals.push_back(*r);
  }
  return result;
}

std::vector<EdgeResidual> alignment_residual(const std::vector<PairPrediction>& pairs,
                                             const std::map<int, Sim3>& world,
                                             const std::map<int, PointMap>& self_map_overrides) {
  const Graph g(pairs, self_map_overrides);
  std::vector<EdgeResidual> out;
  for (const PairPrediction* p : g.pairs) {
    if (auto r = residual_for(g, *p, world)) out.push_back(*r);
  }
  return out;
}

nlohmann::json sim3_to_json(const Sim3& t) {
  nlohmann::json rot = nlohmann::json::array();
  for (int r = 0; r < 3; ++r) {
    rot.push_back({t.rotation(r, 0), t.rotation(r, 1), t.rotation(r, 2)});
  }
  return {{"scale", t.scale},
          {"rotation", rot},
          {"translation", {t.translation.x(), t.translation.y(), t.translation.z()}}};
}

Sim3 sim3_from_json(const nlohmann::json& j) {
  Sim3 t;
  try {
    t.scale = j.at("scale").get<double>();
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) t.rotation(r, c) = j.at("rotation").at(r).at(c).get<double>();
    }
    for (int k = 0; k < 3; ++k) t.translation(k) = j.at("translation").at(k).get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("malformed similarity transform: ") + e.what());
  }
  return t;
}

nlohmann::json alignment_report(const AlignmentResult& result) {
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& [id, f] : result.frames) {
    nlohmann::json entry = sim3_to_json(f.to_world);
    entry["frame_id"] = id;
    entry["parent"] = f.parent;
    entry["valid_points"] = f.world.valid_count();
    frames.push_back(std::move(entry));
  }
  nlohmann::json residuals = nlohmann::json::array();
  for (const auto& r : result.residuals) {
    residuals.push_back(
        {{"ref_id", r.ref_id}, {"src_id", r.src_id}, {"rmse", r.rmse}, {"points", r.points}});
  }
  return {{"format_version", 1},
          {"origin", result.origin},
          {"frames", frames},
          {"residuals", residuals},
          {"warnings", result.warnings}};
}

}  // namespace scd
