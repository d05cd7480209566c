#pragma once

#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "scd/alignment/pointmap.hpp"
#include "scd/alignment/sim3.hpp"

namespace scd {

struct EdgeEstimate {
  int ref_id = 0;
  int src_id = 0;
  Sim3 transform;  // frame src_id -> frame ref_id
  double rmse = 0.0;
  std::size_t points = 0;
};

// Fits self_map_src (image src_id in its own frame) onto pair.map_src over
// the pixels valid in both. Throws DegenerateError with fewer than 3 such
// pixels or degenerate geometry, DimensionError on resolution mismatch.
EdgeEstimate estimate_edge(const PairPrediction& pair, const PointMap& self_map_src);

struct EdgeResidual {
  int ref_id = 0;
  int src_id = 0;
  double rmse = 0.0;
  std::size_t points = 0;
};

struct AlignedFrame {
  int frame_id = 0;
  int parent = -1;  // spanning-tree parent, -1 for the origin
  Sim3 to_world;
  PointMap world;
};

struct AlignmentResult {
  int origin = 0;
  std::map<int, AlignedFrame> frames;
  std::vector<EdgeResidual> residuals;  // sorted by (ref_id, src_id)
  std::vector<std::string> warnings;    // one per dropped edge
};

// Self pointmap of every frame: map_ref of the pair (f, k) with the smallest
// k, unless `overrides` supplies one.
std::map<int, PointMap> self_maps_from_pairs(const std::vector<PairPrediction>& pairs,
                                             const std::map<int, PointMap>& overrides = {});

// World frame = origin's camera frame at the scale of its self map. Frames
// are reached by BFS from the origin, visiting neighbours in ascending id
// order. Degenerate edges are dropped with a warning; a graph left
// disconnected throws AlignmentError naming every component. The result does
// not depend on the order of `pairs`.
AlignmentResult global_align(const std::vector<PairPrediction>& pairs, int origin,
                             const std::map<int, PointMap>& self_map_overrides = {});

// Per ordered pair (i, j) with both frames in `world`: RMSE between frame
// j's world-transformed self map and pair.map_src taken through frame i's
// world transform, over pixels valid in both. Pairs that cannot be evaluated
// (fewer than 3 joint pixels) are omitted.
std::vector<EdgeResidual> alignment_residual(const std::vector<PairPrediction>& pairs,
                                             const std::map<int, Sim3>& world,
                                             const std::map<int, PointMap>& self_map_overrides = {});

nlohmann::json sim3_to_json(const Sim3& t);
Sim3 sim3_from_json(const nlohmann::json& j);

// {origin, frames:[{frame_id, parent, scale, rotation, translation}],
//  residuals:[{ref_id, src_id, rmse, points}], warnings:[...]}
nlohmann::json alignment_report(const AlignmentResult& result);

}  // namespace scd
