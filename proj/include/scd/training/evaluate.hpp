#pragma once

#include <cstddef>
#include <vector>

#include "scd/alignment/pointmap.hpp"
#include "scd/dataset/scene.hpp"
#include "scd/models/student.hpp"

namespace scd::training {

struct FrameMetrics {
  int frame_id = 0;
  double mse = 0.0;
  double mean_euclid = 0.0;
  std::size_t valid_pixels = 0;
};

// Pooled over every valid label pixel of the evaluated frames, in the
// teacher's original units (labels divided by ds.label_scale).
//   mse         = sum |pred - label|^2 / (3 * pixels)
//   mean_euclid = sum |pred - label|   / pixels
struct EvalReport {
  double mse = 0.0;
  double mean_euclid = 0.0;
  std::size_t valid_pixels = 0;
  std::vector<FrameMetrics> frames;
};

// `predictions[k]` belongs to frame ids[k] and is in dataset label units.
// Unlabelled frames throw ContractError, mismatched sizes DimensionError,
// and a selection without a single valid pixel DegenerateError.
EvalReport evaluate_predictions(const std::vector<PointMap>& predictions,
                                const SceneDataset& ds, const std::vector<int>& ids);

// Eval-mode forward of one frame, divided by the model's output gain so the
// result is in dataset label units. Every pixel is valid.
template <typename T>
PointMap predict(const models::StudentModel<T>& model, const SceneDataset& ds, int frame_id);

template <typename T>
EvalReport evaluate(const models::StudentModel<T>& model, const SceneDataset& ds,
                    const std::vector<int>& ids);

// Looks a frame up by id (LookupError when absent).
const Frame& frame_by_id(const SceneDataset& ds, int id);

}  // namespace scd::training
