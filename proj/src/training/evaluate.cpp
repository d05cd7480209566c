#include "scd/training/evaluate.hpp"

#include <cmath>
#include <string>

#include "scd/errors.hpp"
#include "scd/models/builders.hpp"
#include "scd/training/trainer.hpp"

namespace scd::training {

const Frame& frame_by_id(const SceneDataset& ds, int id) {
  if (id >= 0 && static_cast<std::size_t>(id) < ds.frames.size() && ds.frames[id].id == id) {
    return ds.frames[id];
  }
  for (const auto& f : ds.frames) {
    if (f.id == id) return f;
  }
  throw LookupError("scene has no frame " + std::to_string(id));
}

EvalReport evaluate_predictions(const std::vector<PointMap>& predictions, const SceneDataset& ds,
                                const std::vector<int>& ids) {
  if (predictions.size() != ids.size()) {
    throw DimensionError("evaluate: " + std::to_string(predictions.size()) + " predictions for " +
                         std::to_string(ids.size()) + " frames");
  }
  EvalReport report;
  const double unit = 1.0 / ds.label_scale;
  double sq_total = 0.0, dist_total = 0.0;
  for (std::size_t k = 0; k < ids.size(); ++k) {
    const Frame& frame = frame_by_id(ds, ids[k]);
    if (!frame.label) throw ContractError("evaluate: frame " + std::to_string(ids[k]) + " has no label");
    const PointMap& label = *frame.label;
    const PointMap& pred = predictions[k];
    if (pred.height != label.height || pred.width != label.width) {
      throw DimensionError("evaluate: prediction for frame " + std::to_string(ids[k]) + " is " +
                           std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                           ", label is " + std::to_string(label.height) + "x" +
                           std::to_string(label.width));
    }
    FrameMetrics fm;
    fm.frame_id = ids[k];
    double sq = 0.0, dist = 0.0;
    for (std::size_t i = 0; i < label.pixels(); ++i) {
      if (!label.is_valid(i)) continue;
      const double d2 = ((pred.point(i) - label.point(i)) * unit).squaredNorm();
      sq += d2;
      dist += std::sqrt(d2);
      ++fm.valid_pixels;
    }
    if (fm.valid_pixels > 0) {
      fm.mse = sq / (3.0 * static_cast<double>(fm.valid_pixels));
      fm.mean_euclid = dist / static_cast<double>(fm.valid_pixels);
    }
    sq_total += sq;
    dist_total += dist;
    report.valid_pixels += fm.valid_pixels;
    report.frames.push_back(fm);
  }
  if (report.valid_pixels == 0) throw DegenerateError("evaluate: no valid label pixel in the selection");
  report.mse = sq_total / (3.0 * static_cast<double>(report.valid_pixels));
  report.mean_euclid = dist_total / static_cast<double>(report.valid_pixels);
  return report;
}

template <typename T>
PointMap predict(const models::StudentModel<T>& model, const SceneDataset& ds, int frame_id) {
  const Frame& frame = frame_by_id(ds, frame_id);
  const Image& img = frame.image;
  const Tensor<T> x({1, 3, img.height, img.width},
                    std::vector<T>(img.data.begin(), img.data.end()));
  const Tensor<T> y = models::forward(model, x, false);
  const double gain = 1.0 / model.config().output_scale;
  PointMap out(frame_id, img.height, img.width);
  const std::size_t hw = img.height * img.width;
  const auto data = y.data();
  for (std::size_t i = 0; i < hw; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      out.points[3 * i + c] = static_cast<double>(data[c * hw + i]) * gain;
    }
    out.valid[i] = 1;
  }
  return out;
}

template <typename T>
EvalReport evaluate(const models::StudentModel<T>& model, const SceneDataset& ds,
                    const std::vector<int>& ids) {
  std::vector<PointMap> preds;
  preds.reserve(ids.size());
  for (int id : ids) {
    if (!frame_by_id(ds, id).label) {
      throw ContractError("evaluate: frame " + std::to_string(id) + " has no label");
    }
    preds.push_back(predict(model, ds, id));
  }
  return evaluate_predictions(preds, ds, ids);
}

template PointMap predict(const models::StudentModel<float>&, const SceneDataset&, int);
template PointMap predict(const models::StudentModel<double>&, const SceneDataset&, int);
template EvalReport evaluate(const models::StudentModel<float>&, const SceneDataset&,
                             const std::vector<int>&);
template EvalReport evaluate(const models::StudentModel<double>&, const SceneDataset&,
                             const std::vector<int>&);

}  // namespace scd::training
