#include "scd/training/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <string>

#include "scd/errors.hpp"
#include "scd/models/builders.hpp"
#include "scd/tensor/adam.hpp"
#include "scd/tensor/ops.hpp"
#include "scd/tensor/tape.hpp"

namespace scd::training {

namespace {

std::mt19937_64 stream(std::uint64_t seed, std::uint32_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), purpose};
  return std::mt19937_64(seq);
}

template <typename T>
models::StudentModel<T> build(const TrainConfig& cfg, std::mt19937_64& rng) {
  const models::ModelConfig mc = resolved_model_config(cfg);
  if (cfg.backbone_weights) {
    return models::build_backbone_head<T>(std::get<models::BackboneHeadConfig>(mc.arch),
                                          cfg.backbone_weights, rng, mc.output_scale);
  }
  return models::build_model<T>(mc, rng);
}

}  // namespace

template <typename T>
Batch<T> make_batch(const SceneDataset& ds, const std::vector<int>& ids, double label_scale) {
  const std::size_t n = ids.size(), h = ds.height, w = ds.width, hw = h * w;
  std::vector<T> images(n * 3 * hw), labels(n * 3 * hw, T{0}), mask(n * hw, T{0});
  Batch<T> batch;
  for (std::size_t b = 0; b < n; ++b) {
    const Frame& frame = frame_by_id(ds, ids[b]);
    if (frame.image.height != h || frame.image.width != w) {
      throw DimensionError("frame " + std::to_string(ids[b]) + " does not match the scene resolution");
    }
    if (!frame.label) throw ContractError("frame " + std::to_string(ids[b]) + " has no label");
    std::copy(frame.image.data.begin(), frame.image.data.end(), images.begin() + b * 3 * hw);
    const PointMap& label = *frame.label;
    for (std::size_t i = 0; i < hw; ++i) {
      if (!label.is_valid(i)) continue;
      mask[b * hw + i] = T{1};
      ++batch.valid_pixels;
      for (std::size_t c = 0; c < 3; ++c) {
        labels[(b * 3 + c) * hw + i] = static_cast<T>(label.points[3 * i + c] * label_scale);
      }
    }
  }
  batch.images = Tensor<T>({n, 3, h, w}, std::move(images));
  batch.labels = Tensor<T>({n, 3, h, w}, std::move(labels));
  batch.mask = Tensor<T>({n, 1, h, w}, std::move(mask));
  return batch;
}

template <typename T>
TrainResult<T> train(const SceneDataset& ds, const SplitSpec& split, const TrainConfig& cfg,
                     const EpochCallback& on_epoch) {
  validate(cfg);
  if (split.train.empty()) throw ContractError("train: the split has no training frames");
  if (ds.height != cfg.height || ds.width != cfg.width) {
    throw ConfigError("train: scene is " + std::to_string(ds.height) + "x" +
                      std::to_string(ds.width) + " but the config asks for " +
                      std::to_string(cfg.height) + "x" + std::to_string(cfg.width));
  }
  for (int id : split.train) {
    if (!frame_by_id(ds, id).label) {
      throw ContractError("train: training frame " + std::to_string(id) + " has no label");
    }
  }

  std::mt19937_64 init_rng = stream(cfg.seed, 1);
  std::mt19937_64 order_rng = stream(cfg.seed, 2);
  std::mt19937_64 dropout_rng = stream(cfg.seed, 3);

  TrainResult<T> result{build<T>(cfg, init_rng), {}};
  models::StudentModel<T>& model = result.model;
  TrainReport& report = result.report;
  report.config = to_json(cfg);
  report.seed = cfg.seed;
  report.param_count = models::param_count(model);
  report.train_ids = split.train;
  report.heldout_ids = split.heldout;

  const double scale = cfg.resolved_label_scale();
  const double grad_unscale = 1.0 / (scale * scale);
  std::vector<Tensor<T>> params = model.tensors();
  Adam<T> adam(params, AdamOptions{.lr = cfg.resolved_lr()});

  std::vector<int> order = split.train;
  std::sort(order.begin(), order.end());
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), order_rng);
    double weighted = 0.0;
    std::size_t pixels = 0;
    for (std::size_t first = 0, b = 1; first < order.size(); first += bs, ++b) {
      const std::size_t last = std::min(first + bs, order.size());
      const std::vector<int> ids(order.begin() + static_cast<std::ptrdiff_t>(first),
                                 order.begin() + static_cast<std::ptrdiff_t>(last));
      const Batch<T> batch = make_batch<T>(ds, ids, scale);
      if (batch.valid_pixels == 0) continue;  // nothing to learn from
      const std::string where = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(b);
      try {
        Tape<T> tape;
        Tensor<T> loss;
        {
          TapeScope<T> scope(tape);
          const Tensor<T> pred = models::forward(model, batch.images, true, &dropout_rng);
          loss = ops::mse_loss_masked(pred, batch.labels, batch.mask);
        }
        const double value = static_cast<double>(loss.data()[0]);
        if (!std::isfinite(value)) throw NonFiniteError("loss is " + std::to_string(value));
        backward(loss, tape);
        if (scale != 1.0) {
          for (auto& p : params) {
            if (!p.requires_grad() || !p.has_grad()) continue;
            for (T& g : p.mutable_grad()) g = static_cast<T>(g * grad_unscale);
          }
        }
        adam.step();
        weighted += value * static_cast<double>(batch.valid_pixels);
        pixels += batch.valid_pixels;
      } catch (const NonFiniteError& e) {
        throw NonFiniteError("training diverged at " + where + ": " + e.what());
      }
    }
    if (pixels == 0) throw DegenerateError("train: the training frames have no valid label pixel");
    const double epoch_loss = weighted / static_cast<double>(pixels);
    report.loss_curve.push_back(epoch_loss);
    report.epoch_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    if (on_epoch) on_epoch(epoch, epoch_loss);
  }
  return result;
}

template Batch<float> make_batch(const SceneDataset&, const std::vector<int>&, double);
template Batch<double> make_batch(const SceneDataset&, const std::vector<int>&, double);
template TrainResult<float> train(const SceneDataset&, const SplitSpec&, const TrainConfig&,
                                  const EpochCallback&);
template TrainResult<double> train(const SceneDataset&, const SplitSpec&, const TrainConfig&,
                                   const EpochCallback&);

}  // namespace scd::training
