#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "scd/dataset/scene.hpp"
#include "scd/models/student.hpp"
#include "scd/tensor/tensor.hpp"
#include "scd/training/config.hpp"
#include "scd/training/evaluate.hpp"

namespace scd::training {

struct TrainReport {
  nlohmann::json config;            // to_json(TrainConfig)
  std::vector<double> loss_curve;   // per-epoch mean loss, scaled label units
  std::vector<double> epoch_seconds;
  std::uint64_t seed = 0;
  std::size_t param_count = 0;
  std::vector<int> train_ids;
  std::vector<int> heldout_ids;
  std::optional<EvalReport> eval;   // held-out metrics, when evaluated
  std::string checkpoint;           // empty when not saved
};

template <typename T>
struct TrainResult {
  models::StudentModel<T> model;
  TrainReport report;
};

// Images, scaled labels and masks of some frames stacked along the batch
// axis. Invalid label pixels carry zeros.
template <typename T>
struct Batch {
  Tensor<T> images;  // [N, 3, H, W]
  Tensor<T> labels;  // [N, 3, H, W]
  Tensor<T> mask;    // [N, 1, H, W]
  std::size_t valid_pixels = 0;
};

template <typename T>
Batch<T> make_batch(const SceneDataset& ds, const std::vector<int>& ids, double label_scale);

using EpochCallback = std::function<void(int epoch, double loss)>;

// Mini-batch Adam over the split's training frames. The label scale enters as
// labels * s with a model output gain of s; gradients are divided by s^2
// before each update so the optimizer sees the unscaled problem.
// Each epoch shuffles the training frames with a generator seeded from
// cfg.seed. Throws ContractError for unlabelled or missing training frames,
// ConfigError for a resolution mismatch and NonFiniteError, naming the epoch
// and batch, when the loss or an update stops being finite.
template <typename T>
TrainResult<T> train(const SceneDataset& ds, const SplitSpec& split, const TrainConfig& cfg,
                     const EpochCallback& on_epoch = {});

}  // namespace scd::training
