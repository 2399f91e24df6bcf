#pragma once

#include <array>
#include <functional>
#include <optional>
#include <vector>

#include "json.hpp"
#include "pan/network.hpp"
#include "pan/random.hpp"

namespace pan {

// Images [C,H,W] in [0,1] with dense labels in [0, K).
struct TrainingSet {
  std::vector<Tensor> images;
  std::vector<int> labels;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  int stage = 1;
  double lr = 0.0;
  double l_base = 0.0;
  std::optional<double> l_align;
  double wall_ms = 0.0;
};

nlohmann::json to_json(const EpochRecord& r);

struct ThetaStats {
  std::array<double, 6> mean{};
  std::array<double, 6> stddev{};
};

struct TrainTrace {
  std::vector<EpochRecord> epochs;
  std::optional<ThetaStats> theta;  // stage 2 only, over the un-augmented set
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Learning rate for a 1-based epoch: base_lr, times lr_decay_factor once the
// epoch exceeds lr_decay_epoch.
double scheduled_lr(const PanConfig& config, double base_lr, int epoch);

// Horizontal flip (p = 0.5) and reflect-pad-then-crop, per config flags.
Tensor augment_image(const Tensor& image, const PanConfig& config, Rng& rng);
Tensor flip_horizontal(const Tensor& image);
Tensor shift_reflect(const Tensor& image, long dy, long dx);

// Stage 1: trains the base branch (W1) alone on l_base.
TrainTrace train_stage1(PanModel& model, const TrainingSet& data, const PanConfig& config,
                        const EpochCallback& on_epoch = {});

// Stage 2: W1 frozen; grid network and alignment branch trained on
// l_base + l_align. The grid network's final layer uses lr_theta_layer.
TrainTrace train_stage2(PanModel& model, const TrainingSet& data, const PanConfig& config,
                        const EpochCallback& on_epoch = {});

ThetaStats theta_statistics(const PanModel& model, const std::vector<Tensor>& images);

}  // namespace pan
