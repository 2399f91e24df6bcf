#include "pan/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "pan/errors.hpp"
#include "pan/optim.hpp"

namespace pan {

nlohmann::json to_json(const EpochRecord& r) {
  nlohmann::json j{{"epoch", r.epoch}, {"stage", r.stage}, {"lr", r.lr}, {"l_base", r.l_base}};
  j["l_align"] = r.l_align ? nlohmann::json(*r.l_align) : nlohmann::json(nullptr);
  j["wall_ms"] = r.wall_ms;
  return j;
}

double scheduled_lr(const PanConfig& config, double base_lr, int epoch) {
  return epoch > config.lr_decay_epoch ? base_lr * config.lr_decay_factor : base_lr;
}

Tensor flip_horizontal(const Tensor& image) {
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor out(image.shape());
  for (std::size_t p = 0; p < c * h; ++p) {
    for (std::size_t x = 0; x < w; ++x) out[p * w + x] = image[p * w + (w - 1 - x)];
  }
  return out;
}

namespace {
std::size_t reflect(long i, std::size_t n) {
  const long last = static_cast<long>(n) - 1;
  if (last == 0) return 0;
  while (i < 0 || i > last) i = i < 0 ? -i : 2 * last - i;
  return static_cast<std::size_t>(i);
}
}  // namespace

Tensor shift_reflect(const Tensor& image, long dy, long dx) {
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor out(image.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      const std::size_t sy = reflect(static_cast<long>(y) + dy, h);
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t sx = reflect(static_cast<long>(x) + dx, w);
        out[(ch * h + y) * w + x] = image[(ch * h + sy) * w + sx];
      }
    }
  }
  return out;
}

Tensor augment_image(const Tensor& image, const PanConfig& config, Rng& rng) {
  // Draws happen regardless of the flags so toggling one does not reshuffle the other.
  const bool flip = uniform01(rng) < 0.5;
  const auto span = 2 * config.crop_pad + 1;
  const long dy = static_cast<long>(uniform_index(rng, span)) - static_cast<long>(config.crop_pad);
  const long dx = static_cast<long>(uniform_index(rng, span)) - static_cast<long>(config.crop_pad);
  Tensor out = config.augment_flip && flip ? flip_horizontal(image) : image;
  if (config.augment_crop && config.crop_pad > 0) out = shift_reflect(out, dy, dx);
  out.drop_grad();
  return out;
}

namespace {

void check_data(const TrainingSet& data, const PanConfig& config) {
  if (data.images.empty()) throw InvalidArgument("training set is empty");
  if (data.images.size() != data.labels.size()) {
    throw InvalidArgument("training set has " + std::to_string(data.images.size()) + " images but " +
                          std::to_string(data.labels.size()) + " labels");
  }
  for (int label : data.labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= config.num_classes) {
      throw InvalidLabel("training label " + std::to_string(label) + " outside [0, " +
                         std::to_string(config.num_classes) + ")");
    }
  }
}

struct Batch {
  Tensor images;
  std::vector<int> labels;
};

Batch make_batch(const TrainingSet& data, std::span<const std::size_t> order,
                 const PanConfig& config, Rng& rng) {
  const Tensor& first = data.images[order[0]];
  const std::size_t per = first.size();
  Batch b{Tensor({order.size(), first.dim(0), first.dim(1), first.dim(2)}), {}};
  for (std::size_t i = 0; i < order.size(); ++i) {
    const Tensor img = augment_image(data.images[order[i]], config, rng);
    if (img.size() != per) throw InvalidShape("training images differ in shape");
    std::copy(img.data().begin(), img.data().end(), b.images.data().begin() + i * per);
    b.labels.push_back(data.labels[order[i]]);
  }
  return b;
}

template <typename StepFn>
TrainTrace run_epochs(const TrainingSet& data, const PanConfig& config, int stage,
                      const EpochCallback& on_epoch, StepFn&& step) {
  TrainTrace trace;
  Rng rng(derive_seed(config.seed, {0x7261, static_cast<std::uint64_t>(stage)}));
  std::vector<std::size_t> order(data.images.size());
  for (int epoch = 1; epoch <= config.total_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double sum_base = 0.0, sum_align = 0.0;
    bool has_align = false;
    for (std::size_t s = 0; s < order.size(); s += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, order.size() - s);
      Batch batch = make_batch(data, std::span(order).subspan(s, n), config, rng);
      auto [lb, la] = step(batch, epoch);
      if (!std::isfinite(lb) || (la && !std::isfinite(*la))) {
        throw NumericDivergence("non-finite loss in stage " + std::to_string(stage) + ", epoch " +
                                std::to_string(epoch));
      }
      sum_base += lb * static_cast<double>(n);
      if (la) {
        sum_align += *la * static_cast<double>(n);
        has_align = true;
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.stage = stage;
    rec.lr = scheduled_lr(config, config.lr_main, epoch);
    rec.l_base = sum_base / static_cast<double>(order.size());
    if (has_align) rec.l_align = sum_align / static_cast<double>(order.size());
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    if (on_epoch) on_epoch(rec);
    trace.epochs.push_back(rec);
  }
  return trace;
}

}  // namespace

TrainTrace train_stage1(PanModel& model, const TrainingSet& data, const PanConfig& config,
                        const EpochCallback& on_epoch) {
  config.validate();
  check_data(data, config);
  Sgd opt(config.momentum, config.nesterov);
  auto trace = run_epochs(data, config, 1, on_epoch, [&](Batch& batch, int epoch) {
    Graph g;
    auto fw = model.forward(g, batch.images, Trainable::base, /*with_alignment=*/false);
    auto loss = pan_loss(g, fw.base_logits, Var{}, batch.labels, 1);
    for (auto& p : model.parameters()) p.tensor.zero_grad();
    g.backward(loss.l_total);
    const double lr = scheduled_lr(config, config.lr_main, epoch);
    for (auto& p : model.parameters()) {
      if (model.is_base(p.name)) opt.step(p.tensor, lr);
    }
    return std::pair<double, std::optional<double>>{g.value(loss.l_base).item(), std::nullopt};
  });
  model.set_trained_stage(std::max(model.trained_stage(), 1));
  return trace;
}

TrainTrace train_stage2(PanModel& model, const TrainingSet& data, const PanConfig& config,
                        const EpochCallback& on_epoch) {
  config.validate();
  check_data(data, config);
  if (model.trained_stage() < 1) throw InvalidArgument("stage 2 requires a stage-1 trained model");
  Sgd opt(config.momentum, config.nesterov);
  auto trace = run_epochs(data, config, 2, on_epoch, [&](Batch& batch, int epoch) {
    Graph g;
    auto fw = model.forward(g, batch.images, Trainable::head);
    auto loss = pan_loss(g, fw.base_logits, fw.align_logits, batch.labels, 2);
    for (auto& p : model.parameters()) p.tensor.zero_grad();
    g.backward(loss.l_total);
    const double lr = scheduled_lr(config, config.lr_main, epoch);
    const double lr_theta = scheduled_lr(config, config.lr_theta_layer, epoch);
    for (auto& p : model.parameters()) {
      if (!model.is_head(p.name)) continue;
      opt.step(p.tensor, model.is_theta_layer(p.name) ? lr_theta : lr);
    }
    return std::pair<double, std::optional<double>>{g.value(loss.l_base).item(),
                                                    g.value(loss.l_align).item()};
  });
  for (auto& p : model.parameters()) p.tensor.drop_grad();
  model.set_trained_stage(2);
  trace.theta = theta_statistics(model, data.images);
  return trace;
}

ThetaStats theta_statistics(const PanModel& model, const std::vector<Tensor>& images) {
  ThetaStats stats;
  if (images.empty()) return stats;
  const auto emb = model.embed_batch(images);
  for (const auto& e : emb) {
    for (int k = 0; k < 6; ++k) stats.mean[k] += e.theta.theta[k];
  }
  for (auto& m : stats.mean) m /= static_cast<double>(emb.size());
  for (const auto& e : emb) {
    for (int k = 0; k < 6; ++k) {
      const double d = e.theta.theta[k] - stats.mean[k];
      stats.stddev[k] += d * d;
    }
  }
  for (auto& s : stats.stddev) s = std::sqrt(s / static_cast<double>(emb.size()));
  return stats;
}

}  // namespace pan
