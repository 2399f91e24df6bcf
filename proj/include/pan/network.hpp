#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "pan/autodiff.hpp"
#include "pan/checkpoint.hpp"
#include "pan/spatial_transform.hpp"

namespace pan {

struct PanConfig {
  std::size_t input_h = 64;
  std::size_t input_w = 32;
  std::size_t input_channels = 3;
  std::size_t num_classes = 16;
  // Conv block widths (conv3x3 -> ReLU -> maxpool2). The sampler reads the
  // output of the first base block; the grid network reads the last one.
  std::vector<std::size_t> base_channels{16, 32, 64, 128};
  std::vector<std::size_t> align_channels{64, 128};
  std::size_t grid_channels = 64;
  // Initial theta is diag(init_scale, init_scale) with zero offsets.
  double theta_init_scale = 0.8;

  double alpha = 0.5;
  double lr_main = 1e-3;
  int lr_decay_epoch = 30;
  double lr_decay_factor = 0.1;
  int total_epochs = 40;
  double lr_theta_layer = 1e-5;
  double momentum = 0.9;
  bool nesterov = true;
  std::size_t batch_size = 16;
  bool augment_flip = true;
  bool augment_crop = true;
  std::size_t crop_pad = 4;
  std::uint64_t seed = 1;

  // Throws InvalidArgument naming the offending field.
  void validate() const;
};

void to_json(nlohmann::json& j, const PanConfig& c);
// Missing keys keep their defaults.
void from_json(const nlohmann::json& j, PanConfig& c);

enum class Trainable { none, base, head, all };

struct ForwardOutputs {
  Var base_logits;
  Var align_logits;  // invalid when the alignment branch was skipped
  Var theta;         // [N,6]
  Var base_embed;    // [N, base_channels.back()]
  Var align_embed;   // [N, align_channels.back()]
};

struct Embedding {
  std::vector<double> base;
  std::vector<double> align;
  AffineParams theta;
};

/// Two-branch alignment network. The base branch classifies the input image;
/// the grid network regresses theta from the deepest base feature map; the
/// alignment branch classifies the first base feature map resampled by theta.
class PanModel {
 public:
  explicit PanModel(PanConfig config);

  const PanConfig& config() const { return config_; }
  PanConfig& mutable_config() { return config_; }

  // Parameters of groups listed in `trainable` are bound for gradients; the
  // rest enter the graph as constants. base = W1, head = grid + alignment.
  ForwardOutputs forward(Graph& g, const Tensor& batch, Trainable trainable,
                         bool with_alignment = true);
  // Inference; no parameter receives gradients.
  ForwardOutputs forward(Graph& g, const Tensor& batch) const;

  Embedding embed(const Tensor& image) const;
  std::vector<Embedding> embed_batch(std::span<const Tensor> images,
                                     std::size_t batch_size = 32) const;

  std::vector<NamedTensor>& parameters() { return params_; }
  const std::vector<NamedTensor>& parameters() const { return params_; }
  Tensor& parameter(const std::string& name);
  const Tensor& parameter(const std::string& name) const;

  bool is_base(const std::string& name) const;
  bool is_head(const std::string& name) const;
  bool is_theta_layer(const std::string& name) const;

  // 0 = untrained, 1 = base branch trained, 2 = full model trained.
  int trained_stage() const { return trained_stage_; }
  void set_trained_stage(int stage) { trained_stage_ = stage; }

  std::vector<NamedTensor> to_checkpoint() const;
  // Architecture is recovered from tensor shapes; training hyperparameters
  // come from `base` (defaults when omitted).
  static PanModel from_checkpoint(const std::vector<NamedTensor>& tensors, PanConfig base = {});

  void save(const std::filesystem::path& path) const;
  static PanModel load(const std::filesystem::path& path, PanConfig base = {});

 private:
  template <typename Bind>
  ForwardOutputs run(Graph& g, const Tensor& batch, Bind&& bind, bool with_alignment) const;
  std::size_t index_of(const std::string& name) const;
  void initialize();

  PanConfig config_;
  std::vector<NamedTensor> params_;
  int trained_stage_ = 0;
};

struct LossTerms {
  Var l_base;
  Var l_align;  // invalid in stage 1 when no alignment logits are given
  Var l_total;
};

// Stage 1: l_total = l_base. Stage 2: l_total = l_base + l_align.
LossTerms pan_loss(Graph& g, Var base_logits, Var align_logits, std::span<const int> labels,
                   int stage);

// Order-sensitive FNV-1a hash over the raw bytes of the base-branch tensors.
std::uint64_t base_checksum(const PanModel& model);

}  // namespace pan
