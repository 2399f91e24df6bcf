#include "pan/network.hpp"

#include <cmath>
#include <cstring>

#include "pan/errors.hpp"
#include "pan/layers.hpp"
#include "pan/random.hpp"

namespace pan {

void PanConfig::validate() const {
  auto fail = [](const std::string& what) { throw InvalidArgument("config: " + what); };
  if (input_h == 0 || input_w == 0 || input_channels == 0) fail("input dimensions must be >= 1");
  if (num_classes < 2) fail("num_classes must be >= 2");
  if (base_channels.empty()) fail("base_channels must not be empty");
  if (align_channels.empty()) fail("align_channels must not be empty");
  for (auto c : base_channels) if (c == 0) fail("base_channels entries must be >= 1");
  for (auto c : align_channels) if (c == 0) fail("align_channels entries must be >= 1");
  if (grid_channels == 0) fail("grid_channels must be >= 1");
  if (!(alpha >= 0.0 && alpha <= 1.0)) fail("alpha must lie in [0, 1]");
  if (!(lr_main >= 0.0) || !(lr_theta_layer >= 0.0)) fail("learning rates must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must lie in [0, 1)");
  if (!(lr_decay_factor > 0.0)) fail("lr_decay_factor must be > 0");
  if (total_epochs < 0 || lr_decay_epoch < 0) fail("epoch counts must be >= 0");
  if (batch_size == 0) fail("batch_size must be >= 1");
  if (!std::isfinite(theta_init_scale)) fail("theta_init_scale must be finite");
}

void to_json(nlohmann::json& j, const PanConfig& c) {
  j = nlohmann::json{{"input_h", c.input_h},
                     {"input_w", c.input_w},
                     {"input_channels", c.input_channels},
                     {"num_classes", c.num_classes},
                     {"base_channels", c.base_channels},
                     {"align_channels", c.align_channels},
                     {"grid_channels", c.grid_channels},
                     {"theta_init_scale", c.theta_init_scale},
                     {"alpha", c.alpha},
                     {"lr_main", c.lr_main},
                     {"lr_decay_epoch", c.lr_decay_epoch},
                     {"lr_decay_factor", c.lr_decay_factor},
                     {"total_epochs", c.total_epochs},
                     {"lr_theta_layer", c.lr_theta_layer},
                     {"momentum", c.momentum},
                     {"nesterov", c.nesterov},
                     {"batch_size", c.batch_size},
                     {"augment_flip", c.augment_flip},
                     {"augment_crop", c.augment_crop},
                     {"crop_pad", c.crop_pad},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, PanConfig& c) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("input_h", c.input_h);
  get("input_w", c.input_w);
  get("input_channels", c.input_channels);
  get("num_classes", c.num_classes);
  get("base_channels", c.base_channels);
  get("align_channels", c.align_channels);
  get("grid_channels", c.grid_channels);
  get("theta_init_scale", c.theta_init_scale);
  get("alpha", c.alpha);
  get("lr_main", c.lr_main);
  get("lr_decay_epoch", c.lr_decay_epoch);
  get("lr_decay_factor", c.lr_decay_factor);
  get("total_epochs", c.total_epochs);
  get("lr_theta_layer", c.lr_theta_layer);
  get("momentum", c.momentum);
  get("nesterov", c.nesterov);
  get("batch_size", c.batch_size);
  get("augment_flip", c.augment_flip);
  get("augment_crop", c.augment_crop);
  get("crop_pad", c.crop_pad);
  get("seed", c.seed);
}

namespace {

std::string conv_name(const char* branch, std::size_t i, const char* what) {
  return std::string(branch) + ".conv" + std::to_string(i) + "." + what;
}

bool starts_with(const std::string& s, const char* prefix) { return s.rfind(prefix, 0) == 0; }

}  // namespace

PanModel::PanModel(PanConfig config) : config_(std::move(config)) {
  config_.validate();
  initialize();
}

void PanModel::initialize() {
  const auto& c = config_;
  Rng rng(derive_seed(c.seed, {0x1417}));
  auto add_uniform = [&](std::string name, Shape shape, std::size_t fan_in) {
    Tensor t(std::move(shape));
    const double s = std::sqrt(1.0 / static_cast<double>(fan_in));
    for (double& v : t.data()) v = uniform(rng, -s, s);
    params_.push_back({std::move(name), std::move(t)});
  };
  auto add_fill = [&](std::string name, Shape shape, double v) {
    params_.push_back({std::move(name), Tensor(std::move(shape), v)});
  };

  std::size_t in = c.input_channels;
  for (std::size_t i = 0; i < c.base_channels.size(); ++i) {
    add_uniform(conv_name("base", i, "weight"), {c.base_channels[i], in, 3, 3}, in * 9);
    add_fill(conv_name("base", i, "bias"), {c.base_channels[i]}, 0.0);
    in = c.base_channels[i];
  }
  add_uniform("base.fc.weight", {c.num_classes, in}, in);
  add_fill("base.fc.bias", {c.num_classes}, 0.0);

  add_uniform("grid.conv.weight", {c.grid_channels, in, 3, 3}, in * 9);
  add_fill("grid.conv.bias", {c.grid_channels}, 0.0);
  add_fill("grid.fc.weight", {6, c.grid_channels}, 0.0);
  Tensor theta_bias({6});
  theta_bias[0] = c.theta_init_scale;
  theta_bias[4] = c.theta_init_scale;
  params_.push_back({"grid.fc.bias", std::move(theta_bias)});

  in = c.base_channels.front();
  for (std::size_t i = 0; i < c.align_channels.size(); ++i) {
    add_uniform(conv_name("align", i, "weight"), {c.align_channels[i], in, 3, 3}, in * 9);
    add_fill(conv_name("align", i, "bias"), {c.align_channels[i]}, 0.0);
    in = c.align_channels[i];
  }
  add_uniform("align.fc.weight", {c.num_classes, in}, in);
  add_fill("align.fc.bias", {c.num_classes}, 0.0);
}

std::size_t PanModel::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  throw InvalidArgument("unknown parameter " + name);
}

Tensor& PanModel::parameter(const std::string& name) { return params_[index_of(name)].tensor; }

const Tensor& PanModel::parameter(const std::string& name) const {
  return params_[index_of(name)].tensor;
}

bool PanModel::is_base(const std::string& name) const { return starts_with(name, "base."); }

bool PanModel::is_head(const std::string& name) const {
  return starts_with(name, "grid.") || starts_with(name, "align.");
}

bool PanModel::is_theta_layer(const std::string& name) const { return starts_with(name, "grid.fc."); }

template <typename Bind>
ForwardOutputs PanModel::run(Graph& g, const Tensor& batch, Bind&& bind,
                             bool with_alignment) const {
  const auto& c = config_;
  if (batch.rank() != 4 || batch.dim(1) != c.input_channels || batch.dim(2) != c.input_h ||
      batch.dim(3) != c.input_w) {
    throw InvalidShape("forward: batch " + to_string(batch.shape()) + " does not match [N," +
                       std::to_string(c.input_channels) + "," + std::to_string(c.input_h) + "," +
                       std::to_string(c.input_w) + "]");
  }
  Tensor centered(batch.shape());
  for (std::size_t i = 0; i < batch.size(); ++i) centered[i] = batch[i] - 0.5;

  auto block = [&](Var x, const std::string& w, const std::string& b) {
    return max_pool2d(g, relu(g, conv2d(g, x, bind(w), bind(b), 1, 1)), 2);
  };

  ForwardOutputs out;
  Var h = g.constant(std::move(centered));
  Var shallow;
  for (std::size_t i = 0; i < c.base_channels.size(); ++i) {
    h = block(h, conv_name("base", i, "weight"), conv_name("base", i, "bias"));
    if (i == 0) shallow = h;
  }
  out.base_embed = global_avg_pool(g, h);
  out.base_logits = fully_connected(g, out.base_embed, bind("base.fc.weight"), bind("base.fc.bias"));
  if (!with_alignment) return out;

  Var q = global_avg_pool(g, block(h, "grid.conv.weight", "grid.conv.bias"));
  out.theta = fully_connected(g, q, bind("grid.fc.weight"), bind("grid.fc.bias"));

  const Tensor& shallow_map = g.value(shallow);
  Var grid = affine_grid(g, out.theta, shallow_map.dim(2), shallow_map.dim(3));
  Var a = grid_sample(g, shallow, grid);
  for (std::size_t i = 0; i < c.align_channels.size(); ++i) {
    a = block(a, conv_name("align", i, "weight"), conv_name("align", i, "bias"));
  }
  out.align_embed = global_avg_pool(g, a);
  out.align_logits =
      fully_connected(g, out.align_embed, bind("align.fc.weight"), bind("align.fc.bias"));
  return out;
}

ForwardOutputs PanModel::forward(Graph& g, const Tensor& batch, Trainable trainable,
                                 bool with_alignment) {
  auto bind = [&](const std::string& name) {
    Tensor& t = parameter(name);
    const bool train = trainable == Trainable::all ||
                       (trainable == Trainable::base && is_base(name)) ||
                       (trainable == Trainable::head && is_head(name));
    return train ? g.parameter(t) : g.constant(Tensor(t.shape(), t.values()));
  };
  return run(g, batch, bind, with_alignment);
}

ForwardOutputs PanModel::forward(Graph& g, const Tensor& batch) const {
  auto bind = [&](const std::string& name) {
    const Tensor& t = parameter(name);
    return g.constant(Tensor(t.shape(), t.values()));
  };
  return run(g, batch, bind, true);
}

Embedding PanModel::embed(const Tensor& image) const {
  return embed_batch(std::span<const Tensor>(&image, 1)).front();
}

std::vector<Embedding> PanModel::embed_batch(std::span<const Tensor> images,
                                             std::size_t batch_size) const {
  const auto& c = config_;
  const std::size_t per = c.input_channels * c.input_h * c.input_w;
  std::vector<Embedding> out;
  out.reserve(images.size());
  for (std::size_t start = 0; start < images.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, images.size() - start);
    Tensor batch({n, c.input_channels, c.input_h, c.input_w});
    for (std::size_t i = 0; i < n; ++i) {
      const Tensor& img = images[start + i];
      if (img.shape() != Shape{c.input_channels, c.input_h, c.input_w}) {
        throw InvalidShape("embed: image " + to_string(img.shape()) + " does not match [" +
                           std::to_string(c.input_channels) + "," + std::to_string(c.input_h) +
                           "," + std::to_string(c.input_w) + "]");
      }
      std::copy(img.data().begin(), img.data().end(), batch.data().begin() + i * per);
    }
    Graph g;
    auto fw = forward(g, batch);
    const Tensor& be = g.value(fw.base_embed);
    const Tensor& ae = g.value(fw.align_embed);
    const Tensor& th = g.value(fw.theta);
    const std::size_t db = be.dim(1), da = ae.dim(1);
    for (std::size_t i = 0; i < n; ++i) {
      Embedding e;
      e.base.assign(be.data().begin() + i * db, be.data().begin() + (i + 1) * db);
      e.align.assign(ae.data().begin() + i * da, ae.data().begin() + (i + 1) * da);
      std::copy(th.data().begin() + 6 * i, th.data().begin() + 6 * (i + 1), e.theta.theta.begin());
      out.push_back(std::move(e));
    }
  }
  return out;
}

std::vector<NamedTensor> PanModel::to_checkpoint() const {
  std::vector<NamedTensor> out = params_;
  out.push_back({"meta.input_hw", Tensor({2}, {static_cast<double>(config_.input_h),
                                               static_cast<double>(config_.input_w)})});
  out.push_back({"meta.stage", Tensor::scalar(trained_stage_)});
  return out;
}

PanModel PanModel::from_checkpoint(const std::vector<NamedTensor>& tensors, PanConfig base) {
  auto find = [&](const std::string& name) -> const Tensor* {
    for (const auto& nt : tensors) {
      if (nt.name == name) return &nt.tensor;
    }
    return nullptr;
  };
  auto require = [&](const std::string& name) -> const Tensor& {
    const Tensor* t = find(name);
    if (t == nullptr) throw DataError("checkpoint is missing tensor " + name);
    return *t;
  };

  PanConfig c = std::move(base);
  c.base_channels.clear();
  for (std::size_t i = 0; const Tensor* t = find(conv_name("base", i, "weight")); ++i) {
    c.base_channels.push_back(t->dim(0));
  }
  c.align_channels.clear();
  for (std::size_t i = 0; const Tensor* t = find(conv_name("align", i, "weight")); ++i) {
    c.align_channels.push_back(t->dim(0));
  }
  if (c.base_channels.empty()) throw DataError("checkpoint has no base branch tensors");
  c.input_channels = require(conv_name("base", 0, "weight")).dim(1);
  c.num_classes = require("base.fc.weight").dim(0);
  c.grid_channels = require("grid.conv.weight").dim(0);
  const Tensor& hw = require("meta.input_hw");
  if (hw.size() != 2) throw DataError("checkpoint meta.input_hw must hold 2 values");
  c.input_h = static_cast<std::size_t>(hw[0]);
  c.input_w = static_cast<std::size_t>(hw[1]);

  PanModel model(c);
  for (auto& nt : model.params_) {
    const Tensor& src = require(nt.name);
    if (src.shape() != nt.tensor.shape()) {
      throw DataError("checkpoint tensor " + nt.name + " has shape " + to_string(src.shape()) +
                      ", expected " + to_string(nt.tensor.shape()));
    }
    nt.tensor = Tensor(src.shape(), src.values());
  }
  if (const Tensor* stage = find("meta.stage")) model.trained_stage_ = static_cast<int>(stage->item());
  return model;
}

void PanModel::save(const std::filesystem::path& path) const { save_checkpoint(path, to_checkpoint()); }

PanModel PanModel::load(const std::filesystem::path& path, PanConfig base) {
  return from_checkpoint(load_checkpoint(path), std::move(base));
}

LossTerms pan_loss(Graph& g, Var base_logits, Var align_logits, std::span<const int> labels,
                   int stage) {
  if (stage != 1 && stage != 2) throw InvalidArgument("stage must be 1 or 2");
  LossTerms out;
  out.l_base = softmax_cross_entropy(g, base_logits, labels);
  if (align_logits.valid()) out.l_align = softmax_cross_entropy(g, align_logits, labels);
  if (stage == 1) {
    out.l_total = out.l_base;
  } else {
    if (!out.l_align.valid()) throw InvalidArgument("stage 2 loss needs alignment logits");
    out.l_total = add(g, out.l_base, out.l_align);
  }
  return out;
}

std::uint64_t base_checksum(const PanModel& model) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& nt : model.parameters()) {
    if (!model.is_base(nt.name)) continue;
    for (double v : nt.tensor.data()) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof v);
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

}  // namespace pan
