#include "pan/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <regex>
#include <set>
#include <sstream>

#include "pan/errors.hpp"
#include "pan/image_io.hpp"
#include "pan/io_util.hpp"
#include "pan/random.hpp"

namespace pan {

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::query: return "query";
    case Split::gallery: return "gallery";
  }
  return "?";
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::train;
  if (text == "query") return Split::query;
  if (text == "gallery") return Split::gallery;
  throw DataError("unknown split \"" + text + "\"");
}

std::vector<const CorpusSample*> Corpus::split(Split which) const {
  std::vector<const CorpusSample*> out;
  for (const auto& s : samples) {
    if (s.split == which) out.push_back(&s);
  }
  return out;
}

std::size_t Corpus::num_train_identities() const {
  std::set<std::uint32_t> ids;
  for (const auto& s : samples) {
    if (s.split == Split::train) ids.insert(s.identity);
  }
  return ids.size();
}

TrainingSet Corpus::training_set() const {
  std::map<std::uint32_t, int> labels;
  for (const auto& s : samples) {
    if (s.split == Split::train) labels.emplace(s.identity, 0);
  }
  int next = 0;
  for (auto& [id, label] : labels) label = next++;
  TrainingSet set;
  for (const auto& s : samples) {
    if (s.split != Split::train) continue;
    set.images.push_back(s.image);
    set.labels.push_back(labels.at(s.identity));
  }
  return set;
}

void GenSpec::validate() const {
  auto fail = [](const std::string& what) { throw InvalidArgument("gen spec: " + what); };
  if (n_train_ids == 0 || n_test_ids == 0) fail("identity counts must be >= 1");
  if (images_per_id < 2) fail("images_per_id must be >= 2");
  if (n_cameras < 2) fail("n_cameras must be >= 2");
  if (height < 4 || width < 4) fail("image size must be at least 4x4");
  if (!(scale_lo > 0.0) || !(scale_hi >= scale_lo)) fail("need 0 < scale_lo <= scale_hi");
  if (!(offset >= 0.0)) fail("offset must be >= 0");
  if (!(pixel_noise >= 0.0) || !(brightness_jitter >= 0.0) || brightness_jitter >= 1.0) {
    fail("noise parameters must be >= 0 (brightness_jitter < 1)");
  }
}

void to_json(nlohmann::json& j, const GenSpec& s) {
  j = nlohmann::json{{"n_train_ids", s.n_train_ids}, {"n_test_ids", s.n_test_ids},
                     {"images_per_id", s.images_per_id}, {"n_cameras", s.n_cameras},
                     {"height", s.height}, {"width", s.width},
                     {"scale_lo", s.scale_lo}, {"scale_hi", s.scale_hi},
                     {"offset", s.offset}, {"pixel_noise", s.pixel_noise},
                     {"brightness_jitter", s.brightness_jitter}, {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, GenSpec& s) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("n_train_ids", s.n_train_ids);
  get("n_test_ids", s.n_test_ids);
  get("images_per_id", s.images_per_id);
  get("n_cameras", s.n_cameras);
  get("height", s.height);
  get("width", s.width);
  get("scale_lo", s.scale_lo);
  get("scale_hi", s.scale_hi);
  get("offset", s.offset);
  get("pixel_noise", s.pixel_noise);
  get("brightness_jitter", s.brightness_jitter);
  get("seed", s.seed);
}

namespace {

Rgb random_color(Rng& rng) { return {uniform(rng, 0.05, 0.95), uniform(rng, 0.05, 0.95), uniform(rng, 0.05, 0.95)}; }

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

IdentityParams identity_params(std::uint64_t seed, std::uint32_t identity) {
  Rng rng(derive_seed(seed, {0x1d, identity}));
  IdentityParams p;
  p.head = {uniform(rng, 0.45, 0.9), uniform(rng, 0.3, 0.7), uniform(rng, 0.2, 0.55)};
  p.torso = random_color(rng);
  p.torso_stripe = random_color(rng);
  p.legs = random_color(rng);
  p.striped = uniform01(rng) < 0.5;
  p.torso_half_width = uniform(rng, 0.22, 0.34);
  p.torso_bottom = uniform(rng, 0.5, 0.6);
  p.leg_half_width = uniform(rng, 0.07, 0.11);
  p.leg_gap = uniform(rng, 0.02, 0.06);
  p.head_radius = uniform(rng, 0.07, 0.1);
  return p;
}

CameraParams camera_params(std::uint64_t seed, std::uint16_t camera) {
  Rng rng(derive_seed(seed, {0xca, camera}));
  CameraParams c;
  c.base = {uniform(rng, 0.2, 0.8), uniform(rng, 0.2, 0.8), uniform(rng, 0.2, 0.8)};
  c.tint = {uniform(rng, 0.85, 1.15), uniform(rng, 0.85, 1.15), uniform(rng, 0.85, 1.15)};
  c.amplitude = uniform(rng, 0.05, 0.2);
  c.freq_x = uniform(rng, 0.1, 0.6);
  c.freq_y = uniform(rng, 0.05, 0.4);
  c.phase = uniform(rng, 0.0, 6.283185307179586);
  return c;
}

namespace {

// Separable [1 2 1]/4 point-spread function with clamped borders.
Tensor lens_blur(const Tensor& img) {
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor rows(img.shape()), out(img.shape());
  for (std::size_t p = 0; p < c * h; ++p) {
    const double* src = img.data().data() + p * w;
    for (std::size_t x = 0; x < w; ++x) {
      rows[p * w + x] = 0.25 * (src[x == 0 ? 0 : x - 1] + 2.0 * src[x] + src[x + 1 == w ? x : x + 1]);
    }
  }
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      const std::size_t up = y == 0 ? 0 : y - 1, down = y + 1 == h ? y : y + 1;
      for (std::size_t x = 0; x < w; ++x) {
        out[(ch * h + y) * w + x] = 0.25 * (rows[(ch * h + up) * w + x] + 2.0 * rows[(ch * h + y) * w + x] +
                                            rows[(ch * h + down) * w + x]);
      }
    }
  }
  return out;
}

}  // namespace

Tensor render_identity(const IdentityParams& id, const CameraParams& cam, std::uint64_t noise_seed,
                       std::size_t height, std::size_t width, double brightness_jitter) {
  Rng rng(noise_seed);
  const double brightness = 1.0 + uniform(rng, -brightness_jitter, brightness_jitter);
  Rgb jitter{uniform(rng, -0.03, 0.03), uniform(rng, -0.03, 0.03), uniform(rng, -0.03, 0.03)};
  const double gap = id.leg_gap + uniform(rng, -0.01, 0.01);

  const double H = static_cast<double>(height), W = static_cast<double>(width);
  const double cx = 0.5 * W;
  const double head_cy = 0.13 * H, head_r = id.head_radius * H;
  const double torso_top = 0.22 * H, torso_bottom = id.torso_bottom * H;
  const double torso_hw = id.torso_half_width * W;
  const double leg_bottom = 0.96 * H, leg_hw = id.leg_half_width * W;
  const double leg_offset = 0.5 * gap * W + leg_hw;
  const double stripe_period = 0.125 * H;

  // Colour of a point in continuous pixel coordinates (pixel centres at +0.5).
  auto shade = [&](double x, double y) -> Rgb {
    const double dx = x - cx, dy = y - head_cy;
    if (dx * dx + dy * dy <= head_r * head_r) return id.head;
    if (y >= torso_top && y <= torso_bottom && std::abs(dx) <= torso_hw) {
      if (id.striped && std::fmod(y - torso_top, stripe_period) < 0.5 * stripe_period) {
        return id.torso_stripe;
      }
      return id.torso;
    }
    if (y > torso_bottom && y <= leg_bottom && std::abs(std::abs(dx) - leg_offset) <= leg_hw) {
      return id.legs;
    }
    const double wave = cam.amplitude * std::sin(cam.freq_x * x + cam.freq_y * y + cam.phase);
    const double ramp = 0.1 * (y / H - 0.5);
    return {cam.base[0] + wave + ramp, cam.base[1] + wave + ramp, cam.base[2] + wave - ramp};
  };

  constexpr int kSub = 4;
  Tensor radiance({3, height, width});
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      Rgb acc{0.0, 0.0, 0.0};
      for (int sy = 0; sy < kSub; ++sy) {
        for (int sx = 0; sx < kSub; ++sx) {
          const Rgb c = shade(static_cast<double>(x) + (sx + 0.5) / kSub,
                              static_cast<double>(y) + (sy + 0.5) / kSub);
          for (int ch = 0; ch < 3; ++ch) acc[ch] += c[ch];
        }
      }
      for (std::size_t ch = 0; ch < 3; ++ch) radiance[(ch * height + y) * width + x] = acc[ch] / (kSub * kSub);
    }
  }
  Tensor out = lens_blur(radiance);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    for (std::size_t i = 0; i < height * width; ++i) {
      double& v = out[ch * height * width + i];
      v = clamp01((v + jitter[ch]) * brightness * cam.tint[ch]);
    }
  }
  return out;
}

Perturbed perturb(const Tensor& image, double sx, double sy, double tx, double ty) {
  for (double s : {sx, sy}) {
    if (!std::isfinite(s) || s <= 0.0) throw InvalidArgument("perturb: scale must be finite and > 0");
  }
  if (!std::isfinite(tx) || !std::isfinite(ty)) throw InvalidArgument("perturb: offset must be finite");
  if (image.rank() != 3) throw InvalidShape("perturb: expected [C,H,W], got " + to_string(image.shape()));
  const auto theta = AffineParams::scale_offset(sx, sy, tx, ty);
  return {apply_affine_to_image(image, theta, image.dim(1), image.dim(2)), theta};
}

namespace {

std::string sample_filename(std::uint32_t identity, std::uint16_t camera, std::uint32_t index) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04u_c%u_%06u.png", identity, static_cast<unsigned>(camera), index);
  return buf;
}

}  // namespace

Corpus generate(const GenSpec& spec) {
  spec.validate();
  Corpus corpus;
  const std::uint32_t total_ids = spec.n_train_ids + spec.n_test_ids;
  const std::uint32_t queries_per_id = std::min<std::uint32_t>(spec.n_cameras, spec.images_per_id / 2);
  std::vector<CameraParams> cameras;
  for (std::uint16_t c = 0; c < spec.n_cameras; ++c) cameras.push_back(camera_params(spec.seed, c));

  for (std::uint32_t id = 0; id < total_ids; ++id) {
    const bool train = id < spec.n_train_ids;
    const IdentityParams params = identity_params(spec.seed, id);
    for (std::uint32_t k = 0; k < spec.images_per_id; ++k) {
      const auto camera = static_cast<std::uint16_t>((id + k) % spec.n_cameras);
      Rng rng(derive_seed(spec.seed, {0x5a, id, k}));
      const std::uint64_t shot_seed = rng();
      const double s = uniform(rng, spec.scale_lo, spec.scale_hi);
      const double tx = uniform(rng, -spec.offset, spec.offset);
      const double ty = uniform(rng, -spec.offset, spec.offset);
      const Tensor canonical = render_identity(params, cameras[camera], shot_seed, spec.height,
                                               spec.width, spec.brightness_jitter);
      Perturbed p = perturb(canonical, s, s, tx, ty);
      if (spec.pixel_noise > 0.0) {
        std::normal_distribution<double> noise(0.0, spec.pixel_noise);
        for (double& v : p.image.data()) v = clamp01(v + noise(rng));
      }
      CorpusSample sample;
      sample.image = std::move(p.image);
      sample.identity = id;
      sample.camera = camera;
      sample.split = train ? Split::train : (k < queries_per_id ? Split::query : Split::gallery);
      sample.gt_perturb = p.gt_perturb;
      sample.sample_id = static_cast<std::uint32_t>(corpus.samples.size());
      sample.path = to_string(sample.split) + "/" + sample_filename(id, camera, k);
      corpus.samples.push_back(std::move(sample));
    }
  }
  return corpus;
}

Corpus generate(const GenSpec& spec, const std::filesystem::path& out_dir) {
  Corpus corpus = generate(spec);
  write_corpus(corpus, out_dir);
  return corpus;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& out_dir) {
  std::string manifest;
  for (const auto& s : corpus.samples) {
    write_png(out_dir / s.path, s.image);
    nlohmann::json row{{"path", s.path},
                       {"identity", s.identity},
                       {"camera", s.camera},
                       {"split", to_string(s.split)},
                       {"theta", s.gt_perturb.theta}};
    manifest += row.dump() + "\n";
  }
  write_file_atomic(out_dir / "manifest.jsonl", manifest);
}

std::optional<std::pair<std::uint32_t, std::uint16_t>> parse_sample_name(const std::string& filename) {
  static const std::regex pattern(R"(^(\d+)_c(\d+)[^/]*\.png$)", std::regex::icase);
  std::smatch m;
  if (!std::regex_match(filename, m, pattern)) return std::nullopt;
  try {
    const auto id = std::stoul(m[1].str());
    const auto cam = std::stoul(m[2].str());
    if (id > 0xffffffffUL || cam > 0xffffUL) return std::nullopt;
    return std::pair{static_cast<std::uint32_t>(id), static_cast<std::uint16_t>(cam)};
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

namespace {

Corpus load_from_manifest(const std::filesystem::path& dir) {
  Corpus corpus;
  const auto manifest_path = dir / "manifest.jsonl";
  std::istringstream in(read_file(manifest_path));
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> errors;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = manifest_path.string() + ":" + std::to_string(line_no);
    try {
      const auto row = nlohmann::json::parse(line);
      CorpusSample s;
      s.path = row.at("path").get<std::string>();
      s.identity = row.at("identity").get<std::uint32_t>();
      s.camera = row.at("camera").get<std::uint16_t>();
      s.split = parse_split(row.at("split").get<std::string>());
      if (row.contains("theta")) {
        const auto theta = row.at("theta").get<std::vector<double>>();
        if (theta.size() != 6) throw DataError("theta must hold 6 values");
        std::copy(theta.begin(), theta.end(), s.gt_perturb.theta.begin());
      }
      s.sample_id = static_cast<std::uint32_t>(corpus.samples.size());
      s.image = read_png(dir / s.path);
      corpus.samples.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      errors.push_back(where + ": " + e.what());
    } catch (const DataError& e) {
      errors.push_back(where + ": " + e.what());
    }
  }
  if (!errors.empty()) {
    std::string msg = "malformed manifest (" + std::to_string(errors.size()) + " bad lines)";
    for (const auto& e : errors) msg += "\n  " + e;
    throw DataError(msg);
  }
  return corpus;
}

void scan_folder(const std::filesystem::path& root, const std::filesystem::path& folder, Split split,
                 Corpus& corpus) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(folder)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    const auto rel = std::filesystem::relative(f, root).generic_string();
    const auto parsed = parse_sample_name(f.filename().string());
    if (!parsed) {
      corpus.rejected.emplace_back(rel, "name does not match <id>_c<camera>*.png");
      continue;
    }
    CorpusSample s;
    s.path = rel;
    s.identity = parsed->first;
    s.camera = parsed->second;
    s.split = split;
    s.sample_id = static_cast<std::uint32_t>(corpus.samples.size());
    try {
      s.image = read_png(f);
    } catch (const DataError& e) {
      corpus.rejected.emplace_back(rel, e.what());
      continue;
    }
    corpus.samples.push_back(std::move(s));
  }
}

}  // namespace

Corpus load_corpus(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("corpus directory not found: " + dir.string());
  if (std::filesystem::exists(dir / "manifest.jsonl")) return load_from_manifest(dir);
  Corpus corpus;
  bool any_split = false;
  for (Split split : {Split::train, Split::query, Split::gallery}) {
    const auto sub = dir / to_string(split);
    if (std::filesystem::is_directory(sub)) {
      any_split = true;
      scan_folder(dir, sub, split, corpus);
    }
  }
  if (!any_split) scan_folder(dir, dir, Split::gallery, corpus);
  return corpus;
}

}  // namespace pan
