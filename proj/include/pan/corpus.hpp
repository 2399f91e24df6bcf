#pragma once

#include <array>
#include <optional>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "pan/spatial_transform.hpp"
#include "pan/training.hpp"

namespace pan {

enum class Split { train, query, gallery };

std::string to_string(Split split);
Split parse_split(const std::string& text);

struct CorpusSample {
  Tensor image;  // [3,H,W] in [0,1]
  std::uint32_t sample_id = 0;
  std::uint32_t identity = 0;
  std::uint16_t camera = 0;
  Split split = Split::train;
  // Affine map that turned the canonical framing into this image; identity
  // for externally loaded samples.
  AffineParams gt_perturb;
  std::string path;  // relative to the corpus root
};

struct Corpus {
  std::vector<CorpusSample> samples;
  // Files that could not be interpreted: (path, reason).
  std::vector<std::pair<std::string, std::string>> rejected;

  std::vector<const CorpusSample*> split(Split which) const;
  // Train split with identities remapped to dense labels in ascending order.
  TrainingSet training_set() const;
  std::size_t num_train_identities() const;
};

struct GenSpec {
  std::uint32_t n_train_ids = 16;
  std::uint32_t n_test_ids = 16;
  std::uint32_t images_per_id = 40;
  std::uint16_t n_cameras = 4;
  std::size_t height = 64;
  std::size_t width = 32;
  double scale_lo = 0.6;
  double scale_hi = 1.5;
  double offset = 0.25;
  double pixel_noise = 0.01;
  double brightness_jitter = 0.08;
  std::uint64_t seed = 1;

  void validate() const;
};

void to_json(nlohmann::json& j, const GenSpec& s);
void from_json(const nlohmann::json& j, GenSpec& s);

using Rgb = std::array<double, 3>;

struct IdentityParams {
  Rgb head{};
  Rgb torso{};
  Rgb torso_stripe{};
  Rgb legs{};
  bool striped = false;
  double torso_half_width = 0.28;  // fraction of image width
  double torso_bottom = 0.56;      // fraction of image height
  double leg_half_width = 0.09;
  double leg_gap = 0.04;
  double head_radius = 0.085;  // fraction of image height
};

struct CameraParams {
  Rgb base{};
  Rgb tint{1.0, 1.0, 1.0};
  double amplitude = 0.1;
  double freq_x = 0.3;
  double freq_y = 0.2;
  double phase = 0.0;
};

IdentityParams identity_params(std::uint64_t seed, std::uint32_t identity);
CameraParams camera_params(std::uint64_t seed, std::uint16_t camera);

// Canonical (perfectly framed) image of one identity seen by one camera.
// noise_seed drives per-shot appearance jitter; identical arguments give
// identical pixels.
Tensor render_identity(const IdentityParams& identity, const CameraParams& camera,
                       std::uint64_t noise_seed, std::size_t height, std::size_t width,
                       double brightness_jitter = 0.08);

struct Perturbed {
  Tensor image;
  AffineParams gt_perturb;
};

// Resamples the canonical image through theta = ((sx,0,tx),(0,sy,ty)).
// Scale < 1 zooms in (parts cut at the borders); scale > 1 zooms out and
// pads with zeros.
Perturbed perturb(const Tensor& image, double sx, double sy, double tx, double ty);

// Builds the whole corpus in memory; paths and sample ids are assigned.
Corpus generate(const GenSpec& spec);
// generate() followed by write_corpus().
Corpus generate(const GenSpec& spec, const std::filesystem::path& out_dir);

// Writes train/, query/, gallery/ PNGs plus manifest.jsonl with rows
// {path, identity, camera, split, theta}.
void write_corpus(const Corpus& corpus, const std::filesystem::path& out_dir);

// Reads manifest.jsonl when present, otherwise PNGs named "<id>_c<cam>..."
// under train/, query/, gallery/ (or the root, treated as gallery).
Corpus load_corpus(const std::filesystem::path& dir);

// Parses "0002_c1_000451.png" style names into (identity, camera).
std::optional<std::pair<std::uint32_t, std::uint16_t>> parse_sample_name(const std::string& filename);

}  // namespace pan
