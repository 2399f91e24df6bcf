#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "pan/corpus.hpp"
#include "pan/errors.hpp"
#include "pan/image_io.hpp"
#include "pan/io_util.hpp"
#include "pan/spatial_transform.hpp"

using namespace pan;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

double differing_fraction(const Tensor& a, const Tensor& b, double tol) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += std::abs(a[i] - b[i]) > tol;
  return static_cast<double>(n) / static_cast<double>(a.size());
}

GenSpec small_spec() {
  GenSpec s;
  s.n_train_ids = 3;
  s.n_test_ids = 2;
  s.images_per_id = 6;
  s.n_cameras = 3;
  return s;
}

}  // namespace

TEST_CASE("render is deterministic and identities do not collide") {
  const auto cam = camera_params(1, 0);
  const auto a = render_identity(identity_params(1, 5), cam, 77, 64, 32);
  CHECK(render_identity(identity_params(1, 5), cam, 77, 64, 32).values() == a.values());
  CHECK(a.shape() == Shape{3, 64, 32});
  for (double v : a.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }

  Rng rng(41);
  std::size_t collisions = 0;
  for (int t = 0; t < 1000; ++t) {
    const auto i = static_cast<std::uint32_t>(uniform_index(rng, 200));
    auto j = static_cast<std::uint32_t>(uniform_index(rng, 200));
    if (j == i) j = (j + 1) % 200;
    const auto c = camera_params(1, static_cast<std::uint16_t>(uniform_index(rng, 4)));
    const std::uint64_t shot = rng();
    if (differing_fraction(render_identity(identity_params(1, i), c, shot, 64, 32),
                           render_identity(identity_params(1, j), c, shot, 64, 32), 1e-9) < 0.01)
      ++collisions;
  }
  CHECK(collisions == 0);

  const auto other_cam = render_identity(identity_params(1, 5), camera_params(1, 1), 77, 64, 32);
  // Top-left corner is background in the canonical framing.
  CHECK(std::abs(other_cam[0] - a[0]) + std::abs(other_cam[64 * 32] - a[64 * 32]) > 1e-3);
}

TEST_CASE("perturb examples") {
  const auto img = render_identity(identity_params(2, 1), camera_params(2, 0), 5, 64, 32);
  auto same = perturb(img, 1.0, 1.0, 0.0, 0.0);
  CHECK(same.image.values() == img.values());
  CHECK(same.gt_perturb == AffineParams::identity());

  auto out = perturb(img, 1.5, 1.5, 0.0, 0.0);
  CHECK(out.gt_perturb == AffineParams::scale_offset(1.5, 1.5, 0.0, 0.0));
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t x = 0; x < 32; ++x) {
      CHECK(out.image[(c * 64 + 0) * 32 + x] == 0.0);
      CHECK(out.image[(c * 64 + 63) * 32 + x] == 0.0);
    }
    for (std::size_t y = 0; y < 64; ++y) {
      CHECK(out.image[(c * 64 + y) * 32] == 0.0);
      CHECK(out.image[(c * 64 + y) * 32 + 31] == 0.0);
    }
  }

  // Zooming in enlarges a centred figure.
  Tensor square({3, 32, 32}, 0.0);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 12; y < 20; ++y)
      for (std::size_t x = 12; x < 20; ++x) square[(c * 32 + y) * 32 + x] = 1.0;
  auto count = [](const Tensor& t) {
    std::size_t n = 0;
    for (double v : t.data()) n += v > 0.5;
    return n;
  };
  CHECK(count(perturb(square, 0.7, 0.7, 0.0, 0.0).image) > count(square));

  CHECK_THROWS_AS(perturb(img, 0.0, 1.0, 0.0, 0.0), InvalidArgument);
  CHECK_THROWS_AS(perturb(img, 1.0, -1.0, 0.0, 0.0), InvalidArgument);
  CHECK_THROWS_AS(perturb(img, NAN, 1.0, 0.0, 0.0), InvalidArgument);
}

TEST_CASE("inverse of the injected perturbation recovers the canonical image") {
  Rng rng(42);
  double worst = 0.0;
  for (int t = 0; t < 40; ++t) {
    const auto img = render_identity(identity_params(3, static_cast<std::uint32_t>(t)), camera_params(3, t % 4), rng(), 64, 32);
    const double s = uniform(rng, 0.8, 1.25);
    const double tx = uniform(rng, -0.25, 0.25), ty = uniform(rng, -0.25, 0.25);
    auto p = perturb(img, s, s, tx, ty);
    const AffineParams inv = p.gt_perturb.inverse();
    const Tensor back = apply_affine_to_image(p.image, inv, 64, 32);
    // Only pixels whose inverse-mapped position lies inside the perturbed frame (with a one-pixel
    // margin) carry information; the rest were cut off by the perturbation.
    double err = 0.0;
    std::size_t n = 0;
    for (std::size_t y = 0; y < 64; ++y) {
      for (std::size_t x = 0; x < 32; ++x) {
        auto [xs, ys] = inv.apply(target_coordinate(x, 32), target_coordinate(y, 64));
        if (std::abs(xs) > 1.0 - 2.0 / 31.0 || std::abs(ys) > 1.0 - 2.0 / 63.0) continue;
        for (std::size_t c = 0; c < 3; ++c) err += std::abs(back[(c * 64 + y) * 32 + x] - img[(c * 64 + y) * 32 + x]);
        n += 3;
      }
    }
    REQUIRE(n > 0);
    worst = std::max(worst, err / static_cast<double>(n));
  }
  MESSAGE("worst mean absolute recovery error " << worst);
  CHECK(worst < 0.02);
}

TEST_CASE("generated corpus structure") {
  const GenSpec spec;
  const Corpus c = generate(spec);
  CHECK(c.samples.size() == 32 * 40);
  CHECK(c.split(Split::train).size() == 640);
  std::set<std::uint32_t> train_ids, test_ids;
  for (const auto* s : c.split(Split::train)) train_ids.insert(s->identity);
  for (const auto* s : c.split(Split::query)) test_ids.insert(s->identity);
  for (const auto* s : c.split(Split::gallery)) test_ids.insert(s->identity);
  CHECK(train_ids.size() == 16);
  CHECK(test_ids.size() == 16);
  for (auto id : train_ids) CHECK(test_ids.count(id) == 0);

  // Every test identity has a query and a gallery image from another camera.
  for (auto id : test_ids) {
    bool ok = false;
    for (const auto* q : c.split(Split::query))
      for (const auto* g : c.split(Split::gallery))
        ok = ok || (q->identity == id && g->identity == id && q->camera != g->camera);
    CHECK(ok);
  }

  auto ts = c.training_set();
  CHECK(ts.images.size() == 640);
  CHECK(c.num_train_identities() == 16);
  CHECK(*std::max_element(ts.labels.begin(), ts.labels.end()) == 15);

  // Scale is uniform on [0.6, 1.5]: P(scale > 1) = 5/9.
  std::size_t zoomed_out = 0;
  for (const auto& s : c.samples) zoomed_out += s.gt_perturb.theta[0] > 1.0;
  const double p = 5.0 / 9.0, n = static_cast<double>(c.samples.size());
  CHECK(std::abs(static_cast<double>(zoomed_out) / n - p) <= 3.0 * std::sqrt(p * (1 - p) / n));
  for (const auto& s : c.samples) {
    CHECK(s.gt_perturb.theta[0] == s.gt_perturb.theta[4]);
    CHECK(std::abs(s.gt_perturb.theta[2]) <= 0.25);
    CHECK(s.gt_perturb.theta[1] == 0.0);
  }
}

TEST_CASE("generation is deterministic on disk and round-trips through load") {
  TempDir a("pan_test_corpus_a"), b("pan_test_corpus_b");
  const GenSpec spec = small_spec();
  const Corpus mem = generate(spec, a.path);
  generate(spec, b.path);
  CHECK(read_file(a.path / "manifest.jsonl") == read_file(b.path / "manifest.jsonl"));
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a.path)) {
    if (!e.is_regular_file()) continue;
    ++files;
    CHECK(read_file(e.path()) == read_file(b.path / fs::relative(e.path(), a.path)));
  }
  CHECK(files == 30 + 1);

  const Corpus loaded = load_corpus(a.path);
  REQUIRE(loaded.samples.size() == mem.samples.size());
  for (std::size_t i = 0; i < mem.samples.size(); ++i) {
    CHECK(loaded.samples[i].identity == mem.samples[i].identity);
    CHECK(loaded.samples[i].camera == mem.samples[i].camera);
    CHECK(loaded.samples[i].split == mem.samples[i].split);
    CHECK(loaded.samples[i].gt_perturb == mem.samples[i].gt_perturb);
    CHECK(differing_fraction(loaded.samples[i].image, mem.samples[i].image, 0.5 / 255.0 + 1e-12) == 0.0);
  }
}

TEST_CASE("file name convention") {
  auto p = parse_sample_name("0002_c1_000451.png");
  REQUIRE(p.has_value());
  CHECK(p->first == 2);
  CHECK(p->second == 1);
  CHECK(parse_sample_name("0751_c6s2_018.png")->second == 6);
  CHECK_FALSE(parse_sample_name("readme.txt").has_value());
  CHECK_FALSE(parse_sample_name("abc_c1_01.png").has_value());
  CHECK_FALSE(parse_sample_name("0002_01.png").has_value());
}

TEST_CASE("loading folders without a manifest") {
  TempDir d("pan_test_corpus_scan");
  Tensor img({3, 4, 2}, 0.5);
  write_png(d.path / "query" / "0003_c1_000001.png", img);
  write_png(d.path / "gallery" / "0003_c2_000002.png", img);
  write_png(d.path / "gallery" / "0004_c1_000003.png", img);
  std::ofstream(d.path / "gallery" / "notes.png") << "x";
  std::ofstream(d.path / "gallery" / "0005_c1_broken.png") << "not a png";
  Corpus c = load_corpus(d.path);
  CHECK(c.split(Split::query).size() == 1);
  CHECK(c.split(Split::gallery).size() == 2);
  CHECK(c.split(Split::gallery)[1]->identity == 4);
  CHECK(c.split(Split::gallery)[0]->camera == 2);
  CHECK(c.samples[0].gt_perturb == AffineParams::identity());
  REQUIRE(c.rejected.size() == 2);

  TempDir flat("pan_test_corpus_flat");
  write_png(flat.path / "0001_c3_x.png", img);
  Corpus f = load_corpus(flat.path);
  REQUIRE(f.samples.size() == 1);
  CHECK(f.samples[0].split == Split::gallery);
  CHECK(f.samples[0].camera == 3);

  CHECK_THROWS_AS(load_corpus(d.path / "missing"), IoError);
}

TEST_CASE("malformed manifest lines are reported with line numbers") {
  TempDir d("pan_test_corpus_bad");
  write_png(d.path / "train" / "0000_c0_000000.png", Tensor({3, 4, 2}, 0.2));
  write_file_atomic(d.path / "manifest.jsonl",
                    "{\"path\":\"train/0000_c0_000000.png\",\"identity\":0,\"camera\":0,\"split\":\"train\"}\n"
                    "\n"
                    "{\"path\":\"train/0000_c0_000000.png\",\"identity\":0,\"camera\":0,\"split\":\"sideways\"}\n"
                    "not json\n");
  try {
    load_corpus(d.path);
    FAIL("expected a DataError");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("manifest.jsonl:3") != std::string::npos);
    CHECK(msg.find("manifest.jsonl:4") != std::string::npos);
    CHECK(msg.find("manifest.jsonl:1:") == std::string::npos);
  }
}

TEST_CASE("GenSpec validation and JSON") {
  GenSpec s;
  CHECK_NOTHROW(s.validate());
  GenSpec bad = s;
  bad.scale_lo = 0.0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = s;
  bad.scale_lo = 2.0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  nlohmann::json j = s;
  CHECK(nlohmann::json(j.get<GenSpec>()) == j);
}
