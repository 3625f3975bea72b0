#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "doctest.h"
#include "json.hpp"
#include "mspfn/dataset.hpp"
#include "mspfn/image_io.hpp"
#include "mspfn/ops.hpp"
#include "mspfn/synth.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"

using namespace mspfn;
using oracle::random_tensor;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

double mean_of(const Tensor& t) {
  double s = 0;
  for (real v : t.data()) s += v;
  return s / static_cast<double>(t.numel());
}

// Mean product of the layer with itself shifted by (dy, dx).
double autocorr(const Tensor& layer, int dy, int dx) {
  double s = 0;
  int n = 0;
  for (int y = 0; y < layer.h(); ++y)
    for (int x = 0; x < layer.w(); ++x) {
      const int y2 = y + dy, x2 = x + dx;
      if (y2 < 0 || y2 >= layer.h() || x2 < 0 || x2 >= layer.w()) continue;
      s += layer.at(0, 0, y, x) * layer.at(0, 0, y2, x2);
      ++n;
    }
  return s / n;
}

}  // namespace

TEST_CASE("image round trip stays within 8-bit quantisation") {
  test::TempDir dir;
  const Tensor img = random_tensor({1, 3, 13, 17}, 3, 0, 1);
  for (const char* ext : {".ppm", ".png"}) {
    const fs::path p = dir.path() / (std::string("img") + ext);
    save_image(img, p);
    const Tensor back = load_image(p);
    REQUIRE(back.shape() == img.shape());
    CHECK(max_abs_diff(back, img) <= 1.0 / 510 + 1e-7);
  }
  // Grayscale saves are replicated to RGB on load.
  const Tensor gray = random_tensor({1, 1, 5, 4}, 4, 0, 1);
  save_image(gray, dir.path() / "g.png");
  const Tensor g3 = load_image(dir.path() / "g.png");
  CHECK(g3.shape() == Shape{1, 3, 5, 4});
  CHECK(std::abs(g3.at(0, 2, 3, 1) - gray.at(0, 0, 3, 1)) <= 1.0 / 510 + 1e-7);
}

TEST_CASE("red fixture and error paths") {
  const Tensor red = load_image(MSPFN_FIXTURE_DIR "/red_2x2.ppm");
  REQUIRE(red.shape() == Shape{1, 3, 2, 2});
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) {
      CHECK(red.at(0, 0, y, x) == 1);
      CHECK(red.at(0, 1, y, x) == 0);
      CHECK(red.at(0, 2, y, x) == 0);
    }
  try {
    (void)load_image("/nonexistent/dir/missing.ppm");
    FAIL("expected an error");
  } catch (const ImageIoError& e) {
    CHECK(std::string(e.what()).find("/nonexistent/dir/missing.ppm") != std::string::npos);
    CHECK(e.path() == fs::path("/nonexistent/dir/missing.ppm"));
  }
  test::TempDir dir;
  std::ofstream(dir.path() / "x.bmp") << "BM";
  CHECK_THROWS_AS((void)load_image(dir.path() / "x.bmp"), ImageIoError);
  std::ofstream(dir.path() / "bad.ppm") << "P3\n1 1\n255\n0 0 0\n";
  CHECK_THROWS_AS((void)load_image(dir.path() / "bad.ppm"), ImageIoError);
  std::ofstream(dir.path() / "short.ppm", std::ios::binary) << "P6\n4 4\n255\n\x01\x02";
  CHECK_THROWS_AS((void)load_image(dir.path() / "short.ppm"), ImageIoError);
  CHECK_THROWS_AS(save_image(red, dir.path() / "x.jpg"), ImageIoError);
}

TEST_CASE("synth_rain degenerate parameters") {
  const Tensor clean = procedural_scene(32, 32, 1);
  RainParams p;
  p.density = 0;
  CHECK(bit_equal(synth_rain(clean, p), clean));
  p = RainParams{};
  p.intensity = 0;
  CHECK(bit_equal(synth_rain(clean, p), clean));
  p = RainParams{};
  p.angle_deg = 50;
  CHECK_THROWS(synth_rain(clean, p));
}

TEST_CASE("synth_rain brightens along the streak direction") {
  const Tensor clean = procedural_scene(96, 96, 2);
  for (double angle : {-30.0, -10.0, 0.0, 20.0, 35.0}) {
    RainParams p;
    p.density = 0.02;
    p.intensity = 0.8;
    p.angle_deg = angle;
    p.streak_length_px = 16;
    p.seed = 77;
    const Tensor rain = synth_rain(clean, p);
    CHECK(mean_of(rain) > mean_of(clean));
    for (real v : rain.data()) {
      CHECK(v >= 0);
      CHECK(v <= 1);
    }
    // Rotation oracle: rotate a vertical lag of radius 8 through candidate
    // angles and find where the autocorrelation peaks.
    const Tensor layer = streak_layer(96, 96, p);
    double best = -1, best_phi = 0;
    for (int phi = -45; phi <= 45; ++phi) {
      const double r = phi * std::numbers::pi / 180;
      const double v = autocorr(layer, static_cast<int>(std::lround(8 * std::cos(r))),
                                static_cast<int>(std::lround(8 * std::sin(r))));
      if (v > best) {
        best = v;
        best_phi = phi;
      }
    }
    INFO("angle " << angle << " peak " << best_phi);
    CHECK(std::abs(best_phi - angle) <= 8.0);
  }
}

TEST_CASE("streak coverage tracks density") {
  for (double density : {0.005, 0.01, 0.02, 0.035, 0.05}) {
    for (int len : {4, 8, 12}) {
      RainParams p;
      p.density = density;
      p.streak_length_px = len;
      p.intensity = 0.7;
      p.angle_deg = 15;
      p.seed = 1234 + len;
      const Tensor layer = streak_layer(256, 256, p);
      std::size_t lit = 0;
      for (real v : layer.data()) lit += v > 0.1 * p.intensity;
      const double frac = static_cast<double>(lit) / static_cast<double>(layer.numel());
      INFO("density " << density << " length " << len << " coverage " << frac);
      CHECK(std::abs(frac - density) <= 0.3 * density);
    }
  }
}

TEST_CASE("synthesis is pure in its parameters") {
  RainParams p;
  p.seed = 99;
  CHECK(bit_equal(streak_layer(40, 50, p), streak_layer(40, 50, p)));
  RainParams q = p;
  q.seed = 100;
  CHECK_FALSE(bit_equal(streak_layer(40, 50, p), streak_layer(40, 50, q)));
  CHECK(bit_equal(procedural_scene(20, 30, 5), procedural_scene(20, 30, 5)));
  for (real v : procedural_scene(20, 30, 5).data()) {
    CHECK(v >= 0);
    CHECK(v <= 1);
  }
}

TEST_CASE("make_dataset") {
  test::TempDir dir;
  write_scenes(dir.path() / "clean", 3, 48, 40, 7);
  SynthOptions opt;
  opt.count = 4;
  opt.seed = 5;
  const auto m = make_dataset(dir.path() / "clean", dir.path() / "a", opt);
  REQUIRE(m.entries.size() == 4);
  CHECK(m.count(Split::Train) == 4);
  for (const auto& e : m.entries) {
    CHECK(fs::exists(e.clean));
    CHECK(fs::exists(e.rain));
    const Tensor c = load_image(e.clean), r = load_image(e.rain);
    CHECK(c.shape() == r.shape());
    for (std::size_t i = 0; i < c.numel(); ++i) CHECK(r.data()[i] >= c.data()[i]);
  }
  (void)make_dataset(dir.path() / "clean", dir.path() / "b", opt);
  for (const char* f : {"manifest.json", "rain_0000.ppm", "rain_0003.ppm", "clean_0002.ppm"})
    CHECK(slurp(dir.path() / "a" / f) == slurp(dir.path() / "b" / f));

  const auto loaded = load_manifest(dir.path() / "a" / "manifest.json");
  REQUIRE(loaded.entries.size() == 4);
  CHECK(fs::equivalent(loaded.entries[2].rain, m.entries[2].rain));

  opt.test_fraction = 0.5;
  opt.format = "png";
  const auto split = make_dataset(dir.path() / "clean", dir.path() / "c", opt);
  CHECK(split.count(Split::Test) == 2);
  CHECK(split.select(Split::Test).size() == 2);
  CHECK(split.entries[0].rain.extension() == ".png");

  fs::create_directories(dir.path() / "empty");
  CHECK_THROWS_AS(make_dataset(dir.path() / "empty", dir.path() / "d", SynthOptions{}), DatasetError);
}

TEST_CASE("manifest validation") {
  test::TempDir dir;
  const fs::path mp = dir.path() / "m.json";
  std::ofstream(mp) << R"([{"clean": "a.ppm", "rain": "b.ppm", "split": "train"}])";
  try {
    (void)load_manifest(mp);
    FAIL("expected an error");
  } catch (const DatasetError& e) {
    CHECK(std::string(e.what()).find("a.ppm") != std::string::npos);
  }
  save_image(random_tensor({1, 3, 4, 4}, 1, 0, 1), dir.path() / "a.ppm");
  save_image(random_tensor({1, 3, 4, 5}, 1, 0, 1), dir.path() / "b.ppm");
  CHECK_THROWS_AS((void)load_manifest(mp), DatasetError);
  std::ofstream(mp) << R"({"clean": "a.ppm"})";
  CHECK_THROWS_AS((void)load_manifest(mp), DatasetError);
  CHECK_THROWS_AS((void)load_manifest(dir.path() / "none.json"), DatasetError);
}

TEST_CASE("patch sampler") {
  test::TempDir dir;
  write_scenes(dir.path() / "clean", 2, 64, 64, 3);
  SynthOptions opt;
  opt.count = 3;
  const auto m = make_dataset(dir.path() / "clean", dir.path() / "d", opt);

  PatchSampler full(m, 64, 2, 1);
  for (int k = 0; k < 3; ++k) {
    const Batch b = full.next();
    REQUIRE(b.rain.shape() == Shape{2, 3, 64, 64});
    bool found = false;
    const auto d = b.rain.data();
    const Tensor first({1, 3, 64, 64}, std::vector<real>(d.begin(), d.begin() + 3 * 64 * 64));
    for (const auto& e : m.entries) found = found || bit_equal(load_image(e.rain), first);
    CHECK(found);
  }

  PatchSampler a(m, 24, 3, 9), b(m, 24, 3, 9);
  for (int k = 0; k < 4; ++k) {
    const Batch x = a.next(), y = b.next();
    CHECK(bit_equal(x.rain, y.rain));
    CHECK(bit_equal(x.clean, y.clean));
  }
  // The same crop window is applied to both images of a pair.
  PatchSampler s(m, 16, 1, 4);
  const Batch bt = s.next();
  const Tensor diff = sub(bt.rain, bt.clean);
  bool matched = false;
  for (const auto& e : m.entries) {
    const Tensor full_diff = sub(load_image(e.rain), load_image(e.clean));
    for (int y = 0; y + 16 <= 64 && !matched; ++y)
      for (int x = 0; x + 16 <= 64 && !matched; ++x)
        matched = bit_equal(crop_region(full_diff, y, x, 16, 16), diff) &&
                  bit_equal(crop_region(load_image(e.clean), y, x, 16, 16), bt.clean);
  }
  CHECK(matched);

  (void)a.next();  // restore mid-epoch
  const auto state = a.state();
  const Batch n1 = a.next(), n2 = a.next();
  a.set_state(state);
  CHECK(bit_equal(a.next().rain, n1.rain));
  CHECK(bit_equal(a.next().rain, n2.rain));

  // Whole-image patches with batch 1: every pair appears exactly once per epoch.
  PatchSampler epoch(m, 64, 1, 4);
  std::vector<Tensor> images;
  for (const auto& e : m.entries) images.push_back(load_image(e.rain));
  for (int round = 0; round < 3; ++round) {
    std::vector<int> seen(images.size(), 0);
    for (std::size_t k = 0; k < images.size(); ++k) {
      const Tensor t = epoch.next().rain;
      for (std::size_t i = 0; i < images.size(); ++i) seen[i] += bit_equal(images[i], t);
    }
    CHECK(seen == std::vector<int>(images.size(), 1));
  }

  CHECK_THROWS_AS(PatchSampler(m, 65, 1, 0), DatasetError);
  CHECK_THROWS_AS(PatchSampler(m, 16, 1, 0, Split::Test), DatasetError);
}
