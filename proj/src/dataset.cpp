#include "mspfn/dataset.hpp"

#include <algorithm>
#include <numeric>
#include <cstdio>
#include <fstream>

#include "json.hpp"
#include "mspfn/image_io.hpp"

namespace mspfn {
inline namespace MSPFN_ABI {

namespace fs = std::filesystem;

std::size_t DatasetManifest::count(Split s) const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [s](const auto& e) { return e.split == s; }));
}

std::vector<ManifestEntry> DatasetManifest::select(Split s) const {
  std::vector<ManifestEntry> out;
  std::copy_if(entries.begin(), entries.end(), std::back_inserter(out),
               [s](const auto& e) { return e.split == s; });
  return out;
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError("malformed manifest " + path.string() + ": " + e.what());
  }
  if (!j.is_array()) throw DatasetError("manifest " + path.string() + " is not a JSON array");
  const fs::path base = path.parent_path();
  DatasetManifest m;
  for (const auto& item : j) {
    ManifestEntry e;
    try {
      e.clean = base / item.at("clean").get<std::string>();
      e.rain = base / item.at("rain").get<std::string>();
      const auto split = item.at("split").get<std::string>();
      if (split == "train") e.split = Split::Train;
      else if (split == "test") e.split = Split::Test;
      else throw DatasetError("unknown split '" + split + "' in " + path.string());
    } catch (const nlohmann::json::exception& ex) {
      throw DatasetError("malformed manifest entry in " + path.string() + ": " + ex.what());
    }
    for (const auto& p : {e.clean, e.rain})
      if (!fs::exists(p)) throw DatasetError("manifest " + path.string() + " references missing file " + p.string());
    const Tensor a = load_image(e.clean);
    const Tensor b = load_image(e.rain);
    if (!(a.shape() == b.shape())) {
      throw DatasetError("pair " + e.clean.string() + " / " + e.rain.string() +
                         " has mismatched extents " + a.shape().str() + " vs " + b.shape().str());
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

void save_manifest(const DatasetManifest& m, const fs::path& path) {
  const fs::path base = path.parent_path().empty() ? fs::path(".") : path.parent_path();
  nlohmann::json j = nlohmann::json::array();
  for (const auto& e : m.entries) {
    j.push_back({{"clean", fs::relative(e.clean, base).generic_string()},
                 {"rain", fs::relative(e.rain, base).generic_string()},
                 {"split", e.split == Split::Train ? "train" : "test"}});
  }
  std::ofstream out(path);
  if (!out) throw DatasetError("cannot write manifest " + path.string());
  out << j.dump(2) << "\n";
}

void RainRanges::validate() const {
  RainParams lo{angle_min, length_min, density_min, intensity_min, 0};
  RainParams hi{angle_max, length_max, density_max, intensity_max, 0};
  lo.validate();
  hi.validate();
  if (angle_min > angle_max || length_min > length_max || density_min > density_max ||
      intensity_min > intensity_max) {
    throw std::invalid_argument("rain parameter range has min > max");
  }
}

RainParams RainRanges::sample(Rng& rng) const {
  RainParams p;
  p.angle_deg = rng.uniform(angle_min, angle_max);
  p.streak_length_px =
      length_min + static_cast<int>(rng.below(static_cast<std::uint64_t>(length_max - length_min + 1)));
  p.density = rng.uniform(density_min, density_max);
  p.intensity = rng.uniform(intensity_min, intensity_max);
  p.seed = rng.next_u64();
  return p;
}

namespace {

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DatasetError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".ppm" || ext == ".png") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string numbered(const char* stem, std::size_t i, const std::string& ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%04zu.%s", stem, i, ext.c_str());
  return buf;
}

}  // namespace

DatasetManifest make_dataset(const fs::path& clean_dir, const fs::path& out_dir,
                             const SynthOptions& opt) {
  opt.ranges.validate();
  if (opt.format != "ppm" && opt.format != "png") {
    throw DatasetError("unsupported output format '" + opt.format + "'");
  }
  const auto sources = list_images(clean_dir);
  if (sources.empty()) throw DatasetError("no loadable images in " + clean_dir.string());
  fs::create_directories(out_dir);

  Rng rng(opt.seed);
  const auto n_test = static_cast<std::size_t>(std::floor(opt.count * opt.test_fraction));
  DatasetManifest m;
  for (std::size_t i = 0; i < opt.count; ++i) {
    const Tensor clean = load_image(sources[i % sources.size()]);
    const RainParams p = opt.ranges.sample(rng);
    const Tensor rain = synth_rain(clean, p);
    ManifestEntry e;
    e.clean = out_dir / numbered("clean", i, opt.format);
    e.rain = out_dir / numbered("rain", i, opt.format);
    e.split = i + n_test >= opt.count ? Split::Test : Split::Train;
    save_image(clean, e.clean);
    save_image(rain, e.rain);
    m.entries.push_back(e);
  }
  save_manifest(m, out_dir / "manifest.json");
  return m;
}

void write_scenes(const fs::path& dir, std::size_t count, int height, int width,
                  std::uint64_t seed) {
  fs::create_directories(dir);
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    save_image(procedural_scene(height, width, rng.next_u64()), dir / numbered("scene", i, "ppm"));
  }
}

Tensor crop_region(const Tensor& img, int y0, int x0, int height, int width) {
  const Shape& s = img.shape();
  if (y0 < 0 || x0 < 0 || y0 + height > s.h || x0 + width > s.w) {
    throw ShapeError("crop_region outside image " + s.str());
  }
  Tensor out({s.n, s.c, height, width});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < height; ++y)
        std::copy_n(img.ptr() + img.offset(n, c, y0 + y, x0), width,
                    out.mutable_ptr() + out.offset(n, c, y, 0));
  return out;
}

PatchSampler::PatchSampler(const DatasetManifest& manifest, int patch, int batch,
                           std::uint64_t seed, Split split)
    : patch_(patch), batch_(batch), rng_(seed), order_rng_(seed ^ 0x0bde7ULL) {
  if (patch < 1 || batch < 1) throw std::invalid_argument("patch and batch must be positive");
  for (const auto& e : manifest.select(split)) {
    rain_.push_back(load_image(e.rain));
    clean_.push_back(load_image(e.clean));
    const Shape& s = rain_.back().shape();
    if (patch > s.h || patch > s.w) {
      throw DatasetError("patch " + std::to_string(patch) + " larger than image " + e.rain.string() +
                         " " + s.str());
    }
  }
  if (rain_.empty()) throw DatasetError("manifest has no pairs in the requested split");
  shuffle();
}

void PatchSampler::shuffle() {
  epoch_start_ = order_rng_.state();
  order_.resize(rain_.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  // Fisher-Yates on our own generator; std::shuffle is not portable across libraries.
  for (std::size_t i = order_.size(); i > 1; --i) {
    std::swap(order_[i - 1], order_[static_cast<std::size_t>(order_rng_.below(i))]);
  }
  pos_ = 0;
}

void PatchSampler::set_state(const SamplerState& s) {
  if (s.pos > rain_.size()) throw DatasetError("sampler position beyond the number of pairs");
  order_rng_.set_state(s.order);
  shuffle();
  pos_ = s.pos;
  rng_.set_state(s.crop);
}

void to_json(nlohmann::json& j, const SamplerState& s) {
  j = nlohmann::json{{"crop", s.crop}, {"order", s.order}, {"pos", s.pos}};
}

void from_json(const nlohmann::json& j, SamplerState& s) {
  j.at("crop").get_to(s.crop);
  j.at("order").get_to(s.order);
  j.at("pos").get_to(s.pos);
}

Batch PatchSampler::next() {
  Batch b{Tensor({batch_, 3, patch_, patch_}), Tensor({batch_, 3, patch_, patch_})};
  const std::size_t per = static_cast<std::size_t>(3) * patch_ * patch_;
  for (int i = 0; i < batch_; ++i) {
    if (pos_ == order_.size()) shuffle();
    const std::size_t k = order_[pos_++];
    const Shape& s = rain_[k].shape();
    const int y0 = static_cast<int>(rng_.below(static_cast<std::uint64_t>(s.h - patch_ + 1)));
    const int x0 = static_cast<int>(rng_.below(static_cast<std::uint64_t>(s.w - patch_ + 1)));
    const Tensor r = crop_region(rain_[k], y0, x0, patch_, patch_);
    const Tensor c = crop_region(clean_[k], y0, x0, patch_, patch_);
    std::copy_n(r.ptr(), per, b.rain.mutable_ptr() + i * per);
    std::copy_n(c.ptr(), per, b.clean.mutable_ptr() + i * per);
  }
  return b;
}

}  // namespace MSPFN_ABI
}  // namespace mspfn
