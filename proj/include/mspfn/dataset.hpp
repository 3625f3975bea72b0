#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "mspfn/rng.hpp"
#include "mspfn/synth.hpp"
#include "mspfn/tensor.hpp"

namespace mspfn {
inline namespace MSPFN_ABI {

enum class Split { Train, Test };

struct ManifestEntry {
  std::filesystem::path clean;  // resolved (absolute or relative to the cwd)
  std::filesystem::path rain;
  Split split = Split::Train;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  [[nodiscard]] std::size_t count(Split s) const;
  [[nodiscard]] std::vector<ManifestEntry> select(Split s) const;
};

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reads a JSON array of {"clean", "rain", "split"}; relative paths resolve
/// against the manifest's directory. Every file must exist and each pair
/// must load to matching extents.
DatasetManifest load_manifest(const std::filesystem::path& path);
/// Writes paths relative to the manifest's directory.
void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);

struct RainRanges {
  double angle_min = -20.0, angle_max = 20.0;
  int length_min = 4, length_max = 12;
  double density_min = 0.01, density_max = 0.04;
  double intensity_min = 0.5, intensity_max = 0.9;

  void validate() const;
  RainParams sample(Rng& rng) const;
};

struct SynthOptions {
  std::size_t count = 4;
  RainRanges ranges;
  std::uint64_t seed = 0;
  double test_fraction = 0.0;  // trailing pairs assigned to the test split
  std::string format = "ppm";
};

/// Writes `count` clean/rain pairs plus manifest.json into `out_dir`, cycling
/// through the images of `clean_dir` in sorted order.
DatasetManifest make_dataset(const std::filesystem::path& clean_dir,
                             const std::filesystem::path& out_dir, const SynthOptions& opt);

/// Writes `count` procedural scenes into `dir` (scene_0000.ppm, ...).
void write_scenes(const std::filesystem::path& dir, std::size_t count, int height, int width,
                  std::uint64_t seed);

struct Batch {
  Tensor rain;   // [B,3,P,P]
  Tensor clean;  // [B,3,P,P]
};

/// Deterministic stream of aligned random crops from the pairs of one split.
/// Resumable sampler position: crop-offset stream, ordering stream as of the
/// start of the current epoch, and draws taken within that epoch.
struct SamplerState {
  Rng::State crop{};
  Rng::State order{};
  std::uint64_t pos = 0;

  friend bool operator==(const SamplerState&, const SamplerState&) = default;
};

void to_json(nlohmann::json& j, const SamplerState& s);
void from_json(const nlohmann::json& j, SamplerState& s);

/// Random crops from the loaded pairs. Pairs are visited in shuffled epochs
/// (each pair once per epoch) so short windows see a balanced mix.
class PatchSampler {
 public:
  PatchSampler(const DatasetManifest& manifest, int patch, int batch, std::uint64_t seed,
               Split split = Split::Train);

  Batch next();

  [[nodiscard]] SamplerState state() const { return {rng_.state(), epoch_start_, pos_}; }
  void set_state(const SamplerState& s);
  [[nodiscard]] std::size_t pair_count() const { return rain_.size(); }

 private:
  void shuffle();

  std::vector<Tensor> rain_;
  std::vector<Tensor> clean_;
  int patch_;
  int batch_;
  Rng rng_;
  Rng order_rng_;
  Rng::State epoch_start_{};
  std::vector<std::size_t> order_;
  std::uint64_t pos_ = 0;
};

/// Crop of a [1,C,H,W] image.
Tensor crop_region(const Tensor& img, int y0, int x0, int height, int width);

}  // namespace MSPFN_ABI
}  // namespace mspfn
