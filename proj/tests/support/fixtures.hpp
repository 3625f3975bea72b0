#pragma once

#include <filesystem>

#include "mspfn/dataset.hpp"

namespace test {

/// Procedural scenes plus `pairs` synthetic rain pairs written under `root`.
inline mspfn::DatasetManifest synthetic_pairs(const std::filesystem::path& root, std::size_t pairs,
                                              int size = 64, std::uint64_t seed = 0) {
  mspfn::write_scenes(root / "clean", pairs, size, size, seed + 1000);
  mspfn::SynthOptions opt;
  opt.count = pairs;
  opt.seed = seed;
  return mspfn::make_dataset(root / "clean", root / "data", opt);
}

}  // namespace test
