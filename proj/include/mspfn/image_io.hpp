#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "mspfn/tensor.hpp"

namespace mspfn {
inline namespace MSPFN_ABI {

class ImageIoError : public std::runtime_error {
 public:
  ImageIoError(const std::filesystem::path& path, const std::string& what)
      : std::runtime_error(path.string() + ": " + what), path_(path) {}
  [[nodiscard]] const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Loads a PPM (P6, maxval <= 255) or 8-bit PNG as a [1,3,H,W] image in
/// [0,1]. Grayscale PNGs are replicated to three channels.
Tensor load_image(const std::filesystem::path& path);

/// Writes [1,3,H,W] (or [1,1,H,W]) as 8-bit PPM or PNG chosen by extension.
/// Values are clamped to [0,1] and rounded to the nearest level.
void save_image(const Tensor& img, const std::filesystem::path& path);

}  // namespace MSPFN_ABI
}  // namespace mspfn
