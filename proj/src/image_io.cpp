#include "mspfn/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <vector>

namespace mspfn {
inline namespace MSPFN_ABI {

namespace {

std::string lower_ext(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e;
}

std::uint8_t quantize(real v) {
  const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

Tensor from_interleaved(const std::vector<std::uint8_t>& px, int h, int w, int channels) {
  Tensor img({1, 3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const int src = channels == 1 ? 0 : c;
        const std::size_t i = (static_cast<std::size_t>(y) * w + x) * channels + src;
        img.at(0, c, y, x) = static_cast<real>(px[i] / 255.0);
      }
  return img;
}

std::vector<std::uint8_t> to_interleaved(const Tensor& img) {
  const Shape& s = img.shape();
  std::vector<std::uint8_t> px(static_cast<std::size_t>(s.h) * s.w * 3);
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x)
      for (int c = 0; c < 3; ++c) {
        px[(static_cast<std::size_t>(y) * s.w + x) * 3 + c] =
            quantize(img.at(0, s.c == 1 ? 0 : c, y, x));
      }
  return px;
}

// Next PPM header token, skipping whitespace and '#' comments.
std::string ppm_token(std::istream& in) {
  std::string tok;
  int ch = 0;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

Tensor load_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageIoError(path, "cannot open file");
  if (ppm_token(in) != "P6") throw ImageIoError(path, "not a binary PPM (P6) file");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(ppm_token(in));
    h = std::stoi(ppm_token(in));
    maxval = std::stoi(ppm_token(in));
  } catch (const std::exception&) {
    throw ImageIoError(path, "malformed PPM header");
  }
  if (w <= 0 || h <= 0) throw ImageIoError(path, "invalid PPM extents");
  if (maxval != 255) throw ImageIoError(path, "unsupported PPM maxval " + std::to_string(maxval));
  std::vector<std::uint8_t> px(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (in.gcount() != static_cast<std::streamsize>(px.size())) {
    throw ImageIoError(path, "truncated PPM pixel data");
  }
  return from_interleaved(px, h, w, 3);
}

void save_ppm(const Tensor& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageIoError(path, "cannot open for writing");
  out << "P6\n" << img.w() << " " << img.h() << "\n255\n";
  const auto px = to_interleaved(img);
  out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!out) throw ImageIoError(path, "write failed");
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

Tensor load_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw ImageIoError(path, "cannot open file");
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_stdio(&image, fp.get())) {
    throw ImageIoError(path, std::string("PNG decode failed: ") + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, px.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw ImageIoError(path, "PNG decode failed: " + msg);
  }
  return from_interleaved(px, static_cast<int>(image.height), static_cast<int>(image.width), 3);
}

void save_png(const Tensor& img, const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.w());
  image.height = static_cast<png_uint_32>(img.h());
  image.format = PNG_FORMAT_RGB;
  const auto px = to_interleaved(img);
  if (!png_image_write_to_file(&image, path.c_str(), 0, px.data(), 0, nullptr)) {
    throw ImageIoError(path, std::string("PNG encode failed: ") + image.message);
  }
}

}  // namespace

Tensor load_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ImageIoError(path, "no such file");
  const std::string ext = lower_ext(path);
  if (ext == ".ppm") return load_ppm(path);
  if (ext == ".png") return load_png(path);
  throw ImageIoError(path, "unsupported image format '" + ext + "'");
}

void save_image(const Tensor& img, const std::filesystem::path& path) {
  const Shape& s = img.shape();
  if (s.n != 1 || (s.c != 3 && s.c != 1)) {
    throw ImageIoError(path, "cannot save tensor of shape " + s.str());
  }
  const std::string ext = lower_ext(path);
  if (ext == ".ppm") return save_ppm(img, path);
  if (ext == ".png") return save_png(img, path);
  throw ImageIoError(path, "unsupported image format '" + ext + "'");
}

}  // namespace MSPFN_ABI
}  // namespace mspfn
