#include "cunsb/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <filesystem>

#include "cunsb/error.hpp"

namespace cunsb::io {

namespace fs = std::filesystem;

Image read_png(const std::string& path) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw DataError("cannot read PNG '" + path + "': " + img.message);
  }
  const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
  img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Image out;
  out.width = static_cast<int>(img.width);
  out.height = static_cast<int>(img.height);
  out.channels = color ? 3 : 1;
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw DataError("cannot decode PNG '" + path + "': " + msg);
  }
  return out;
}

void write_png(const std::string& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw std::invalid_argument("write_png: channels must be 1 or 3");
  if (image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * image.channels) {
    throw std::invalid_argument("write_png: pixel buffer size mismatch");
  }
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw DataError("cannot write PNG '" + path + "': " + img.message);
  }
}

namespace {

Tensor convert(const Image& image, double scale, double shift) {
  Tensor t(Shape{1, image.channels, image.height, image.width});
  for (int r = 0; r < image.height; ++r) {
    for (int c = 0; c < image.width; ++c) {
      for (int ch = 0; ch < image.channels; ++ch) t.at(0, ch, r, c) = image.at(r, c, ch) / 255.0 * scale + shift;
    }
  }
  return t;
}

}  // namespace

Tensor to_tensor(const Image& image) { return convert(image, 2.0, -1.0); }

Tensor to_unit_tensor(const Image& image) { return convert(image, 1.0, 0.0); }

Image to_image(const Tensor& x) {
  if (x.n() != 1 || (x.c() != 1 && x.c() != 3)) throw std::invalid_argument("to_image: expected (1, 1|3, H, W), got " + x.shape().str());
  Image out{x.w(), x.h(), x.c(), {}};
  out.pixels.resize(static_cast<std::size_t>(x.w()) * x.h() * x.c());
  std::size_t i = 0;
  for (int r = 0; r < x.h(); ++r) {
    for (int c = 0; c < x.w(); ++c) {
      for (int ch = 0; ch < x.c(); ++ch) {
        const double v = std::clamp((x.at(0, ch, r, c) + 1.0) * 0.5, 0.0, 1.0);
        out.pixels[i++] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  return out;
}

Image center_crop(const Image& image) {
  const int side = std::min(image.width, image.height);
  const int r0 = (image.height - side) / 2;
  const int c0 = (image.width - side) / 2;
  Image out{side, side, image.channels, {}};
  out.pixels.reserve(static_cast<std::size_t>(side) * side * image.channels);
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      for (int ch = 0; ch < image.channels; ++ch) out.pixels.push_back(image.at(r0 + r, c0 + c, ch));
    }
  }
  return out;
}

Image resize(const Image& image, int width, int height) {
  if (width < 1 || height < 1) throw std::invalid_argument("resize: target must be positive");
  if (width == image.width && height == image.height) return image;
  Image out{width, height, image.channels, {}};
  out.pixels.resize(static_cast<std::size_t>(width) * height * image.channels);
  const double sy = static_cast<double>(image.height) / height;
  const double sx = static_cast<double>(image.width) / width;
  std::size_t i = 0;
  for (int r = 0; r < height; ++r) {
    const double fy = std::clamp((r + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - y0;
    for (int c = 0; c < width; ++c) {
      const double fx = std::clamp((c + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - x0;
      for (int ch = 0; ch < image.channels; ++ch) {
        const double v = (1 - wy) * ((1 - wx) * image.at(y0, x0, ch) + wx * image.at(y0, x1, ch)) +
                         wy * ((1 - wx) * image.at(y1, x0, ch) + wx * image.at(y1, x1, ch));
        out.pixels[i++] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  }
  return out;
}

Image ingest(const Image& image, int size) {
  if (image.width == size && image.height == size) return image;
  return resize(center_crop(image), size, size);
}

Image tile(const std::vector<Image>& images, int columns) {
  if (images.empty() || columns < 1) throw std::invalid_argument("tile: nothing to tile");
  const Image& first = images.front();
  for (const Image& im : images) {
    if (im.width != first.width || im.height != first.height || im.channels != first.channels) {
      throw std::invalid_argument("tile: images differ in size");
    }
  }
  const int cols = std::min<int>(columns, static_cast<int>(images.size()));
  const int rows = (static_cast<int>(images.size()) + cols - 1) / cols;
  Image out{first.width * cols, first.height * rows, first.channels, {}};
  out.pixels.assign(static_cast<std::size_t>(out.width) * out.height * out.channels, 0);
  for (std::size_t k = 0; k < images.size(); ++k) {
    const int tr = static_cast<int>(k) / cols;
    const int tc = static_cast<int>(k) % cols;
    for (int r = 0; r < first.height; ++r) {
      const std::size_t dst = ((static_cast<std::size_t>(tr) * first.height + r) * out.width + tc * first.width) * out.channels;
      const std::size_t src = static_cast<std::size_t>(r) * first.width * first.channels;
      std::copy_n(images[k].pixels.begin() + static_cast<std::ptrdiff_t>(src), first.width * first.channels,
                  out.pixels.begin() + static_cast<std::ptrdiff_t>(dst));
    }
  }
  return out;
}

std::vector<std::string> list_pngs(const std::string& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw DataError("not a directory: '" + dir + "'");
  std::vector<std::string> out;
  for (const auto& entry : fs::directory_iterator(dir, ec)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (ext == ".png") out.push_back(entry.path().string());
  }
  if (ec) throw DataError("cannot list '" + dir + "': " + ec.message());
  std::sort(out.begin(), out.end());
  return out;
}

std::string stem(const std::string& path) { return fs::path(path).stem().string(); }

}  // namespace cunsb::io
