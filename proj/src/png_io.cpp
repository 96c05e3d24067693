#include "cebsnet/png_io.hpp"

#include <png.h>

namespace cebsnet {

ImageU8 read_png(const std::string& path, i64 channels) {
  check(channels == 1 || channels == 3, "read_png: channels must be 1 or 3");
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw IoError("read_png: cannot open '" + path + "': " + image.message);
  }
  image.format = (channels == 3) ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  ImageU8 out;
  out.width = image.width;
  out.height = image.height;
  out.channels = channels;
  out.pixels.resize(static_cast<size_t>(out.size()));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw IoError("read_png: failed to decode '" + path + "': " +
                  image.message);
  }
  return out;
}

void write_png(const std::string& path, const ImageU8& img) {
  check(img.channels == 1 || img.channels == 3,
        "write_png: channels must be 1 or 3");
  check(img.width > 0 && img.height > 0, "write_png: empty image");
  check(static_cast<i64>(img.pixels.size()) == img.size(),
        "write_png: pixel buffer size mismatch");
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = (img.channels == 3) ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0,
                               nullptr)) {
    throw IoError("write_png: failed to write '" + path + "': " +
                  image.message);
  }
}

}  // namespace cebsnet
