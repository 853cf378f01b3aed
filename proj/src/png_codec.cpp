#include "canopy/error.hpp"
#include "canopy/raster.hpp"

#include <png.h>

#include <cstring>

namespace canopy {

RasterImage read_png(const std::filesystem::path& path) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
        throw IoError("cannot read PNG " + path.string() + ": " + image.message);
    }
    image.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> data(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, data.data(), 0, nullptr)) {
        png_image_free(&image);
        throw IoError("cannot decode PNG " + path.string() + ": " + image.message);
    }
    return RasterImage(static_cast<int>(image.width), static_cast<int>(image.height), 3,
                       std::move(data));
}

void write_png(const RasterImage& raster, const std::filesystem::path& path) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(raster.width());
    image.height = static_cast<png_uint_32>(raster.height());
    switch (raster.channels()) {
    case 1: image.format = PNG_FORMAT_GRAY; break;
    case 3: image.format = PNG_FORMAT_RGB; break;
    case 4: image.format = PNG_FORMAT_RGBA; break;
    default:
        throw IoError("cannot write " + std::to_string(raster.channels()) +
                      "-channel raster as PNG");
    }
    if (!png_image_write_to_file(&image, path.c_str(), 0, raster.data().data(), 0, nullptr)) {
        throw IoError("cannot write PNG " + path.string() + ": " + image.message);
    }
}

} // namespace canopy
