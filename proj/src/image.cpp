#include "ciper/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace ciper {

namespace {

std::uint8_t quantize(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

// Skips whitespace and '#' comments in a netpbm header.
int read_header_int(std::istream& in) {
  int c = in.peek();
  while (c != EOF) {
    if (std::isspace(c)) {
      in.get();
    } else if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else {
      break;
    }
    c = in.peek();
  }
  int value = -1;
  if (!(in >> value)) throw MalformedFileError("netpbm: bad header");
  return value;
}

}  // namespace

void write_netpbm(const std::filesystem::path& path, const ImageTensor& image) {
  if (image.channels != 1 && image.channels != 3)
    throw ShapeError("write_netpbm: need 1 or 3 channels, got " + std::to_string(image.channels));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_netpbm: cannot open " + path.string());
  out << (image.channels == 3 ? "P6" : "P5") << '\n' << image.width << ' ' << image.height << "\n255\n";
  std::vector<std::uint8_t> bytes;
  bytes.reserve(static_cast<size_t>(image.data.size()));
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < image.channels; ++c) bytes.push_back(quantize(image.at(c, y, x)));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ImageTensor read_netpbm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_netpbm: cannot open " + path.string());
  std::string magic;
  in >> magic;
  int channels = magic == "P6" ? 3 : magic == "P5" ? 1 : 0;
  if (channels == 0) throw MalformedFileError("read_netpbm: unsupported magic " + magic);
  const int width = read_header_int(in);
  const int height = read_header_int(in);
  const int maxval = read_header_int(in);
  if (width <= 0 || height <= 0 || maxval != 255) throw MalformedFileError("read_netpbm: bad header");
  in.get();
  std::vector<std::uint8_t> bytes(static_cast<size_t>(width) * height * channels);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw MalformedFileError("read_netpbm: truncated");
  ImageTensor image(channels, height, width);
  size_t i = 0;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < channels; ++c) image.at(c, y, x) = static_cast<float>(bytes[i++]) / 255.0f;
  return image;
}

ImageTensor resize_bilinear(const ImageTensor& image, int out_height, int out_width) {
  if (out_height <= 0 || out_width <= 0) throw PreconditionError("resize_bilinear: empty output size");
  if (out_height == image.height && out_width == image.width) return image;
  ImageTensor out(image.channels, out_height, out_width);
  const double sy = static_cast<double>(image.height) / out_height;
  const double sx = static_cast<double>(image.width) / out_width;
  for (int y = 0; y < out_height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const float wy = static_cast<float>(fy - y0);
    for (int x = 0; x < out_width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const float wx = static_cast<float>(fx - x0);
      for (int c = 0; c < image.channels; ++c) {
        const float top = image.at(c, y0, x0) * (1.0f - wx) + image.at(c, y0, x1) * wx;
        const float bottom = image.at(c, y1, x0) * (1.0f - wx) + image.at(c, y1, x1) * wx;
        out.at(c, y, x) = top * (1.0f - wy) + bottom * wy;
      }
    }
  }
  return out;
}

}  // namespace ciper
