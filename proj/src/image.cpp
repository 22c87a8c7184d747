#include "xedit/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

namespace xedit {

unsigned char to_byte(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<unsigned char>(std::lround(c * 255.0f));
}

Image quantize(const Image& img) {
  Image out = img;
  for (auto& v : out.pixels) v = from_byte(to_byte(v));
  return out;
}

void write_ppm(const std::filesystem::path& path, const Image& img) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ImageError("cannot open '" + path.string() + "' for writing");
  os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  std::string bytes(img.pixels.size(), '\0');
  std::transform(img.pixels.begin(), img.pixels.end(), bytes.begin(),
                 [](float v) { return static_cast<char>(to_byte(v)); });
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw ImageError("write failed for '" + path.string() + "'");
}

namespace {

// Reads one header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& is) {
  std::string tok;
  int ch;
  while ((ch = is.get()) != EOF) {
    if (ch == '#') {
      while ((ch = is.get()) != EOF && ch != '\n') {
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

}  // namespace

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ImageError("cannot open image '" + path.string() + "'");
  const std::string magic = next_token(is);
  if (magic != "P6") throw ImageError("'" + path.string() + "' is not a binary PPM (P6)");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(next_token(is));
    h = std::stoul(next_token(is));
    maxval = std::stoul(next_token(is));
  } catch (const std::exception&) {
    throw ImageError("malformed PPM header in '" + path.string() + "'");
  }
  if (w == 0 || h == 0 || maxval != 255) {
    throw ImageError("unsupported PPM geometry or depth in '" + path.string() + "'");
  }
  std::string bytes(w * h * 3, '\0');
  is.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(is.gcount()) != bytes.size()) {
    throw ImageError("truncated pixel data in '" + path.string() + "'");
  }
  Image img(h, w);
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    img.pixels[i] = from_byte(static_cast<unsigned char>(bytes[i]));
  }
  return img;
}

}  // namespace xedit
