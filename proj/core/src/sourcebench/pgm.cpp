#include "protoaudit/sourcebench/pgm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

namespace protoaudit::sourcebench {

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(const std::vector<unsigned char>& bytes) : bytes_(bytes) {}

  std::string token() {
    skip_space_and_comments();
    std::string t;
    while (pos_ < bytes_.size() && !std::isspace(bytes_[pos_]) && bytes_[pos_] != '#') {
      t.push_back(static_cast<char>(bytes_[pos_++]));
    }
    if (t.empty()) throw FormatError("pgm: truncated header");
    return t;
  }

  std::size_t number(const char* what) {
    const std::string t = token();
    if (!std::all_of(t.begin(), t.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
      throw FormatError(std::string("pgm: bad ") + what + " '" + t + "'");
    }
    return static_cast<std::size_t>(std::stoull(t));
  }

  // Exactly one whitespace byte separates the header from binary data.
  void consume_single_space() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) throw FormatError("pgm: malformed header end");
    ++pos_;
  }

  std::size_t position() const { return pos_; }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<unsigned char>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("pgm: cannot open " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
  HeaderReader header(bytes);
  const std::string magic = header.token();
  if (magic == "P3" || magic == "P6") {
    throw FormatError("pgm: " + path.string() + " is a colour image (" + magic + "), expected grayscale");
  }
  if (magic != "P5" && magic != "P2") {
    throw FormatError("pgm: " + path.string() + " has unsupported magic '" + magic + "'");
  }
  GrayImage img;
  img.width = header.number("width");
  img.height = header.number("height");
  const std::size_t maxval = header.number("maxval");
  if (img.width == 0 || img.height == 0) throw FormatError("pgm: zero image dimension");
  if (maxval == 0 || maxval > 65535) throw FormatError("pgm: maxval out of range");
  img.maxval = static_cast<std::uint32_t>(maxval);
  const std::size_t count = img.width * img.height;
  img.pixels.resize(count);

  if (magic == "P2") {
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t v = header.number("pixel");
      if (v > maxval) throw FormatError("pgm: pixel exceeds maxval");
      img.pixels[i] = static_cast<std::uint16_t>(v);
    }
    return img;
  }
  header.consume_single_space();
  const std::size_t bpp = maxval > 255 ? 2 : 1;
  const std::size_t start = header.position();
  if (bytes.size() < start + count * bpp) throw FormatError("pgm: truncated pixel data in " + path.string());
  for (std::size_t i = 0; i < count; ++i) {
    std::uint16_t v = bytes[start + i * bpp];
    if (bpp == 2) v = static_cast<std::uint16_t>((v << 8) | bytes[start + i * 2 + 1]);
    if (v > maxval) throw FormatError("pgm: pixel exceeds maxval");
    img.pixels[i] = v;
  }
  return img;
}

void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               const std::vector<std::uint8_t>& pixels) {
  if (pixels.size() != width * height) throw std::invalid_argument("write_pgm: pixel count mismatch");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("write_pgm: cannot open " + path.string());
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!out) throw std::runtime_error("write_pgm: write failed for " + path.string());
}

std::uint8_t quantize(float v) {
  const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

void write_pgm(const std::filesystem::path& path, const numerics::Tensor& image) {
  std::size_t h = 0, w = 0;
  if (image.rank() == 2) {
    h = image.dim(0);
    w = image.dim(1);
  } else if (image.rank() == 3 && image.dim(0) == 1) {
    h = image.dim(1);
    w = image.dim(2);
  } else {
    throw numerics::ShapeError("write_pgm expects [H,W] or [1,H,W]");
  }
  std::vector<std::uint8_t> px(h * w);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = quantize(image[i]);
  write_pgm(path, w, h, px);
}

numerics::Tensor to_tensor(const GrayImage& image) {
  numerics::Tensor t({1, image.height, image.width});
  const double maxval = image.maxval;
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    t[i] = static_cast<float>(image.pixels[i] / maxval);
  }
  return t;
}

}  // namespace protoaudit::sourcebench
