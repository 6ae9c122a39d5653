#include "activesplat/image.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace activesplat {

namespace {

std::uint8_t to_byte(double v) {
  if (!std::isfinite(v)) return 0;
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void write_netpbm(const std::filesystem::path& path, const Image& img, const char* magic, int channels) {
  if (img.channels() != channels) {
    throw std::invalid_argument("netpbm writer: expected " + std::to_string(channels) + " channel(s)");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << magic << "\n" << img.width() << " " << img.height() << "\n255\n";
  std::vector<char> bytes(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) bytes[i] = static_cast<char>(to_byte(img[i]));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// Skips whitespace and '#' comments between header tokens.
int read_header_int(std::istream& in) {
  while (true) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  int v = 0;
  if (!(in >> v)) throw std::runtime_error("malformed netpbm header");
  return v;
}

Image read_netpbm(const std::filesystem::path& path, const std::string& magic, int channels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string m;
  in >> m;
  if (m != magic) throw std::runtime_error(path.string() + ": expected " + magic + " file");
  const int w = read_header_int(in);
  const int h = read_header_int(in);
  const int maxval = read_header_int(in);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) {
    throw std::runtime_error(path.string() + ": unsupported netpbm header");
  }
  in.get();  // single whitespace after maxval
  Image img(w, h, channels);
  std::vector<unsigned char> bytes(img.size());
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw std::runtime_error(path.string() + ": truncated pixel data");
  }
  for (std::size_t i = 0; i < bytes.size(); ++i) img[i] = bytes[i] / static_cast<double>(maxval);
  return img;
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const Image& rgb) { write_netpbm(path, rgb, "P6", 3); }
Image read_ppm(const std::filesystem::path& path) { return read_netpbm(path, "P6", 3); }
void write_pgm(const std::filesystem::path& path, const Image& gray) { write_netpbm(path, gray, "P5", 1); }
Image read_pgm(const std::filesystem::path& path) { return read_netpbm(path, "P5", 1); }

std::string depth_header(int width, int height) {
  std::string h = "SSDEPTH " + std::to_string(width) + " " + std::to_string(height);
  if (h.size() > 15) throw std::invalid_argument("depth image too large for 16-byte header");
  h.resize(15, ' ');
  h.push_back('\n');
  return h;
}

void write_depth(const std::filesystem::path& path, const Image& depth) {
  if (depth.channels() != 1) throw std::invalid_argument("write_depth: expected one channel");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << depth_header(depth.width(), depth.height());
  for (std::size_t i = 0; i < depth.size(); ++i) {
    const float f = static_cast<float>(depth[i]);
    auto bits = std::bit_cast<std::uint32_t>(f);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    char buf[4];
    std::memcpy(buf, &bits, 4);
    out.write(buf, 4);
  }
}

Image read_depth(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char header[16];
  in.read(header, 16);
  if (in.gcount() != 16 || header[15] != '\n') throw std::runtime_error(path.string() + ": bad depth header");
  std::istringstream hs(std::string(header, 15));
  std::string magic;
  int w = 0, h = 0;
  hs >> magic >> w >> h;
  if (magic != "SSDEPTH" || w <= 0 || h <= 0) throw std::runtime_error(path.string() + ": bad depth header");
  Image depth(w, h, 1);
  for (std::size_t i = 0; i < depth.size(); ++i) {
    char buf[4];
    in.read(buf, 4);
    if (in.gcount() != 4) throw std::runtime_error(path.string() + ": truncated depth data");
    std::uint32_t bits;
    std::memcpy(&bits, buf, 4);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    depth[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  return depth;
}

}  // namespace activesplat
