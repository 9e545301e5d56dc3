#include "photoba/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace pba {

namespace {

/// Reads one whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  while (in >> tok) {
    if (tok[0] == '#') {
      std::string rest;
      std::getline(in, rest);
      continue;
    }
    return tok;
  }
  throw std::runtime_error("unexpected end of image header");
}

bool host_is_little_endian() {
  const std::uint16_t probe = 1;
  return *reinterpret_cast<const std::uint8_t*>(&probe) == 1;
}

void swap_floats(std::vector<float>* data) {
  for (float& f : *data) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    bits = __builtin_bswap32(bits);
    std::memcpy(&f, &bits, 4);
  }
}

GrayImage read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open " + path);
  }
  const std::string magic = next_token(in);
  if (magic != "P5" && magic != "P6") {
    throw std::runtime_error(path + ": expected binary PGM/PPM, got '" + magic + "'");
  }
  const int width = std::stoi(next_token(in));
  const int height = std::stoi(next_token(in));
  const int maxval = std::stoi(next_token(in));
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 255) {
    throw std::runtime_error(path + ": unsupported PNM dimensions or depth");
  }
  in.get();  // the single whitespace byte terminating the header
  const int channels = magic == "P6" ? 3 : 1;
  std::vector<std::uint8_t> raw(static_cast<size_t>(width) * height * channels);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) {
    throw std::runtime_error(path + ": truncated pixel data");
  }
  if (channels == 3) {
    return gray_from_rgb8(width, height, raw);
  }
  GrayImage img(width, height);
  for (size_t i = 0; i < img.data.size(); ++i) {
    img.data[i] = static_cast<float>(raw[i]);
  }
  return img;
}

}  // namespace

GrayImage read_pfm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open " + path);
  }
  const std::string magic = next_token(in);
  if (magic != "Pf") {
    throw std::runtime_error(path + ": expected grayscale PFM ('Pf'), got '" + magic + "'");
  }
  const int width = std::stoi(next_token(in));
  const int height = std::stoi(next_token(in));
  const double scale = std::stod(next_token(in));
  in.get();
  std::vector<float> rows(static_cast<size_t>(width) * height);
  in.read(reinterpret_cast<char*>(rows.data()), static_cast<std::streamsize>(rows.size() * 4));
  if (!in) {
    throw std::runtime_error(path + ": truncated pixel data");
  }
  const bool file_little = scale < 0.0;
  if (file_little != host_is_little_endian()) {
    swap_floats(&rows);
  }
  // PFM stores rows bottom-up.
  GrayImage img(width, height);
  for (int y = 0; y < height; ++y) {
    std::memcpy(&img.data[static_cast<size_t>(y) * width],
                &rows[static_cast<size_t>(height - 1 - y) * width],
                static_cast<size_t>(width) * 4);
  }
  return img;
}

GrayImage read_image(const std::string& path) {
  const auto dot = path.rfind('.');
  const std::string ext = dot == std::string::npos ? "" : path.substr(dot);
  if (ext == ".pfm") {
    return read_pfm(path);
  }
  if (ext == ".pgm" || ext == ".ppm") {
    return read_pnm(path);
  }
  throw std::runtime_error(path + ": unsupported image extension '" + ext + "'");
}

void write_pgm(const std::string& path, const GrayImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write " + path);
  }
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  std::vector<std::uint8_t> raw(img.data.size());
  for (size_t i = 0; i < raw.size(); ++i) {
    raw[i] = static_cast<std::uint8_t>(std::clamp(std::lround(img.data[i]), 0L, 255L));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

void write_pfm(const std::string& path, const GrayImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write " + path);
  }
  out << "Pf\n" << img.width << ' ' << img.height << "\n-1.0\n";
  std::vector<float> rows(img.data.size());
  for (int y = 0; y < img.height; ++y) {
    std::memcpy(&rows[static_cast<size_t>(y) * img.width],
                &img.data[static_cast<size_t>(img.height - 1 - y) * img.width],
                static_cast<size_t>(img.width) * 4);
  }
  if (!host_is_little_endian()) {
    swap_floats(&rows);
  }
  out.write(reinterpret_cast<const char*>(rows.data()),
            static_cast<std::streamsize>(rows.size() * 4));
}

void write_depth_raster(const std::string& path, const DepthMap& depth) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write " + path);
  }
  const std::uint32_t w = static_cast<std::uint32_t>(depth.width);
  const std::uint32_t h = static_cast<std::uint32_t>(depth.height);
  std::vector<float> data = depth.data;
  if (!host_is_little_endian()) {
    // Header and payload are little-endian on disk.
    std::uint32_t wb = __builtin_bswap32(w);
    std::uint32_t hb = __builtin_bswap32(h);
    out.write(reinterpret_cast<const char*>(&wb), 4);
    out.write(reinterpret_cast<const char*>(&hb), 4);
    swap_floats(&data);
  } else {
    out.write(reinterpret_cast<const char*>(&w), 4);
    out.write(reinterpret_cast<const char*>(&h), 4);
  }
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * 4));
}

DepthMap read_depth_raster(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open " + path);
  }
  std::uint32_t w = 0;
  std::uint32_t h = 0;
  in.read(reinterpret_cast<char*>(&w), 4);
  in.read(reinterpret_cast<char*>(&h), 4);
  if (!host_is_little_endian()) {
    w = __builtin_bswap32(w);
    h = __builtin_bswap32(h);
  }
  if (!in || w == 0 || h == 0 || w > 1u << 20 || h > 1u << 20) {
    throw std::runtime_error(path + ": malformed depth raster header");
  }
  DepthMap depth(static_cast<int>(w), static_cast<int>(h));
  in.read(reinterpret_cast<char*>(depth.data.data()),
          static_cast<std::streamsize>(depth.data.size() * 4));
  if (!in) {
    throw std::runtime_error(path + ": truncated depth raster");
  }
  if (!host_is_little_endian()) {
    swap_floats(&depth.data);
  }
  return depth;
}

void write_visibility_json(const std::string& path,
                           const std::vector<std::pair<std::uint64_t, std::vector<int>>>& lists) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [id, views] : lists) {
    arr.push_back({{"landmark_id", id}, {"visible_image_ids", views}});
  }
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write " + path);
  }
  out << arr.dump(2) << '\n';
}

std::vector<std::pair<std::uint64_t, std::vector<int>>> read_visibility_json(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open " + path);
  }
  nlohmann::json arr = nlohmann::json::parse(in);
  std::vector<std::pair<std::uint64_t, std::vector<int>>> lists;
  for (const auto& entry : arr) {
    lists.emplace_back(entry.at("landmark_id").get<std::uint64_t>(),
                       entry.at("visible_image_ids").get<std::vector<int>>());
  }
  return lists;
}

void write_point_cloud_ply(const std::string& path, const std::vector<CloudPoint>& points) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write " + path);
  }
  out.precision(10);
  out << "ply\nformat ascii 1.0\nelement vertex " << points.size()
      << "\nproperty float x\nproperty float y\nproperty float z\nproperty float nx\nproperty "
         "float ny\nproperty float nz\nproperty float cost\nend_header\n";
  for (const CloudPoint& p : points) {
    out << p.position.x() << ' ' << p.position.y() << ' ' << p.position.z() << ' '
        << p.normal.x() << ' ' << p.normal.y() << ' ' << p.normal.z() << ' ' << p.cost << '\n';
  }
}

}  // namespace pba
