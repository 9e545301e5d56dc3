#include "photoba/imaging.hpp"

#include <stdexcept>

namespace pba {

Pyramid build_pyramid(const GrayImage& base) {
  if (base.width < kMinPyramidInputDim || base.height < kMinPyramidInputDim) {
    throw std::invalid_argument("build_pyramid: image smaller than " +
                                std::to_string(kMinPyramidInputDim) + " pixels per side");
  }
  Pyramid pyr;
  pyr.push_back(base);
  while (std::min(pyr.back().width, pyr.back().height) / 2 >= kMinPyramidLevelDim) {
    const GrayImage& prev = pyr.back();
    GrayImage next(prev.width / 2, prev.height / 2);
    for (int y = 0; y < next.height; ++y) {
      for (int x = 0; x < next.width; ++x) {
        next.at(x, y) = 0.25f * (prev.at(2 * x, 2 * y) + prev.at(2 * x + 1, 2 * y) +
                                 prev.at(2 * x, 2 * y + 1) + prev.at(2 * x + 1, 2 * y + 1));
      }
    }
    pyr.push_back(std::move(next));
  }
  return pyr;
}

int select_target_level(const PatchCoords& level0, int max_level) {
  double sum = 0.0;
  int count = 0;
  for (int row = 0; row < kPatchSide; ++row) {
    for (int col = 0; col + 1 < kPatchSide; ++col) {
      const int a = row * kPatchSide + col;
      sum += (level0.col(a + 1) - level0.col(a)).norm();
      ++count;
    }
  }
  for (int col = 0; col < kPatchSide; ++col) {
    for (int row = 0; row + 1 < kPatchSide; ++row) {
      const int a = row * kPatchSide + col;
      sum += (level0.col(a + kPatchSide) - level0.col(a)).norm();
      ++count;
    }
  }
  const double spacing = sum / count;
  if (!(spacing > 0.0)) {
    return 0;
  }
  const int level = static_cast<int>(std::lround(std::log2(spacing)));
  return std::clamp(level, 0, max_level);
}

GrayImage gray_from_rgb8(int width, int height, const std::vector<uint8_t>& rgb) {
  GrayImage img(width, height);
  for (size_t i = 0; i < img.data.size(); ++i) {
    img.data[i] = 0.299f * rgb[3 * i] + 0.587f * rgb[3 * i + 1] + 0.114f * rgb[3 * i + 2];
  }
  return img;
}

}  // namespace pba
