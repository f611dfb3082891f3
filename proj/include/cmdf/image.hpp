#pragma once

#include <cstddef>
#include <vector>

namespace cmdf {

/// H x W x 3 RGB image with channel values in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> rgb;

  Image() = default;
  Image(int w, int h, double fill = 0.0)
      : width(w), height(h), rgb(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3, fill) {}

  double& at(int row, int col, int ch) {
    return rgb[(static_cast<std::size_t>(row) * static_cast<std::size_t>(width) + static_cast<std::size_t>(col)) * 3 +
               static_cast<std::size_t>(ch)];
  }
  double at(int row, int col, int ch) const {
    return rgb[(static_cast<std::size_t>(row) * static_cast<std::size_t>(width) + static_cast<std::size_t>(col)) * 3 +
               static_cast<std::size_t>(ch)];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

}  // namespace cmdf
