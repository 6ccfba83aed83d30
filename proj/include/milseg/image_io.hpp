#ifndef MILSEG_IMAGE_IO_HPP
#define MILSEG_IMAGE_IO_HPP

#include "milseg/tensor.hpp"

#include <cstdint>
#include <filesystem>

namespace milseg {

/// Per-pixel class index, row-major h x w; 0 is background.
using LabelMask = Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// 8-bit binary PPM (P6) <-> 3 x h x w tensor with values k / 255.
Tensord read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Tensord& image);

/// 8-bit binary PGM (P5) <-> integer matrix (pixel value = class index).
LabelMask read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const LabelMask& mask);

/// Rounds every value to the nearest k / 255 after clamping to [0, 1].
Tensord quantize_8bit(const Tensord& image);

}  // namespace milseg

#endif  // MILSEG_IMAGE_IO_HPP
