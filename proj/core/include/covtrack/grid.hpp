#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace covtrack {

/// Dense H x W x C grid of 64-bit reals, row-major, channel-last.
///
/// `stride` is the number of input pixels covered by one cell edge, so cell
/// (y, x) sits at input pixel (y * stride, x * stride). All per-cell math in
/// the library runs in double; 32-bit precision appears only in file I/O.
struct FeatureGrid {
  int height = 0;
  int width = 0;
  int channels = 0;
  int stride = 1;
  std::vector<double> data;

  FeatureGrid() = default;
  FeatureGrid(int height, int width, int channels, int stride = 1);

  double& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  double at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  std::size_t cell_count() const { return static_cast<std::size_t>(height) * width; }
  bool same_shape(const FeatureGrid& other) const {
    return height == other.height && width == other.width && channels == other.channels;
  }

  /// Throws ShapeError / InputError when metadata is inconsistent with the
  /// payload, stride < 1, or any value is non-finite.
  void validate() const;
};

/// Row-major dense matrix.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int rows, int cols)
      : rows(rows), cols(cols), data(static_cast<std::size_t>(rows) * cols, 0.0) {}

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

  static Matrix identity(int n);
};

/// C = A * B. Inner dimensions must agree.
Matrix matmul(const Matrix& a, const Matrix& b);

/// Temperature softmax: out_i = exp(t*v_i) / sum_j exp(t*v_j), stabilized by
/// max subtraction. Requires a non-empty finite input and t > 0.
std::vector<double> softmax_t(std::span<const double> v, double temperature);

enum class PoolAxis {
  kColumns,  // H x 1 kernel: per-column max, result length = cols
  kRows,     // 1 x W kernel: per-row max, result length = rows
};

std::vector<double> axis_maxpool(const Matrix& m, PoolAxis axis);

/// Bilinear interpolation of one channel at continuous cell coordinates
/// (x = column, y = row). Neighbors outside the grid contribute zero, so
/// fully out-of-bounds coordinates sample 0. Non-finite coordinates throw
/// InputError.
double bilinear_sample(const FeatureGrid& grid, int channel, double x, double y);

}  // namespace covtrack
