#include "covtrack/grid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "covtrack/errors.hpp"

namespace covtrack {

FeatureGrid::FeatureGrid(int height, int width, int channels, int stride)
    : height(height), width(width), channels(channels), stride(stride) {
  if (height < 0 || width < 0 || channels < 0) {
    throw ShapeError("FeatureGrid dimensions must be non-negative");
  }
  if (stride < 1) {
    throw InputError("FeatureGrid stride must be >= 1");
  }
  data.assign(static_cast<std::size_t>(height) * width * channels, 0.0);
}

void FeatureGrid::validate() const {
  const std::size_t expected = static_cast<std::size_t>(height) * width * channels;
  if (data.size() != expected) {
    throw ShapeError("FeatureGrid payload length " + std::to_string(data.size()) +
                     " does not match " + std::to_string(height) + "x" +
                     std::to_string(width) + "x" + std::to_string(channels));
  }
  if (stride < 1) {
    throw InputError("FeatureGrid stride must be >= 1");
  }
  for (double v : data) {
    if (!std::isfinite(v)) {
      throw InputError("FeatureGrid contains a non-finite value");
    }
  }
}

Matrix Matrix::identity(int n) {
  Matrix m(n, n);
  for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
  return m;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) {
    throw ShapeError("matmul: inner dimensions disagree (" + std::to_string(a.cols) +
                     " vs " + std::to_string(b.rows) + ")");
  }
  Matrix c(a.rows, b.cols);
  // i-k-j ordering keeps the inner loop contiguous in both b and c.
  for (int i = 0; i < a.rows; ++i) {
    double* crow = &c.data[static_cast<std::size_t>(i) * c.cols];
    for (int k = 0; k < a.cols; ++k) {
      const double aik = a.at(i, k);
      if (aik == 0.0) continue;
      const double* brow = &b.data[static_cast<std::size_t>(k) * b.cols];
      for (int j = 0; j < b.cols; ++j) {
        crow[j] += aik * brow[j];
      }
    }
  }
  return c;
}

std::vector<double> softmax_t(std::span<const double> v, double temperature) {
  if (v.empty()) {
    throw ShapeError("softmax_t: empty input");
  }
  if (!(temperature > 0.0)) {
    throw InputError("softmax_t: temperature must be > 0");
  }
  double hi = -std::numeric_limits<double>::infinity();
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw InputError("softmax_t: non-finite input");
    }
    hi = std::max(hi, temperature * x);
  }
  std::vector<double> out(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(temperature * v[i] - hi);
    sum += out[i];
  }
  for (double& x : out) x /= sum;
  return out;
}

std::vector<double> axis_maxpool(const Matrix& m, PoolAxis axis) {
  if (m.rows < 1 || m.cols < 1) {
    throw ShapeError("axis_maxpool: matrix must be at least 1x1");
  }
  if (axis == PoolAxis::kColumns) {
    std::vector<double> out(static_cast<std::size_t>(m.cols),
                            -std::numeric_limits<double>::infinity());
    for (int r = 0; r < m.rows; ++r) {
      for (int c = 0; c < m.cols; ++c) {
        out[c] = std::max(out[c], m.at(r, c));
      }
    }
    return out;
  }
  std::vector<double> out(static_cast<std::size_t>(m.rows),
                          -std::numeric_limits<double>::infinity());
  for (int r = 0; r < m.rows; ++r) {
    for (int c = 0; c < m.cols; ++c) {
      out[r] = std::max(out[r], m.at(r, c));
    }
  }
  return out;
}

double bilinear_sample(const FeatureGrid& grid, int channel, double x, double y) {
  if (channel < 0 || channel >= grid.channels) {
    throw ShapeError("bilinear_sample: channel out of range");
  }
  if (!std::isfinite(x) || !std::isfinite(y)) {
    throw InputError("bilinear_sample: non-finite coordinate");
  }
  const double fx = std::floor(x);
  const double fy = std::floor(y);
  const int x0 = static_cast<int>(fx);
  const int y0 = static_cast<int>(fy);
  const double ax = x - fx;
  const double ay = y - fy;

  auto tap = [&](int yy, int xx) -> double {
    if (yy < 0 || yy >= grid.height || xx < 0 || xx >= grid.width) return 0.0;
    return grid.at(yy, xx, channel);
  };

  return (1.0 - ay) * ((1.0 - ax) * tap(y0, x0) + ax * tap(y0, x0 + 1)) +
         ay * ((1.0 - ax) * tap(y0 + 1, x0) + ax * tap(y0 + 1, x0 + 1));
}

}  // namespace covtrack
