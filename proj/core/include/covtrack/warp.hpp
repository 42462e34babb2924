#pragma once

#include <span>
#include <vector>

#include "covtrack/cost_volume.hpp"
#include "covtrack/grid.hpp"

namespace covtrack {

/// Sampling kernel for the deformable warp. `weights` holds K*K per-tap
/// scalars shared across channels, or K*K*C per-channel scalars (depthwise).
struct WarpKernel {
  int k = 3;
  std::vector<double> weights;

  /// Identity kernel: center tap 1, all other taps 0.
  static WarpKernel center_tap(int k = 3);
};

/// Per-cell, per-tap (dy, dx) sampling displacements in feature cells.
struct DcnOffsets {
  int height = 0;
  int width = 0;
  int k = 3;
  std::vector<double> data;  // ((y*width + x)*k*k + tap)*2 + {0: dy, 1: dx}

  DcnOffsets() = default;
  DcnOffsets(int height, int width, int k)
      : height(height), width(width), k(k),
        data(static_cast<std::size_t>(height) * width * k * k * 2, 0.0) {}

  double& dy(int y, int x, int tap) {
    return data[(((static_cast<std::size_t>(y) * width + x) * k * k) + tap) * 2];
  }
  double dy(int y, int x, int tap) const {
    return data[(((static_cast<std::size_t>(y) * width + x) * k * k) + tap) * 2];
  }
  double& dx(int y, int x, int tap) {
    return data[(((static_cast<std::size_t>(y) * width + x) * k * k) + tap) * 2 + 1];
  }
  double dx(int y, int x, int tap) const {
    return data[(((static_cast<std::size_t>(y) * width + x) * k * k) + tap) * 2 + 1];
  }
};

/// Fixed linear read-out applied to the local mean of a residual grid; adds
/// (weight_vertical * mean, weight_horizontal * mean) cells to every tap of
/// the cell. Zero weights reproduce plain broadcasting.
struct ResidualCorrection {
  double weight_vertical = 0.0;
  double weight_horizontal = 0.0;
  int window = 3;
};

/// Per-channel Hadamard product with a 1-channel center heatmap.
FeatureGrid center_attentive(const FeatureGrid& f_prev, const FeatureGrid& p_agn);

/// Broadcast a per-cell pixel offset field to all K*K taps, converting input
/// pixels to feature cells via the field's stride. When `residual` is given,
/// the ResidualCorrection read-out is added per cell.
DcnOffsets make_dcn_offsets(const OffsetField& o_c, int k = 3,
                            const FeatureGrid* residual = nullptr,
                            const ResidualCorrection& correction = {});

/// Deformable sampling: out(p) = sum_g w_g * bilinear(f, p + g + offset_g(p)),
/// zero padded outside the grid.
FeatureGrid warp(const FeatureGrid& f_bar_prev, const DcnOffsets& o_d,
                 const WarpKernel& kernel);

enum class WeightMode {
  kAverage,     // all grids weighted 1 / (T + 1)
  kConfidence,  // per-cell softmax over each grid's heatmap-channel value
};

struct AggregationConfig {
  int previous_count = 2;  // T
  WeightMode mode = WeightMode::kAverage;
  int heatmap_channel = -1;  // -1: last channel
  double temperature = 1.0;  // confidence-mode softmax temperature
};

/// Per-cell convex combination of the current grid and T warped grids.
FeatureGrid aggregate(const FeatureGrid& f_cur, std::span<const FeatureGrid> warped,
                      const AggregationConfig& cfg);

/// Strict 3x3 local maximum on a 1-channel heatmap.
struct Peak {
  int cell_y = 0;
  int cell_x = 0;
  double score = 0.0;
  double x = 0.0;  // cell_x * stride, input pixels
  double y = 0.0;  // cell_y * stride
};

/// Peaks with score >= threshold, ordered by descending score (ties by cell
/// order). Boundary cells compare only in-bounds neighbors.
std::vector<Peak> detect_peaks(const FeatureGrid& heatmap, double score_threshold);

}  // namespace covtrack
