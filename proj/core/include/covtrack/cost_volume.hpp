#pragma once

#include <array>
#include <span>
#include <vector>

#include "covtrack/grid.hpp"

namespace covtrack {

inline constexpr double kDefaultTemperature = 5.0;
inline constexpr double kDefaultFocalBeta = 2.0;

/// 4-D similarity volume between two downsampled embedding grids.
/// value(i, j, k, l) is the dot product of current cell (i, j) and previous
/// cell (k, l). The flattened embeddings are retained so loss gradients can
/// be evaluated from the volume alone.
struct CostVolume {
  int hc = 0;
  int wc = 0;
  int channels = 0;
  int stride = 8;
  std::vector<double> values;  // [((i*wc + j)*hc + k)*wc + l]
  Matrix cur;                  // (hc*wc) x channels
  Matrix prev;                 // (hc*wc) x channels

  double value(int i, int j, int k, int l) const {
    return values[((static_cast<std::size_t>(i) * wc + j) * hc + k) * wc + l];
  }
  /// The hc x wc similarity map of current cell (i, j) against every
  /// previous cell.
  Matrix slice(int i, int j) const;
};

CostVolume build_cost_volume(const FeatureGrid& e_cur, const FeatureGrid& e_prev);

/// Position likelihoods of one current cell over the previous frame:
/// `horizontal` has length wc (per-column), `vertical` length hc (per-row).
struct Marginals {
  std::vector<double> horizontal;
  std::vector<double> vertical;
};

Marginals marginal_likelihoods(const CostVolume& c, int i, int j,
                               double temperature = kDefaultTemperature);

/// Candidate displacement values in input pixels for cell (i, j):
/// horizontal[l] = (l - j) * stride, vertical[k] = (k - i) * stride.
struct OffsetTemplates {
  std::vector<double> horizontal;
  std::vector<double> vertical;
};

OffsetTemplates offset_templates(int i, int j, int hc, int wc, int stride);

/// Expected displacement (vertical, horizontal) in input pixels.
std::array<double, 2> infer_offset(std::span<const double> horizontal_likelihood,
                                   std::span<const double> vertical_likelihood,
                                   std::span<const double> horizontal_template,
                                   std::span<const double> vertical_template);

/// Per-cell (vertical, horizontal) displacement in input pixels.
struct OffsetField {
  int height = 0;
  int width = 0;
  int stride = 1;
  std::vector<double> data;  // 2 per cell: [vertical, horizontal]

  OffsetField() = default;
  OffsetField(int height, int width, int stride)
      : height(height), width(width), stride(stride),
        data(static_cast<std::size_t>(height) * width * 2, 0.0) {}

  double& vertical(int y, int x) { return data[(static_cast<std::size_t>(y) * width + x) * 2]; }
  double vertical(int y, int x) const {
    return data[(static_cast<std::size_t>(y) * width + x) * 2];
  }
  double& horizontal(int y, int x) {
    return data[(static_cast<std::size_t>(y) * width + x) * 2 + 1];
  }
  double horizontal(int y, int x) const {
    return data[(static_cast<std::size_t>(y) * width + x) * 2 + 1];
  }

  static OffsetField zeros(int height, int width, int stride) {
    return OffsetField(height, width, stride);
  }
};

/// Expected displacement at every cell of the volume, at the volume's stride.
OffsetField offset_field(const CostVolume& c, double temperature = kDefaultTemperature);

/// Nearest-neighbor 2x upsampling; values are already in input pixels and
/// stay unchanged, stride halves.
OffsetField upsample_offsets(const OffsetField& o);

/// Sparse association ground truth: entry (i, j, k, l) marks that the object
/// at current cell (i, j) sits at previous cell (k, l). At most one (k, l)
/// per (i, j).
class SupervisionMask {
 public:
  struct Quad {
    int i, j, k, l;
  };

  SupervisionMask(int hc, int wc);

  void add(int i, int j, int k, int l);

  const std::vector<Quad>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }
  int hc() const { return hc_; }
  int wc() const { return wc_; }

 private:
  int hc_ = 0;
  int wc_ = 0;
  std::vector<Quad> entries_;
};

/// Focal-style association loss over the supervised marginals.
double cva_loss(const CostVolume& c, const SupervisionMask& y,
                double beta = kDefaultFocalBeta, double temperature = kDefaultTemperature);

struct CvaGradients {
  FeatureGrid cur;   // d loss / d current embedding grid
  FeatureGrid prev;  // d loss / d previous embedding grid
};

/// Exact gradients of cva_loss w.r.t. both embedding grids. Max-pooling
/// routes its subgradient to the lowest-index argmax on ties.
CvaGradients cva_loss_grad(const CostVolume& c, const SupervisionMask& y,
                           double beta = kDefaultFocalBeta,
                           double temperature = kDefaultTemperature);

/// Identity-labeled object center in input pixels.
struct ObjectCenter {
  int id = 0;
  double cx = 0.0;
  double cy = 0.0;
};

/// One quadruple per identity present in both frames; centers quantize to the
/// nearest stride-s cell (half-cell ties round down). Duplicate identities in
/// one frame, or two identities landing in the same current cell, raise
/// DataError.
SupervisionMask build_supervision(std::span<const ObjectCenter> cur,
                                  std::span<const ObjectCenter> prev, int stride, int hc,
                                  int wc);

/// Nearest grid index for a continuous input-pixel coordinate; exact
/// half-cell ties round toward the lower index. Clamped to [0, cells - 1].
int quantize_to_cell(double pixel, int stride, int cells);

}  // namespace covtrack
