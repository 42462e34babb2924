#include "covtrack/warp.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "covtrack/errors.hpp"

namespace covtrack {

WarpKernel WarpKernel::center_tap(int k) {
  if (k < 1 || k % 2 == 0) {
    throw InputError("WarpKernel: kernel size must be odd and >= 1");
  }
  WarpKernel kernel;
  kernel.k = k;
  kernel.weights.assign(static_cast<std::size_t>(k) * k, 0.0);
  kernel.weights[static_cast<std::size_t>(k) * k / 2] = 1.0;
  return kernel;
}

FeatureGrid center_attentive(const FeatureGrid& f_prev, const FeatureGrid& p_agn) {
  if (p_agn.channels != 1) {
    throw ShapeError("center_attentive: heatmap must be 1-channel");
  }
  if (f_prev.height != p_agn.height || f_prev.width != p_agn.width) {
    throw ShapeError("center_attentive: spatial dims disagree");
  }
  FeatureGrid out = f_prev;
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      const double h = p_agn.at(y, x, 0);
      for (int c = 0; c < out.channels; ++c) {
        out.at(y, x, c) *= h;
      }
    }
  }
  return out;
}

DcnOffsets make_dcn_offsets(const OffsetField& o_c, int k, const FeatureGrid* residual,
                            const ResidualCorrection& correction) {
  if (k < 1 || k % 2 == 0) {
    throw InputError("make_dcn_offsets: kernel size must be odd and >= 1");
  }
  DcnOffsets out(o_c.height, o_c.width, k);
  const double inv_stride = 1.0 / static_cast<double>(o_c.stride);
  const int taps = k * k;
  const int half = correction.window / 2;

  for (int y = 0; y < o_c.height; ++y) {
    for (int x = 0; x < o_c.width; ++x) {
      double dy = o_c.vertical(y, x) * inv_stride;
      double dx = o_c.horizontal(y, x) * inv_stride;
      if (residual != nullptr) {
        // Local mean of the residual over the correction window, all channels.
        double sum = 0.0;
        long count = 0;
        for (int yy = std::max(0, y - half); yy <= std::min(residual->height - 1, y + half); ++yy) {
          for (int xx = std::max(0, x - half); xx <= std::min(residual->width - 1, x + half); ++xx) {
            for (int c = 0; c < residual->channels; ++c) {
              sum += residual->at(yy, xx, c);
              ++count;
            }
          }
        }
        const double mean = count > 0 ? sum / static_cast<double>(count) : 0.0;
        dy += correction.weight_vertical * mean;
        dx += correction.weight_horizontal * mean;
      }
      for (int tap = 0; tap < taps; ++tap) {
        out.dy(y, x, tap) = dy;
        out.dx(y, x, tap) = dx;
      }
    }
  }
  return out;
}

FeatureGrid warp(const FeatureGrid& f_bar_prev, const DcnOffsets& o_d,
                 const WarpKernel& kernel) {
  if (o_d.height != f_bar_prev.height || o_d.width != f_bar_prev.width) {
    throw ShapeError("warp: offset field dims do not match grid");
  }
  if (o_d.k != kernel.k) {
    throw ShapeError("warp: offset taps do not match kernel size");
  }
  const int k = kernel.k;
  const int taps = k * k;
  const std::size_t shared = static_cast<std::size_t>(taps);
  const std::size_t depthwise = shared * static_cast<std::size_t>(f_bar_prev.channels);
  if (kernel.weights.size() != shared && kernel.weights.size() != depthwise) {
    throw ShapeError("warp: kernel weight count must be k*k or k*k*channels");
  }
  const bool per_channel = kernel.weights.size() == depthwise;
  const int half = k / 2;

  FeatureGrid out(f_bar_prev.height, f_bar_prev.width, f_bar_prev.channels,
                  f_bar_prev.stride);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      for (int tap = 0; tap < taps; ++tap) {
        const int gy = tap / k - half;
        const int gx = tap % k - half;
        const double sy = y + gy + o_d.dy(y, x, tap);
        const double sx = x + gx + o_d.dx(y, x, tap);
        for (int c = 0; c < out.channels; ++c) {
          const double w = per_channel
                               ? kernel.weights[static_cast<std::size_t>(tap) * out.channels + c]
                               : kernel.weights[static_cast<std::size_t>(tap)];
          if (w == 0.0) continue;
          out.at(y, x, c) += w * bilinear_sample(f_bar_prev, c, sx, sy);
        }
      }
    }
  }
  return out;
}

FeatureGrid aggregate(const FeatureGrid& f_cur, std::span<const FeatureGrid> warped,
                      const AggregationConfig& cfg) {
  if (warped.empty()) {
    throw InputError("aggregate: empty warped list");
  }
  if (static_cast<int>(warped.size()) != cfg.previous_count) {
    throw InputError("aggregate: list length " + std::to_string(warped.size()) +
                     " does not match configured T=" + std::to_string(cfg.previous_count));
  }
  for (const FeatureGrid& g : warped) {
    if (!g.same_shape(f_cur)) {
      throw ShapeError("aggregate: grid shapes disagree");
    }
  }
  const int heat = cfg.heatmap_channel < 0 ? f_cur.channels - 1 : cfg.heatmap_channel;
  if (heat < 0 || heat >= f_cur.channels) {
    throw ShapeError("aggregate: heatmap channel out of range");
  }

  const std::size_t n = warped.size() + 1;
  FeatureGrid out(f_cur.height, f_cur.width, f_cur.channels, f_cur.stride);
  std::vector<double> scores(n);
  std::vector<double> weights(n, 1.0 / static_cast<double>(n));

  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      if (cfg.mode == WeightMode::kConfidence) {
        scores[0] = f_cur.at(y, x, heat);
        for (std::size_t t = 0; t < warped.size(); ++t) {
          scores[t + 1] = warped[t].at(y, x, heat);
        }
        weights = softmax_t(scores, cfg.temperature);
      }
      for (int c = 0; c < out.channels; ++c) {
        double v = weights[0] * f_cur.at(y, x, c);
        for (std::size_t t = 0; t < warped.size(); ++t) {
          v += weights[t + 1] * warped[t].at(y, x, c);
        }
        out.at(y, x, c) = v;
      }
    }
  }
  return out;
}

std::vector<Peak> detect_peaks(const FeatureGrid& heatmap, double score_threshold) {
  if (heatmap.channels != 1) {
    throw ShapeError("detect_peaks: heatmap must be 1-channel");
  }
  if (!(score_threshold > 0.0 && score_threshold < 1.0)) {
    throw InputError("detect_peaks: threshold must lie in (0, 1)");
  }
  std::vector<Peak> peaks;
  for (int y = 0; y < heatmap.height; ++y) {
    for (int x = 0; x < heatmap.width; ++x) {
      const double v = heatmap.at(y, x, 0);
      if (v < score_threshold) continue;
      bool is_peak = true;
      for (int dy = -1; dy <= 1 && is_peak; ++dy) {
        for (int dx = -1; dx <= 1 && is_peak; ++dx) {
          if (dy == 0 && dx == 0) continue;
          const int yy = y + dy;
          const int xx = x + dx;
          if (yy < 0 || yy >= heatmap.height || xx < 0 || xx >= heatmap.width) continue;
          if (heatmap.at(yy, xx, 0) >= v) is_peak = false;
        }
      }
      if (is_peak) {
        Peak p;
        p.cell_y = y;
        p.cell_x = x;
        p.score = v;
        p.x = static_cast<double>(x) * heatmap.stride;
        p.y = static_cast<double>(y) * heatmap.stride;
        peaks.push_back(p);
      }
    }
  }
  std::stable_sort(peaks.begin(), peaks.end(),
                   [](const Peak& a, const Peak& b) { return a.score > b.score; });
  return peaks;
}

}  // namespace covtrack
