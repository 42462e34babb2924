#include "covtrack/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "covtrack/errors.hpp"

namespace covtrack {

namespace {

// Reflects x into [lo, hi] the way a billiard ball bounces off the walls.
double reflect(double x, double lo, double hi) {
  const double span = hi - lo;
  if (span <= 0.0) return lo;
  double t = std::fmod(x - lo, 2.0 * span);
  if (t < 0.0) t += 2.0 * span;
  return t <= span ? lo + t : hi - (t - span);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  // splitmix64 step keeps per-frame / per-object streams decorrelated.
  std::uint64_t z = seed + salt * 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

void check_config(const SceneConfig& cfg) {
  if (cfg.grid_height < 1 || cfg.grid_width < 1 || cfg.object_count < 1 ||
      cfg.frame_count < 1 || cfg.appearance_dim < 1 || cfg.frame_stride < 1 ||
      cfg.stride < 1) {
    throw ConfigError("scene config: all counts must be >= 1");
  }
  if (cfg.noise < 0.0) {
    throw ConfigError("scene config: noise must be >= 0");
  }
  if (cfg.min_speed < 0.0 || cfg.max_speed < cfg.min_speed) {
    throw ConfigError("scene config: speed range is invalid");
  }
  const double extent_x = static_cast<double>(cfg.grid_width) * cfg.stride;
  const double extent_y = static_cast<double>(cfg.grid_height) * cfg.stride;
  if (cfg.box_width <= 0.0 || cfg.box_height <= 0.0 ||
      cfg.box_width >= extent_x || cfg.box_height >= extent_y) {
    throw ConfigError("scene config: objects must fit inside the grid");
  }
}

}  // namespace

std::vector<GroundTruthTrack> generate_scene(const SceneConfig& cfg) {
  check_config(cfg);
  std::mt19937_64 rng(mix_seed(cfg.seed, 0xA11CE5));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const double extent_x = static_cast<double>(cfg.grid_width) * cfg.stride;
  const double extent_y = static_cast<double>(cfg.grid_height) * cfg.stride;
  const double margin_x = cfg.box_width / 2.0 + cfg.stride;
  const double margin_y = cfg.box_height / 2.0 + cfg.stride;
  if (margin_x * 2.0 >= extent_x || margin_y * 2.0 >= extent_y) {
    throw ConfigError("scene config: grid too small for the configured boxes");
  }

  std::vector<GroundTruthTrack> tracks;
  tracks.reserve(static_cast<std::size_t>(cfg.object_count));
  for (int obj = 0; obj < cfg.object_count; ++obj) {
    GroundTruthTrack track;
    track.id = obj + 1;
    double cx = margin_x + unit(rng) * (extent_x - 2.0 * margin_x);
    double cy = margin_y + unit(rng) * (extent_y - 2.0 * margin_y);
    const double speed = cfg.min_speed + unit(rng) * (cfg.max_speed - cfg.min_speed);
    const double heading = unit(rng) * 2.0 * std::numbers::pi;
    const double vx = speed * std::cos(heading);
    const double vy = speed * std::sin(heading);

    track.points.resize(static_cast<std::size_t>(cfg.frame_count));
    for (int t = 0; t < cfg.frame_count; ++t) {
      TrackPoint& p = track.points[static_cast<std::size_t>(t)];
      p.cx = reflect(cx + vx * t, margin_x, extent_x - margin_x);
      p.cy = reflect(cy + vy * t, margin_y, extent_y - margin_y);
      p.width = cfg.box_width;
      p.height = cfg.box_height;
      p.visible = true;
    }
    tracks.push_back(std::move(track));
  }

  for (const OcclusionSpan& span : cfg.occlusions) {
    if (span.object_index < 0 || span.object_index >= cfg.object_count) {
      throw ConfigError("scene config: occlusion object index out of range");
    }
    GroundTruthTrack& track = tracks[static_cast<std::size_t>(span.object_index)];
    for (int t = std::max(0, span.first_frame);
         t <= std::min(cfg.frame_count - 1, span.last_frame); ++t) {
      track.points[static_cast<std::size_t>(t)].visible = false;
    }
  }
  return tracks;
}

std::vector<double> appearance_vector(const SceneConfig& cfg, int object_id) {
  std::mt19937_64 rng(mix_seed(cfg.seed, 0xFACE0000ULL + static_cast<std::uint64_t>(object_id)));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(cfg.appearance_dim));
  double norm = 0.0;
  for (double& x : v) {
    x = gauss(rng);
    norm += x * x;
  }
  norm = std::sqrt(norm);
  if (norm == 0.0) {
    v[0] = 1.0;
    return v;
  }
  for (double& x : v) x /= norm;
  return v;
}

RenderedFrame render_frame(std::span<const GroundTruthTrack> tracks, int frame,
                           const SceneConfig& cfg) {
  check_config(cfg);
  if (frame < 0 || frame >= static_cast<int>(tracks.empty() ? 0 : tracks.front().points.size())) {
    throw InputError("render_frame: frame index out of range");
  }

  RenderedFrame out;
  out.features = FeatureGrid(cfg.grid_height, cfg.grid_width, cfg.appearance_dim, cfg.stride);
  out.heatmap = FeatureGrid(cfg.grid_height, cfg.grid_width, 1, cfg.stride);

  for (std::size_t obj = 0; obj < tracks.size(); ++obj) {
    const TrackPoint& p = tracks[obj].points[static_cast<std::size_t>(frame)];
    if (!p.visible) continue;

    const std::vector<double> appearance = appearance_vector(cfg, tracks[obj].id);
    const double sigma = std::max(1.0, p.width / (4.0 * cfg.stride));  // cells
    const double cy_cell = p.cy / cfg.stride;
    const double cx_cell = p.cx / cfg.stride;
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy_cell)) - radius);
    const int y1 = std::min(cfg.grid_height - 1, static_cast<int>(std::ceil(cy_cell)) + radius);
    const int x0 = std::max(0, static_cast<int>(std::floor(cx_cell)) - radius);
    const int x1 = std::min(cfg.grid_width - 1, static_cast<int>(std::ceil(cx_cell)) + radius);

    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double d2 = (y - cy_cell) * (y - cy_cell) + (x - cx_cell) * (x - cx_cell);
        const double w = std::exp(-d2 / (2.0 * sigma * sigma));
        if (w < 1e-4) continue;
        out.heatmap.at(y, x, 0) += w;
        for (int c = 0; c < cfg.appearance_dim; ++c) {
          out.features.at(y, x, c) += w * appearance[static_cast<std::size_t>(c)];
        }
      }
    }

    Detection det;
    det.frame = frame;
    det.cx = p.cx;
    det.cy = p.cy;
    det.width = p.width;
    det.height = p.height;
    det.score = 1.0;
    out.detections.push_back(std::move(det));
  }

  for (double& h : out.heatmap.data) h = std::clamp(h, 0.0, 1.0);

  if (cfg.noise > 0.0) {
    std::mt19937_64 rng(mix_seed(cfg.seed, 0xF00D0000ULL + static_cast<std::uint64_t>(frame)));
    std::normal_distribution<double> gauss(0.0, cfg.noise);
    for (double& v : out.features.data) v += gauss(rng);
  }
  return out;
}

std::vector<GroundTruthTrack> subsample(std::vector<GroundTruthTrack> tracks,
                                        int frame_stride) {
  if (frame_stride < 1) {
    throw InputError("subsample: frame stride must be >= 1");
  }
  if (frame_stride == 1) return tracks;
  for (GroundTruthTrack& track : tracks) {
    std::vector<TrackPoint> kept;
    for (std::size_t t = 0; t < track.points.size(); t += static_cast<std::size_t>(frame_stride)) {
      kept.push_back(track.points[t]);
    }
    track.points = std::move(kept);
  }
  return tracks;
}

}  // namespace covtrack
