#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "covtrack/association.hpp"
#include "covtrack/grid.hpp"

namespace covtrack {

struct OcclusionSpan {
  int object_index = 0;  // 0-based index into the generated track list
  int first_frame = 0;
  int last_frame = 0;  // inclusive
};

/// Knobs for the deterministic benchmark scenes. Frame subsampling emulates
/// low frame rate: keeping every n-th frame multiplies per-step motion by n.
struct SceneConfig {
  int grid_height = 48;  // cells at the feature stride
  int grid_width = 64;
  int stride = 4;
  int object_count = 6;
  double min_speed = 2.0;  // input pixels per frame
  double max_speed = 6.0;
  int appearance_dim = 16;
  double noise = 0.02;
  std::vector<OcclusionSpan> occlusions;
  int frame_count = 40;
  int frame_stride = 1;
  double box_width = 16.0;
  double box_height = 16.0;
  std::uint64_t seed = 1;
};

struct TrackPoint {
  double cx = 0.0;
  double cy = 0.0;
  double width = 0.0;
  double height = 0.0;
  bool visible = true;
};

struct GroundTruthTrack {
  int id = 0;
  std::vector<TrackPoint> points;  // indexed by frame, continuous span
};

/// Constant-velocity trajectories with reflective boundaries, deterministic
/// in the seed. Throws ConfigError for infeasible scenes.
std::vector<GroundTruthTrack> generate_scene(const SceneConfig& cfg);

/// Fixed per-object appearance direction, drawn once from the unit sphere,
/// deterministic in (seed, object id).
std::vector<double> appearance_vector(const SceneConfig& cfg, int object_id);

struct RenderedFrame {
  FeatureGrid features;  // appearance_dim channels
  FeatureGrid heatmap;   // 1 channel, values in [0, 1]
  std::vector<Detection> detections;  // visible objects, no embeddings attached
};

/// Gaussian center blobs plus per-object appearance signatures and i.i.d.
/// noise; occluded objects render nothing. Deterministic in (seed, frame).
RenderedFrame render_frame(std::span<const GroundTruthTrack> tracks, int frame,
                           const SceneConfig& cfg);

/// Keeps every frame_stride-th frame (0, n, 2n, ...) and reindexes frames
/// consecutively.
std::vector<GroundTruthTrack> subsample(std::vector<GroundTruthTrack> tracks,
                                        int frame_stride);

}  // namespace covtrack
