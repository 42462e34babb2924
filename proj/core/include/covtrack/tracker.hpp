#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "covtrack/association.hpp"
#include "covtrack/cost_volume.hpp"
#include "covtrack/embedding.hpp"
#include "covtrack/mot_io.hpp"
#include "covtrack/synth.hpp"
#include "covtrack/warp.hpp"

namespace covtrack {

/// Per-frame inputs of one sequence: base features and the class-agnostic
/// center heatmap, both at the feature stride.
struct SequenceFrames {
  std::vector<FeatureGrid> features;
  std::vector<FeatureGrid> heatmaps;

  int frame_count() const { return static_cast<int>(features.size()); }
  int stride() const { return features.empty() ? 1 : features.front().stride; }
};

struct TrainOptions {
  int steps = 500;
  double learning_rate = 1.25e-4;
  double beta = kDefaultFocalBeta;
  double temperature = kDefaultTemperature;
  std::uint64_t seed = 1;
  int embed_dim = 128;
  int hidden_dim = 64;
  int layer_count = 3;
};

struct TrainResult {
  EmbeddingNet net;
  std::vector<double> losses;  // one value per optimizer step
  int skipped_pairs = 0;       // frame pairs without usable supervision
};

/// Fits the embedding stack on consecutive frame pairs of one sequence,
/// cycling over pairs until `steps` optimizer updates have run.
TrainResult train_embedding(const SequenceFrames& frames,
                            std::span<const GroundTruthTrack> gt,
                            const TrainOptions& opt);

/// Downsampled embeddings of one frame: sigma(f) then 2x pooling.
FeatureGrid embed_frame(EmbeddingNet& net, const FeatureGrid& features);

/// Offset field between two embedded frames, upsampled to the feature
/// stride.
OffsetField compute_offsets(const FeatureGrid& e_cur_down,
                            const FeatureGrid& e_prev_down,
                            double temperature = kDefaultTemperature);

enum class MfwOffsetSource {
  // One-step motion measured at the source frame, extrapolated over the
  // frame gap and splatted forward from heated source cells; cells nothing
  // lands on stay static. Robust when the current frame lacks the object.
  kExtrapolated,
  // Offsets measured between the current and source frames, read at the
  // destination cell.
  kDirect
};

struct TrackOptions {
  AssociationMode mode = AssociationMode::kCostVolume;
  int previous_count = 2;  // T, frames aggregated by the warper
  double round_two_threshold = 0.3;
  int max_age = 32;
  bool use_mfw = true;
  double score_threshold = 0.3;
  double temperature = kDefaultTemperature;
  WeightMode weight_mode = WeightMode::kAverage;
  double weight_temperature = 8.0;  // confidence-mode softmax sharpness
  MfwOffsetSource offset_source = MfwOffsetSource::kExtrapolated;
  double splat_heat_gate = 0.05;  // source cells below this carry no content
  EmbeddingPolicy embedding_policy = EmbeddingPolicy::kLatest;
  double ema_alpha = 0.9;
  double default_box_width = 16.0;
  double default_box_height = 16.0;
};

struct TrackResult {
  std::vector<MotRecord> records;      // id-labeled detections, 1-based frames
  std::vector<OffsetField> offsets;    // per frame, feature stride (frame 0 is zero)
};

/// Full per-frame pipeline: embed, infer offsets, optionally warp and
/// aggregate previous frames, detect peaks, associate.
TrackResult track_sequence(const SequenceFrames& frames, EmbeddingNet& net,
                           const TrackOptions& opt);

/// Renders every frame of a scene into sequence inputs.
SequenceFrames render_sequence(std::span<const GroundTruthTrack> tracks,
                               const SceneConfig& cfg);

}  // namespace covtrack
