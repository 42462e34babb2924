#pragma once

#include <span>
#include <vector>

#include "covtrack/cost_volume.hpp"

namespace covtrack {

/// One detected object in one frame. `cx, cy` is the center in input pixels.
struct Detection {
  int frame = 0;
  double cx = 0.0;
  double cy = 0.0;
  double width = 0.0;
  double height = 0.0;
  double score = 1.0;
  std::vector<double> embedding;
};

enum class TrackState { kActive, kInactive };

struct Tracklet {
  int id = 0;
  std::vector<Detection> detections;  // strictly increasing frame order
  std::vector<double> embedding;
  TrackState state = TrackState::kActive;
  int last_seen = 0;
  int age_since_seen = 0;
};

enum class AssociationMode {
  kCostVolume,         // offset-guided round one, embedding round two
  kBaselineZeroOffset  // zero offsets, spatial round only
};

enum class EmbeddingPolicy { kLatest, kExponentialAverage };

struct AssociationConfig {
  double round_two_threshold = 0.3;
  int max_age = 32;
  EmbeddingPolicy embedding_policy = EmbeddingPolicy::kLatest;
  double ema_alpha = 0.9;  // weight of the old embedding under kExponentialAverage
};

/// Cosine similarity; defined as 0 when either vector has zero norm.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Offset-guided spatial matching. For each current detection the search
/// center is its own center displaced by the offset field at its cell; the
/// admission radius is sqrt(width * height) of the current box. Pairs are
/// claimed greedily in ascending distance order (ties by current then
/// previous index). Returns one previous-detection index per current
/// detection, -1 when unmatched.
std::vector<int> da_round_one(std::span<const Detection> dets,
                              std::span<const Detection> prev_unmatched,
                              const OffsetField& o_c);

/// Embedding matching against candidate tracklets: highest cosine similarity
/// wins when strictly above the threshold (ties prefer the lower id).
/// Returns the winning tracklet id or -1.
int da_round_two(const Detection& det, std::span<const Tracklet* const> candidates,
                 double threshold);

/// Latest-wins by default; the exponential-average policy keeps
/// alpha * old + (1 - alpha) * new.
void update_tracklet_embedding(Tracklet& tracklet, const Detection& det,
                               EmbeddingPolicy policy, double ema_alpha = 0.9);

/// Identity store for one sequence. Single writer; feed frames in strictly
/// increasing order.
class TrackletStore {
 public:
  explicit TrackletStore(AssociationConfig cfg = {}) : cfg_(cfg) {}

  /// Runs the two-round association for one frame and returns the tracklet
  /// id assigned to each detection. New identities come from a monotone
  /// counter starting at 1. Unmatched tracklets age; tracklets older than
  /// max_age are retired.
  std::vector<int> associate_frame(std::span<const Detection> dets,
                                   const OffsetField& o_c, AssociationMode mode);

  const std::vector<Tracklet>& tracklets() const { return tracklets_; }
  const AssociationConfig& config() const { return cfg_; }
  int next_id() const { return next_id_; }

 private:
  AssociationConfig cfg_;
  std::vector<Tracklet> tracklets_;
  int next_id_ = 1;
  int last_frame_ = -1;
  bool any_frame_ = false;
  // Previous frame's detections paired with their tracklet index.
  std::vector<std::pair<std::size_t, Detection>> prev_frame_;
};

}  // namespace covtrack
