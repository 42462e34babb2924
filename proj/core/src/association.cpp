#include "covtrack/association.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <tuple>

#include "covtrack/errors.hpp"

namespace covtrack {

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("cosine_similarity: vector lengths disagree");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<int> da_round_one(std::span<const Detection> dets,
                              std::span<const Detection> prev_unmatched,
                              const OffsetField& o_c) {
  std::vector<int> match(dets.size(), -1);
  if (prev_unmatched.empty() || dets.empty()) return match;

  struct Pair {
    double dist;
    int cur;
    int prev;
  };
  std::vector<Pair> pairs;
  for (std::size_t d = 0; d < dets.size(); ++d) {
    const Detection& det = dets[d];
    double sx = det.cx;
    double sy = det.cy;
    if (o_c.height > 0 && o_c.width > 0) {
      const int cy = quantize_to_cell(det.cy, o_c.stride, o_c.height);
      const int cx = quantize_to_cell(det.cx, o_c.stride, o_c.width);
      sy += o_c.vertical(cy, cx);
      sx += o_c.horizontal(cy, cx);
    }
    const double radius = std::sqrt(det.width * det.height);
    for (std::size_t p = 0; p < prev_unmatched.size(); ++p) {
      const double dx = prev_unmatched[p].cx - sx;
      const double dy = prev_unmatched[p].cy - sy;
      const double dist = std::hypot(dx, dy);
      if (dist <= radius) {
        pairs.push_back(Pair{dist, static_cast<int>(d), static_cast<int>(p)});
      }
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    return std::tie(a.dist, a.cur, a.prev) < std::tie(b.dist, b.cur, b.prev);
  });

  std::vector<char> prev_taken(prev_unmatched.size(), 0);
  for (const Pair& p : pairs) {
    if (match[static_cast<std::size_t>(p.cur)] != -1 ||
        prev_taken[static_cast<std::size_t>(p.prev)]) {
      continue;
    }
    match[static_cast<std::size_t>(p.cur)] = p.prev;
    prev_taken[static_cast<std::size_t>(p.prev)] = 1;
  }
  return match;
}

int da_round_two(const Detection& det, std::span<const Tracklet* const> candidates,
                 double threshold) {
  int best_id = -1;
  double best_sim = threshold;  // strictly-greater admission
  for (const Tracklet* t : candidates) {
    const double sim = cosine_similarity(det.embedding, t->embedding);
    if (sim > best_sim || (sim == best_sim && best_id != -1 && t->id < best_id)) {
      best_sim = sim;
      best_id = t->id;
    }
  }
  return best_id;
}

void update_tracklet_embedding(Tracklet& tracklet, const Detection& det,
                               EmbeddingPolicy policy, double ema_alpha) {
  if (tracklet.embedding.empty() || policy == EmbeddingPolicy::kLatest) {
    tracklet.embedding = det.embedding;
    return;
  }
  if (tracklet.embedding.size() != det.embedding.size()) {
    throw ShapeError("update_tracklet_embedding: embedding lengths disagree");
  }
  for (std::size_t i = 0; i < tracklet.embedding.size(); ++i) {
    tracklet.embedding[i] = ema_alpha * tracklet.embedding[i] +
                            (1.0 - ema_alpha) * det.embedding[i];
  }
}

std::vector<int> TrackletStore::associate_frame(std::span<const Detection> dets,
                                                const OffsetField& o_c,
                                                AssociationMode mode) {
  int frame = -1;
  for (const Detection& d : dets) {
    if (frame == -1) {
      frame = d.frame;
    } else if (d.frame != frame) {
      throw StateError("associate_frame: detections span multiple frames");
    }
  }
  if (!dets.empty() && any_frame_ && frame <= last_frame_) {
    throw StateError("associate_frame: frame " + std::to_string(frame) +
                     " not after " + std::to_string(last_frame_));
  }

  std::vector<int> assigned(dets.size(), -1);
  std::vector<char> tracklet_matched(tracklets_.size(), 0);

  // Round one: offset-guided spatial matching against the previous frame.
  std::vector<Detection> prev_dets;
  prev_dets.reserve(prev_frame_.size());
  for (const auto& [tidx, det] : prev_frame_) prev_dets.push_back(det);
  // An empty field reads as zero displacement everywhere.
  const OffsetField zero;
  const OffsetField& round_one_field =
      mode == AssociationMode::kBaselineZeroOffset ? zero : o_c;
  const std::vector<int> r1 = da_round_one(dets, prev_dets, round_one_field);
  for (std::size_t d = 0; d < dets.size(); ++d) {
    if (r1[d] < 0) continue;
    const std::size_t tidx = prev_frame_[static_cast<std::size_t>(r1[d])].first;
    assigned[d] = static_cast<int>(tidx);
    tracklet_matched[tidx] = 1;
  }

  // Round two: embedding similarity against unmatched and history tracklets.
  if (mode == AssociationMode::kCostVolume) {
    for (std::size_t d = 0; d < dets.size(); ++d) {
      if (assigned[d] != -1 || dets[d].embedding.empty()) continue;
      std::vector<const Tracklet*> candidates;
      std::vector<std::size_t> candidate_idx;
      for (std::size_t t = 0; t < tracklets_.size(); ++t) {
        if (tracklet_matched[t]) continue;
        if (tracklets_[t].age_since_seen > cfg_.max_age) continue;
        candidates.push_back(&tracklets_[t]);
        candidate_idx.push_back(t);
      }
      const int id = da_round_two(dets[d], candidates, cfg_.round_two_threshold);
      if (id < 0) continue;
      for (std::size_t c = 0; c < candidates.size(); ++c) {
        if (candidates[c]->id == id) {
          assigned[d] = static_cast<int>(candidate_idx[c]);
          tracklet_matched[candidate_idx[c]] = 1;
          break;
        }
      }
    }
  }

  // Remaining detections start fresh tracklets.
  std::vector<int> ids(dets.size(), 0);
  for (std::size_t d = 0; d < dets.size(); ++d) {
    if (assigned[d] == -1) {
      Tracklet t;
      t.id = next_id_++;
      tracklets_.push_back(std::move(t));
      tracklet_matched.push_back(1);
      assigned[d] = static_cast<int>(tracklets_.size() - 1);
    }
    Tracklet& t = tracklets_[static_cast<std::size_t>(assigned[d])];
    t.detections.push_back(dets[d]);
    update_tracklet_embedding(t, dets[d], cfg_.embedding_policy, cfg_.ema_alpha);
    t.state = TrackState::kActive;
    t.last_seen = frame;
    t.age_since_seen = 0;
    ids[d] = t.id;
  }

  // Age the rest, retire anything past max_age.
  for (std::size_t t = 0; t < tracklets_.size(); ++t) {
    if (tracklet_matched[t]) continue;
    ++tracklets_[t].age_since_seen;
    tracklets_[t].state = TrackState::kInactive;
  }

  prev_frame_.clear();
  for (std::size_t d = 0; d < dets.size(); ++d) {
    prev_frame_.emplace_back(static_cast<std::size_t>(assigned[d]), dets[d]);
  }

  // Retirement invalidates indices, so remap prev_frame_ while erasing.
  std::vector<Tracklet> kept;
  std::vector<std::size_t> remap(tracklets_.size(), SIZE_MAX);
  kept.reserve(tracklets_.size());
  for (std::size_t t = 0; t < tracklets_.size(); ++t) {
    if (tracklets_[t].age_since_seen > cfg_.max_age) continue;
    remap[t] = kept.size();
    kept.push_back(std::move(tracklets_[t]));
  }
  tracklets_ = std::move(kept);
  for (auto& [tidx, det] : prev_frame_) {
    tidx = remap[tidx];
  }

  if (!dets.empty()) {
    last_frame_ = frame;
    any_frame_ = true;
  }
  return ids;
}

}  // namespace covtrack
