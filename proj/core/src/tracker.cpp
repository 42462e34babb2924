#include "covtrack/tracker.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <utility>

#include "covtrack/errors.hpp"
#include "covtrack/metrics.hpp"

namespace covtrack {

namespace {

/// Upstream gradient through 2x2 average pooling: each source cell receives a
/// quarter of its pooled cell's gradient.
FeatureGrid expand_pool_gradient(const FeatureGrid& pooled, int out_height, int out_width,
                                 int out_stride) {
  FeatureGrid out(out_height, out_width, pooled.channels, out_stride);
  for (int y = 0; y < out_height; ++y) {
    for (int x = 0; x < out_width; ++x) {
      for (int c = 0; c < pooled.channels; ++c) {
        out.at(y, x, c) = 0.25 * pooled.at(y / 2, x / 2, c);
      }
    }
  }
  return out;
}

std::vector<ObjectCenter> visible_centers(std::span<const GroundTruthTrack> gt, int frame) {
  std::vector<ObjectCenter> out;
  for (const GroundTruthTrack& track : gt) {
    if (frame < 0 || frame >= static_cast<int>(track.points.size())) continue;
    const TrackPoint& p = track.points[static_cast<std::size_t>(frame)];
    if (!p.visible) continue;
    out.push_back(ObjectCenter{track.id, p.cx, p.cy});
  }
  return out;
}

void accumulate(std::vector<LayerGradients>& total, const BackwardResult& part) {
  if (total.empty()) {
    total = part.layers;
    return;
  }
  for (std::size_t l = 0; l < total.size(); ++l) {
    for (std::size_t i = 0; i < total[l].weight.data.size(); ++i) {
      total[l].weight.data[i] += part.layers[l].weight.data[i];
    }
    for (std::size_t i = 0; i < total[l].bias.size(); ++i) {
      total[l].bias[i] += part.layers[l].bias[i];
    }
  }
}

/// Displacement of one blob, read at its peak and refined by a heat-weighted
/// mean over nearby cells that agree with the peak's own motion. A rigid
/// object's cells share one motion up to cell quantization; cells of another
/// passing object or with junk offsets disagree and are left out.
std::array<double, 2> blob_displacement(const OffsetField& field, const FeatureGrid& heat,
                                        int peak_y, int peak_x, int radius,
                                        double heat_gate) {
  const double anchor_v = field.vertical(peak_y, peak_x);
  const double anchor_h = field.horizontal(peak_y, peak_x);
  const double agree = 1.5 * field.stride;
  double wsum = 0.0, vsum = 0.0, hsum = 0.0;
  for (int ny = std::max(0, peak_y - radius); ny <= std::min(field.height - 1, peak_y + radius);
       ++ny) {
    for (int nx = std::max(0, peak_x - radius);
         nx <= std::min(field.width - 1, peak_x + radius); ++nx) {
      const double w = heat.at(ny, nx, 0);
      if (w < heat_gate) continue;
      if (std::abs(field.vertical(ny, nx) - anchor_v) > agree ||
          std::abs(field.horizontal(ny, nx) - anchor_h) > agree) {
        continue;
      }
      wsum += w;
      vsum += w * field.vertical(ny, nx);
      hsum += w * field.horizontal(ny, nx);
    }
  }
  if (wsum == 0.0) return {anchor_v, anchor_h};
  return {vsum / wsum, hsum / wsum};
}

/// Turns a one-step backward offset field of the source frame into the
/// backward field the warp needs at the current frame, `gap` frames later.
///
/// Each source blob (a heatmap peak) is translated rigidly: the whole disk
/// around the peak's projected destination reads back along the peak's own
/// displacement, which is far more reliable than per-cell offsets out in the
/// blob's skirt. Cells no blob lands on point far outside the grid, so the
/// zero-padded warp leaves them empty; overlaps go to the stronger peak.
OffsetField rigid_forward_field(const OffsetField& step, const FeatureGrid& source_heat,
                                double gap, double peak_threshold, int disk_radius,
                                std::span<const Peak> current_peaks, int snap_radius) {
  OffsetField out(step.height, step.width, step.stride);
  const double stride = static_cast<double>(step.stride);
  const double void_disp = 4.0 * (step.height + step.width) * stride;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = void_disp;

  Matrix claimed(step.height, step.width);  // score of the owning peak
  const std::vector<Peak> peaks = detect_peaks(source_heat, peak_threshold);
  for (const Peak& peak : peaks) {  // strongest first
    const std::array<double, 2> motion =
        blob_displacement(step, source_heat, peak.cell_y, peak.cell_x, 2, 0.05);
    double back_v = gap * motion[0];
    double back_h = gap * motion[1];
    int dest_y = static_cast<int>(std::lround(peak.cell_y - back_v / stride));
    int dest_x = static_cast<int>(std::lround(peak.cell_x - back_h / stride));

    // When the projection lands next to an object the detector already sees,
    // align the blob exactly onto that peak; the residual projection error
    // would otherwise smear or split it. A projection that overlaps a seen
    // object without snapping cleanly is a half-displaced ghost and gets
    // dropped. Occluded destinations have no nearby peak and keep the
    // measured displacement.
    double nearest = 1e18;
    const Peak* nearest_peak = nullptr;
    for (const Peak& cur : current_peaks) {
      const double d = std::hypot(static_cast<double>(cur.cell_y - dest_y),
                                  static_cast<double>(cur.cell_x - dest_x));
      if (d < nearest) {
        nearest = d;
        nearest_peak = &cur;
      }
    }
    if (nearest_peak != nullptr && nearest <= snap_radius) {
      dest_y = nearest_peak->cell_y;
      dest_x = nearest_peak->cell_x;
      back_v = (peak.cell_y - nearest_peak->cell_y) * stride;
      back_h = (peak.cell_x - nearest_peak->cell_x) * stride;
    } else if (nearest_peak != nullptr && nearest <= disk_radius + 1) {
      continue;
    }

    for (int dy = -disk_radius; dy <= disk_radius; ++dy) {
      for (int dx = -disk_radius; dx <= disk_radius; ++dx) {
        if (dy * dy + dx * dx > disk_radius * disk_radius) continue;
        const int ty = dest_y + dy;
        const int tx = dest_x + dx;
        if (ty < 0 || ty >= step.height || tx < 0 || tx >= step.width) continue;
        if (claimed.at(ty, tx) >= peak.score) continue;
        claimed.at(ty, tx) = peak.score;
        out.vertical(ty, tx) = back_v;
        out.horizontal(ty, tx) = back_h;
      }
    }
  }
  return out;
}

FeatureGrid stack_heatmap(const FeatureGrid& features, const FeatureGrid& heatmap) {
  FeatureGrid out(features.height, features.width, features.channels + 1, features.stride);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      for (int c = 0; c < features.channels; ++c) {
        out.at(y, x, c) = features.at(y, x, c);
      }
      out.at(y, x, features.channels) = heatmap.at(y, x, 0);
    }
  }
  return out;
}

FeatureGrid extract_channel(const FeatureGrid& grid, int channel) {
  FeatureGrid out(grid.height, grid.width, 1, grid.stride);
  for (int y = 0; y < grid.height; ++y) {
    for (int x = 0; x < grid.width; ++x) {
      out.at(y, x, 0) = grid.at(y, x, channel);
    }
  }
  return out;
}

}  // namespace

FeatureGrid embed_frame(EmbeddingNet& net, const FeatureGrid& features) {
  FeatureGrid e = net.forward(features);
  return downsample_embedding(e);
}

OffsetField compute_offsets(const FeatureGrid& e_cur_down, const FeatureGrid& e_prev_down,
                            double temperature) {
  const CostVolume volume = build_cost_volume(e_cur_down, e_prev_down);
  return upsample_offsets(offset_field(volume, temperature));
}

TrainResult train_embedding(const SequenceFrames& frames,
                            std::span<const GroundTruthTrack> gt, const TrainOptions& opt) {
  if (frames.frame_count() < 2) {
    throw InputError("train_embedding: need at least two frames");
  }
  if (opt.steps < 1) {
    throw InputError("train_embedding: steps must be >= 1");
  }

  const int input_channels = frames.features.front().channels;
  std::vector<int> hidden(static_cast<std::size_t>(std::max(0, opt.layer_count - 1)),
                          opt.hidden_dim);
  TrainResult result{EmbeddingNet(input_channels, hidden, opt.embed_dim, opt.seed), {}, 0};

  // Precompute the supervision of every consecutive pair once; pairs without
  // usable supervision are skipped.
  struct Pair {
    int cur;
    SupervisionMask mask;
  };
  std::vector<Pair> pairs;
  const int hc = frames.features.front().height / 2;
  const int wc = frames.features.front().width / 2;
  const int down_stride = frames.stride() * 2;
  for (int t = 1; t < frames.frame_count(); ++t) {
    const std::vector<ObjectCenter> cur = visible_centers(gt, t);
    const std::vector<ObjectCenter> prev = visible_centers(gt, t - 1);
    try {
      SupervisionMask mask = build_supervision(cur, prev, down_stride, hc, wc);
      if (!mask.empty()) {
        pairs.push_back(Pair{t, std::move(mask)});
        continue;
      }
    } catch (const DataError&) {
      // colliding centers: this pair carries no clean supervision
    }
    ++result.skipped_pairs;
  }
  if (pairs.empty()) {
    throw DataError("train_embedding: no frame pair has usable supervision");
  }

  AdamConfig adam_cfg;
  adam_cfg.learning_rate = opt.learning_rate;
  AdamOptimizer optimizer(adam_cfg);

  for (int step = 0; step < opt.steps; ++step) {
    const Pair& pair = pairs[static_cast<std::size_t>(step) % pairs.size()];

    // Shared weights see both frames; gradients accumulate over the two passes.
    FeatureGrid e_prev =
        result.net.forward(frames.features[static_cast<std::size_t>(pair.cur - 1)]);
    FeatureGrid ep_prev = downsample_embedding(e_prev);

    FeatureGrid e_cur = result.net.forward(frames.features[static_cast<std::size_t>(pair.cur)]);
    FeatureGrid ep_cur = downsample_embedding(e_cur);

    const CostVolume volume = build_cost_volume(ep_cur, ep_prev);
    result.losses.push_back(cva_loss(volume, pair.mask, opt.beta, opt.temperature));
    const CvaGradients dvol = cva_loss_grad(volume, pair.mask, opt.beta, opt.temperature);

    // The current frame's cache is live: backprop it first.
    const FeatureGrid up_cur =
        expand_pool_gradient(dvol.cur, e_cur.height, e_cur.width, e_cur.stride);
    BackwardResult grads = result.net.backward(up_cur);

    // Re-run the previous frame to restore its cache, then backprop.
    (void)result.net.forward(frames.features[static_cast<std::size_t>(pair.cur - 1)]);
    const FeatureGrid up_prev =
        expand_pool_gradient(dvol.prev, e_prev.height, e_prev.width, e_prev.stride);
    const BackwardResult grads_prev = result.net.backward(up_prev);

    std::vector<LayerGradients> total = grads.layers;
    accumulate(total, grads_prev);

    BackwardResult merged;
    merged.layers = std::move(total);
    optimizer.step(parameter_spans(result.net), gradient_spans(merged));
  }
  return result;
}

TrackResult track_sequence(const SequenceFrames& frames, EmbeddingNet& net,
                           const TrackOptions& opt) {
  if (frames.frame_count() == 0) {
    throw InputError("track_sequence: empty sequence");
  }
  if (opt.previous_count < 1) {
    throw InputError("track_sequence: T must be >= 1");
  }

  AssociationConfig assoc_cfg;
  assoc_cfg.round_two_threshold = opt.round_two_threshold;
  assoc_cfg.max_age = opt.max_age;
  assoc_cfg.embedding_policy = opt.embedding_policy;
  assoc_cfg.ema_alpha = opt.ema_alpha;
  TrackletStore store(assoc_cfg);

  TrackResult result;
  const int stride = frames.stride();
  const WarpKernel kernel = WarpKernel::center_tap(3);
  // Rigid-propagation disk: the blob support of a default-sized object.
  const int disk_radius = std::max(
      2, static_cast<int>(std::ceil(
             0.75 * std::sqrt(opt.default_box_width * opt.default_box_height) / stride)) +
             1);

  std::vector<FeatureGrid> embedded;       // full-resolution e per frame
  std::vector<FeatureGrid> embedded_down;  // e' per frame
  std::vector<FeatureGrid> stacked;        // features + heatmap channel
  std::vector<OffsetField> one_step;       // offsets of frame u against u-1
  std::size_t prev_record_begin = 0;       // previous frame's slice of records
  std::size_t prev_record_end = 0;

  for (int t = 0; t < frames.frame_count(); ++t) {
    const FeatureGrid& f = frames.features[static_cast<std::size_t>(t)];
    const FeatureGrid& heat = frames.heatmaps[static_cast<std::size_t>(t)];

    FeatureGrid e = net.forward(f);
    FeatureGrid ep = downsample_embedding(e);
    embedded.push_back(std::move(e));
    embedded_down.push_back(std::move(ep));
    stacked.push_back(stack_heatmap(f, heat));

    one_step.push_back(t == 0
                           ? OffsetField::zeros(f.height, f.width, stride)
                           : compute_offsets(embedded_down[static_cast<std::size_t>(t)],
                                             embedded_down[static_cast<std::size_t>(t - 1)],
                                             opt.temperature));

    // Detection heatmap: raw, or warped previous frames aggregated in.
    FeatureGrid detection_heat = heat;
    if (opt.use_mfw && t > 0) {
      const std::vector<Peak> current_peaks = detect_peaks(heat, opt.score_threshold);
      const int warp_count = std::min(opt.previous_count, t);
      std::vector<FeatureGrid> warped;
      for (int tau = 1; tau <= warp_count; ++tau) {
        const int source = t - tau;
        if (opt.offset_source == MfwOffsetSource::kExtrapolated && source == 0) {
          // The first frame carries no motion estimate; propagating it with a
          // zero field would park ghosts at stale positions.
          continue;
        }
        OffsetField field =
            opt.offset_source == MfwOffsetSource::kExtrapolated
                ? rigid_forward_field(one_step[static_cast<std::size_t>(source)],
                                      frames.heatmaps[static_cast<std::size_t>(source)],
                                      static_cast<double>(tau), opt.score_threshold,
                                      disk_radius, current_peaks, 3)
                : (tau == 1 ? one_step[static_cast<std::size_t>(t)]
                            : compute_offsets(embedded_down[static_cast<std::size_t>(t)],
                                              embedded_down[static_cast<std::size_t>(source)],
                                              opt.temperature));
        const FeatureGrid masked =
            center_attentive(stacked[static_cast<std::size_t>(source)],
                             frames.heatmaps[static_cast<std::size_t>(source)]);
        const DcnOffsets dcn = make_dcn_offsets(field, kernel.k);
        warped.push_back(warp(masked, dcn, kernel));
      }
      if (!warped.empty()) {
        AggregationConfig agg;
        agg.previous_count = static_cast<int>(warped.size());
        agg.mode = opt.weight_mode;
        agg.temperature = opt.weight_temperature;
        const FeatureGrid fused =
            aggregate(stacked[static_cast<std::size_t>(t)], warped, agg);
        detection_heat = extract_channel(fused, fused.channels - 1);
      }
    }

    const std::vector<Peak> peaks = detect_peaks(detection_heat, opt.score_threshold);

    // Peaks become detections; boxes come from the previous frame's object at
    // the offset-corrected location when one is close enough, otherwise the
    // configured default.
    const OffsetField& o_c = one_step.back();
    std::vector<Detection> dets;
    dets.reserve(peaks.size());
    for (const Peak& p : peaks) {
      Detection det;
      det.frame = t;
      det.cx = p.x;
      det.cy = p.y;
      det.score = p.score;

      // Sub-cell refinement: heat-weighted centroid of the 3x3 neighborhood.
      double wy = 0.0, wx = 0.0, wsum = 0.0;
      for (int ny = std::max(0, p.cell_y - 1);
           ny <= std::min(detection_heat.height - 1, p.cell_y + 1); ++ny) {
        for (int nx = std::max(0, p.cell_x - 1);
             nx <= std::min(detection_heat.width - 1, p.cell_x + 1); ++nx) {
          const double w = std::max(0.0, detection_heat.at(ny, nx, 0));
          wsum += w;
          wy += w * ny;
          wx += w * nx;
        }
      }
      if (wsum > 0.0) {
        det.cx = (wx / wsum) * stride;
        det.cy = (wy / wsum) * stride;
      }
      det.width = opt.default_box_width;
      det.height = opt.default_box_height;

      const FeatureGrid& e_full = embedded.back();
      det.embedding.resize(static_cast<std::size_t>(e_full.channels));
      for (int c = 0; c < e_full.channels; ++c) {
        det.embedding[static_cast<std::size_t>(c)] = e_full.at(p.cell_y, p.cell_x, c);
      }

      if (t > 0) {
        const double sx = det.cx + o_c.horizontal(p.cell_y, p.cell_x);
        const double sy = det.cy + o_c.vertical(p.cell_y, p.cell_x);
        double best = std::sqrt(det.width * det.height);
        for (std::size_t r = prev_record_begin; r < prev_record_end; ++r) {
          const MotRecord& rec = result.records[r];
          const double pcx = rec.left + rec.width / 2.0;
          const double pcy = rec.top + rec.height / 2.0;
          const double dist = std::hypot(pcx - sx, pcy - sy);
          if (dist < best) {
            best = dist;
            det.width = rec.width;
            det.height = rec.height;
          }
        }
      }
      dets.push_back(std::move(det));
    }

    const std::vector<int> ids = store.associate_frame(dets, o_c, opt.mode);
    prev_record_begin = result.records.size();
    for (std::size_t d = 0; d < dets.size(); ++d) {
      MotRecord rec;
      rec.frame = t + 1;
      rec.id = ids[d];
      rec.left = dets[d].cx - dets[d].width / 2.0;
      rec.top = dets[d].cy - dets[d].height / 2.0;
      rec.width = dets[d].width;
      rec.height = dets[d].height;
      rec.conf = dets[d].score;
      result.records.push_back(rec);
    }
    prev_record_end = result.records.size();
    result.offsets.push_back(o_c);
  }
  return result;
}

SequenceFrames render_sequence(std::span<const GroundTruthTrack> tracks,
                               const SceneConfig& cfg) {
  SequenceFrames frames;
  const int count = tracks.empty() ? 0 : static_cast<int>(tracks.front().points.size());
  for (int t = 0; t < count; ++t) {
    RenderedFrame rendered = render_frame(tracks, t, cfg);
    frames.features.push_back(std::move(rendered.features));
    frames.heatmaps.push_back(std::move(rendered.heatmap));
  }
  return frames;
}

}  // namespace covtrack
