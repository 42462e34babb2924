#pragma once

#include <map>
#include <string>
#include <vector>

#include "covtrack/grid.hpp"

namespace covtrack {

/// Axis-aligned box, left-top corner plus extents, in input pixels.
struct Box {
  double x = 0.0;
  double y = 0.0;
  double width = 0.0;
  double height = 0.0;
};

/// Intersection over union; 0 for disjoint boxes.
double iou(const Box& a, const Box& b);

struct Assignment {
  std::vector<int> row_to_col;  // -1 when a row maps to padding
  double cost = 0.0;            // sum over matched real cells
};

/// Minimum-cost assignment on a (possibly rectangular) cost matrix, padded
/// internally to square. Infinity marks forbidden pairs; such pairs are never
/// reported as matches.
Assignment hungarian(const Matrix& cost);

struct IdBox {
  int id = 0;
  Box box;
};

/// frame index -> boxes present in that frame.
using FrameObjects = std::map<int, std::vector<IdBox>>;

struct EvalReport {
  double mota = 0.0;
  double idf1 = 0.0;
  long ids = 0;
  long fp = 0;
  long fn = 0;
  long frag = 0;
  double mt_ratio = 0.0;
  double ml_ratio = 0.0;
  long total_gt = 0;
  long total_hyp = 0;
  long matches = 0;
  int gt_track_count = 0;
  int mostly_tracked = 0;
  int mostly_lost = 0;
  std::map<int, std::vector<std::pair<int, int>>> frame_matches;  // frame -> (gt, hyp)
};

/// Per-frame matching with match persistence: a ground-truth object keeps its
/// previous hypothesis while the pair still clears the IoU threshold; the
/// remainder is matched by minimum-cost assignment on 1 - IoU. MT >= 80% of
/// a track's span, ML <= 20%. Identity F1 uses an optimal global track
/// assignment over co-located frame counts.
EvalReport evaluate(const FrameObjects& gt, const FrameObjects& hyp,
                    double iou_threshold = 0.5);

/// Flat key=value lines, stable order.
std::string report_to_text(const EvalReport& report);
/// JSON object with the same stable key order.
std::string report_to_json(const EvalReport& report);

}  // namespace covtrack
