#include "covtrack/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "covtrack/errors.hpp"

namespace covtrack {

namespace {

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

void check_unique_ids(const std::vector<IdBox>& boxes, int frame, const char* which) {
  std::set<int> seen;
  for (const IdBox& b : boxes) {
    if (!seen.insert(b.id).second) {
      throw DataError(std::string(which) + " id " + std::to_string(b.id) +
                      " duplicated in frame " + std::to_string(frame));
    }
  }
}

}  // namespace

double iou(const Box& a, const Box& b) {
  if (a.width <= 0.0 || a.height <= 0.0 || b.width <= 0.0 || b.height <= 0.0) {
    throw InputError("iou: boxes must have positive extents");
  }
  const double ix = std::max(0.0, std::min(a.x + a.width, b.x + b.width) - std::max(a.x, b.x));
  const double iy =
      std::max(0.0, std::min(a.y + a.height, b.y + b.height) - std::max(a.y, b.y));
  const double inter = ix * iy;
  const double uni = a.width * a.height + b.width * b.height - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

Assignment hungarian(const Matrix& cost) {
  const int rows = cost.rows;
  const int cols = cost.cols;
  Assignment result;
  result.row_to_col.assign(static_cast<std::size_t>(rows), -1);
  if (rows == 0 || cols == 0) return result;

  // Replace infinities with a finite sentinel larger than any legal total so
  // potentials keep full precision.
  double finite_sum = 1.0;
  for (double v : cost.data) {
    if (std::isfinite(v)) finite_sum += std::abs(v);
  }
  const double kBig = finite_sum;
  const int n = std::max(rows, cols);
  auto cell = [&](int r, int c) -> double {
    if (r >= rows || c >= cols) return 0.0;  // padding
    const double v = cost.at(r, c);
    return std::isfinite(v) ? v : kBig;
  };

  // Shortest augmenting path with row/column potentials, O(n^3).
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<double> v(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<int> match(static_cast<std::size_t>(n) + 1, 0);  // column -> row (1-based)
  std::vector<int> way(static_cast<std::size_t>(n) + 1, 0);

  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n) + 1, inf);
    std::vector<char> used(static_cast<std::size_t>(n) + 1, 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = match[static_cast<std::size_t>(j0)];
      int j1 = -1;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = cell(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] -
                           v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(match[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (match[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      match[static_cast<std::size_t>(j0)] = match[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }

  for (int j = 1; j <= n; ++j) {
    const int r = match[static_cast<std::size_t>(j)] - 1;
    const int c = j - 1;
    if (r < rows && c < cols) {
      const double v0 = cost.at(r, c);
      if (std::isfinite(v0)) {
        result.row_to_col[static_cast<std::size_t>(r)] = c;
        result.cost += v0;
      }
    }
  }
  return result;
}

EvalReport evaluate(const FrameObjects& gt, const FrameObjects& hyp, double iou_threshold) {
  EvalReport report;

  std::set<int> frames;
  for (const auto& [f, boxes] : gt) {
    check_unique_ids(boxes, f, "ground-truth");
    frames.insert(f);
    report.total_gt += static_cast<long>(boxes.size());
  }
  for (const auto& [f, boxes] : hyp) {
    check_unique_ids(boxes, f, "hypothesis");
    frames.insert(f);
    report.total_hyp += static_cast<long>(boxes.size());
  }
  if (report.total_gt == 0) {
    throw InputError("evaluate: ground truth contains no boxes");
  }

  std::map<int, int> last_hyp_for_gt;                  // persists across gaps
  std::map<int, long> gt_frames_present, gt_frames_matched;
  std::map<int, std::vector<char>> gt_match_history;   // per gt, present-frame match flags
  std::map<std::pair<int, int>, long> overlap_frames;  // (gt id, hyp id) -> co-located count

  static const std::vector<IdBox> kNone;
  for (int frame : frames) {
    auto git = gt.find(frame);
    auto hit = hyp.find(frame);
    const std::vector<IdBox>& gt_boxes = git != gt.end() ? git->second : kNone;
    const std::vector<IdBox>& hyp_boxes = hit != hyp.end() ? hit->second : kNone;

    // Identity-overlap counts feed IDF1 independently of the CLEAR matching.
    for (const IdBox& g : gt_boxes) {
      for (const IdBox& h : hyp_boxes) {
        if (iou(g.box, h.box) >= iou_threshold) {
          ++overlap_frames[{g.id, h.id}];
        }
      }
    }

    std::vector<char> gt_taken(gt_boxes.size(), 0);
    std::vector<char> hyp_taken(hyp_boxes.size(), 0);
    std::vector<std::pair<int, int>> matched;  // (gt index, hyp index)

    // Match persistence first.
    for (std::size_t gi = 0; gi < gt_boxes.size(); ++gi) {
      auto prev = last_hyp_for_gt.find(gt_boxes[gi].id);
      if (prev == last_hyp_for_gt.end()) continue;
      for (std::size_t hi = 0; hi < hyp_boxes.size(); ++hi) {
        if (hyp_taken[hi] || hyp_boxes[hi].id != prev->second) continue;
        if (iou(gt_boxes[gi].box, hyp_boxes[hi].box) >= iou_threshold) {
          gt_taken[gi] = 1;
          hyp_taken[hi] = 1;
          matched.emplace_back(static_cast<int>(gi), static_cast<int>(hi));
        }
        break;
      }
    }

    // Minimum-cost assignment on the remainder, cost 1 - IoU.
    std::vector<int> free_gt, free_hyp;
    for (std::size_t gi = 0; gi < gt_boxes.size(); ++gi) {
      if (!gt_taken[gi]) free_gt.push_back(static_cast<int>(gi));
    }
    for (std::size_t hi = 0; hi < hyp_boxes.size(); ++hi) {
      if (!hyp_taken[hi]) free_hyp.push_back(static_cast<int>(hi));
    }
    if (!free_gt.empty() && !free_hyp.empty()) {
      Matrix costm(static_cast<int>(free_gt.size()), static_cast<int>(free_hyp.size()));
      for (std::size_t a = 0; a < free_gt.size(); ++a) {
        for (std::size_t b = 0; b < free_hyp.size(); ++b) {
          const double ov = iou(gt_boxes[static_cast<std::size_t>(free_gt[a])].box,
                                hyp_boxes[static_cast<std::size_t>(free_hyp[b])].box);
          costm.at(static_cast<int>(a), static_cast<int>(b)) =
              ov >= iou_threshold ? 1.0 - ov : std::numeric_limits<double>::infinity();
        }
      }
      const Assignment asg = hungarian(costm);
      for (std::size_t a = 0; a < free_gt.size(); ++a) {
        const int b = asg.row_to_col[a];
        if (b < 0) continue;
        matched.emplace_back(free_gt[a], free_hyp[static_cast<std::size_t>(b)]);
      }
    }

    std::sort(matched.begin(), matched.end());
    auto& match_list = report.frame_matches[frame];
    for (const auto& [gi, hi] : matched) {
      const int gid = gt_boxes[static_cast<std::size_t>(gi)].id;
      const int hid = hyp_boxes[static_cast<std::size_t>(hi)].id;
      match_list.emplace_back(gid, hid);
      ++report.matches;

      auto prev = last_hyp_for_gt.find(gid);
      if (prev != last_hyp_for_gt.end() && prev->second != hid) {
        ++report.ids;
      }
      last_hyp_for_gt[gid] = hid;
    }

    std::set<int> matched_gt_ids;
    for (const auto& [gi, hi] : matched) {
      matched_gt_ids.insert(gt_boxes[static_cast<std::size_t>(gi)].id);
    }
    for (const IdBox& g : gt_boxes) {
      ++gt_frames_present[g.id];
      const bool m = matched_gt_ids.count(g.id) > 0;
      if (m) ++gt_frames_matched[g.id];
      gt_match_history[g.id].push_back(m ? 1 : 0);
    }

    report.fn += static_cast<long>(gt_boxes.size()) - static_cast<long>(matched.size());
    report.fp += static_cast<long>(hyp_boxes.size()) - static_cast<long>(matched.size());
  }

  // Fragmentations: a tracked ground truth that resumes after untracked frames.
  for (const auto& [gid, history] : gt_match_history) {
    bool seen_match = false;
    bool in_gap = false;
    for (char m : history) {
      if (m) {
        if (seen_match && in_gap) ++report.frag;
        seen_match = true;
        in_gap = false;
      } else if (seen_match) {
        in_gap = true;
      }
    }
  }

  report.gt_track_count = static_cast<int>(gt_frames_present.size());
  for (const auto& [gid, present] : gt_frames_present) {
    const double ratio =
        static_cast<double>(gt_frames_matched[gid]) / static_cast<double>(present);
    if (ratio >= 0.8) ++report.mostly_tracked;
    if (ratio <= 0.2) ++report.mostly_lost;
  }
  if (report.gt_track_count > 0) {
    report.mt_ratio = static_cast<double>(report.mostly_tracked) / report.gt_track_count;
    report.ml_ratio = static_cast<double>(report.mostly_lost) / report.gt_track_count;
  }

  report.mota =
      1.0 - static_cast<double>(report.fn + report.fp + report.ids) / report.total_gt;

  // IDF1 via optimal global assignment of ground-truth tracks to hypothesis
  // tracks, maximizing identity-consistent frame counts.
  std::set<int> gt_ids, hyp_ids;
  for (const auto& [key, count] : overlap_frames) {
    gt_ids.insert(key.first);
    hyp_ids.insert(key.second);
  }
  long idtp = 0;
  if (!gt_ids.empty() && !hyp_ids.empty()) {
    std::vector<int> gvec(gt_ids.begin(), gt_ids.end());
    std::vector<int> hvec(hyp_ids.begin(), hyp_ids.end());
    Matrix costm(static_cast<int>(gvec.size()), static_cast<int>(hvec.size()));
    for (std::size_t a = 0; a < gvec.size(); ++a) {
      for (std::size_t b = 0; b < hvec.size(); ++b) {
        auto it = overlap_frames.find({gvec[a], hvec[b]});
        const long ov = it != overlap_frames.end() ? it->second : 0;
        costm.at(static_cast<int>(a), static_cast<int>(b)) = -static_cast<double>(ov);
      }
    }
    const Assignment asg = hungarian(costm);
    for (std::size_t a = 0; a < gvec.size(); ++a) {
      const int b = asg.row_to_col[a];
      if (b < 0) continue;
      auto it = overlap_frames.find({gvec[a], hvec[static_cast<std::size_t>(b)]});
      if (it != overlap_frames.end()) idtp += it->second;
    }
  }
  if (report.total_gt + report.total_hyp > 0) {
    report.idf1 =
        2.0 * static_cast<double>(idtp) / static_cast<double>(report.total_gt + report.total_hyp);
  }
  return report;
}

std::string report_to_text(const EvalReport& r) {
  std::string out;
  out += "mota=" + format_double(r.mota) + "\n";
  out += "idf1=" + format_double(r.idf1) + "\n";
  out += "ids=" + std::to_string(r.ids) + "\n";
  out += "fn=" + std::to_string(r.fn) + "\n";
  out += "fp=" + std::to_string(r.fp) + "\n";
  out += "frag=" + std::to_string(r.frag) + "\n";
  out += "mt_ratio=" + format_double(r.mt_ratio) + "\n";
  out += "ml_ratio=" + format_double(r.ml_ratio) + "\n";
  out += "gt_total=" + std::to_string(r.total_gt) + "\n";
  out += "hyp_total=" + std::to_string(r.total_hyp) + "\n";
  out += "matches=" + std::to_string(r.matches) + "\n";
  out += "gt_tracks=" + std::to_string(r.gt_track_count) + "\n";
  out += "mostly_tracked=" + std::to_string(r.mostly_tracked) + "\n";
  out += "mostly_lost=" + std::to_string(r.mostly_lost) + "\n";
  return out;
}

std::string report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["mota"] = r.mota;
  j["idf1"] = r.idf1;
  j["ids"] = r.ids;
  j["fn"] = r.fn;
  j["fp"] = r.fp;
  j["frag"] = r.frag;
  j["mt_ratio"] = r.mt_ratio;
  j["ml_ratio"] = r.ml_ratio;
  j["gt_total"] = r.total_gt;
  j["hyp_total"] = r.total_hyp;
  j["matches"] = r.matches;
  j["gt_tracks"] = r.gt_track_count;
  j["mostly_tracked"] = r.mostly_tracked;
  j["mostly_lost"] = r.mostly_lost;
  return j.dump(2) + "\n";
}

}  // namespace covtrack
