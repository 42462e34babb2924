#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <doctest.h>

#include "covtrack/cost_volume.hpp"
#include "covtrack/errors.hpp"
#include "covtrack/warp.hpp"

using namespace covtrack;

namespace {

FeatureGrid random_grid(int h, int w, int c, std::uint64_t seed, double lo = -1.0,
                        double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  FeatureGrid g(h, w, c, 4);
  for (double& v : g.data) v = dist(rng);
  return g;
}

FeatureGrid gaussian_heat(int h, int w, double cy, double cx, double sigma) {
  FeatureGrid g(h, w, 1, 4);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
      g.at(y, x, 0) = std::exp(-d2 / (2.0 * sigma * sigma));
    }
  }
  return g;
}

}  // namespace

TEST_CASE("center_attentive with an all-ones heatmap is the identity") {
  const FeatureGrid f = random_grid(3, 4, 5, 1);
  FeatureGrid heat(3, 4, 1, 4);
  for (double& v : heat.data) v = 1.0;
  const FeatureGrid out = center_attentive(f, heat);
  for (std::size_t i = 0; i < f.data.size(); ++i) CHECK(out.data[i] == f.data[i]);
}

TEST_CASE("center_attentive with a zero heatmap zeroes the grid") {
  const FeatureGrid f = random_grid(3, 4, 5, 2);
  const FeatureGrid heat(3, 4, 1, 4);
  const FeatureGrid out = center_attentive(f, heat);
  for (double v : out.data) CHECK(v == 0.0);
}

TEST_CASE("center_attentive equals the elementwise-product oracle") {
  const FeatureGrid f = random_grid(4, 5, 3, 3);
  const FeatureGrid heat = random_grid(4, 5, 1, 4, 0.0, 1.0);
  const FeatureGrid out = center_attentive(f, heat);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 5; ++x) {
      for (int c = 0; c < 3; ++c) {
        CHECK(out.at(y, x, c) == f.at(y, x, c) * heat.at(y, x, 0));
      }
    }
  }
  CHECK_THROWS_AS(center_attentive(f, FeatureGrid(4, 4, 1, 4)), ShapeError);
  CHECK_THROWS_AS(center_attentive(f, FeatureGrid(4, 5, 2, 4)), ShapeError);
}

TEST_CASE("dcn offsets broadcast zero to zero") {
  const OffsetField o(3, 4, 4);
  const DcnOffsets d = make_dcn_offsets(o);
  for (double v : d.data) CHECK(v == 0.0);
}

TEST_CASE("dcn offsets convert pixels to cells for every tap") {
  OffsetField o(3, 4, 4);
  for (int y = 0; y < 3; ++y) {
    for (int x = 0; x < 4; ++x) {
      o.vertical(y, x) = 0.0;
      o.horizontal(y, x) = 16.0;
    }
  }
  const DcnOffsets d = make_dcn_offsets(o);
  for (int y = 0; y < 3; ++y) {
    for (int x = 0; x < 4; ++x) {
      for (int tap = 0; tap < 9; ++tap) {
        CHECK(d.dy(y, x, tap) == 0.0);
        CHECK(d.dx(y, x, tap) == doctest::Approx(4.0));
      }
    }
  }
}

TEST_CASE("dcn residual mode with zero weights matches broadcast") {
  OffsetField o(3, 4, 4);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> dist(-8.0, 8.0);
  for (double& v : o.data) v = dist(rng);
  const FeatureGrid residual = random_grid(3, 4, 2, 6);
  const DcnOffsets plain = make_dcn_offsets(o);
  const DcnOffsets with_res = make_dcn_offsets(o, 3, &residual, ResidualCorrection{});
  CHECK(plain.data == with_res.data);

  ResidualCorrection corr;
  corr.weight_horizontal = 0.5;
  const DcnOffsets shifted = make_dcn_offsets(o, 3, &residual, corr);
  bool any_changed = false;
  for (std::size_t i = 0; i < plain.data.size(); ++i) {
    if (plain.data[i] != shifted.data[i]) any_changed = true;
  }
  CHECK(any_changed);
}

TEST_CASE("warp with zero offsets and a center tap is the identity") {
  const FeatureGrid f = random_grid(5, 6, 3, 7);
  const DcnOffsets zero(5, 6, 3);
  const FeatureGrid out = warp(f, zero, WarpKernel::center_tap());
  for (std::size_t i = 0; i < f.data.size(); ++i) {
    CHECK(out.data[i] == doctest::Approx(f.data[i]).epsilon(1e-12));
  }
}

TEST_CASE("uniform two-cell offset shifts the grid with zero fill") {
  const FeatureGrid f = random_grid(4, 6, 2, 8);
  DcnOffsets o(4, 6, 3);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 6; ++x) {
      for (int tap = 0; tap < 9; ++tap) o.dx(y, x, tap) = 2.0;
    }
  }
  const FeatureGrid out = warp(f, o, WarpKernel::center_tap());
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 6; ++x) {
      for (int c = 0; c < 2; ++c) {
        const double want = x + 2 < 6 ? f.at(y, x + 2, c) : 0.0;
        CHECK(out.at(y, x, c) == doctest::Approx(want).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("warp matches the per-cell sampling oracle on random offsets") {
  const FeatureGrid f = random_grid(5, 5, 2, 9);
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> dist(-2.5, 2.5);
  DcnOffsets o(5, 5, 3);
  for (double& v : o.data) v = dist(rng);
  WarpKernel kernel;
  kernel.k = 3;
  kernel.weights.resize(9);
  std::uniform_real_distribution<double> wdist(0.0, 0.3);
  for (double& w : kernel.weights) w = wdist(rng);

  const FeatureGrid out = warp(f, o, kernel);
  for (int y = 0; y < 5; ++y) {
    for (int x = 0; x < 5; ++x) {
      for (int c = 0; c < 2; ++c) {
        double want = 0.0;
        for (int tap = 0; tap < 9; ++tap) {
          const int gy = tap / 3 - 1;
          const int gx = tap % 3 - 1;
          want += kernel.weights[static_cast<std::size_t>(tap)] *
                  bilinear_sample(f, c, x + gx + o.dx(y, x, tap), y + gy + o.dy(y, x, tap));
        }
        CHECK(out.at(y, x, c) == doctest::Approx(want).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("warp validates shapes") {
  const FeatureGrid f = random_grid(4, 4, 2, 11);
  CHECK_THROWS_AS(warp(f, DcnOffsets(3, 4, 3), WarpKernel::center_tap()), ShapeError);
  WarpKernel bad;
  bad.k = 3;
  bad.weights.assign(5, 0.0);
  CHECK_THROWS_AS(warp(f, DcnOffsets(4, 4, 3), bad), ShapeError);
}

TEST_CASE("aggregate of identical grids returns them in both modes") {
  const FeatureGrid f = random_grid(4, 4, 3, 12, 0.0, 1.0);
  for (WeightMode mode : {WeightMode::kAverage, WeightMode::kConfidence}) {
    AggregationConfig cfg;
    cfg.previous_count = 1;
    cfg.mode = mode;
    const std::vector<FeatureGrid> warped{f};
    const FeatureGrid out = aggregate(f, warped, cfg);
    for (std::size_t i = 0; i < f.data.size(); ++i) {
      CHECK(out.data[i] == doctest::Approx(f.data[i]).epsilon(1e-9));
    }
  }
}

TEST_CASE("average aggregation is the arithmetic mean for T=1") {
  const FeatureGrid a = random_grid(3, 3, 2, 13);
  const FeatureGrid b = random_grid(3, 3, 2, 14);
  AggregationConfig cfg;
  cfg.previous_count = 1;
  const FeatureGrid out = aggregate(a, std::vector<FeatureGrid>{b}, cfg);
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    CHECK(out.data[i] == doctest::Approx(0.5 * (a.data[i] + b.data[i])).epsilon(1e-12));
  }
}

TEST_CASE("confidence aggregation applies per-cell softmax weights") {
  // Heatmap channel is the last one; weights follow it at every cell.
  const FeatureGrid a = random_grid(3, 4, 3, 15, 0.0, 1.0);
  const FeatureGrid b = random_grid(3, 4, 3, 16, 0.0, 1.0);
  AggregationConfig cfg;
  cfg.previous_count = 1;
  cfg.mode = WeightMode::kConfidence;
  cfg.temperature = 2.0;
  const FeatureGrid out = aggregate(a, std::vector<FeatureGrid>{b}, cfg);
  for (int y = 0; y < 3; ++y) {
    for (int x = 0; x < 4; ++x) {
      const double ea = std::exp(2.0 * a.at(y, x, 2));
      const double eb = std::exp(2.0 * b.at(y, x, 2));
      const double wa = ea / (ea + eb);
      const double wb = eb / (ea + eb);
      CHECK(wa + wb == doctest::Approx(1.0).epsilon(1e-6));
      for (int c = 0; c < 3; ++c) {
        CHECK(out.at(y, x, c) ==
              doctest::Approx(wa * a.at(y, x, c) + wb * b.at(y, x, c)).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("average aggregation stays inside the per-cell envelope") {
  const FeatureGrid a = random_grid(4, 4, 2, 17);
  const FeatureGrid b = random_grid(4, 4, 2, 18);
  const FeatureGrid c = random_grid(4, 4, 2, 19);
  AggregationConfig cfg;
  cfg.previous_count = 2;
  const FeatureGrid out = aggregate(a, std::vector<FeatureGrid>{b, c}, cfg);
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double lo = std::min({a.data[i], b.data[i], c.data[i]});
    const double hi = std::max({a.data[i], b.data[i], c.data[i]});
    CHECK(out.data[i] >= lo - 1e-12);
    CHECK(out.data[i] <= hi + 1e-12);
  }
}

TEST_CASE("aggregate rejects bad input lists") {
  const FeatureGrid f = random_grid(3, 3, 2, 20);
  AggregationConfig cfg;
  cfg.previous_count = 2;
  CHECK_THROWS_AS(aggregate(f, std::vector<FeatureGrid>{}, cfg), InputError);
  CHECK_THROWS_AS(aggregate(f, std::vector<FeatureGrid>{f}, cfg), InputError);
  cfg.previous_count = 1;
  CHECK_THROWS_AS(aggregate(f, std::vector<FeatureGrid>{FeatureGrid(2, 3, 2, 4)}, cfg),
                  ShapeError);
}

TEST_CASE("a single Gaussian blob yields one peak at its center cell") {
  const FeatureGrid heat = gaussian_heat(11, 13, 5.0, 7.0, 1.5);
  const std::vector<Peak> peaks = detect_peaks(heat, 0.3);
  REQUIRE(peaks.size() == 1);
  CHECK(peaks[0].cell_y == 5);
  CHECK(peaks[0].cell_x == 7);
  CHECK(peaks[0].x == doctest::Approx(7.0 * 4));
  CHECK(peaks[0].y == doctest::Approx(5.0 * 4));
}

TEST_CASE("an all-zero heatmap yields no peaks") {
  CHECK(detect_peaks(FeatureGrid(6, 6, 1, 4), 0.3).empty());
}

TEST_CASE("peaks below the threshold are dropped") {
  FeatureGrid heat = gaussian_heat(16, 16, 4.0, 4.0, 1.2);
  const FeatureGrid weak = gaussian_heat(16, 16, 11.0, 11.0, 1.2);
  for (std::size_t i = 0; i < heat.data.size(); ++i) heat.data[i] += 0.2 * weak.data[i];
  const std::vector<Peak> peaks = detect_peaks(heat, 0.3);
  REQUIRE(peaks.size() == 1);
  CHECK(peaks[0].cell_y == 4);
  CHECK(peaks[0].cell_x == 4);
}

TEST_CASE("peaks come out ordered by descending score") {
  FeatureGrid heat(10, 10, 1, 4);
  heat.at(2, 2, 0) = 0.5;
  heat.at(7, 7, 0) = 0.9;
  heat.at(2, 7, 0) = 0.7;
  const std::vector<Peak> peaks = detect_peaks(heat, 0.3);
  REQUIRE(peaks.size() == 3);
  CHECK(peaks[0].score == 0.9);
  CHECK(peaks[1].score == 0.7);
  CHECK(peaks[2].score == 0.5);
}

TEST_CASE("plateaus are not strict maxima") {
  FeatureGrid heat(5, 5, 1, 4);
  heat.at(2, 2, 0) = 0.8;
  heat.at(2, 3, 0) = 0.8;
  CHECK(detect_peaks(heat, 0.3).empty());
}

TEST_CASE("boundary cells compare only in-bounds neighbors") {
  FeatureGrid heat(4, 4, 1, 4);
  heat.at(0, 0, 0) = 0.9;
  const std::vector<Peak> peaks = detect_peaks(heat, 0.3);
  REQUIRE(peaks.size() == 1);
  CHECK(peaks[0].cell_y == 0);
  CHECK(peaks[0].cell_x == 0);
  CHECK_THROWS_AS(detect_peaks(heat, 0.0), InputError);
  CHECK_THROWS_AS(detect_peaks(heat, 1.0), InputError);
}

TEST_CASE("occlusion recovery with ground-truth-accurate offsets") {
  // A blob visible in the previous frame but zeroed in the current one is
  // restored by warping along the exact displacement and aggregating.
  const int h = 16, w = 20;
  const FeatureGrid prev_heat = gaussian_heat(h, w, 8.0, 6.0, 1.5);
  const FeatureGrid cur_heat(h, w, 1, 4);  // occluded: nothing visible

  // True motion: +2 cells right per frame, so the object now sits at (8, 8).
  OffsetField truth(h, w, 4);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) truth.horizontal(y, x) = -2.0 * 4;  // points back
  }
  const FeatureGrid masked = center_attentive(prev_heat, prev_heat);
  const FeatureGrid warped = warp(masked, make_dcn_offsets(truth), WarpKernel::center_tap());

  AggregationConfig cfg;
  cfg.previous_count = 1;
  const FeatureGrid fused = aggregate(cur_heat, std::vector<FeatureGrid>{warped}, cfg);

  const std::vector<Peak> peaks = detect_peaks(fused, 0.25);
  REQUIRE(peaks.size() >= 1);
  CHECK(peaks[0].cell_y == 8);
  CHECK(peaks[0].cell_x == 8);
  // Original blob peaked at 1.0; the restored peak keeps at least half.
  CHECK(peaks[0].score >= 0.5 - 1e-9);
}

TEST_CASE("warped blob center lands within one cell under exact offsets") {
  const int h = 16, w = 20;
  const FeatureGrid prev_heat = gaussian_heat(h, w, 4.0, 12.0, 1.5);
  OffsetField truth(h, w, 4);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      truth.vertical(y, x) = -3.0 * 4;   // moved down 3 cells
      truth.horizontal(y, x) = 2.0 * 4;  // moved left 2 cells
    }
  }
  const FeatureGrid warped =
      warp(prev_heat, make_dcn_offsets(truth), WarpKernel::center_tap());
  const std::vector<Peak> peaks = detect_peaks(warped, 0.3);
  REQUIRE(peaks.size() == 1);
  CHECK(std::abs(peaks[0].cell_y - 7) <= 1);
  CHECK(std::abs(peaks[0].cell_x - 10) <= 1);
}
