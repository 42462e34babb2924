#include <cmath>
#include <random>
#include <vector>

#include <doctest.h>

#include "covtrack/association.hpp"
#include "covtrack/errors.hpp"

using namespace covtrack;

namespace {

Detection make_det(int frame, double cx, double cy, double w = 16, double h = 16,
                   std::vector<double> embedding = {}) {
  Detection d;
  d.frame = frame;
  d.cx = cx;
  d.cy = cy;
  d.width = w;
  d.height = h;
  d.embedding = std::move(embedding);
  return d;
}

OffsetField uniform_field(int h, int w, int stride, double dv, double dh) {
  OffsetField f(h, w, stride);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      f.vertical(y, x) = dv;
      f.horizontal(y, x) = dh;
    }
  }
  return f;
}

}  // namespace

TEST_CASE("cosine similarity basics") {
  const std::vector<double> a{1, 0, 0};
  const std::vector<double> b{0, 1, 0};
  const std::vector<double> z{0, 0, 0};
  CHECK(cosine_similarity(a, a) == doctest::Approx(1.0));
  CHECK(cosine_similarity(a, b) == doctest::Approx(0.0));
  CHECK(cosine_similarity(a, z) == 0.0);
  CHECK_THROWS_AS(cosine_similarity(a, std::vector<double>{1, 2}), ShapeError);
}

TEST_CASE("round one searches at the offset-corrected center") {
  // Offset points 8 px left; the search lands at (32, 40) and finds the
  // previous detection 2 px away, well inside r = sqrt(16 * 9) = 12.
  const std::vector<Detection> dets{make_det(1, 40, 40, 16, 9)};
  const std::vector<Detection> prev{make_det(0, 30, 40, 16, 9)};
  const OffsetField field = uniform_field(20, 20, 4, 0.0, -8.0);
  const std::vector<int> match = da_round_one(dets, prev, field);
  REQUIRE(match.size() == 1);
  CHECK(match[0] == 0);
}

TEST_CASE("round one without previous detections matches nothing") {
  const std::vector<Detection> dets{make_det(1, 40, 40)};
  const std::vector<int> match = da_round_one(dets, {}, OffsetField());
  CHECK(match == std::vector<int>{-1});
}

TEST_CASE("round one rejects candidates outside the radius") {
  const std::vector<Detection> dets{make_det(1, 40, 40, 16, 9)};  // r = 12
  const std::vector<Detection> prev{make_det(0, 60, 40, 16, 9)};  // 20 px away
  const std::vector<int> match = da_round_one(dets, prev, OffsetField());
  CHECK(match == std::vector<int>{-1});
}

TEST_CASE("round one greedy contention: the closer detection wins") {
  const std::vector<Detection> dets{make_det(1, 50, 40), make_det(1, 44, 40)};
  const std::vector<Detection> prev{make_det(0, 42, 40)};
  const std::vector<int> match = da_round_one(dets, prev, OffsetField());
  CHECK(match[0] == -1);  // 8 px away, loses to the 2 px candidate
  CHECK(match[1] == 0);
}

TEST_CASE("round two picks the highest similarity above the threshold") {
  Tracklet a;
  a.id = 1;
  a.embedding = {1, 0};
  Tracklet b;
  b.id = 2;
  b.embedding = {0.8, 0.6};
  const std::vector<const Tracklet*> candidates{&a, &b};

  // Identical embedding: similarity 1 with tracklet 1.
  CHECK(da_round_two(make_det(2, 0, 0, 16, 16, {1, 0}), candidates, 0.3) == 1);
  // Orthogonal to tracklet 1, similarity 0.6 with tracklet 2.
  CHECK(da_round_two(make_det(2, 0, 0, 16, 16, {0, 1}), candidates, 0.3) == 2);
  // Similarities {0.6, 0.96}: the higher one wins.
  CHECK(da_round_two(make_det(2, 0, 0, 16, 16, {0.6, 0.8}), candidates, 0.3) == 2);
  // Threshold beyond every similarity: no match.
  CHECK(da_round_two(make_det(2, 0, 0, 16, 16, {0, 1}), candidates, 0.95) == -1);
}

TEST_CASE("round two similarity strictly above the threshold is required") {
  Tracklet t;
  t.id = 5;
  t.embedding = {1, 0};
  const std::vector<const Tracklet*> candidates{&t};
  const Detection d = make_det(1, 0, 0, 16, 16, {0, 1});  // similarity 0
  CHECK(da_round_two(d, candidates, 0.0) == -1);
}

TEST_CASE("round-two match count never grows with the threshold") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<Tracklet> tracklets(6);
  for (std::size_t i = 0; i < tracklets.size(); ++i) {
    tracklets[i].id = static_cast<int>(i) + 1;
    tracklets[i].embedding = {dist(rng), dist(rng), dist(rng)};
  }
  std::vector<const Tracklet*> candidates;
  for (const Tracklet& t : tracklets) candidates.push_back(&t);

  std::vector<Detection> dets;
  for (int i = 0; i < 10; ++i) {
    dets.push_back(make_det(1, 0, 0, 16, 16, {dist(rng), dist(rng), dist(rng)}));
  }
  int last_count = 11;
  for (double threshold : {0.0, 0.2, 0.4, 0.6, 0.8, 0.99}) {
    int count = 0;
    for (const Detection& d : dets) {
      if (da_round_two(d, candidates, threshold) != -1) ++count;
    }
    CHECK(count <= last_count);
    last_count = count;
  }
}

TEST_CASE("an empty store assigns sequential ids starting at 1") {
  TrackletStore store;
  const std::vector<Detection> dets{make_det(0, 10, 10), make_det(0, 50, 50),
                                    make_det(0, 90, 90)};
  const std::vector<int> ids = store.associate_frame(dets, OffsetField(),
                                                     AssociationMode::kCostVolume);
  CHECK(ids == std::vector<int>{1, 2, 3});
  CHECK(store.tracklets().size() == 3);
}

TEST_CASE("an accurate offset keeps one identity across two frames") {
  TrackletStore store;
  const std::vector<Detection> f0{make_det(0, 40, 40)};
  store.associate_frame(f0, OffsetField(), AssociationMode::kCostVolume);

  // Object moved +20 px right; offsets point back to the previous position.
  const std::vector<Detection> f1{make_det(1, 60, 40)};
  const OffsetField field = uniform_field(30, 30, 4, 0.0, -20.0);
  const std::vector<int> ids =
      store.associate_frame(f1, field, AssociationMode::kCostVolume);
  CHECK(ids == std::vector<int>{1});
  CHECK(store.tracklets().size() == 1);
  CHECK(store.tracklets()[0].detections.size() == 2);
}

TEST_CASE("baseline mode ignores offsets and round two") {
  // Same large motion: with zero offsets the search around the unchanged
  // center misses, and without embeddings a new identity appears.
  TrackletStore store;
  std::vector<double> emb{1, 0};
  const std::vector<Detection> f0{make_det(0, 40, 40, 16, 16, emb)};
  store.associate_frame(f0, OffsetField(), AssociationMode::kBaselineZeroOffset);
  const std::vector<Detection> f1{make_det(1, 60, 40, 16, 16, emb)};
  const OffsetField field = uniform_field(30, 30, 4, 0.0, -20.0);
  const std::vector<int> ids =
      store.associate_frame(f1, field, AssociationMode::kBaselineZeroOffset);
  CHECK(ids == std::vector<int>{2});
}

TEST_CASE("a gap is bridged by round two on the embedding") {
  TrackletStore store;
  const std::vector<double> emb{0.6, 0.8};
  store.associate_frame(std::vector<Detection>{make_det(0, 40, 40, 16, 16, emb)}, OffsetField(),
                        AssociationMode::kCostVolume);
  // Frame 1: object missing entirely.
  store.associate_frame(std::vector<Detection>{}, OffsetField(),
                        AssociationMode::kCostVolume);
  // Frame 2: reappears far away with the same appearance.
  const std::vector<int> ids =
      store.associate_frame(std::vector<Detection>{make_det(2, 120, 90, 16, 16, emb)}, OffsetField(),
                            AssociationMode::kCostVolume);
  CHECK(ids == std::vector<int>{1});
}

TEST_CASE("tracklets retire after max_age frames unseen") {
  AssociationConfig cfg;
  cfg.max_age = 2;
  TrackletStore store(cfg);
  const std::vector<double> emb{1, 0};
  store.associate_frame(std::vector<Detection>{make_det(0, 40, 40, 16, 16, emb)}, OffsetField(),
                        AssociationMode::kCostVolume);
  for (int frame = 1; frame <= 3; ++frame) {
    store.associate_frame(std::vector<Detection>{}, OffsetField(),
                          AssociationMode::kCostVolume);
  }
  CHECK(store.tracklets().empty());
  const std::vector<int> ids =
      store.associate_frame(std::vector<Detection>{make_det(4, 40, 40, 16, 16, emb)}, OffsetField(),
                            AssociationMode::kCostVolume);
  CHECK(ids == std::vector<int>{2});  // the retired identity is gone
}

TEST_CASE("no two detections in a frame share a tracklet id") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> pos(8.0, 120.0);
  std::uniform_real_distribution<double> edist(-1.0, 1.0);
  TrackletStore store;
  for (int frame = 0; frame < 12; ++frame) {
    std::vector<Detection> dets;
    const int n = 1 + static_cast<int>(rng() % 5);
    for (int i = 0; i < n; ++i) {
      dets.push_back(
          make_det(frame, pos(rng), pos(rng), 16, 16, {edist(rng), edist(rng)}));
    }
    const std::vector<int> ids =
        store.associate_frame(dets, OffsetField(), AssociationMode::kCostVolume);
    for (std::size_t a = 0; a < ids.size(); ++a) {
      for (std::size_t b = a + 1; b < ids.size(); ++b) {
        CHECK(ids[a] != ids[b]);
      }
    }
  }
}

TEST_CASE("identical inputs give identical assignments") {
  auto run = [] {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> pos(8.0, 120.0);
    TrackletStore store;
    std::vector<std::vector<int>> all_ids;
    for (int frame = 0; frame < 8; ++frame) {
      std::vector<Detection> dets;
      for (int i = 0; i < 4; ++i) {
        dets.push_back(make_det(frame, pos(rng), pos(rng), 16, 16, {1.0, 0.0}));
      }
      all_ids.push_back(
          store.associate_frame(dets, OffsetField(), AssociationMode::kCostVolume));
    }
    return all_ids;
  };
  CHECK(run() == run());
}

TEST_CASE("frames must arrive in increasing order") {
  TrackletStore store;
  store.associate_frame(std::vector<Detection>{make_det(3, 40, 40)}, OffsetField(),
                        AssociationMode::kCostVolume);
  CHECK_THROWS_AS(store.associate_frame(std::vector<Detection>{make_det(3, 50, 50)}, OffsetField(),
                                        AssociationMode::kCostVolume),
                  StateError);
  CHECK_THROWS_AS(store.associate_frame(std::vector<Detection>{make_det(1, 50, 50)}, OffsetField(),
                                        AssociationMode::kCostVolume),
                  StateError);
  const std::vector<Detection> mixed{make_det(4, 10, 10), make_det(5, 20, 20)};
  CHECK_THROWS_AS(
      store.associate_frame(mixed, OffsetField(), AssociationMode::kCostVolume),
      StateError);
}

TEST_CASE("tracklet embedding follows the configured policy") {
  Tracklet t;
  const Detection first = make_det(0, 0, 0, 16, 16, {1.0, 0.0});
  update_tracklet_embedding(t, first, EmbeddingPolicy::kLatest);
  CHECK(t.embedding == std::vector<double>{1.0, 0.0});

  const Detection second = make_det(1, 0, 0, 16, 16, {0.0, 1.0});
  update_tracklet_embedding(t, second, EmbeddingPolicy::kLatest);
  CHECK(t.embedding == std::vector<double>{0.0, 1.0});

  Tracklet ema;
  update_tracklet_embedding(ema, first, EmbeddingPolicy::kExponentialAverage, 0.9);
  update_tracklet_embedding(ema, second, EmbeddingPolicy::kExponentialAverage, 0.9);
  CHECK(ema.embedding[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 0.0));
  CHECK(ema.embedding[1] == doctest::Approx(0.9 * 0.0 + 0.1 * 1.0));
}
