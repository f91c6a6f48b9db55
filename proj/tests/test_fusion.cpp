#include "aerolabel/fusion.hpp"

#include <gtest/gtest.h>

#include <set>

#include "support/fusion_oracle.hpp"
#include "support/testutil.hpp"

using namespace aerolabel;

namespace {

Detection det(double x0, double y0, double x1, double y1, int class_id = 1,
              double conf = 0.8, std::string source = "m",
              std::int64_t image_id = 1) {
  return {image_id, {x0, y0, x1, y1}, class_id, conf, std::move(source)};
}

std::vector<Detection> random_detections(std::uint64_t seed, int count,
                                         int n_classes = 2, int n_sources = 3,
                                         int n_images = 1) {
  auto rng = make_rng(seed);
  std::vector<Detection> out;
  for (int i = 0; i < count; ++i) {
    Detection d;
    d.image_id = 1 + static_cast<std::int64_t>(uniform_below(rng, n_images));
    d.box = testutil::random_real_box(rng, 0.0, 60.0, 1.0);
    d.class_id = 1 + static_cast<int>(uniform_below(rng, n_classes));
    d.confidence = uniform_real(rng, 0.05, 1.0);
    d.source = "m" + std::to_string(uniform_below(rng, n_sources));
    out.push_back(std::move(d));
  }
  return out;
}

bool same_boxes(const std::vector<Detection>& a, const std::vector<Detection>& b,
                double tol = 1e-9) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::abs(a[i].box.x_min - b[i].box.x_min) > tol ||
        std::abs(a[i].box.y_min - b[i].box.y_min) > tol ||
        std::abs(a[i].box.x_max - b[i].box.x_max) > tol ||
        std::abs(a[i].box.y_max - b[i].box.y_max) > tol ||
        a[i].class_id != b[i].class_id || a[i].source != b[i].source ||
        a[i].confidence != b[i].confidence) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST(SmallBb, WidthAndHeightMustBothPass) {
  const std::vector<Detection> dets{det(0, 0, 2, 2), det(10, 10, 20, 20)};
  const auto out = small_bb(dets, 5, 5);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].box, (BoundingBox{10, 10, 20, 20}));

  EXPECT_EQ(small_bb(dets, 0, 0), dets);  // vacuous threshold

  const std::vector<Detection> wide{det(0, 0, 10, 3)};
  EXPECT_TRUE(small_bb(wide, 5, 5).empty());  // height fails
}

TEST(SmallBb, SubsetAndIdempotent) {
  const auto dets = random_detections(3, 20);
  const auto once = small_bb(dets, 4, 6);
  EXPECT_LE(once.size(), dets.size());
  EXPECT_EQ(small_bb(once, 4, 6), once);
}

TEST(MergeBb, PairAboveThresholdMerges) {
  // IoU((0,0,10,12),(0,4,10,16)) = 80/160 = 0.5.
  const std::vector<Detection> dets{det(0, 0, 10, 12, 1, 0.7, "a"),
                                    det(0, 4, 10, 16, 1, 0.9, "b")};
  const auto out = merge_bb(dets, OverlapMetric::iou, 0.3, ClassMode::same_class);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].box, (BoundingBox{0, 0, 10, 16}));
  EXPECT_DOUBLE_EQ(out[0].confidence, 0.9);
  EXPECT_EQ(out[0].source, "merged(a,b)");
}

TEST(MergeBb, PairBelowThresholdKept) {
  // IoU((0,0,10,10),(0,8,10,18)) = 20/180 < 0.3.
  const std::vector<Detection> dets{det(0, 0, 10, 10), det(0, 8, 10, 18)};
  const auto out = merge_bb(dets, OverlapMetric::iou, 0.3, ClassMode::same_class);
  EXPECT_EQ(out, dets);
}

TEST(MergeBb, TransitiveChainCollapses) {
  // iou(a,b) = iou(b,c) = 1/3, iou(a,c) = 0.
  const std::vector<Detection> dets{det(0, 0, 10, 10), det(0, 5, 10, 15),
                                    det(0, 10, 10, 20)};
  const auto out = merge_bb(dets, OverlapMetric::iou, 0.3, ClassMode::same_class);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].box, (BoundingBox{0, 0, 10, 20}));
}

TEST(MergeBb, SameClassModeKeepsClassesApart) {
  const std::vector<Detection> dets{det(0, 0, 10, 10, 1), det(0, 1, 10, 11, 2)};
  EXPECT_EQ(merge_bb(dets, OverlapMetric::iou, 0.3, ClassMode::same_class).size(), 2u);
  const auto fused = merge_bb(dets, OverlapMetric::iou, 0.3, ClassMode::all_classes);
  ASSERT_EQ(fused.size(), 1u);
  EXPECT_EQ(fused[0].class_id, 1);  // both conf 0.8; first wins deterministically
}

TEST(MergeBb, DoesNotMergeAcrossImages) {
  const std::vector<Detection> dets{det(0, 0, 10, 10, 1, 0.8, "a", 1),
                                    det(0, 0, 10, 10, 1, 0.8, "a", 2)};
  EXPECT_EQ(merge_bb(dets, OverlapMetric::iou, 0.3, ClassMode::same_class).size(), 2u);
}

TEST(MergeBb, MatchesRestartScanOracle) {
  for (std::uint64_t seed = 1; seed <= 120; ++seed) {
    const auto dets = random_detections(seed, static_cast<int>(seed % 8) + 1);
    for (const auto mode : {ClassMode::same_class, ClassMode::all_classes}) {
      const auto lib = merge_bb(dets, OverlapMetric::iou, 0.3, mode);
      const auto oracle = testutil::oracle_merge_bb(dets, OverlapMetric::iou, 0.3, mode);
      EXPECT_TRUE(same_boxes(lib, oracle)) << "seed " << seed;
    }
    const auto lib_giou = merge_bb(dets, OverlapMetric::giou, 0.2, ClassMode::same_class);
    const auto oracle_giou =
        testutil::oracle_merge_bb(dets, OverlapMetric::giou, 0.2, ClassMode::same_class);
    EXPECT_TRUE(same_boxes(lib_giou, oracle_giou)) << "seed " << seed;
  }
}

TEST(MergeBb, InvariantsOnRandomInputs) {
  for (std::uint64_t seed = 200; seed < 260; ++seed) {
    const auto dets = random_detections(seed, 10);
    const auto out = merge_bb(dets, OverlapMetric::iou, 0.3, ClassMode::same_class);
    EXPECT_LE(out.size(), dets.size());
    // Every input is contained in a same-class output.
    for (const auto& d : dets) {
      bool contained = false;
      for (const auto& o : out) {
        if (o.class_id == d.class_id && o.box.x_min <= d.box.x_min + 1e-9 &&
            o.box.y_min <= d.box.y_min + 1e-9 && o.box.x_max >= d.box.x_max - 1e-9 &&
            o.box.y_max >= d.box.y_max - 1e-9) {
          contained = true;
          break;
        }
      }
      EXPECT_TRUE(contained);
    }
    // No same-class output pair still clears the threshold.
    for (std::size_t i = 0; i < out.size(); ++i) {
      for (std::size_t j = i + 1; j < out.size(); ++j) {
        if (out[i].class_id != out[j].class_id) continue;
        if (out[i].image_id != out[j].image_id) continue;
        EXPECT_LT(iou(out[i].box, out[j].box), 0.3);
      }
    }
    // Idempotent.
    EXPECT_TRUE(same_boxes(merge_bb(out, OverlapMetric::iou, 0.3, ClassMode::same_class),
                           out));
  }
}

TEST(MergeBb, ThresholdValidation) {
  EXPECT_THROW(merge_bb({}, OverlapMetric::iou, 1.5, ClassMode::same_class), Error);
  EXPECT_THROW(merge_bb({}, OverlapMetric::iou, -0.1, ClassMode::same_class), Error);
  EXPECT_THROW(merge_bb({}, OverlapMetric::giou, -1.5, ClassMode::same_class), Error);
  EXPECT_NO_THROW(merge_bb({}, OverlapMetric::giou, -0.5, ClassMode::same_class));
}

TEST(MaskBb, SingleCenteredBoxSurvivesAsOneBox) {
  const BoundingBox bounds{0, 0, 1000, 1000};
  const std::vector<Detection> dets{det(400, 400, 500, 500)};
  const auto out = mask_bb(dets, 1.5, {3, 3}, bounds);
  ASSERT_EQ(out.size(), 1u);
  // The original box must be covered.
  EXPECT_LE(out[0].box.x_min, 400.0);
  EXPECT_GE(out[0].box.x_max, 500.0);
  EXPECT_EQ(out[0].source, "maskbb");
  EXPECT_DOUBLE_EQ(out[0].confidence, 0.8);

  const auto oracle = testutil::oracle_mask_bb_single_class(
      {{400, 400, 500, 500}}, 1.5, 3, 3, bounds);
  ASSERT_EQ(oracle.size(), 1u);
  EXPECT_NEAR(out[0].box.x_min, oracle[0].x_min, 1e-9);
  EXPECT_NEAR(out[0].box.y_max, oracle[0].y_max, 1e-9);
}

TEST(MaskBb, FiveBoxFigureTopologyYieldsThreeBoxes) {
  // Three clusters: two overlapping pairs and one lone box, far enough apart
  // that the 1.5x expansions do not bridge them.
  const BoundingBox bounds{0, 0, 2000, 2000};
  const std::vector<Detection> dets{
      det(100, 100, 180, 160), det(150, 120, 240, 200),   // cluster A
      det(900, 150, 1000, 260), det(960, 210, 1080, 330), // cluster B
      det(500, 1500, 640, 1620),                          // lone box
  };
  const auto out = mask_bb(dets, 1.5, {3, 3}, bounds);
  EXPECT_EQ(out.size(), 3u);
  for (const auto& o : out) {
    bool overlaps_original = false;
    for (const auto& d : dets) {
      if (intersection_area(o.box, d.box) > 0.0) overlaps_original = true;
    }
    EXPECT_TRUE(overlaps_original);
  }
}

TEST(MaskBb, EmptyInputAndValidation) {
  EXPECT_TRUE(mask_bb({}, 1.5, {3, 3}, {0, 0, 10, 10}).empty());
  EXPECT_THROW(mask_bb({}, 0.5, {3, 3}, {0, 0, 10, 10}), Error);
  EXPECT_THROW(mask_bb({}, 1.5, {0, 3}, {0, 0, 10, 10}), Error);
}

TEST(MaskBb, MatchesStepSimulationOracle) {
  for (std::uint64_t seed = 300; seed < 360; ++seed) {
    auto rng = make_rng(seed);
    const BoundingBox bounds{0, 0, 120, 120};
    std::vector<Detection> dets;
    std::vector<BoundingBox> boxes;
    const int n = static_cast<int>(uniform_int(rng, 1, 6));
    for (int i = 0; i < n; ++i) {
      const auto b = testutil::random_real_box(rng, 0.0, 120.0, 2.0);
      boxes.push_back(b);
      dets.push_back({1, b, 1, 0.5, "m"});
    }
    const auto lib = mask_bb(dets, 1.5, {3, 3}, bounds);
    const auto oracle =
        testutil::oracle_mask_bb_single_class(boxes, 1.5, 3, 3, bounds);
    ASSERT_EQ(lib.size(), oracle.size()) << "seed " << seed;
    // Both sides order by construction differently; compare as sorted sets.
    auto key = [](const BoundingBox& b) {
      return std::tuple(b.x_min, b.y_min, b.x_max, b.y_max);
    };
    std::vector<std::tuple<double, double, double, double>> lk, ok;
    for (const auto& d : lib) lk.push_back(key(d.box));
    for (const auto& b : oracle) ok.push_back(key(b));
    std::sort(lk.begin(), lk.end());
    std::sort(ok.begin(), ok.end());
    for (std::size_t i = 0; i < lk.size(); ++i) {
      EXPECT_NEAR(std::get<0>(lk[i]), std::get<0>(ok[i]), 1e-9);
      EXPECT_NEAR(std::get<1>(lk[i]), std::get<1>(ok[i]), 1e-9);
      EXPECT_NEAR(std::get<2>(lk[i]), std::get<2>(ok[i]), 1e-9);
      EXPECT_NEAR(std::get<3>(lk[i]), std::get<3>(ok[i]), 1e-9);
    }
  }
}

TEST(MaskBb, OutputsStayInsideBoundsAndCoverCenters) {
  for (std::uint64_t seed = 400; seed < 430; ++seed) {
    auto rng = make_rng(seed);
    const BoundingBox bounds{0, 0, 100, 100};
    std::vector<Detection> dets;
    const int n = static_cast<int>(uniform_int(rng, 1, 8));
    for (int i = 0; i < n; ++i) {
      dets.push_back({1, testutil::random_real_box(rng, 0.0, 100.0, 1.0),
                      static_cast<int>(uniform_int(rng, 1, 2)), 0.5, "m"});
    }
    const auto out = mask_bb(dets, 2.0, {3, 3}, bounds);
    for (const auto& o : out) {
      EXPECT_GE(o.box.x_min, 0.0);
      EXPECT_GE(o.box.y_min, 0.0);
      EXPECT_LE(o.box.x_max, 100.0);
      EXPECT_LE(o.box.y_max, 100.0);
      bool any_same_class = false;
      for (const auto& d : dets) {
        if (d.class_id == o.class_id && intersection_area(o.box, d.box) > 0.0) {
          any_same_class = true;
        }
      }
      EXPECT_TRUE(any_same_class);
    }
  }
}

TEST(VoteFilter, ThreeOfFiveAgree) {
  std::map<std::string, std::vector<Detection>> per_model;
  per_model["m1"] = {det(10, 10, 30, 30, 2, 0.9)};
  per_model["m2"] = {det(11, 11, 31, 31, 2, 0.8)};
  per_model["m3"] = {det(9, 10, 29, 30, 2, 0.7)};
  per_model["m4"] = {det(200, 200, 220, 220, 2, 0.9)};
  per_model["m5"] = {};
  const auto out = vote_filter(per_model, 3, 0.5);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].class_id, 2);
  EXPECT_DOUBLE_EQ(out[0].confidence, 0.9);
}

TEST(VoteFilter, SingleModelCannotPass) {
  std::map<std::string, std::vector<Detection>> per_model;
  per_model["m1"] = {det(10, 10, 30, 30)};
  per_model["m2"] = {};
  EXPECT_TRUE(vote_filter(per_model, 2, 0.5).empty());
}

TEST(VoteFilter, MixedClassesDoNotVoteTogether) {
  // 4 models on the same spot: 2 say fire, 2 say vehicle; min_votes 3.
  std::map<std::string, std::vector<Detection>> per_model;
  per_model["m1"] = {det(10, 10, 30, 30, 1, 0.9)};
  per_model["m2"] = {det(10, 10, 30, 30, 1, 0.8)};
  per_model["m3"] = {det(10, 10, 30, 30, 2, 0.9)};
  per_model["m4"] = {det(10, 10, 30, 30, 2, 0.8)};
  EXPECT_TRUE(vote_filter(per_model, 3, 0.5).empty());

  // Exhaustive cross-check: per class, the distinct-model voter count is 2.
  for (int class_id : {1, 2}) {
    std::set<std::string> voters;
    for (const auto& [model, dets] : per_model) {
      for (const auto& d : dets) {
        if (d.class_id == class_id) voters.insert(model);
      }
    }
    EXPECT_EQ(voters.size(), 2u);
  }
}

TEST(VoteFilter, InvariantUnderModelRenaming) {
  std::map<std::string, std::vector<Detection>> per_model;
  auto rng = make_rng(17);
  const char* names[] = {"alpha", "bravo", "charlie", "delta"};
  for (int m = 0; m < 4; ++m) {
    auto dets = random_detections(100 + m, 4);
    for (auto& d : dets) d.source = names[m];
    per_model[names[m]] = dets;
  }
  const auto base = vote_filter(per_model, 2, 0.4);

  std::map<std::string, std::vector<Detection>> renamed;
  const char* new_names[] = {"zz", "yy", "xx", "ww"};
  int i = 0;
  for (const auto& [name, dets] : per_model) {
    auto copy = dets;
    for (auto& d : copy) d.source = new_names[i];
    renamed[new_names[i++]] = copy;
  }
  const auto after = vote_filter(renamed, 2, 0.4);
  ASSERT_EQ(base.size(), after.size());
  auto key = [](const Detection& d) {
    return std::tuple(d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max,
                      d.class_id, d.confidence);
  };
  std::vector<std::tuple<double, double, double, double, int, double>> a, b;
  for (const auto& d : base) a.push_back(key(d));
  for (const auto& d : after) b.push_back(key(d));
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EXPECT_EQ(a, b);
}

TEST(VoteFilter, MinVotesBounds) {
  std::map<std::string, std::vector<Detection>> per_model;
  per_model["m1"] = {det(0, 0, 5, 5)};
  EXPECT_THROW(vote_filter(per_model, 2, 0.5), Error);
  EXPECT_THROW(vote_filter(per_model, 0, 0.5), Error);
  EXPECT_NO_THROW(vote_filter(per_model, 1, 0.5));
}

TEST(FilterChain, EmptyChainIsIdentity) {
  const auto dets = random_detections(1, 7);
  const std::vector<ImageRecord> images{{1, "a.jpg", 100, 100, std::nullopt}};
  const auto result = run_filter_chain(dets, FilterConfig{}, images);
  EXPECT_EQ(result.detections, dets);
  EXPECT_TRUE(result.counts.empty());
}

TEST(FilterChain, CompositionEqualsManualApplication) {
  const auto dets = random_detections(2, 12);
  const std::vector<ImageRecord> images{{1, "a.jpg", 100, 100, std::nullopt}};
  FilterConfig config;
  config.stages.push_back(SmallBbStage{3, 3});
  config.stages.push_back(MergeBbStage{OverlapMetric::iou, 0.3, ClassMode::all_classes});
  const auto chained = run_filter_chain(dets, config, images);
  const auto manual =
      merge_bb(small_bb(dets, 3, 3), OverlapMetric::iou, 0.3, ClassMode::all_classes);
  EXPECT_EQ(chained.detections, manual);
  ASSERT_EQ(chained.counts.size(), 2u);
  EXPECT_EQ(chained.counts[0].boxes_in, dets.size());
  EXPECT_EQ(chained.counts[0].boxes_out, small_bb(dets, 3, 3).size());
  EXPECT_EQ(chained.counts[1].boxes_out, manual.size());
}

TEST(FilterChain, ReducingStagesNeverGrowTheStream) {
  const std::vector<ImageRecord> images{{1, "a.jpg", 100, 100, std::nullopt},
                                        {2, "b.jpg", 100, 100, std::nullopt}};
  FilterConfig config;
  config.stages.push_back(SmallBbStage{2, 2});
  config.stages.push_back(MergeBbStage{OverlapMetric::iou, 0.3, ClassMode::same_class});
  for (std::uint64_t seed = 500; seed < 540; ++seed) {
    const auto dets = random_detections(seed, 15, 2, 3, 2);
    const auto result = run_filter_chain(dets, config, images);
    for (const auto& count : result.counts) {
      EXPECT_LE(count.boxes_out, count.boxes_in) << count.stage;
    }
  }
}

TEST(FilterChain, VoteStageRegroupsBySource) {
  std::vector<Detection> dets{det(0, 0, 10, 10, 1, 0.9, "m1"),
                              det(1, 0, 11, 10, 1, 0.8, "m2"),
                              det(50, 50, 60, 60, 1, 0.9, "m1")};
  const std::vector<ImageRecord> images{{1, "a.jpg", 100, 100, std::nullopt}};
  FilterConfig config;
  config.stages.push_back(VoteStage{2, 0.5});
  const auto result = run_filter_chain(dets, config, images);
  ASSERT_EQ(result.detections.size(), 1u);
  EXPECT_EQ(result.detections[0].box, (BoundingBox{0, 0, 11, 10}));
}
