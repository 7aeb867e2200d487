#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "retina/geometry.hpp"
#include "retina/verify.hpp"

namespace retina {
namespace {

KeypointSet with(std::initializer_list<std::pair<KeypointName, Keypoint>> points) {
  KeypointSet kps = invisible_keypoints();
  for (const auto& [name, k] : points) kps[static_cast<std::size_t>(name)] = k;
  return kps;
}

TEST(Keypoints, CanonicalOrderAndNames) {
  EXPECT_EQ(keypoint_name(0), "nose");
  EXPECT_EQ(keypoint_name(7), "left_shoulder");
  EXPECT_EQ(keypoint_name(18), "right_ankle");
  EXPECT_EQ(keypoint_index("right_hip"), std::optional<std::size_t>{14});
  EXPECT_FALSE(keypoint_index("tail").has_value());
  EXPECT_EQ(face_indices().size(), 7u);
  EXPECT_EQ(torso_indices(false).size(), 9u);
  EXPECT_EQ(torso_indices(true).size(), 11u);
}

TEST(Keypoints, VisibilityFollowsSentinel) {
  EXPECT_FALSE((Keypoint{-1, -1}.visible()));
  EXPECT_TRUE((Keypoint{0, 0}.visible()));
  EXPECT_TRUE((Keypoint{-1, 3}.visible()));
}

TEST(VisibleSubset, AllInvisibleGivesEmpty) {
  EXPECT_TRUE(visible_subset(invisible_keypoints(), face_indices()).empty());
}

TEST(VisibleSubset, OnlyNoseVisible) {
  const auto v = visible_subset(with({{KeypointName::Nose, {10, 20}}}), face_indices());
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0], (Keypoint{10, 20}));
}

TEST(VisibleSubset, KeepsCanonicalOrder) {
  const KeypointSet kps = with({{KeypointName::RightMouth, {6, 6}},
                                {KeypointName::LeftEye, {2, 2}},
                                {KeypointName::RightEar, {4, 4}},
                                {KeypointName::LeftShoulder, {9, 9}}});
  const auto v = visible_subset(kps, face_indices());
  ASSERT_EQ(v.size(), 3u);
  EXPECT_EQ(v[0], (Keypoint{2, 2}));
  EXPECT_EQ(v[1], (Keypoint{4, 4}));
  EXPECT_EQ(v[2], (Keypoint{6, 6}));
}

TEST(KeypointBBox, TwoPointsWithPadding) {
  const std::vector<Keypoint> pts{{10, 10}, {30, 30}};
  const BBox b = *keypoint_bbox(pts, 0.3);
  const double s = std::sqrt(200.0) * 1.3;
  EXPECT_NEAR(b.x1, 20 - s, 1e-12);
  EXPECT_NEAR(b.y1, 20 - s, 1e-12);
  EXPECT_NEAR(b.x2, 20 + s, 1e-12);
  EXPECT_NEAR(b.y2, 20 + s, 1e-12);
  EXPECT_NEAR(b.x1, 1.6152, 1e-4);
  EXPECT_NEAR(b.x2, 38.3848, 1e-4);
}

TEST(KeypointBBox, SinglePointIsDegenerate) {
  const std::vector<Keypoint> pts{{5, 5}};
  EXPECT_EQ(*keypoint_bbox(pts, 0.7), (BBox{5, 5, 5, 5}));
}

TEST(KeypointBBox, EmptyMeansAbsent) { EXPECT_FALSE(keypoint_bbox({}, 0.3).has_value()); }

TEST(SnapBBox, FloorsAndCeils) {
  EXPECT_EQ(snap_bbox({40, 40, 100, 100}, 32, 32), (BBox{32, 32, 128, 128}));
  EXPECT_EQ(snap_bbox({0, 0, 1, 1}, 32, 32), (BBox{0, 0, 32, 32}));
}

TEST(SnapBBox, AlignedBoxIsFixedPoint) {
  EXPECT_EQ(snap_bbox({64, 32, 160, 96}, 32, 32), (BBox{64, 32, 160, 96}));
}

TEST(SnapBBox, IdempotentAndNeverShrinks) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 300);
  for (int t = 0; t < 200; ++t) {
    const double a = u(rng), b = u(rng), c = u(rng), d = u(rng);
    const BBox box{std::min(a, b), std::min(c, d), std::max(a, b), std::max(c, d)};
    const BBox s = snap_bbox(box, 32, 24);
    EXPECT_EQ(snap_bbox(s, 32, 24), s);
    EXPECT_TRUE(s.contains(box));
  }
}

TEST(SnapBBox, RelativeToOrigin) {
  EXPECT_EQ(snap_bbox({50, 50, 60, 60}, 10, 10, 3, 3), (BBox{43, 43, 63, 63}));
}

TEST(BuildRoiSet, NoKeypointsGivesWholeImageOnly) {
  const ROISet s = build_roi_set(invisible_keypoints(), {});
  ASSERT_EQ(s.levels.size(), 1u);
  EXPECT_EQ(s.levels[0].bbox, (BBox{0, 0, 384, 384}));
  EXPECT_EQ(s.levels[0].cells(), 144u);
}

// Shoulders 70 px apart on the diagonal around (160, 160): the unpadded
// circumscribed box [110.5, 209.5] snaps to the 4x4 cell block [96, 224].
TEST(BuildRoiSet, TorsoSnapsToFourByFourCells) {
  RoiConfig cfg;
  cfg.padding = 0.0;
  const KeypointSet kps = with({{KeypointName::LeftShoulder, {125, 125}},
                                {KeypointName::RightShoulder, {195, 195}}});
  const ROISet s = build_roi_set(kps, cfg);
  ASSERT_EQ(s.levels.size(), 2u);
  EXPECT_EQ(s.levels[1].bbox, (BBox{96, 96, 224, 224}));
}

// Ears 120 px apart above narrow shoulders: the face box top (~124) lies
// above the snapped torso top (128) and must be clipped to it.
TEST(BuildRoiSet, FaceIsClippedToTorso) {
  const KeypointSet kps = with({{KeypointName::Nose, {192, 204}},
                                {KeypointName::LeftEar, {132, 200}},
                                {KeypointName::RightEar, {252, 200}},
                                {KeypointName::LeftShoulder, {182, 260}},
                                {KeypointName::RightShoulder, {202, 260}}});
  const ROISet s = build_roi_set(kps, {});
  ASSERT_EQ(s.levels.size(), 3u);
  const std::vector<Keypoint> face = visible_subset(kps, face_indices());
  EXPECT_LT(keypoint_bbox(face, 0.3)->y1, s.levels[1].bbox.y1);
  EXPECT_EQ(s.levels[1].bbox.y1, 128.0);
  EXPECT_TRUE(s.levels[1].bbox.contains(s.levels[2].bbox));
  EXPECT_EQ(s.levels[2].bbox.y1, s.levels[1].bbox.y1);
}

TEST(BuildRoiSet, EdgesAlignToParentGridAndNest) {
  std::mt19937_64 rng(5);
  const RoiConfig cfg;
  for (int t = 0; t < 300; ++t) {
    const ROISet s = build_roi_set(random_keypoints(rng, 384, 384), cfg);
    for (std::size_t l = 1; l < s.levels.size(); ++l) {
      const ROI& p = s.levels[l - 1];
      const BBox& b = s.levels[l].bbox;
      ASSERT_TRUE(p.bbox.contains(b));
      EXPECT_LT(s.levels[l - 1].order, s.levels[l].order);
      for (double e : {b.x1 - p.bbox.x1, b.x2 - p.bbox.x1}) {
        const double f = e / p.patch_w();
        EXPECT_NEAR(f, std::round(f), 1e-9);
      }
      for (double e : {b.y1 - p.bbox.y1, b.y2 - p.bbox.y1}) {
        const double f = e / p.patch_h();
        EXPECT_NEAR(f, std::round(f), 1e-9);
      }
    }
  }
}

TEST(BuildRoiSet, ShiftByOnePatchShiftsTorso) {
  const RoiConfig cfg;
  const KeypointSet a = with({{KeypointName::LeftShoulder, {120, 150}},
                              {KeypointName::RightShoulder, {170, 165}},
                              {KeypointName::Nose, {146, 110}}});
  KeypointSet b = a;
  for (auto& k : b)
    if (k.visible()) k.x += 32;
  const BBox ta = build_roi_set(a, cfg).levels[1].bbox, tb = build_roi_set(b, cfg).levels[1].bbox;
  EXPECT_EQ(tb.x1, ta.x1 + 32);
  EXPECT_EQ(tb.x2, ta.x2 + 32);
  EXPECT_EQ(tb.y1, ta.y1);
}

TEST(BuildRoiSet, LevelCountIsConfigurable) {
  RoiConfig cfg;
  cfg.levels = 2;
  const KeypointSet kps = with({{KeypointName::Nose, {192, 100}}, {KeypointName::LeftShoulder, {150, 200}}});
  EXPECT_EQ(build_roi_set(kps, cfg).levels.size(), 2u);
  cfg.image_w = 100;
  EXPECT_THROW(build_roi_set(kps, cfg), std::invalid_argument);
}

TEST(KeypointRecords, RoundTripsExactly) {
  KeypointRecord rec;
  rec.image_id = "img_7";
  rec.keypoints[0] = {0.1, 123.456789012345};
  rec.keypoints[18] = {383.0, 1e-3};
  std::istringstream in("# header\n\n" + format_keypoint_record(rec) + "\n");
  const auto parsed = parse_keypoint_records(in);
  ASSERT_EQ(parsed.size(), 1u);
  EXPECT_EQ(parsed[0].image_id, "img_7");
  EXPECT_EQ(parsed[0].keypoints, rec.keypoints);
}

TEST(KeypointRecords, ReportsLineOfBadRecord) {
  std::string good = "a";
  for (int i = 0; i < 38; ++i) good += " -1";
  std::istringstream in(good + "\n" + good + "\nbroken 1 2 x\n");
  try {
    parse_keypoint_records(in);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

}  // namespace
}  // namespace retina
