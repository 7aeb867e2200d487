#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace retina {

inline constexpr std::size_t kNumKeypoints = 19;

/// Canonical keypoint order used by records, queries and part features.
enum class KeypointName : std::size_t {
  Nose,
  LeftEye,
  RightEye,
  LeftEar,
  RightEar,
  LeftMouth,
  RightMouth,
  LeftShoulder,
  RightShoulder,
  LeftElbow,
  RightElbow,
  LeftWrist,
  RightWrist,
  LeftHip,
  RightHip,
  LeftKnee,
  RightKnee,
  LeftAnkle,
  RightAnkle,
};

std::string_view keypoint_name(std::size_t index);
std::optional<std::size_t> keypoint_index(std::string_view name);

/// Pixel position; (-1, -1) marks an invisible keypoint.
struct Keypoint {
  double x = -1.0;
  double y = -1.0;

  bool visible() const { return !(x == -1.0 && y == -1.0); }
  bool operator==(const Keypoint&) const = default;
};

using KeypointSet = std::array<Keypoint, kNumKeypoints>;

KeypointSet invisible_keypoints();

/// Eyes, ears, nose and mouth corners.
std::vector<std::size_t> face_indices();
/// Face plus shoulders, optionally plus hips.
std::vector<std::size_t> torso_indices(bool include_hips);

struct BBox {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  bool contains(const BBox& inner) const {
    return inner.x1 >= x1 && inner.y1 >= y1 && inner.x2 <= x2 && inner.y2 <= y2;
  }
  bool operator==(const BBox&) const = default;
};

struct ROI {
  int level = 0;  // 0 = whole image, 1 = upper torso, 2 = face
  BBox bbox;
  std::size_t grid_rows = 0;
  std::size_t grid_cols = 0;
  int order = 0;  // higher order keeps contested patches

  double patch_w() const { return bbox.width() / static_cast<double>(grid_cols); }
  double patch_h() const { return bbox.height() / static_cast<double>(grid_rows); }
  std::size_t cells() const { return grid_rows * grid_cols; }
};

struct ROISet {
  std::vector<ROI> levels;
  double image_w = 0.0;
  double image_h = 0.0;
};

/// Edge `i` of an `n`-cell partition of [lo, hi]. Ends are returned verbatim so
/// parent and child grids share bit-identical boundaries.
double grid_edge(double lo, double hi, std::size_t i, std::size_t n);

std::vector<Keypoint> visible_subset(const KeypointSet& kps, std::span<const std::size_t> indices);

/// Square box centred on the keypoints' extent midpoint with half-size
/// d·(1+padding), d the largest centre-to-keypoint distance. nullopt when empty.
std::optional<BBox> keypoint_bbox(std::span<const Keypoint> valid, double padding);

/// Floors the top-left and ceils the bottom-right corner onto a grid of
/// `patch_w`×`patch_h` cells anchored at (origin_x, origin_y).
BBox snap_bbox(const BBox& b, double patch_w, double patch_h, double origin_x = 0.0,
               double origin_y = 0.0);

struct RoiConfig {
  std::size_t image_w = 384;
  std::size_t image_h = 384;
  std::size_t grid_rows = 12;
  std::size_t grid_cols = 12;
  std::size_t levels = 3;
  double padding = 0.3;
  bool torso_includes_hips = false;
};

/// Whole image, then torso and face boxes snapped onto their parent's patch
/// grid and clipped to it. Levels without visible keypoints are omitted.
ROISet build_roi_set(const KeypointSet& kps, const RoiConfig& cfg);

// ---------------------------------------------------------------------------
// Plain-text keypoint records: `<id> x0 y0 x1 y1 ... x18 y18`, one per line.

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct KeypointRecord {
  std::string image_id;
  KeypointSet keypoints = invisible_keypoints();
};

/// Blank lines and lines starting with '#' are skipped. Commas count as spaces.
std::vector<KeypointRecord> parse_keypoint_records(std::istream& in);
std::string format_keypoint_record(const KeypointRecord& rec);

}  // namespace retina
