#include "retina/geometry.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <sstream>

namespace retina {

namespace {

constexpr std::array<std::string_view, kNumKeypoints> kNames = {
    "nose",       "left_eye",       "right_eye",      "left_ear",    "right_ear",
    "left_mouth", "right_mouth",    "left_shoulder",  "right_shoulder", "left_elbow",
    "right_elbow", "left_wrist",    "right_wrist",    "left_hip",    "right_hip",
    "left_knee",  "right_knee",     "left_ankle",     "right_ankle"};

}  // namespace

std::string_view keypoint_name(std::size_t index) { return kNames.at(index); }

std::optional<std::size_t> keypoint_index(std::string_view name) {
  for (std::size_t i = 0; i < kNames.size(); ++i)
    if (kNames[i] == name) return i;
  return std::nullopt;
}

KeypointSet invisible_keypoints() {
  KeypointSet s;
  s.fill(Keypoint{});
  return s;
}

std::vector<std::size_t> face_indices() { return {0, 1, 2, 3, 4, 5, 6}; }

std::vector<std::size_t> torso_indices(bool include_hips) {
  auto idx = face_indices();
  idx.push_back(static_cast<std::size_t>(KeypointName::LeftShoulder));
  idx.push_back(static_cast<std::size_t>(KeypointName::RightShoulder));
  if (include_hips) {
    idx.push_back(static_cast<std::size_t>(KeypointName::LeftHip));
    idx.push_back(static_cast<std::size_t>(KeypointName::RightHip));
  }
  return idx;
}

double grid_edge(double lo, double hi, std::size_t i, std::size_t n) {
  if (i == 0) return lo;
  if (i >= n) return hi;
  return lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n);
}

std::vector<Keypoint> visible_subset(const KeypointSet& kps, std::span<const std::size_t> indices) {
  std::vector<Keypoint> out;
  for (std::size_t i : indices) {
    if (i >= kNumKeypoints) throw std::out_of_range("visible_subset: keypoint index out of range");
    if (kps[i].visible()) out.push_back(kps[i]);
  }
  return out;
}

std::optional<BBox> keypoint_bbox(std::span<const Keypoint> valid, double padding) {
  if (valid.empty()) return std::nullopt;
  if (padding < 0.0) throw std::invalid_argument("keypoint_bbox: padding must be non-negative");
  double xmin = valid[0].x, xmax = valid[0].x, ymin = valid[0].y, ymax = valid[0].y;
  for (const auto& k : valid) {
    xmin = std::min(xmin, k.x);
    xmax = std::max(xmax, k.x);
    ymin = std::min(ymin, k.y);
    ymax = std::max(ymax, k.y);
  }
  const double cx = (xmin + xmax) / 2.0;
  const double cy = (ymin + ymax) / 2.0;
  double d = 0.0;
  for (const auto& k : valid) d = std::max(d, std::hypot(k.x - cx, k.y - cy));
  const double s = d * (1.0 + padding);
  return BBox{cx - s, cy - s, cx + s, cy + s};
}

BBox snap_bbox(const BBox& b, double patch_w, double patch_h, double origin_x, double origin_y) {
  if (!(patch_w > 0.0 && patch_h > 0.0)) {
    throw std::invalid_argument("snap_bbox: patch size must be positive");
  }
  return BBox{origin_x + std::floor((b.x1 - origin_x) / patch_w) * patch_w,
              origin_y + std::floor((b.y1 - origin_y) / patch_h) * patch_h,
              origin_x + std::ceil((b.x2 - origin_x) / patch_w) * patch_w,
              origin_y + std::ceil((b.y2 - origin_y) / patch_h) * patch_h};
}

namespace {

// Half-open cell span [lo, hi) of the parent grid covered by the snapped box,
// clipped to the parent and never empty.
std::pair<std::size_t, std::size_t> cell_span(double a, double b, double origin, double cell,
                                              std::size_t n) {
  const double lo = std::floor((a - origin) / cell);
  const double hi = std::ceil((b - origin) / cell);
  const auto last = static_cast<double>(n);
  const auto c0 = static_cast<std::size_t>(std::clamp(lo, 0.0, last - 1.0));
  auto c1 = static_cast<std::size_t>(std::clamp(hi, 0.0, last));
  if (c1 <= c0) c1 = c0 + 1;
  return {c0, c1};
}

}  // namespace

ROISet build_roi_set(const KeypointSet& kps, const RoiConfig& cfg) {
  if (cfg.grid_rows == 0 || cfg.grid_cols == 0 || cfg.levels == 0) {
    throw std::invalid_argument("build_roi_set: grid and level count must be positive");
  }
  if (cfg.image_w % cfg.grid_cols != 0 || cfg.image_h % cfg.grid_rows != 0) {
    throw std::invalid_argument("build_roi_set: image " + std::to_string(cfg.image_w) + "x" +
                                std::to_string(cfg.image_h) + " not divisible by grid " +
                                std::to_string(cfg.grid_rows) + "x" +
                                std::to_string(cfg.grid_cols));
  }
  ROISet set;
  set.image_w = static_cast<double>(cfg.image_w);
  set.image_h = static_cast<double>(cfg.image_h);
  set.levels.push_back(ROI{0, BBox{0.0, 0.0, set.image_w, set.image_h}, cfg.grid_rows,
                           cfg.grid_cols, 0});

  const std::vector<std::vector<std::size_t>> level_sets = {torso_indices(cfg.torso_includes_hips),
                                                            face_indices()};
  for (std::size_t level = 1; level < cfg.levels && level <= level_sets.size(); ++level) {
    const auto valid = visible_subset(kps, level_sets[level - 1]);
    const auto box = keypoint_bbox(valid, cfg.padding);
    if (!box) break;
    const ROI& parent = set.levels.back();
    const BBox& pb = parent.bbox;
    const auto [c0, c1] = cell_span(box->x1, box->x2, pb.x1, parent.patch_w(), parent.grid_cols);
    const auto [r0, r1] = cell_span(box->y1, box->y2, pb.y1, parent.patch_h(), parent.grid_rows);
    BBox snapped{grid_edge(pb.x1, pb.x2, c0, parent.grid_cols),
                 grid_edge(pb.y1, pb.y2, r0, parent.grid_rows),
                 grid_edge(pb.x1, pb.x2, c1, parent.grid_cols),
                 grid_edge(pb.y1, pb.y2, r1, parent.grid_rows)};
    set.levels.push_back(
        ROI{static_cast<int>(level), snapped, cfg.grid_rows, cfg.grid_cols, static_cast<int>(level)});
  }
  return set;
}

std::vector<KeypointRecord> parse_keypoint_records(std::istream& in) {
  std::vector<KeypointRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    std::string id;
    if (!(ls >> id) || id[0] == '#') continue;
    KeypointRecord rec;
    rec.image_id = id;
    std::vector<double> vals;
    std::string tok;
    while (ls >> tok) {
      double v = 0.0;
      const auto* first = tok.data();
      const auto* last = tok.data() + tok.size();
      auto [ptr, ec] = std::from_chars(first, last, v);
      if (ec != std::errc() || ptr != last || !std::isfinite(v)) {
        throw ParseError(lineno, "bad number '" + tok + "'");
      }
      vals.push_back(v);
    }
    if (vals.size() != 2 * kNumKeypoints) {
      throw ParseError(lineno, "expected " + std::to_string(2 * kNumKeypoints) +
                                   " coordinates, got " + std::to_string(vals.size()));
    }
    for (std::size_t k = 0; k < kNumKeypoints; ++k) rec.keypoints[k] = {vals[2 * k], vals[2 * k + 1]};
    out.push_back(std::move(rec));
  }
  return out;
}

std::string format_keypoint_record(const KeypointRecord& rec) {
  std::ostringstream os;
  os.precision(17);
  os << rec.image_id;
  for (const auto& k : rec.keypoints) os << ' ' << k.x << ' ' << k.y;
  return os.str();
}

}  // namespace retina
