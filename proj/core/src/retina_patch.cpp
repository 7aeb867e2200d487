#include "retina/retina_patch.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <ostream>

namespace retina {

namespace {

// Pixels whose centres fall in [a, b), clamped to [0, n); never empty.
std::pair<std::size_t, std::size_t> pixel_span(double a, double b, std::size_t n) {
  auto lo = static_cast<long long>(std::ceil(a - 0.5));
  auto hi = static_cast<long long>(std::ceil(b - 0.5));
  const auto nn = static_cast<long long>(n);
  lo = std::clamp(lo, 0LL, nn);
  hi = std::clamp(hi, 0LL, nn);
  if (hi <= lo) {
    lo = std::clamp(static_cast<long long>(std::floor((a + b) / 2.0)), 0LL, nn - 1);
    hi = lo + 1;
  }
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// Maps a child box onto whole cells of its parent grid; throws when the child
// is not nested in or not aligned to the parent.
std::array<std::size_t, 4> child_cells(const ROI& parent, const ROI& child) {
  const BBox& p = parent.bbox;
  const BBox& c = child.bbox;
  if (!p.contains(c)) {
    throw PartitionError("ROI level " + std::to_string(child.level) + " is not nested in level " +
                         std::to_string(parent.level));
  }
  auto index = [](double v, double lo, double cell, const char* edge, int level) {
    const double f = (v - lo) / cell;
    const double r = std::round(f);
    if (std::abs(f - r) > 1e-6) {
      throw PartitionError("ROI level " + std::to_string(level) + " " + edge +
                           " edge is not aligned to its parent grid (cell " + std::to_string(f) +
                           ")");
    }
    return static_cast<std::size_t>(r);
  };
  return {index(c.x1, p.x1, parent.patch_w(), "left", child.level),
          index(c.y1, p.y1, parent.patch_h(), "top", child.level),
          index(c.x2, p.x1, parent.patch_w(), "right", child.level),
          index(c.y2, p.y1, parent.patch_h(), "bottom", child.level)};
}

Tensor crop(const Tensor& image, const BBox& fp) {
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  const auto [x0, x1] = pixel_span(fp.x1, fp.x2, W);
  const auto [y0, y1] = pixel_span(fp.y1, fp.y2, H);
  Tensor out({C, y1 - y0, x1 - x0});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = y0; y < y1; ++y)
      for (std::size_t x = x0; x < x1; ++x) out.at(c, y - y0, x - x0) = image.at(c, y, x);
  return out;
}

std::string fmt(double v) {
  std::array<char, 64> buf{};
  auto [p, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), p);
}

}  // namespace

std::pair<double, double> Patch::center(double image_w, double image_h) const {
  return {(footprint.x1 + footprint.x2) / 2.0 / image_w, (footprint.y1 + footprint.y2) / 2.0 / image_h};
}

Tensor sincos_position_table(std::size_t channels, std::size_t height, std::size_t width) {
  if (channels == 0 || channels % 4 != 0) {
    throw std::invalid_argument("sincos_position_table: channels must be a positive multiple of 4");
  }
  const std::size_t quarter = channels / 4;
  Tensor t({channels, height, width});
  for (std::size_t k = 0; k < quarter; ++k) {
    const double omega =
        1.0 / std::pow(10000.0, static_cast<double>(k) / static_cast<double>(quarter));
    for (std::size_t i = 0; i < height; ++i) {
      for (std::size_t j = 0; j < width; ++j) {
        const double r = static_cast<double>(i) * omega;
        const double c = static_cast<double>(j) * omega;
        t.at(k, i, j) = std::sin(r);
        t.at(quarter + k, i, j) = std::cos(r);
        t.at(2 * quarter + k, i, j) = std::sin(c);
        t.at(3 * quarter + k, i, j) = std::cos(c);
      }
    }
  }
  return t;
}

PositionField make_position_field(std::size_t channels, std::size_t grid_rows,
                                  std::size_t grid_cols, std::size_t levels) {
  PositionField f;
  f.table = sincos_position_table(channels, grid_rows, grid_cols);
  f.level_offsets = ParamLeaf("position.level_offsets", Tensor({levels, channels}));
  return f;
}

Tensor sample_position_table(const Tensor& table, const Tensor& points) {
  const std::size_t H = table.dim(1), W = table.dim(2);
  Tensor grid(points.shape());
  auto to_grid = [](double t, std::size_t n) {
    if (n <= 1) return 0.0;
    return (t * static_cast<double>(n) - 0.5) / static_cast<double>(n - 1);
  };
  for (std::size_t i = 0; i < points.rows(); ++i) {
    grid.at(i, 0) = to_grid(points.at(i, 0), W);
    grid.at(i, 1) = to_grid(points.at(i, 1), H);
  }
  return bilinear_sample(table, grid);
}

Tensor region_sampled_pe(const PositionField& field, const ROI& roi, double image_w,
                         double image_h) {
  if (roi.grid_rows == 0 || roi.grid_cols == 0) {
    throw std::invalid_argument("region_sampled_pe: empty ROI grid");
  }
  const BBox& b = roi.bbox;
  Tensor pts({roi.cells(), 2});
  for (std::size_t r = 0; r < roi.grid_rows; ++r) {
    const double cy = (grid_edge(b.y1, b.y2, r, roi.grid_rows) +
                       grid_edge(b.y1, b.y2, r + 1, roi.grid_rows)) / 2.0;
    for (std::size_t c = 0; c < roi.grid_cols; ++c) {
      const double cx = (grid_edge(b.x1, b.x2, c, roi.grid_cols) +
                         grid_edge(b.x1, b.x2, c + 1, roi.grid_cols)) / 2.0;
      pts.at(r * roi.grid_cols + c, 0) = cx / image_w;
      pts.at(r * roi.grid_cols + c, 1) = cy / image_h;
    }
  }
  Tensor pe = sample_position_table(field.table, pts);
  const auto level = static_cast<std::size_t>(roi.level);
  const Tensor& off = field.level_offsets.value;
  if (level >= off.rows()) throw DimensionError("region_sampled_pe: no offset row for ROI level");
  for (std::size_t i = 0; i < pe.rows(); ++i)
    for (std::size_t c = 0; c < pe.cols(); ++c) pe.at(i, c) += off.at(level, c);
  return pe;
}

PatchSet extract_patches(const Tensor& image, const ROISet& rois) {
  if (image.rank() != 3) throw DimensionError("extract_patches: image must be [CxHxW]");
  if (rois.levels.empty()) throw PartitionError("extract_patches: empty ROI set");
  const ROI& root = rois.levels.front();
  if (root.bbox != BBox{0.0, 0.0, rois.image_w, rois.image_h}) {
    throw PartitionError("extract_patches: level 0 must cover the whole image");
  }
  PatchSet ps;
  ps.image_w = rois.image_w;
  ps.image_h = rois.image_h;
  for (std::size_t li = 0; li < rois.levels.size(); ++li) {
    const ROI& roi = rois.levels[li];
    if (li > 0 && roi.order <= rois.levels[li - 1].order) {
      throw PartitionError("extract_patches: ROI order must increase with level");
    }
    std::array<std::size_t, 4> hole{0, 0, 0, 0};
    if (li + 1 < rois.levels.size()) hole = child_cells(roi, rois.levels[li + 1]);
    const BBox& b = roi.bbox;
    for (std::size_t r = 0; r < roi.grid_rows; ++r) {
      for (std::size_t c = 0; c < roi.grid_cols; ++c) {
        if (c >= hole[0] && c < hole[2] && r >= hole[1] && r < hole[3]) continue;
        Patch p;
        p.level = roi.level;
        p.row = r;
        p.col = c;
        p.footprint = BBox{grid_edge(b.x1, b.x2, c, roi.grid_cols),
                           grid_edge(b.y1, b.y2, r, roi.grid_rows),
                           grid_edge(b.x1, b.x2, c + 1, roi.grid_cols),
                           grid_edge(b.y1, b.y2, r + 1, roi.grid_rows)};
        p.pixels = crop(image, p.footprint);
        ps.patches.push_back(std::move(p));
      }
    }
  }
  return ps;
}

Tensor resize_patch(const Patch& p, std::size_t target_h, std::size_t target_w) {
  return resize_bilinear(p.pixels, target_h, target_w);
}

PreparedImage prepare_image(const Tensor& image, const ROISet& rois, const Tensor& pe_table) {
  const PatchSet ps = extract_patches(image, rois);
  const ROI& root = rois.levels.front();
  const auto ph = static_cast<std::size_t>(std::lround(root.patch_h()));
  const auto pw = static_cast<std::size_t>(std::lround(root.patch_w()));
  const std::size_t C = image.dim(0);
  const std::size_t n = ps.size();
  PreparedImage out;
  out.pixels = Tensor({n, C * ph * pw});
  out.centers = Tensor({n, 2});
  out.levels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Patch& p = ps.patches[i];
    const Tensor r = resize_patch(p, ph, pw);
    std::copy(r.data().begin(), r.data().end(), out.pixels.ptr() + i * r.size());
    const auto [cx, cy] = p.center(ps.image_w, ps.image_h);
    out.centers.at(i, 0) = cx;
    out.centers.at(i, 1) = cy;
    out.levels.push_back(p.level);
    out.cells.emplace_back(p.row, p.col);
  }
  out.positions = sample_position_table(pe_table, out.centers);
  return out;
}

Tensor tokenize(const PreparedImage& img, const ParamLeaf& projection, const PositionField& field) {
  Tensor tokens = matmul(img.pixels, projection.value);
  if (tokens.cols() != img.positions.cols()) {
    throw DimensionError("tokenize: projection width " + std::to_string(tokens.cols()) +
                         " differs from position channels " + std::to_string(img.positions.cols()));
  }
  const Tensor& off = field.level_offsets.value;
  for (std::size_t i = 0; i < tokens.rows(); ++i) {
    const auto level = static_cast<std::size_t>(img.levels[i]);
    for (std::size_t c = 0; c < tokens.cols(); ++c)
      tokens.at(i, c) += img.positions.at(i, c) + off.at(level, c);
  }
  return tokens;
}

TokenBatch assemble_batch(std::span<const Tensor> per_image_tokens, const ParamLeaf& mask_token,
                          std::size_t pad_to) {
  if (per_image_tokens.empty()) throw std::invalid_argument("assemble_batch: empty batch");
  std::size_t longest = 0;
  for (const auto& t : per_image_tokens) longest = std::max(longest, t.rows());
  if (pad_to != 0) {
    if (pad_to < longest) {
      throw std::invalid_argument("assemble_batch: pad length " + std::to_string(pad_to) +
                                  " shorter than a sequence of " + std::to_string(longest));
    }
    longest = pad_to;
  }
  const std::size_t d = mask_token.value.size();
  TokenBatch batch;
  for (const auto& t : per_image_tokens) {
    if (t.cols() != d) {
      throw DimensionError("assemble_batch: token width " + std::to_string(t.cols()) +
                           " differs from mask token width " + std::to_string(d));
    }
    TokenSequence seq;
    const std::size_t n = t.rows();
    seq.tokens = Tensor({n + 1, d});
    std::copy(t.data().begin(), t.data().end(), seq.tokens.ptr());
    std::copy_n(mask_token.value.ptr(), d, seq.tokens.ptr() + n * d);
    seq.kept_indices.resize(n);
    for (std::size_t i = 0; i < n; ++i) seq.kept_indices[i] = i;
    seq.total = longest;
    seq.mask_repeats = longest - n;
    seq.has_mask_slot = true;
    batch.items.push_back(std::move(seq));
  }
  return batch;
}

TokenBatch assemble_batch(std::vector<TokenSequence> masked) {
  if (masked.empty()) throw std::invalid_argument("assemble_batch: empty batch");
  for (const auto& s : masked) {
    const std::size_t expect = s.kept() + (s.has_mask_slot ? 1 : 0);
    if (s.tokens.rows() != expect || s.kept() + s.mask_repeats != s.total) {
      throw std::invalid_argument("assemble_batch: inconsistent masked sequence");
    }
  }
  return TokenBatch{std::move(masked)};
}

void write_layout_csv(std::ostream& os, const PatchSet& ps) {
  os << "level,row,col,x1,y1,x2,y2\n";
  for (const auto& p : ps.patches) {
    os << p.level << ',' << p.row << ',' << p.col << ',' << fmt(p.footprint.x1) << ','
       << fmt(p.footprint.y1) << ',' << fmt(p.footprint.x2) << ',' << fmt(p.footprint.y2) << '\n';
  }
}

void write_layout_ppm(std::ostream& os, const PatchSet& ps) {
  const auto W = static_cast<std::size_t>(ps.image_w);
  const auto H = static_cast<std::size_t>(ps.image_h);
  static constexpr std::array<std::array<unsigned char, 3>, 4> kColors = {
      {{{90, 120, 170}}, {{235, 150, 60}}, {{80, 190, 110}}, {{200, 90, 180}}}};
  std::vector<unsigned char> px(W * H * 3, 0);
  for (const auto& p : ps.patches) {
    const auto& col = kColors[static_cast<std::size_t>(p.level) % kColors.size()];
    const auto [x0, x1] = pixel_span(p.footprint.x1, p.footprint.x2, W);
    const auto [y0, y1] = pixel_span(p.footprint.y1, p.footprint.y2, H);
    for (std::size_t y = y0; y < y1; ++y) {
      for (std::size_t x = x0; x < x1; ++x) {
        const bool border = (x == x0 || y == y0) && (x1 - x0 > 2 && y1 - y0 > 2);
        for (std::size_t c = 0; c < 3; ++c) {
          px[(y * W + x) * 3 + c] = border ? static_cast<unsigned char>(col[c] / 2) : col[c];
        }
      }
    }
  }
  os << "P6\n" << W << ' ' << H << "\n255\n";
  os.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
}

}  // namespace retina
