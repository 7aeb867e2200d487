#pragma once

// Multi-scale, non-overlapping tokenisation. Every ROI gets its own fixed grid;
// cells covered by a higher-order ROI are dropped from the lower one, so the
// surviving footprints tile the image exactly once.

#include <cstddef>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <vector>

#include "retina/geometry.hpp"
#include "retina/masked_attention.hpp"
#include "retina/tensor.hpp"

namespace retina {

class PartitionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Patch {
  Tensor pixels;  // [C x ph x pw] crop before resizing
  int level = 0;
  std::size_t row = 0;
  std::size_t col = 0;
  BBox footprint;  // image pixels

  /// Footprint centre in normalised image coordinates.
  std::pair<double, double> center(double image_w, double image_h) const;
};

struct PatchSet {
  std::vector<Patch> patches;
  double image_w = 0.0;
  double image_h = 0.0;

  std::size_t size() const { return patches.size(); }
};

/// Fixed 2-D sin-cos table plus one learnable offset row per ROI level.
/// Table node (i, j) sits at the centre of level-0 cell (i, j).
struct PositionField {
  Tensor table;            // [C x H x W]
  ParamLeaf level_offsets; // [levels x C]

  std::size_t channels() const { return table.dim(0); }
};

/// Half the channels encode the row, half the column; each half is split into
/// sin and cos over a geometric frequency ladder with base 10000.
Tensor sincos_position_table(std::size_t channels, std::size_t height, std::size_t width);
PositionField make_position_field(std::size_t channels, std::size_t grid_rows,
                                  std::size_t grid_cols, std::size_t levels);

/// Samples the table at normalised image points [N x 2] (x, y in [0,1]).
Tensor sample_position_table(const Tensor& table, const Tensor& points);

/// Position embeddings for every cell of `roi` (row-major), plus v_level.
Tensor region_sampled_pe(const PositionField& field, const ROI& roi, double image_w,
                         double image_h);

/// Grid-partitions each ROI and keeps cells not inside the next ROI up.
PatchSet extract_patches(const Tensor& image, const ROISet& rois);

Tensor resize_patch(const Patch& p, std::size_t target_h, std::size_t target_w);

/// Resized, flattened patches and their geometry: everything the model needs
/// from one image, independent of learnable state.
struct PreparedImage {
  Tensor pixels;           // [n x C*P*P]
  Tensor positions;        // [n x C_pe] table samples at patch centres (no level offset)
  Tensor centers;          // [n x 2] normalised
  std::vector<int> levels;
  std::vector<std::pair<std::size_t, std::size_t>> cells;  // (row, col) in the ROI grid
  std::size_t count() const { return levels.size(); }
};

PreparedImage prepare_image(const Tensor& image, const ROISet& rois, const Tensor& pe_table);

/// Linear projection of flattened patches plus region-sampled position embeddings.
Tensor tokenize(const PreparedImage& img, const ParamLeaf& projection, const PositionField& field);

enum class AssembleMode { Train, Infer };

/// Infer: pads every sequence to `pad_to` (0 = the longest in the batch) by
/// aggregating pad slots onto the mask slot, one repeat each. Train: sequences
/// must arrive masked.
TokenBatch assemble_batch(std::span<const Tensor> per_image_tokens, const ParamLeaf& mask_token,
                          std::size_t pad_to = 0);
TokenBatch assemble_batch(std::vector<TokenSequence> masked);

/// `level,row,col,x1,y1,x2,y2` header plus one line per patch.
void write_layout_csv(std::ostream& os, const PatchSet& ps);
/// Binary PPM (P6) with one flat colour per level and dark cell borders.
void write_layout_ppm(std::ostream& os, const PatchSet& ps);

}  // namespace retina
