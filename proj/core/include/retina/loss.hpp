#pragma once

// Cosine-margin softmax: the true-class logit is s·(cos θ − m), the others
// s·cos θ, followed by cross-entropy averaged over the batch.

#include <cstddef>
#include <span>

#include "retina/autograd.hpp"
#include "retina/tensor.hpp"

namespace retina {

struct MarginLoss {
  double scale = 16.0;
  double margin = 0.4;

  void validate() const;
};

/// embeddings [B x E] (rows already unit length); class_weights [N x E] are
/// normalised row-wise inside.
double margin_softmax_loss(const Tensor& embeddings, std::span<const std::size_t> labels,
                           const Tensor& class_weights, const MarginLoss& loss);

namespace ag {

/// Cross-entropy over margin logits built from a [B x N] cosine matrix.
Var margin_cross_entropy(Var cosines, std::span<const std::size_t> labels, const MarginLoss& loss);

/// l2-normalises `class_weights`, forms cosines against `embeddings` and
/// applies margin_cross_entropy.
Var margin_softmax_loss(Var embeddings, Var class_weights, std::span<const std::size_t> labels,
                        const MarginLoss& loss);

}  // namespace ag

}  // namespace retina
