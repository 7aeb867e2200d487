#pragma once

// Retrieval metrics over cosine similarity. Gallery items with equal
// similarity are ranked by ascending gallery index.

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "retina/tensor.hpp"

namespace retina {

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EvalResult {
  double top1 = 0.0;
  double mAP = 0.0;
  std::vector<double> cmc;  // cmc[r] = fraction of probes matched within rank r + 1
};

/// Gallery indices ordered by descending similarity, ties by ascending index.
std::vector<std::size_t> rank_gallery(std::span<const double> similarities);

/// Mean of precision at each relevant rank; `relevant` is indexed by gallery item.
double average_precision(std::span<const std::size_t> ranking, const std::vector<bool>& relevant);

/// similarity [P x G]; labels index identities.
EvalResult retrieval_metrics(const Tensor& similarity, std::span<const std::size_t> gallery_labels,
                             std::span<const std::size_t> probe_labels);

/// Rows of both inputs are unit-length embeddings.
EvalResult evaluate_embeddings(const Tensor& gallery, std::span<const std::size_t> gallery_labels,
                               const Tensor& probe, std::span<const std::size_t> probe_labels);

}  // namespace retina
