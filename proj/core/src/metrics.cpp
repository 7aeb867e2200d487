#include "retina/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace retina {

std::vector<std::size_t> rank_gallery(std::span<const double> similarities) {
  std::vector<std::size_t> order(similarities.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return similarities[a] > similarities[b];
  });
  return order;
}

double average_precision(std::span<const std::size_t> ranking, const std::vector<bool>& relevant) {
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < ranking.size(); ++r) {
    if (!relevant[ranking[r]]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(r + 1);
  }
  return hits == 0 ? 0.0 : sum / static_cast<double>(hits);
}

EvalResult retrieval_metrics(const Tensor& similarity, std::span<const std::size_t> gallery_labels,
                             std::span<const std::size_t> probe_labels) {
  const std::size_t P = probe_labels.size(), G = gallery_labels.size();
  if (P == 0 || G == 0) throw ProtocolError("evaluate: gallery and probe must be nonempty");
  if (similarity.rank() != 2 || similarity.rows() != P || similarity.cols() != G) {
    throw DimensionError("evaluate: similarity " + shape_str(similarity.shape()) + " for " +
                         std::to_string(P) + " probes and " + std::to_string(G) + " gallery items");
  }
  EvalResult res;
  res.cmc.assign(G, 0.0);
  std::vector<bool> relevant(G);
  for (std::size_t p = 0; p < P; ++p) {
    bool any = false;
    for (std::size_t g = 0; g < G; ++g) {
      relevant[g] = gallery_labels[g] == probe_labels[p];
      any = any || relevant[g];
    }
    if (!any) {
      throw ProtocolError("evaluate: probe " + std::to_string(p) + " has identity " +
                          std::to_string(probe_labels[p]) + " absent from the gallery");
    }
    const auto ranking = rank_gallery(similarity.row_span(p));
    std::size_t first = 0;
    while (!relevant[ranking[first]]) ++first;
    for (std::size_t r = first; r < G; ++r) res.cmc[r] += 1.0;
    res.mAP += average_precision(ranking, relevant);
  }
  for (double& c : res.cmc) c /= static_cast<double>(P);
  res.mAP /= static_cast<double>(P);
  res.top1 = res.cmc.front();
  return res;
}

EvalResult evaluate_embeddings(const Tensor& gallery, std::span<const std::size_t> gallery_labels,
                               const Tensor& probe, std::span<const std::size_t> probe_labels) {
  if (gallery.rows() != gallery_labels.size() || probe.rows() != probe_labels.size()) {
    throw DimensionError("evaluate: embedding rows and label counts differ");
  }
  return retrieval_metrics(matmul_nt(probe, gallery), gallery_labels, probe_labels);
}

}  // namespace retina
