#include "retina/loss.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace retina {

void MarginLoss::validate() const {
  if (!(scale > 0.0)) throw std::invalid_argument("margin loss: scale must be positive");
  if (!(margin >= 0.0 && margin < 1.0)) {
    throw std::invalid_argument("margin loss: margin must lie in [0, 1)");
  }
}

namespace {

void check_labels(std::span<const std::size_t> labels, std::size_t batch, std::size_t classes) {
  if (labels.size() != batch) {
    throw std::invalid_argument("margin loss: " + std::to_string(labels.size()) +
                                " labels for a batch of " + std::to_string(batch));
  }
  for (std::size_t y : labels) {
    if (y >= classes) {
      throw std::invalid_argument("margin loss: label " + std::to_string(y) + " out of range for " +
                                  std::to_string(classes) + " classes");
    }
  }
}

// Returns the mean loss and fills `probs` with the softmax of the margin logits.
double margin_ce(const Tensor& cos, std::span<const std::size_t> labels, const MarginLoss& ml,
                 Tensor& probs) {
  const std::size_t B = cos.rows(), N = cos.cols();
  probs = Tensor({B, N});
  double total = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < N; ++j) {
      double z = ml.scale * (cos.at(i, j) - (j == labels[i] ? ml.margin : 0.0));
      probs.at(i, j) = z;
      mx = std::max(mx, z);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < N; ++j) sum += std::exp(probs.at(i, j) - mx);
    const double log_z = mx + std::log(sum);
    total += log_z - probs.at(i, labels[i]);
    for (std::size_t j = 0; j < N; ++j) probs.at(i, j) = std::exp(probs.at(i, j) - log_z);
  }
  return total / static_cast<double>(B);
}

Tensor normalize_rows(const Tensor& w) {
  Tensor out = w;
  for (std::size_t r = 0; r < w.rows(); ++r) {
    double s = 0.0;
    for (double v : w.row_span(r)) s += v * v;
    const double norm = std::max(std::sqrt(s), 1e-12);
    for (double& v : out.row_span(r)) v /= norm;
  }
  return out;
}

}  // namespace

double margin_softmax_loss(const Tensor& embeddings, std::span<const std::size_t> labels,
                           const Tensor& class_weights, const MarginLoss& loss) {
  loss.validate();
  check_labels(labels, embeddings.rows(), class_weights.rows());
  const Tensor cos = matmul_nt(embeddings, normalize_rows(class_weights));
  Tensor probs;
  return margin_ce(cos, labels, loss, probs);
}

namespace ag {

Var margin_cross_entropy(Var cosines, std::span<const std::size_t> labels, const MarginLoss& loss) {
  loss.validate();
  const Tensor& c = cosines.value();
  check_labels(labels, c.rows(), c.cols());
  Tensor probs;
  const double value = margin_ce(c, labels, loss, probs);
  std::vector<std::size_t> y(labels.begin(), labels.end());
  Tape& t = *cosines.tape;
  return t.record(Tensor({1}, value), {cosines},
                  [cosines, y = std::move(y), probs = std::move(probs), s = loss.scale](
                      Tape& t, const Tensor& g) {
                    Tensor& dc = t.grad(cosines.id);
                    const std::size_t B = probs.rows(), N = probs.cols();
                    const double k = g[0] * s / static_cast<double>(B);
                    for (std::size_t i = 0; i < B; ++i)
                      for (std::size_t j = 0; j < N; ++j)
                        dc.at(i, j) += k * (probs.at(i, j) - (j == y[i] ? 1.0 : 0.0));
                  });
}

Var margin_softmax_loss(Var embeddings, Var class_weights, std::span<const std::size_t> labels,
                        const MarginLoss& loss) {
  return margin_cross_entropy(matmul_nt(embeddings, l2_normalize_rows(class_weights)), labels,
                              loss);
}

}  // namespace ag

}  // namespace retina
