#include "retina/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

namespace retina {

namespace {

double evaluate(const LossBuilder& loss, const ParamLeaf& leaf, std::size_t index) {
  ag::Tape tape;
  const double v = loss(tape).value()[0];
  if (!std::isfinite(v)) {
    throw GradCheckError("grad_check: non-finite loss while perturbing " + leaf.name + "[" +
                         std::to_string(index) + "]");
  }
  return v;
}

}  // namespace

GradCheckReport grad_check(const LossBuilder& loss, std::span<ParamLeaf* const> params,
                           const GradCheckOptions& options) {
  if (!(options.eps >= 1e-7 && options.eps <= 1e-3)) {
    throw std::invalid_argument("grad_check: eps must lie in [1e-7, 1e-3]");
  }
  GradCheckReport report;
  if (params.empty()) return report;

  for (ParamLeaf* p : params) p->zero_grad();
  {
    ag::Tape tape;
    ag::Var out = loss(tape);
    if (!std::isfinite(out.value()[0])) {
      throw GradCheckError("grad_check: non-finite loss at the unperturbed point (first leaf " +
                           params.front()->name + ")");
    }
    tape.backward(out);
  }

  std::mt19937_64 rng(options.seed);
  for (ParamLeaf* p : params) {
    const Tensor analytic = p->grad;
    std::vector<std::size_t> entries(p->value.size());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (options.max_entries_per_leaf != 0 && entries.size() > options.max_entries_per_leaf) {
      std::vector<std::size_t> chosen;
      std::sample(entries.begin(), entries.end(), std::back_inserter(chosen),
                  options.max_entries_per_leaf, rng);
      entries = std::move(chosen);
    }
    for (std::size_t i : entries) {
      const double orig = p->value[i];
      p->value[i] = orig + options.eps;
      const double up = evaluate(loss, *p, i);
      p->value[i] = orig - options.eps;
      const double down = evaluate(loss, *p, i);
      p->value[i] = orig;
      const double numeric = (up - down) / (2.0 * options.eps);
      const double a = analytic[i];
      const double err =
          std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      ++report.entries_checked;
      if (report.worst_leaf.empty() || err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_leaf = p->name;
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace retina
