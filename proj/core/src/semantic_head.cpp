#include "retina/semantic_head.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <ostream>
#include <stdexcept>

namespace retina {

namespace {

Tensor randn(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, stddev);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = nd(rng);
  return t;
}

ParamLeaf weight(std::string name, std::size_t in, std::size_t out, std::mt19937_64& rng) {
  return ParamLeaf(std::move(name), randn({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng));
}

std::vector<double> row_factors(const std::vector<bool>& visible, std::size_t repeats) {
  std::vector<double> f(visible.size() * repeats, 0.0);
  for (std::size_t k = 0; k < visible.size(); ++k)
    for (std::size_t r = 0; r < repeats; ++r) f[k * repeats + r] = visible[k] ? 1.0 : 0.0;
  return f;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

HeadVars constants(ag::Tape& t, const HeadParams& p) {
  return {t.constant(p.offsets.value), t.constant(p.w_q.value),    t.constant(p.w_k.value),
          t.constant(p.w_v.value),     t.constant(p.part_weights.value),
          t.constant(p.mlp_w1.value),  t.constant(p.mlp_b1.value), t.constant(p.mlp_w2.value),
          t.constant(p.mlp_b2.value)};
}

// Both branches from fully formed queries (offsets added, invisible rows zero).
PartVars branches(ag::Var queries, std::vector<bool> visible, const Tensor& keys, ag::Var values,
                  const HeadVars& h, const HeadConfig& cfg) {
  ag::Tape& t = *queries.tape;
  if (keys.rows() == 0) throw DimensionError("part_attention: no kept tokens");
  if (keys.rows() != values.value().rows()) {
    throw DimensionError("part_attention: " + std::to_string(keys.rows()) + " keys for " +
                         std::to_string(values.value().rows()) + " values");
  }
  ag::Var k = t.constant(keys);
  const auto factors = row_factors(visible, cfg.repeats);
  const double part_scale = 1.0 / std::sqrt(static_cast<double>(cfg.attn_dim));
  const double peak_scale = 1.0 / std::sqrt(static_cast<double>(cfg.channels));
  ag::Var part = attention(ag::matmul(queries, h.w_q), ag::matmul(k, h.w_k),
                           ag::matmul(values, h.w_v), part_scale);
  ag::Var peak = attention(queries, k, values, peak_scale);
  return {ag::scale_rows(part, factors), ag::scale_rows(peak, factors), std::move(visible)};
}

std::string fmt(double v) {
  std::array<char, 64> buf{};
  auto [p, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), p);
}

}  // namespace

std::vector<ParamLeaf*> HeadParams::leaves() {
  return {&offsets, &w_q, &w_k, &w_v, &part_weights, &mlp_w1, &mlp_b1, &mlp_w2, &mlp_b2};
}

HeadParams make_head(const HeadConfig& cfg, std::mt19937_64& rng) {
  if (cfg.channels == 0 || cfg.repeats == 0 || cfg.keypoints == 0 || cfg.attn_dim == 0 ||
      cfg.embed_dim == 0 || cfg.hidden == 0 || cfg.datasets == 0) {
    throw std::invalid_argument("head config: sizes must be positive");
  }
  const std::size_t C = cfg.channels;
  HeadParams p;
  p.offsets = ParamLeaf("head.offsets", randn({cfg.query_rows(), C}, 0.02, rng));
  p.w_q = weight("head.w_q", C, cfg.attn_dim, rng);
  p.w_k = weight("head.w_k", C, cfg.attn_dim, rng);
  p.w_v = weight("head.w_v", C, C, rng);
  p.part_weights = ParamLeaf("head.part_weights", Tensor({cfg.datasets, cfg.keypoints}));
  p.mlp_w1 = weight("head.mlp_w1", cfg.part_features() * C, cfg.hidden, rng);
  p.mlp_b1 = ParamLeaf("head.mlp_b1", Tensor({1, cfg.hidden}));
  p.mlp_w2 = weight("head.mlp_w2", cfg.hidden, cfg.embed_dim, rng);
  p.mlp_b2 = ParamLeaf("head.mlp_b2", Tensor({1, cfg.embed_dim}));
  return p;
}

KeypointSet normalize_keypoints(const KeypointSet& pixels, double image_w, double image_h) {
  KeypointSet out = invisible_keypoints();
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    if (!pixels[i].visible()) continue;
    out[i].x = pixels[i].x / image_w;
    out[i].y = pixels[i].y / image_h;
  }
  return out;
}

Tensor keypoint_positions(const Tensor& table, const KeypointSet& normalized,
                          const HeadConfig& cfg, std::vector<bool>* visible) {
  if (cfg.keypoints != normalized.size()) {
    throw DimensionError("keypoint_positions: head expects " + std::to_string(cfg.keypoints) +
                         " keypoints");
  }
  const std::size_t K = normalized.size();
  Tensor pts({K, 2});
  std::vector<bool> vis(K);
  for (std::size_t i = 0; i < K; ++i) {
    vis[i] = normalized[i].visible();
    if (!vis[i]) continue;
    pts.at(i, 0) = normalized[i].x;
    pts.at(i, 1) = normalized[i].y;
  }
  const Tensor pe = sample_position_table(table, pts);
  const std::size_t C = pe.cols();
  Tensor out({K * cfg.repeats, C});
  for (std::size_t i = 0; i < K; ++i) {
    if (!vis[i]) continue;
    for (std::size_t r = 0; r < cfg.repeats; ++r)
      std::copy_n(pe.ptr() + i * C, C, out.ptr() + (i * cfg.repeats + r) * C);
  }
  if (visible) *visible = std::move(vis);
  return out;
}

QuerySet build_queries(const PositionField& field, const KeypointSet& normalized,
                       const HeadParams& params, const HeadConfig& cfg) {
  QuerySet q;
  q.queries = keypoint_positions(field.table, normalized, cfg, &q.visible);
  if (q.queries.shape() != params.offsets.value.shape()) {
    throw DimensionError("build_queries: offsets " + shape_str(params.offsets.value.shape()) +
                         " do not match queries " + shape_str(q.queries.shape()));
  }
  const std::size_t C = q.queries.cols();
  for (std::size_t k = 0; k < q.visible.size(); ++k) {
    if (!q.visible[k]) continue;
    for (std::size_t r = k * cfg.repeats; r < (k + 1) * cfg.repeats; ++r)
      for (std::size_t c = 0; c < C; ++c) q.queries.at(r, c) += params.offsets.value.at(r, c);
  }
  return q;
}

PartFeatures part_attention(const QuerySet& q, const PositionField& field,
                            const SparseFeatureMap& features, const HeadParams& params,
                            const HeadConfig& cfg) {
  ag::Tape tape;
  const HeadVars h = constants(tape, params);
  const Tensor keys = sample_position_table(field.table, features.centers);
  PartVars pv = branches(tape.constant(q.queries), q.visible, keys, tape.constant(features.values),
                         h, cfg);
  return {pv.part.value(), pv.peak.value(), pv.visible};
}

Tensor gate_and_embed(const PartFeatures& pf, int dataset, HeadParams& params,
                      const HeadConfig& cfg) {
  ag::Tape tape;
  const HeadVars h = constants(tape, params);
  const PartVars item{tape.constant(pf.part), tape.constant(pf.peak), pf.visible};
  const std::array<int, 1> ds{dataset};
  ag::Var e = embed(std::span<const PartVars>(&item, 1), ds, h, cfg);
  return e.value().reshaped({cfg.embed_dim});
}

PartFeatures part_zeroing(const PartFeatures& pf, std::span<const std::size_t> zero_set,
                          const HeadConfig& cfg) {
  PartFeatures out = pf;
  const std::size_t C = pf.part.cols();
  for (std::size_t k : zero_set) {
    if (k >= cfg.keypoints) throw std::out_of_range("part_zeroing: keypoint " + std::to_string(k));
    for (std::size_t r = k * cfg.repeats; r < (k + 1) * cfg.repeats; ++r) {
      std::fill_n(out.part.ptr() + r * C, C, 0.0);
      std::fill_n(out.peak.ptr() + r * C, C, 0.0);
    }
  }
  return out;
}

void write_attention_csv(std::ostream& os, const QuerySet& q, const PositionField& field,
                         const SparseFeatureMap& features, const PreparedImage& image,
                         const HeadParams& params, const HeadConfig& cfg) {
  const Tensor keys = sample_position_table(field.table, features.centers);
  const Tensor qp = matmul(q.queries, params.w_q.value);
  const Tensor kp = matmul(keys, params.w_k.value);
  const Tensor w =
      attention_kernel(qp, kp, kp, 1.0 / std::sqrt(static_cast<double>(cfg.attn_dim))).weights;
  os << "keypoint,repeat,level,patch_row,patch_col,weight\n";
  for (std::size_t k = 0; k < q.visible.size(); ++k) {
    if (!q.visible[k]) continue;
    for (std::size_t r = 0; r < cfg.repeats; ++r) {
      const std::size_t row = k * cfg.repeats + r;
      for (std::size_t j = 0; j < features.size(); ++j) {
        const std::size_t idx = features.patch_index[j];
        os << keypoint_name(k) << ',' << r << ',' << image.levels[idx] << ','
           << image.cells[idx].first << ',' << image.cells[idx].second << ','
           << fmt(w.at(row, j)) << '\n';
      }
    }
  }
}

HeadVars bind(ag::Tape& t, HeadParams& p) {
  return {t.param(p.offsets), t.param(p.w_q),    t.param(p.w_k),
          t.param(p.w_v),     t.param(p.part_weights),
          t.param(p.mlp_w1),  t.param(p.mlp_b1), t.param(p.mlp_w2),
          t.param(p.mlp_b2)};
}

PartVars part_attention(const Tensor& keypoint_pe, std::vector<bool> visible, const Tensor& keys,
                        ag::Var values, const HeadVars& h, const HeadConfig& cfg) {
  ag::Tape& t = *values.tape;
  const auto factors = row_factors(visible, cfg.repeats);
  ag::Var queries = ag::scale_rows(ag::add(t.constant(keypoint_pe), h.offsets), factors);
  return branches(queries, std::move(visible), keys, values, h, cfg);
}

ag::Var gate_parts(ag::Var features, ag::Var part_weights, int dataset, std::size_t repeats) {
  const Tensor& x = features.value();
  const Tensor& w = part_weights.value();
  const std::size_t T = w.rows(), K = w.cols();
  if (repeats == 0 || x.rows() % (repeats * K) != 0) {
    throw DimensionError("gate_parts: " + shape_str(x.shape()) + " rows are not a multiple of " +
                         std::to_string(repeats * K));
  }
  if (dataset != kAverageDataset && (dataset < 0 || static_cast<std::size_t>(dataset) >= T)) {
    throw std::out_of_range("gate_parts: dataset " + std::to_string(dataset) + " of " +
                            std::to_string(T));
  }
  std::vector<double> gate(K);
  for (std::size_t k = 0; k < K; ++k) {
    double z = 0.0;
    if (dataset == kAverageDataset) {
      for (std::size_t t = 0; t < T; ++t) z += w.at(t, k);
      z /= static_cast<double>(T);
    } else {
      z = w.at(static_cast<std::size_t>(dataset), k);
    }
    gate[k] = sigmoid(z);
  }
  const std::size_t C = x.cols();
  const std::size_t block = repeats * K;
  Tensor out = x;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double g = gate[(r % block) / repeats];
    for (std::size_t c = 0; c < C; ++c) out.at(r, c) *= g;
  }
  ag::Tape& tape = *features.tape;
  return tape.record(
      std::move(out), {features, part_weights},
      [features, part_weights, gate, dataset, repeats, block, C, T, K](ag::Tape& t,
                                                                       const Tensor& g) {
        const Tensor& x = features.value();
        if (t.requires_grad(features.id)) {
          Tensor& dx = t.grad(features.id);
          for (std::size_t r = 0; r < x.rows(); ++r) {
            const double s = gate[(r % block) / repeats];
            for (std::size_t c = 0; c < C; ++c) dx.at(r, c) += g.at(r, c) * s;
          }
        }
        if (t.requires_grad(part_weights.id)) {
          std::vector<double> dgate(K, 0.0);
          for (std::size_t r = 0; r < x.rows(); ++r) {
            double acc = 0.0;
            for (std::size_t c = 0; c < C; ++c) acc += g.at(r, c) * x.at(r, c);
            dgate[(r % block) / repeats] += acc;
          }
          Tensor& dw = t.grad(part_weights.id);
          for (std::size_t k = 0; k < K; ++k) {
            const double dz = dgate[k] * gate[k] * (1.0 - gate[k]);
            if (dataset == kAverageDataset) {
              for (std::size_t d = 0; d < T; ++d) dw.at(d, k) += dz / static_cast<double>(T);
            } else {
              dw.at(static_cast<std::size_t>(dataset), k) += dz;
            }
          }
        }
      });
}

ag::Var embed(std::span<const PartVars> items, std::span<const int> datasets, const HeadVars& h,
              const HeadConfig& cfg) {
  if (items.empty()) throw std::invalid_argument("embed: empty batch");
  if (items.size() != datasets.size()) {
    throw DimensionError("embed: " + std::to_string(items.size()) + " items but " +
                         std::to_string(datasets.size()) + " dataset tags");
  }
  std::vector<ag::Var> rows;
  rows.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    const std::array<ag::Var, 2> both{items[i].part, items[i].peak};
    ag::Var parts = ag::concat_rows(both);
    ag::Var gated = gate_parts(parts, h.part_weights, datasets[i], cfg.repeats);
    rows.push_back(ag::reshape(gated, {1, gated.value().size()}));
  }
  ag::Var x = rows.size() == 1 ? rows.front() : ag::concat_rows(rows);
  ag::Var hidden = ag::gelu(ag::add_row(ag::matmul(x, h.mlp_w1), h.mlp_b1));
  ag::Var out = ag::add_row(ag::matmul(hidden, h.mlp_w2), h.mlp_b2);
  return ag::l2_normalize_rows(out);
}

ag::Var attention(ag::Var q, ag::Var k, ag::Var v, double scale) {
  AttentionOutput a = attention_kernel(q.value(), k.value(), v.value(), scale);
  ag::Tape& t = *q.tape;
  return t.record(std::move(a.out), {q, k, v},
                  [q, k, v, scale, w = std::move(a.weights)](ag::Tape& t, const Tensor& g) {
                    Tensor dp = matmul_nt(g, v.value());
                    Tensor ds(dp.shape());
                    for (std::size_t i = 0; i < dp.rows(); ++i) {
                      double acc = 0.0;
                      for (std::size_t j = 0; j < dp.cols(); ++j) acc += dp.at(i, j) * w.at(i, j);
                      for (std::size_t j = 0; j < dp.cols(); ++j)
                        ds.at(i, j) = w.at(i, j) * (dp.at(i, j) - acc) * scale;
                    }
                    auto acc_into = [&t](ag::Var var, const Tensor& d) {
                      if (!t.requires_grad(var.id)) return;
                      Tensor& dst = t.grad(var.id);
                      for (std::size_t i = 0; i < d.size(); ++i) dst[i] += d[i];
                    };
                    if (t.requires_grad(v.id)) acc_into(v, matmul_tn(w, g));
                    if (t.requires_grad(q.id)) acc_into(q, matmul(ds, k.value()));
                    if (t.requires_grad(k.id)) acc_into(k, matmul_tn(ds, q.value()));
                  });
}

}  // namespace retina
