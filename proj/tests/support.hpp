#pragma once

// Helpers shared by the unit tests and the acceptance suite. The oracle
// below re-derives the forward pass with plain loops over raw parameter
// values; it deliberately shares no code with the tape.

#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "htad/model.hpp"
#include "htad/numerics.hpp"

namespace htad::testing {

using Vec = std::vector<double>;

inline Vec mat_vec(const Tensor& w, const Tensor& b, const Vec& x) {
  const std::size_t rows = w.shape()[0], cols = w.shape()[1];
  Vec out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = b.data()[r];
    for (std::size_t c = 0; c < cols; ++c) s += w(r, c) * x[c];
    out[r] = s;
  }
  return out;
}

inline Vec row_of(const Tensor& t, std::size_t r) {
  const std::size_t cols = t.shape()[1];
  return Vec(t.data().begin() + static_cast<std::ptrdiff_t>(r * cols),
             t.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * cols));
}

inline double dot(const Vec& a, const Vec& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline Vec softmax_naive(const Vec& e) {
  double mx = e[0];
  for (double v : e) mx = std::max(mx, v);
  Vec out(e.size());
  double z = 0;
  for (std::size_t i = 0; i < e.size(); ++i) z += (out[i] = std::exp(e[i] - mx));
  for (double& v : out) v /= z;
  return out;
}

inline double act(Activation a, double x) { return a == Activation::tanh ? std::tanh(x) : 1.0 / (1.0 + std::exp(-x)); }
inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct OracleOutput {
  Vec f;
  double score = 0;
  std::vector<Vec> alpha;  // per categorical type present
  Vec beta;
};

inline OracleOutput oracle_forward(const ParameterStore& store, const ModelConfig& cfg, const Target& target,
                                   const ContextInput& input) {
  const Tensor& M = store.at("M").value;
  const Vec hd = row_of(M, target.embedding_row);
  const double scale = std::sqrt(static_cast<double>(cfg.attention_dim));
  const bool attentive = cfg.attention_mode != AttentionMode::mean;
  Vec q, s;
  if (cfg.attention_mode == AttentionMode::transform) {
    q = mat_vec(store.at("W_q").value, store.at("b_q").value, hd);
    s = mat_vec(store.at("W_s").value, store.at("b_s").value, hd);
  } else if (cfg.attention_mode == AttentionMode::group) {
    q = row_of(store.at("Q").value, target.group);
    s = row_of(store.at("S").value, target.group);
  }

  OracleOutput out;
  std::vector<Vec> zs;
  for (const auto& tn : input.types) {
    const std::string& t = cfg.context_types[tn.type_index];
    std::vector<Vec> hs;
    for (std::size_t r : tn.rows) hs.push_back(mat_vec(store.at("W_c/" + t).value, store.at("b_c/" + t).value, row_of(M, r)));
    Vec e(hs.size(), 0.0);
    if (attentive) {
      for (std::size_t i = 0; i < hs.size(); ++i) e[i] = dot(q, hs[i]) / scale;
    }
    const Vec a = softmax_naive(e);
    Vec z(cfg.attention_dim, 0.0);
    for (std::size_t i = 0; i < hs.size(); ++i) {
      for (std::size_t k = 0; k < z.size(); ++k) z[k] += a[i] * hs[i][k];
    }
    for (double& v : z) v = act(cfg.activation, v);
    out.alpha.push_back(a);
    zs.push_back(z);
  }
  if (input.series) {
    const std::size_t H = cfg.series_hidden, C = cfg.series_channels;
    const Tensor& W = store.at("lstm/W").value;
    const Tensor& b = store.at("lstm/b").value;
    Vec h(H, 0.0), c(H, 0.0);
    for (std::size_t t = 0; t < input.series->steps; ++t) {
      Vec x(C + H);
      for (std::size_t k = 0; k < C; ++k) x[k] = input.series->values[t * C + k];
      for (std::size_t k = 0; k < H; ++k) x[C + k] = h[k];
      const Vec g = mat_vec(W, b, x);
      for (std::size_t k = 0; k < H; ++k) {
        const double ig = logistic(g[k]), fg = logistic(g[H + k]), cg = std::tanh(g[2 * H + k]),
                     og = logistic(g[3 * H + k]);
        c[k] = fg * c[k] + ig * cg;
        h[k] = og * std::tanh(c[k]);
      }
    }
    zs.push_back(mat_vec(store.at("W_t").value, store.at("b_t").value, h));
  }
  Vec e(zs.size(), 0.0);
  if (attentive) {
    for (std::size_t i = 0; i < zs.size(); ++i) e[i] = dot(s, zs[i]) / scale;
  }
  out.beta = softmax_naive(e);
  out.f.assign(cfg.attention_dim, 0.0);
  for (std::size_t i = 0; i < zs.size(); ++i) {
    for (std::size_t k = 0; k < out.f.size(); ++k) out.f[k] += out.beta[i] * zs[i][k];
  }
  for (double& v : out.f) v = act(cfg.activation, v);
  out.score = dot(out.f, mat_vec(store.at("W_d").value, store.at("b_d").value, hd));
  return out;
}

// A random model plus one patient's context, small enough for exhaustive
// checks.
struct Instance {
  ModelConfig config;
  std::vector<Target> targets;
  ParameterStore store;
  std::optional<HtadModel> model;
  ContextInput input;
};

struct InstanceShape {
  std::size_t max_types = 5;
  std::size_t max_nodes = 10;
  std::size_t F = 8;
  std::size_t Fp = 4;
  bool series = true;
};

inline void randomize(ParameterStore& store, Rng& rng, double scale = 0.5) {
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& p : store.params()) {
    for (double& v : p.value.data()) v = u(rng);
  }
}

inline Instance random_instance(Rng& rng, AttentionMode mode, const InstanceShape& shape = {}) {
  Instance inst;
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  const std::size_t types = pick(1, shape.max_types);
  for (std::size_t t = 0; t < types; ++t) inst.config.context_types.push_back("t" + std::to_string(t));
  inst.config.embedding_dim = shape.F;
  inst.config.attention_dim = shape.Fp;
  inst.config.attention_mode = mode;
  inst.config.group_count = pick(1, 3);
  const bool series = shape.series && pick(0, 1) == 1;
  inst.config.series_channels = series ? pick(1, 3) : 0;
  inst.config.series_hidden = pick(2, 5);

  const std::size_t per_type = shape.max_nodes;
  const std::size_t target_count = pick(1, 4);
  const std::size_t rows = types * per_type + target_count;
  for (std::size_t d = 0; d < target_count; ++d) {
    inst.targets.push_back(Target{"d" + std::to_string(d), types * per_type + d, pick(0, inst.config.group_count - 1)});
  }
  inst.model = HtadModel::create(inst.config, inst.targets, rows, inst.store, rng);
  randomize(inst.store, rng);

  inst.input.patient = "p";
  for (std::size_t t = 0; t < types; ++t) {
    const std::size_t n = pick(series ? 0 : 1, per_type);
    if (n == 0) continue;
    TypeNeighbors tn;
    tn.type_index = t;
    std::vector<std::size_t> all(per_type);
    std::iota(all.begin(), all.end(), t * per_type);
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(n);
    std::sort(all.begin(), all.end());
    for (std::size_t r : all) {
      tn.rows.push_back(r);
      tn.labels.push_back("n" + std::to_string(r));
    }
    inst.input.types.push_back(std::move(tn));
  }
  if (series) {
    Series s;
    s.steps = pick(1, 6);
    s.channels = inst.config.series_channels;
    std::normal_distribution<double> g(0.0, 1.0);
    for (std::size_t k = 0; k < s.steps * s.channels; ++k) s.values.push_back(g(rng));
    inst.input.series = s;
  }
  return inst;
}

}  // namespace htad::testing
