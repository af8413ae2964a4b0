#include "htad/numerics.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace htad {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow.
double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

void require(bool ok, const char* what) {
  if (!ok) throw NumericError(what);
}

}  // namespace

// ---------------------------------------------------------------- Tensor

Tensor::Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)), data_(product(shape_), 0.0) {
  require(!shape_.empty() && shape_.size() <= 2, "tensor rank must be 1 or 2");
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  require(!shape_.empty() && shape_.size() <= 2, "tensor rank must be 1 or 2");
  require(data_.size() == product(shape_), "tensor data length does not match shape");
}

std::span<double> Tensor::row(std::size_t r) { return std::span<double>(data_).subspan(r * cols(), cols()); }

std::span<const double> Tensor::row(std::size_t r) const {
  return std::span<const double>(data_).subspan(r * cols(), cols());
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

// -------------------------------------------------------- ParameterStore

ParamId ParameterStore::add(std::string name, std::vector<std::size_t> shape, bool row_sparse) {
  if (by_name_.contains(name)) throw ConfigError("duplicate parameter name: " + name);
  for (auto d : shape) {
    if (d == 0) throw ConfigError("parameter " + name + " has a zero dimension");
  }
  const auto index = static_cast<std::uint32_t>(params_.size());
  Parameter p;
  p.name = name;
  p.value = Tensor(shape);
  p.grad = Tensor(shape);
  p.adam_m = Tensor(shape);
  p.adam_v = Tensor(shape);
  p.row_sparse = row_sparse;
  params_.push_back(std::move(p));
  by_name_.emplace(std::move(name), index);
  return ParamId{index};
}

ParamId ParameterStore::id(std::string_view name) const {
  auto it = by_name_.find(std::string(name));
  if (it == by_name_.end()) throw ConfigError("unknown parameter: " + std::string(name));
  return ParamId{it->second};
}

bool ParameterStore::contains(std::string_view name) const { return by_name_.contains(std::string(name)); }

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.grad.fill(0.0);
}

double ParameterStore::grad_norm() const {
  double sq = 0.0;
  for (const auto& p : params_) {
    for (double g : p.grad.data()) sq += g * g;
  }
  return std::sqrt(sq);
}

void init_glorot_uniform(Tensor& t, Rng& rng) {
  const double fan_out = static_cast<double>(t.rows());
  const double fan_in = static_cast<double>(t.cols());
  init_uniform(t, std::sqrt(6.0 / (fan_in + fan_out)), rng);
}

void init_uniform(Tensor& t, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.data()) v = dist(rng);
}

// ---------------------------------------------------------- GradientSet

GradientSet::GradientSet(const ParameterStore& store) : store_(&store), slots_(store.size()) {}

std::span<double> GradientSet::row(ParamId p, std::size_t r) {
  const Parameter& param = (*store_)[p];
  const std::size_t cols = param.value.cols();
  Slot& slot = slots_.at(p.index);
  if (param.row_sparse) {
    auto [it, inserted] = slot.rows.try_emplace(r);
    if (inserted) it->second.assign(cols, 0.0);
    return it->second;
  }
  return dense(p).subspan(r * cols, cols);
}

std::span<double> GradientSet::dense(ParamId p) {
  const Parameter& param = (*store_)[p];
  Slot& slot = slots_.at(p.index);
  if (param.row_sparse) throw NumericError("dense gradient requested for row-sparse parameter " + param.name);
  if (slot.dense.empty()) slot.dense.assign(param.value.size(), 0.0);
  return slot.dense;
}

std::vector<std::size_t> GradientSet::touched_rows(ParamId p) const {
  std::vector<std::size_t> out;
  for (const auto& [r, _] : slots_.at(p.index).rows) out.push_back(r);
  return out;
}

void GradientSet::scale(double s) {
  for (auto& slot : slots_) {
    for (double& g : slot.dense) g *= s;
    for (auto& [_, row] : slot.rows) {
      for (double& g : row) g *= s;
    }
  }
}

void GradientSet::accumulate_into(ParameterStore& store, double s) const {
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    Parameter& param = store[ParamId{static_cast<std::uint32_t>(i)}];
    auto out = param.grad.data();
    const Slot& slot = slots_[i];
    for (std::size_t k = 0; k < slot.dense.size(); ++k) out[k] += s * slot.dense[k];
    for (const auto& [r, row] : slot.rows) {
      auto dst = param.grad.row(r);
      for (std::size_t k = 0; k < row.size(); ++k) dst[k] += s * row[k];
    }
  }
}

double GradientSet::get(ParamId p, std::size_t flat_index) const {
  const Parameter& param = (*store_)[p];
  const Slot& slot = slots_.at(p.index);
  if (param.row_sparse) {
    const std::size_t cols = param.value.cols();
    auto it = slot.rows.find(flat_index / cols);
    return it == slot.rows.end() ? 0.0 : it->second[flat_index % cols];
  }
  return slot.dense.empty() ? 0.0 : slot.dense[flat_index];
}

// ---------------------------------------------------------- GradContext

GradContext::GradContext(const ParameterStore& store) : store_(&store), grads_(store) {}

Var GradContext::push(std::vector<double> value, std::function<void()> backward) {
  for (double v : value) {
    if (!std::isfinite(v)) throw NumericError("non-finite value produced in forward pass");
  }
  nodes_.push_back(Node{std::move(value), {}, std::move(backward)});
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

double GradContext::scalar(Var v) const {
  const auto& val = value_of(v);
  require(val.size() == 1, "scalar requested from a non-scalar node");
  return val[0];
}

Var GradContext::constant(std::vector<double> values) { return push(std::move(values), nullptr); }

Var GradContext::param(ParamId p) {
  const auto data = (*store_)[p].value.data();
  Var out = push(std::vector<double>(data.begin(), data.end()), nullptr);
  nodes_[out.index].backward = [this, p, out] {
    auto dst = grads_.dense(p);
    const auto& g = grad_of(out);
    for (std::size_t k = 0; k < g.size(); ++k) dst[k] += g[k];
  };
  return out;
}

Var GradContext::param_row(ParamId p, std::size_t row) {
  const Parameter& param = (*store_)[p];
  if (row >= param.value.rows()) throw NumericError("row out of range for parameter " + param.name);
  const auto data = param.value.row(row);
  Var out = push(std::vector<double>(data.begin(), data.end()), nullptr);
  nodes_[out.index].backward = [this, p, row, out] {
    auto dst = grads_.row(p, row);
    const auto& g = grad_of(out);
    for (std::size_t k = 0; k < g.size(); ++k) dst[k] += g[k];
  };
  return out;
}

Var GradContext::linear(ParamId w, ParamId b, Var x) {
  const Tensor& W = (*store_)[w].value;
  const Tensor& B = (*store_)[b].value;
  const auto& xv = value_of(x);
  if (W.cols() != xv.size() || W.rows() != B.size()) {
    throw NumericError("linear: shape mismatch for " + (*store_)[w].name);
  }
  Var out = push(htad::linear(W, B.data(), xv), nullptr);
  nodes_[out.index].backward = [this, w, b, x, out] {
    const Tensor& W = (*store_)[w].value;
    const auto& g = grad_of(out);
    const auto& xv = value_of(x);
    auto& gx = grad_of(x);
    auto dW = grads_.dense(w);
    auto db = grads_.dense(b);
    const std::size_t cols = W.cols();
    for (std::size_t r = 0; r < W.rows(); ++r) {
      const double gr = g[r];
      if (gr == 0.0) continue;
      db[r] += gr;
      const auto wr = W.row(r);
      double* dwr = dW.data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) {
        dwr[c] += gr * xv[c];
        gx[c] += gr * wr[c];
      }
    }
  };
  return out;
}

Var GradContext::add(Var a, Var b) {
  const auto& av = value_of(a);
  const auto& bv = value_of(b);
  require(av.size() == bv.size(), "add: width mismatch");
  std::vector<double> out(av.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = av[k] + bv[k];
  Var o = push(std::move(out), nullptr);
  nodes_[o.index].backward = [this, a, b, o] {
    const auto& g = grad_of(o);
    auto& ga = grad_of(a);
    auto& gb = grad_of(b);
    for (std::size_t k = 0; k < g.size(); ++k) {
      ga[k] += g[k];
      gb[k] += g[k];
    }
  };
  return o;
}

Var GradContext::sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var GradContext::mul(Var a, Var b) {
  const auto& av = value_of(a);
  const auto& bv = value_of(b);
  require(av.size() == bv.size(), "mul: width mismatch");
  std::vector<double> out(av.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = av[k] * bv[k];
  Var o = push(std::move(out), nullptr);
  nodes_[o.index].backward = [this, a, b, o] {
    const auto& g = grad_of(o);
    const auto& av = value_of(a);
    const auto& bv = value_of(b);
    auto& ga = grad_of(a);
    auto& gb = grad_of(b);
    for (std::size_t k = 0; k < g.size(); ++k) {
      ga[k] += g[k] * bv[k];
      gb[k] += g[k] * av[k];
    }
  };
  return o;
}

Var GradContext::scale(Var a, double s) {
  const auto& av = value_of(a);
  std::vector<double> out(av.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = s * av[k];
  Var o = push(std::move(out), nullptr);
  nodes_[o.index].backward = [this, a, s, o] {
    const auto& g = grad_of(o);
    auto& ga = grad_of(a);
    for (std::size_t k = 0; k < g.size(); ++k) ga[k] += s * g[k];
  };
  return o;
}

Var GradContext::dot(Var a, Var b) {
  const auto& av = value_of(a);
  const auto& bv = value_of(b);
  require(av.size() == bv.size(), "dot: width mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < av.size(); ++k) s += av[k] * bv[k];
  Var o = push({s}, nullptr);
  nodes_[o.index].backward = [this, a, b, o] {
    const double g = grad_of(o)[0];
    const auto& av = value_of(a);
    const auto& bv = value_of(b);
    auto& ga = grad_of(a);
    auto& gb = grad_of(b);
    for (std::size_t k = 0; k < av.size(); ++k) {
      ga[k] += g * bv[k];
      gb[k] += g * av[k];
    }
  };
  return o;
}

Var GradContext::tanh(Var a) {
  const auto& av = value_of(a);
  std::vector<double> out(av.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = std::tanh(av[k]);
  Var o = push(std::move(out), nullptr);
  nodes_[o.index].backward = [this, a, o] {
    const auto& g = grad_of(o);
    const auto& y = value_of(o);
    auto& ga = grad_of(a);
    for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] * (1.0 - y[k] * y[k]);
  };
  return o;
}

Var GradContext::sigmoid(Var a) {
  const auto& av = value_of(a);
  std::vector<double> out(av.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = stable_sigmoid(av[k]);
  Var o = push(std::move(out), nullptr);
  nodes_[o.index].backward = [this, a, o] {
    const auto& g = grad_of(o);
    const auto& y = value_of(o);
    auto& ga = grad_of(a);
    for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] * y[k] * (1.0 - y[k]);
  };
  return o;
}

Var GradContext::concat(Var a, Var b) {
  const auto& av = value_of(a);
  const auto& bv = value_of(b);
  std::vector<double> out;
  out.reserve(av.size() + bv.size());
  out.insert(out.end(), av.begin(), av.end());
  out.insert(out.end(), bv.begin(), bv.end());
  Var o = push(std::move(out), nullptr);
  nodes_[o.index].backward = [this, a, b, o] {
    const auto& g = grad_of(o);
    auto& ga = grad_of(a);
    auto& gb = grad_of(b);
    for (std::size_t k = 0; k < ga.size(); ++k) ga[k] += g[k];
    for (std::size_t k = 0; k < gb.size(); ++k) gb[k] += g[ga.size() + k];
  };
  return o;
}

Var GradContext::slice(Var a, std::size_t offset, std::size_t length) {
  const auto& av = value_of(a);
  require(offset + length <= av.size(), "slice: out of range");
  Var o = push(std::vector<double>(av.begin() + static_cast<std::ptrdiff_t>(offset),
                                   av.begin() + static_cast<std::ptrdiff_t>(offset + length)),
               nullptr);
  nodes_[o.index].backward = [this, a, offset, o] {
    const auto& g = grad_of(o);
    auto& ga = grad_of(a);
    for (std::size_t k = 0; k < g.size(); ++k) ga[offset + k] += g[k];
  };
  return o;
}

Var GradContext::stack(std::span<const Var> scalars) {
  std::vector<Var> inputs(scalars.begin(), scalars.end());
  std::vector<double> out;
  out.reserve(inputs.size());
  for (Var s : inputs) out.push_back(scalar(s));
  Var o = push(std::move(out), nullptr);
  nodes_[o.index].backward = [this, inputs = std::move(inputs), o] {
    const auto& g = grad_of(o);
    for (std::size_t k = 0; k < inputs.size(); ++k) grad_of(inputs[k])[0] += g[k];
  };
  return o;
}

Var GradContext::softmax(Var scores) {
  Var o = push(htad::softmax(value_of(scores)), nullptr);
  nodes_[o.index].backward = [this, scores, o] {
    const auto& g = grad_of(o);
    const auto& y = value_of(o);
    auto& gs = grad_of(scores);
    double gy = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) gy += g[k] * y[k];
    for (std::size_t k = 0; k < g.size(); ++k) gs[k] += y[k] * (g[k] - gy);
  };
  return o;
}

Var GradContext::weighted_sum(Var weights, std::span<const Var> vectors) {
  std::vector<Var> inputs(vectors.begin(), vectors.end());
  const auto& w = value_of(weights);
  require(!inputs.empty() && w.size() == inputs.size(), "weighted_sum: weight count mismatch");
  const std::size_t width = value_of(inputs[0]).size();
  std::vector<double> out(width, 0.0);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& v = value_of(inputs[i]);
    require(v.size() == width, "weighted_sum: width mismatch");
    for (std::size_t k = 0; k < width; ++k) out[k] += w[i] * v[k];
  }
  Var o = push(std::move(out), nullptr);
  nodes_[o.index].backward = [this, weights, inputs = std::move(inputs), o] {
    const auto& g = grad_of(o);
    const auto& w = value_of(weights);
    auto& gw = grad_of(weights);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const auto& v = value_of(inputs[i]);
      auto& gv = grad_of(inputs[i]);
      double acc = 0.0;
      for (std::size_t k = 0; k < g.size(); ++k) {
        acc += g[k] * v[k];
        gv[k] += w[i] * g[k];
      }
      gw[i] += acc;
    }
  };
  return o;
}

Var GradContext::sum(std::span<const Var> scalars) {
  std::vector<Var> inputs(scalars.begin(), scalars.end());
  double s = 0.0;
  for (Var v : inputs) s += scalar(v);
  Var o = push({s}, nullptr);
  nodes_[o.index].backward = [this, inputs = std::move(inputs), o] {
    const double g = grad_of(o)[0];
    for (Var v : inputs) grad_of(v)[0] += g;
  };
  return o;
}

Var GradContext::mean(std::span<const Var> scalars) {
  require(!scalars.empty(), "mean of zero terms");
  return scale(sum(scalars), 1.0 / static_cast<double>(scalars.size()));
}

Var GradContext::squared_norm(Var a) {
  double s = 0.0;
  for (double v : value_of(a)) s += v * v;
  Var o = push({s}, nullptr);
  nodes_[o.index].backward = [this, a, o] {
    const double g = grad_of(o)[0];
    const auto& av = value_of(a);
    auto& ga = grad_of(a);
    for (std::size_t k = 0; k < av.size(); ++k) ga[k] += 2.0 * g * av[k];
  };
  return o;
}

Var GradContext::log_sigmoid(Var x) {
  const double xv = scalar(x);
  Var o = push({-softplus(-xv)}, nullptr);
  nodes_[o.index].backward = [this, x, o] {
    const double g = grad_of(o)[0];
    grad_of(x)[0] += g * stable_sigmoid(-scalar(x));
  };
  return o;
}

Var GradContext::bce_with_logits(Var logit, double label) {
  if (label != 0.0 && label != 1.0) throw NumericError("label outside {0,1}");
  const double x = scalar(logit);
  // -y log s(x) - (1-y) log(1 - s(x)) = softplus(x) - y x
  Var o = push({softplus(x) - label * x}, nullptr);
  nodes_[o.index].backward = [this, logit, label, o] {
    const double g = grad_of(o)[0];
    grad_of(logit)[0] += g * (stable_sigmoid(scalar(logit)) - label);
  };
  return o;
}

Var GradContext::hinge(Var pos, Var neg, double margin) {
  const double arg = -scalar(pos) + scalar(neg) + margin;
  Var o = push({std::max(0.0, arg)}, nullptr);
  nodes_[o.index].backward = [this, pos, neg, arg, o] {
    if (arg <= 0.0) return;
    const double g = grad_of(o)[0];
    grad_of(pos)[0] -= g;
    grad_of(neg)[0] += g;
  };
  return o;
}

void GradContext::backward(Var loss) {
  require(value_of(loss).size() == 1, "backward requires a scalar loss");
  const std::size_t last = loss.index;
  for (std::size_t i = 0; i <= last; ++i) nodes_[i].grad.assign(nodes_[i].value.size(), 0.0);
  nodes_[last].grad[0] = 1.0;
  for (std::size_t i = last + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward) continue;
    if (std::all_of(n.grad.begin(), n.grad.end(), [](double g) { return g == 0.0; })) continue;
    n.backward();
  }
}

// ------------------------------------------------------- value helpers

std::vector<double> softmax(std::span<const double> scores) {
  if (scores.empty()) throw NumericError("softmax of an empty vector");
  const double mx = *std::max_element(scores.begin(), scores.end());
  if (!std::isfinite(mx)) throw NumericError("softmax of non-finite scores");
  std::vector<double> out(scores.size());
  double z = 0.0;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    out[k] = std::exp(scores[k] - mx);
    z += out[k];
  }
  for (double& v : out) v /= z;
  return out;
}

double scaled_dot(std::span<const double> q, std::span<const double> h, std::size_t width) {
  if (q.size() != h.size() || q.size() != width) throw NumericError("scaled_dot: length mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < q.size(); ++k) s += q[k] * h[k];
  return s / std::sqrt(static_cast<double>(width));
}

std::vector<double> linear(const Tensor& w, std::span<const double> b, std::span<const double> x) {
  if (w.cols() != x.size() || w.rows() != b.size()) throw NumericError("linear: shape mismatch");
  std::vector<double> out(b.begin(), b.end());
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const auto wr = w.row(r);
    double acc = 0.0;
    for (std::size_t c = 0; c < wr.size(); ++c) acc += wr[c] * x[c];
    out[r] += acc;
  }
  return out;
}

// --------------------------------------------------------------- Adam

void adam_step(ParameterStore& store, const AdamConfig& config) {
  for (const auto& p : store.params()) {
    for (double g : p.grad.data()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + p.name);
    }
  }
  store.step += 1;
  const double t = static_cast<double>(store.step);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  for (auto& p : store.params()) {
    auto w = p.value.data();
    auto g = p.grad.data();
    auto m = p.adam_m.data();
    auto v = p.adam_v.data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g[k];
      v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      w[k] -= config.lr * mhat / (std::sqrt(vhat) + config.eps);
    }
  }
  store.zero_grad();
}

double clip_global_norm(ParameterStore& store, double max_norm) {
  const double norm = store.grad_norm();
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& p : store.params()) {
      for (double& g : p.grad.data()) g *= s;
    }
  }
  return norm;
}

// ---------------------------------------------------------- grad check

GradCheckResult grad_check(const LossBuilder& loss, ParameterStore& store, double h,
                           const std::vector<std::string>& only) {
  if (!(h > 0.0)) throw ConfigError("grad_check step must be positive");
  GradContext analytic(store);
  const Var l = loss(analytic);
  if (!std::isfinite(analytic.scalar(l))) throw NumericError("loss is not finite");
  analytic.backward(l);

  auto evaluate = [&] {
    GradContext ctx(store);
    const double v = ctx.scalar(loss(ctx));
    if (!std::isfinite(v)) throw NumericError("loss is not finite");
    return v;
  };

  GradCheckResult result;
  for (std::uint32_t i = 0; i < store.size(); ++i) {
    const ParamId pid{i};
    Parameter& p = store[pid];
    if (!only.empty() && std::find(only.begin(), only.end(), p.name) == only.end()) continue;
    auto data = p.value.data();
    for (std::size_t k = 0; k < data.size(); ++k) {
      const double saved = data[k];
      data[k] = saved + h;
      const double up = evaluate();
      data[k] = saved - h;
      const double down = evaluate();
      data[k] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic.grads().get(pid, k);
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      ++result.coordinates;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = p.name;
        result.worst_index = k;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

// ---------------------------------------------------------- checkpoint

namespace {

constexpr std::array<char, 8> kMagic = {'H', 'T', 'A', 'D', 'C', 'K', 'P', 'T'};

template <typename T>
void put_le(std::ostream& out, T v) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  U bits = std::bit_cast<U>(v);
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

template <typename T>
T get_le(std::istream& in) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  std::array<unsigned char, sizeof(U)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw DataError("checkpoint truncated");
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<U>(bytes[i]) << (8 * i);
  return std::bit_cast<T>(bits);
}

void put_string(std::ostream& out, const std::string& s) {
  put_le<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
  const auto n = get_le<std::uint64_t>(in);
  if (n > (std::uint64_t{1} << 34)) throw DataError("checkpoint string length implausible");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw DataError("checkpoint truncated");
  return s;
}

void put_tensor(std::ostream& out, const Tensor& t) {
  for (double v : t.data()) put_le<double>(out, v);
}

void get_tensor(std::istream& in, Tensor& t) {
  for (double& v : t.data()) v = get_le<double>(in);
}

}  // namespace

void save_checkpoint(const std::string& path, const ParameterStore& store, const std::string& metadata) {
  std::ostringstream out(std::ios::binary);
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_string(out, metadata);
  put_le<std::uint64_t>(out, store.step);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(store.size()));
  for (const auto& p : store.params()) {
    put_string(out, p.name);
    put_le<std::uint32_t>(out, p.row_sparse ? 1u : 0u);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.shape().size()));
    for (auto d : p.value.shape()) put_le<std::uint64_t>(out, d);
    put_tensor(out, p.value);
    put_tensor(out, p.adam_m);
    put_tensor(out, p.adam_v);
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw DataError("cannot write checkpoint: " + path);
  const std::string bytes = out.str();
  file.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!file) throw DataError("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw DataError("not a checkpoint file: " + path);
  const auto version = get_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  ck.metadata = get_string(in);
  ck.store.step = get_le<std::uint64_t>(in);
  const auto count = get_le<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = get_string(in);
    const bool row_sparse = get_le<std::uint32_t>(in) != 0;
    const auto rank = get_le<std::uint32_t>(in);
    if (rank == 0 || rank > 2) throw DataError("checkpoint tensor rank invalid for " + name);
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(get_le<std::uint64_t>(in));
    const ParamId pid = ck.store.add(name, shape, row_sparse);
    Parameter& p = ck.store[pid];
    get_tensor(in, p.value);
    get_tensor(in, p.adam_m);
    get_tensor(in, p.adam_v);
  }
  return ck;
}

}  // namespace htad
