#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "htad/error.hpp"

namespace htad {

using Rng = std::mt19937_64;

// Dense row-major tensor of rank 1 or 2 holding 64-bit floats.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const { return shape_.size() < 2 ? 1 : shape_[1]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<double> row(std::size_t r);
  std::span<const double> row(std::size_t r) const;

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  void fill(double v);

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

struct ParamId {
  std::uint32_t index = 0;
  friend bool operator==(ParamId, ParamId) = default;
};

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor adam_m;
  Tensor adam_v;
  // Gradients are tracked per touched row (embedding-style lookups).
  bool row_sparse = false;
};

// Owns every trainable tensor together with its gradient slot and Adam moments.
class ParameterStore {
 public:
  ParamId add(std::string name, std::vector<std::size_t> shape, bool row_sparse = false);
  ParamId id(std::string_view name) const;
  bool contains(std::string_view name) const;

  Parameter& operator[](ParamId p) { return params_.at(p.index); }
  const Parameter& operator[](ParamId p) const { return params_.at(p.index); }
  Parameter& at(std::string_view name) { return (*this)[id(name)]; }
  const Parameter& at(std::string_view name) const { return (*this)[id(name)]; }

  std::size_t size() const { return params_.size(); }
  std::span<Parameter> params() { return params_; }
  std::span<const Parameter> params() const { return params_; }

  void zero_grad();
  double grad_norm() const;

  // Adam step counter t; zero before the first update.
  std::uint64_t step = 0;

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::uint32_t> by_name_;
};

void init_glorot_uniform(Tensor& t, Rng& rng);
void init_uniform(Tensor& t, double bound, Rng& rng);

// Per-parameter gradient accumulators for one loss evaluation. Dense
// parameters get one flat buffer; row-sparse parameters get a buffer per
// touched row.
class GradientSet {
 public:
  explicit GradientSet(const ParameterStore& store);

  std::span<double> row(ParamId p, std::size_t r);
  std::span<double> dense(ParamId p);

  // Rows of a row-sparse parameter that received a gradient, ascending.
  std::vector<std::size_t> touched_rows(ParamId p) const;

  void scale(double s);
  // Adds `s` times these gradients into the store's gradient slots.
  void accumulate_into(ParameterStore& store, double s = 1.0) const;
  // Reads one coordinate (zero when untouched).
  double get(ParamId p, std::size_t flat_index) const;

 private:
  struct Slot {
    std::vector<double> dense;
    std::map<std::size_t, std::vector<double>> rows;
  };
  const ParameterStore* store_;
  std::vector<Slot> slots_;
};

struct Var {
  std::uint32_t index = 0;
};

// Reverse-mode tape for a single loss evaluation. Values are vectors; scalars
// are vectors of length one. Parameters are read from the store at record
// time and their gradients land in grads() after backward().
class GradContext {
 public:
  explicit GradContext(const ParameterStore& store);
  GradContext(const GradContext&) = delete;
  GradContext& operator=(const GradContext&) = delete;

  const ParameterStore& store() const { return *store_; }

  Var constant(std::vector<double> values);
  Var scalar_constant(double v) { return constant({v}); }
  Var param(ParamId p);
  Var param_row(ParamId p, std::size_t row);

  // W x + b with W a [out x in] parameter and b an [out] parameter.
  Var linear(ParamId w, ParamId b, Var x);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var dot(Var a, Var b);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var concat(Var a, Var b);
  Var slice(Var a, std::size_t offset, std::size_t length);
  Var stack(std::span<const Var> scalars);
  Var softmax(Var scores);
  Var weighted_sum(Var weights, std::span<const Var> vectors);
  Var sum(std::span<const Var> scalars);
  Var mean(std::span<const Var> scalars);
  Var squared_norm(Var a);
  Var log_sigmoid(Var x);
  Var bce_with_logits(Var logit, double label);
  Var hinge(Var pos, Var neg, double margin);

  std::span<const double> value(Var v) const { return nodes_.at(v.index).value; }
  double scalar(Var v) const;
  std::size_t width(Var v) const { return nodes_.at(v.index).value.size(); }
  std::size_t node_count() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and visits each recorded op once in reverse.
  void backward(Var loss);

  const GradientSet& grads() const { return grads_; }
  GradientSet& grads() { return grads_; }

 private:
  struct Node {
    std::vector<double> value;
    std::vector<double> grad;
    std::function<void()> backward;
  };

  Var push(std::vector<double> value, std::function<void()> backward);
  std::vector<double>& grad_of(Var v) { return nodes_[v.index].grad; }
  const std::vector<double>& value_of(Var v) const { return nodes_[v.index].value; }

  const ParameterStore* store_;
  std::vector<Node> nodes_;
  GradientSet grads_;
};

// Stable softmax on plain values.
std::vector<double> softmax(std::span<const double> scores);

// (q . h) / sqrt(width)
double scaled_dot(std::span<const double> q, std::span<const double> h, std::size_t width);

// W x + b on plain values.
std::vector<double> linear(const Tensor& w, std::span<const double> b, std::span<const double> x);

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over every parameter; increments store.step and clears
// gradients. Throws NumericError (leaving the store untouched) on a
// non-finite gradient.
void adam_step(ParameterStore& store, const AdamConfig& config);

// Rescales all gradients so their global L2 norm is at most max_norm. Returns
// the norm before clipping.
double clip_global_norm(ParameterStore& store, double max_norm);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

using LossBuilder = std::function<Var(GradContext&)>;

// Central-difference check of every coordinate of the selected parameters
// (all when `only` is empty). Relative error per coordinate is
// |a - n| / max(|a|, |n|, 1e-8).
GradCheckResult grad_check(const LossBuilder& loss, ParameterStore& store, double h,
                           const std::vector<std::string>& only = {});

// Checkpoint: magic, version, metadata blob, step counter, then every
// parameter with its Adam moments. All integers and floats little-endian.
void save_checkpoint(const std::string& path, const ParameterStore& store,
                     const std::string& metadata);
struct Checkpoint {
  ParameterStore store;
  std::string metadata;
};
Checkpoint load_checkpoint(const std::string& path);

inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace htad
