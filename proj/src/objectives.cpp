#include "htad/objectives.hpp"

#include <algorithm>
#include <cmath>

namespace htad {

ClassificationHead ClassificationHead::create(ParameterStore& store, std::size_t input_width, std::size_t hidden,
                                              std::size_t groups, Rng& rng) {
  if (groups == 0 || hidden == 0) throw ConfigError("classification head needs groups and a hidden width");
  auto w1 = store.add("head/W1", {hidden, input_width});
  init_glorot_uniform(store[w1].value, rng);
  store.add("head/b1", {hidden});
  auto w2 = store.add("head/W2", {groups, hidden}, true);
  init_glorot_uniform(store[w2].value, rng);
  store.add("head/b2", {groups, 1}, true);
  return bind(store);
}

ClassificationHead ClassificationHead::bind(const ParameterStore& store) {
  ClassificationHead h;
  h.shared_w = store.id("head/W1");
  h.shared_b = store.id("head/b1");
  h.out_w = store.id("head/W2");
  h.out_b = store.id("head/b2");
  h.groups = store[h.out_w].value.rows();
  if (store[h.out_b].value.rows() != h.groups || store[h.shared_b].value.size() != store[h.shared_w].value.rows() ||
      store[h.out_w].value.cols() != store[h.shared_w].value.rows()) {
    throw ConfigError("classification head parameters have inconsistent shapes");
  }
  return h;
}

std::vector<Var> classification_forward(GradContext& ctx, std::span<const Var> reps, const ClassificationHead& head) {
  if (reps.size() != head.groups) throw DataError("classification needs one representation per group");
  std::vector<Var> logits;
  logits.reserve(reps.size());
  for (std::size_t i = 0; i < reps.size(); ++i) {
    Var hidden = ctx.linear(head.shared_w, head.shared_b, reps[i]);
    hidden = head.activation == Activation::tanh ? ctx.tanh(hidden) : ctx.sigmoid(hidden);
    logits.push_back(ctx.add(ctx.dot(ctx.param_row(head.out_w, i), hidden), ctx.param_row(head.out_b, i)));
  }
  return logits;
}

Var classification_loss(GradContext& ctx, std::span<const Var> logits, std::span<const double> labels) {
  if (logits.size() != labels.size() || logits.empty()) throw DataError("logit/label count mismatch");
  std::vector<Var> terms;
  terms.reserve(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (labels[i] != 0.0 && labels[i] != 1.0) throw DataError("label outside {0,1}");
    terms.push_back(ctx.bce_with_logits(logits[i], labels[i]));
  }
  return ctx.mean(terms);
}

Var hinge_loss(GradContext& ctx, Var pos_score, Var neg_score, double margin) {
  return ctx.hinge(pos_score, neg_score, margin);
}

// ------------------------------------------------------ NegativeSampler

NegativeSampler::NegativeSampler(std::vector<std::size_t> support, std::vector<double> weights)
    : support_(std::move(support)) {
  if (support_.empty()) throw DataError("negative sampler has an empty support");
  if (weights.size() != support_.size()) throw ConfigError("negative sampler weight count mismatch");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("negative sampler weights must be finite and >= 0");
    total += w;
  }
  if (total <= 0.0) throw ConfigError("negative sampler weights sum to zero");
  probabilities_.reserve(weights.size());
  for (double w : weights) probabilities_.push_back(w / total);
  dist_ = std::discrete_distribution<std::size_t>(weights.begin(), weights.end());
}

NegativeSampler NegativeSampler::from_degrees(std::vector<std::size_t> support, std::span<const double> degrees,
                                              double power) {
  std::vector<double> w;
  w.reserve(degrees.size());
  for (double d : degrees) w.push_back(std::pow(d, power));
  return NegativeSampler(std::move(support), std::move(w));
}

NegativeSampler NegativeSampler::uniform(std::vector<std::size_t> support) {
  std::vector<double> w(support.size(), 1.0);
  return NegativeSampler(std::move(support), std::move(w));
}

std::size_t NegativeSampler::sample(Rng& rng, std::span<const std::size_t> exclude) const {
  auto excluded = [&](std::size_t v) { return std::find(exclude.begin(), exclude.end(), v) != exclude.end(); };
  double remaining = 0.0;
  for (std::size_t i = 0; i < support_.size(); ++i) {
    if (!excluded(support_[i])) remaining += probabilities_[i];
  }
  if (remaining <= 0.0) throw DataError("no negative candidates outside the excluded set");
  for (;;) {
    const std::size_t v = support_[dist_(rng)];
    if (!excluded(v)) return v;
  }
}

std::vector<std::size_t> NegativeSampler::sample_many(Rng& rng, std::size_t k,
                                                      std::span<const std::size_t> exclude) const {
  std::vector<std::size_t> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(sample(rng, exclude));
  return out;
}

Var unsup_ns_loss(GradContext& ctx, ParamId embeddings, ParamId relation_bias, std::size_t relation, std::size_t i,
                  std::size_t j, std::span<const std::size_t> negatives) {
  const Var hi = ctx.param_row(embeddings, i);
  const Var br = ctx.param_row(relation_bias, relation);
  std::vector<Var> terms;
  terms.reserve(negatives.size() + 1);
  terms.push_back(ctx.log_sigmoid(ctx.add(ctx.dot(hi, ctx.param_row(embeddings, j)), br)));
  for (std::size_t n : negatives) {
    const Var s = ctx.add(ctx.dot(hi, ctx.param_row(embeddings, n)), br);
    terms.push_back(ctx.log_sigmoid(ctx.scale(s, -1.0)));
  }
  return ctx.scale(ctx.sum(terms), -1.0);
}

Var l2_penalty(GradContext& ctx, ParamId embeddings, std::span<const std::size_t> rows, double lambda) {
  if (lambda < 0.0) throw ConfigError("lambda must be non-negative");
  if (lambda == 0.0 || rows.empty()) return ctx.scalar_constant(0.0);
  std::vector<Var> terms;
  terms.reserve(rows.size());
  for (std::size_t r : rows) terms.push_back(ctx.squared_norm(ctx.param_row(embeddings, r)));
  return ctx.scale(ctx.sum(terms), lambda);
}

Objective joint_step_selector(double omega, Rng& rng) {
  if (!(omega >= 0.0 && omega <= 1.0)) throw ConfigError("omega must lie in [0, 1]");
  return std::bernoulli_distribution(omega)(rng) ? Objective::unsupervised : Objective::supervised;
}

Task parse_task(std::string_view s) {
  if (s == "phenotype") return Task::phenotype;
  if (s == "rank") return Task::rank;
  throw ConfigError("unknown task: " + std::string(s));
}

std::string to_string(Task t) { return t == Task::phenotype ? "phenotype" : "rank"; }

TrainingMode parse_training_mode(std::string_view s) {
  if (s == "pretrain-unsup") return TrainingMode::pretrain_unsup;
  if (s == "joint") return TrainingMode::joint;
  throw ConfigError("unknown training mode: " + std::string(s));
}

std::string to_string(TrainingMode m) { return m == TrainingMode::joint ? "joint" : "pretrain-unsup"; }

void TrainingConfig::validate() const {
  if (!(omega >= 0.0 && omega <= 1.0)) throw ConfigError("omega must lie in [0, 1]");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
  if (negatives < 1) throw ConfigError("negatives per positive must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be > 0");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(clip_norm > 0.0)) throw ConfigError("clip norm must be > 0");
}

}  // namespace htad
