#include "htad/model.hpp"

#include <algorithm>
#include <cmath>

namespace htad {

AttentionMode parse_attention_mode(std::string_view s) {
  if (s == "transform") return AttentionMode::transform;
  if (s == "group") return AttentionMode::group;
  if (s == "mean") return AttentionMode::mean;
  throw ConfigError("unknown attention mode: " + std::string(s));
}

std::string to_string(AttentionMode m) {
  switch (m) {
    case AttentionMode::transform: return "transform";
    case AttentionMode::group: return "group";
    case AttentionMode::mean: return "mean";
  }
  return "?";
}

Activation parse_activation(std::string_view s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "sigmoid") return Activation::sigmoid;
  throw ConfigError("unknown activation: " + std::string(s));
}

std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "sigmoid"; }

void ModelConfig::validate() const {
  if (embedding_dim == 0 || attention_dim == 0) throw ConfigError("F and F' must be positive");
  if (attention_mode == AttentionMode::group && group_count == 0) {
    throw ConfigError("group attention requires a diagnosis grouping");
  }
  if (series_channels > 0 && series_hidden == 0) throw ConfigError("series hidden width must be positive");
  if (!std::is_sorted(context_types.begin(), context_types.end())) {
    throw ConfigError("context types must be sorted");
  }
}

std::size_t EmbeddingIndex::add(const std::string& key) {
  auto [it, inserted] = rows_.try_emplace(key, keys_.size());
  if (inserted) keys_.push_back(key);
  return it->second;
}

std::optional<std::size_t> EmbeddingIndex::find(const std::string& key) const {
  auto it = rows_.find(key);
  if (it == rows_.end()) return std::nullopt;
  return it->second;
}

// --------------------------------------------------------------- model

HtadModel::HtadModel(const ModelConfig& config, std::vector<Target> targets)
    : config_(config), targets_(std::move(targets)) {
  config_.validate();
  for (const auto& t : targets_) {
    if (config_.attention_mode == AttentionMode::group && t.group >= config_.group_count) {
      throw ConfigError("target " + t.name + " has no valid group assignment");
    }
  }
}

HtadModel HtadModel::create(const ModelConfig& config, std::vector<Target> targets, std::size_t embedding_rows,
                            ParameterStore& store, Rng& rng) {
  HtadModel model(config, std::move(targets));
  const auto& c = model.config_;
  const std::size_t F = c.embedding_dim;
  const std::size_t Fp = c.attention_dim;
  for (const auto& t : model.targets_) {
    if (t.embedding_row >= embedding_rows) throw ConfigError("target embedding row out of range");
  }

  auto weight = [&](const std::string& name, std::size_t rows, std::size_t cols, bool sparse = false) {
    auto id = store.add(name, {rows, cols}, sparse);
    init_glorot_uniform(store[id].value, rng);
  };
  auto bias = [&](const std::string& name, std::size_t n) { store.add(name, {n}); };

  auto m = store.add("M", {embedding_rows, F}, true);
  init_uniform(store[m].value, 0.05, rng);
  for (const auto& t : c.context_types) {
    weight("W_c/" + t, Fp, F);
    bias("b_c/" + t, Fp);
  }
  weight("W_d", Fp, F);
  bias("b_d", Fp);
  if (c.attention_mode == AttentionMode::transform) {
    weight("W_q", Fp, F);
    bias("b_q", Fp);
    weight("W_s", Fp, F);
    bias("b_s", Fp);
  } else if (c.attention_mode == AttentionMode::group) {
    weight("Q", c.group_count, Fp, true);
    weight("S", c.group_count, Fp, true);
  }
  if (c.series_channels > 0) {
    const std::size_t H = c.series_hidden;
    weight("lstm/W", 4 * H, c.series_channels + H);
    bias("lstm/b", 4 * H);
    weight("W_t", Fp, H);
    bias("b_t", Fp);
  }
  model.bind(store);
  return model;
}

HtadModel::HtadModel(const ModelConfig& config, std::vector<Target> targets, const ParameterStore& store)
    : HtadModel(config, std::move(targets)) {
  bind(store);
}

void HtadModel::bind(const ParameterStore& store) {
  const std::size_t F = config_.embedding_dim;
  const std::size_t Fp = config_.attention_dim;
  auto expect = [&](const std::string& name, std::vector<std::size_t> shape) {
    const ParamId id = store.id(name);
    if (store[id].value.shape() != shape) throw ConfigError("parameter " + name + " has an unexpected shape");
    return id;
  };
  m_ = store.id("M");
  if (store[m_].value.cols() != F) throw ConfigError("embedding width does not match F");
  for (const auto& t : targets_) {
    if (t.embedding_row >= store[m_].value.rows()) throw ConfigError("target embedding row out of range");
  }
  w_c_.clear();
  b_c_.clear();
  for (const auto& t : config_.context_types) {
    w_c_.push_back(expect("W_c/" + t, {Fp, F}));
    b_c_.push_back(expect("b_c/" + t, {Fp}));
  }
  w_d_ = expect("W_d", {Fp, F});
  b_d_ = expect("b_d", {Fp});
  if (config_.attention_mode == AttentionMode::transform) {
    w_q_ = expect("W_q", {Fp, F});
    b_q_ = expect("b_q", {Fp});
    w_s_ = expect("W_s", {Fp, F});
    b_s_ = expect("b_s", {Fp});
  } else if (config_.attention_mode == AttentionMode::group) {
    q_ = expect("Q", {config_.group_count, Fp});
    s_ = expect("S", {config_.group_count, Fp});
  }
  if (config_.series_channels > 0) {
    const std::size_t H = config_.series_hidden;
    lstm_w_ = expect("lstm/W", {4 * H, config_.series_channels + H});
    lstm_b_ = expect("lstm/b", {4 * H});
    w_t_ = expect("W_t", {Fp, H});
    b_t_ = expect("b_t", {Fp});
  }
}

Var HtadModel::activate(GradContext& ctx, Var x) const {
  return config_.activation == Activation::tanh ? ctx.tanh(x) : ctx.sigmoid(x);
}

Var HtadModel::transform_context(GradContext& ctx, std::size_t type_index, Var node_embedding) const {
  if (type_index >= w_c_.size()) throw ConfigError("unregistered context type");
  return ctx.linear(w_c_[type_index], b_c_[type_index], node_embedding);
}

Var HtadModel::attention_vector_node(GradContext& ctx, std::size_t target) const {
  const Target& t = targets_.at(target);
  switch (config_.attention_mode) {
    case AttentionMode::transform: return ctx.linear(w_q_, b_q_, ctx.param_row(m_, t.embedding_row));
    case AttentionMode::group: return ctx.param_row(q_, t.group);
    case AttentionMode::mean: break;
  }
  throw ConfigError("mean aggregation has no attention vectors");
}

Var HtadModel::attention_vector_type(GradContext& ctx, std::size_t target) const {
  const Target& t = targets_.at(target);
  switch (config_.attention_mode) {
    case AttentionMode::transform: return ctx.linear(w_s_, b_s_, ctx.param_row(m_, t.embedding_row));
    case AttentionMode::group: return ctx.param_row(s_, t.group);
    case AttentionMode::mean: break;
  }
  throw ConfigError("mean aggregation has no attention vectors");
}

namespace {

// Softmax over scaled dot products of `query` with each vector, or uniform
// weights when there is no query.
Var attention_weights(GradContext& ctx, std::optional<Var> query, std::span<const Var> vectors,
                      std::size_t width) {
  if (!query) {
    return ctx.constant(std::vector<double>(vectors.size(), 1.0 / static_cast<double>(vectors.size())));
  }
  const double inv = 1.0 / std::sqrt(static_cast<double>(width));
  std::vector<Var> scores;
  scores.reserve(vectors.size());
  for (Var v : vectors) scores.push_back(ctx.scale(ctx.dot(*query, v), inv));
  return ctx.softmax(ctx.stack(scores));
}

}  // namespace

TypeRepresentation HtadModel::node_level_aggregate(GradContext& ctx, std::size_t type_index,
                                                   std::span<const Var> transformed, Var q) const {
  if (transformed.empty()) throw DataError("node-level aggregation over an empty neighbourhood");
  std::optional<Var> query;
  if (config_.attention_mode != AttentionMode::mean) query = q;
  const Var alpha = attention_weights(ctx, query, transformed, config_.attention_dim);
  TypeRepresentation rep;
  rep.type = config_.context_types.at(type_index);
  rep.z = activate(ctx, ctx.weighted_sum(alpha, transformed));
  const auto a = ctx.value(alpha);
  rep.alpha.assign(a.begin(), a.end());
  return rep;
}

std::vector<Var> HtadModel::run_sequence(GradContext& ctx, const Series& series) const {
  if (config_.series_channels == 0) throw ConfigError("model has no time-series type");
  if (series.steps == 0) throw DataError("empty time series");
  if (series.channels != config_.series_channels || series.values.size() != series.steps * series.channels) {
    throw DataError("time series width does not match the model");
  }
  const std::size_t H = config_.series_hidden;
  Var h = ctx.constant(std::vector<double>(H, 0.0));
  Var c = ctx.constant(std::vector<double>(H, 0.0));
  std::vector<Var> hidden;
  hidden.reserve(series.steps);
  for (std::size_t t = 0; t < series.steps; ++t) {
    const auto s = series.step(t);
    const Var x = ctx.constant(std::vector<double>(s.begin(), s.end()));
    const Var gates = ctx.linear(lstm_w_, lstm_b_, ctx.concat(x, h));
    const Var in = ctx.sigmoid(ctx.slice(gates, 0, H));
    const Var forget = ctx.sigmoid(ctx.slice(gates, H, H));
    const Var cand = ctx.tanh(ctx.slice(gates, 2 * H, H));
    const Var out = ctx.sigmoid(ctx.slice(gates, 3 * H, H));
    c = ctx.add(ctx.mul(forget, c), ctx.mul(in, cand));
    h = ctx.mul(out, ctx.tanh(c));
    hidden.push_back(h);
  }
  return hidden;
}

TypeRepresentation HtadModel::encode_time_series(GradContext& ctx, const Series& series) const {
  const auto hidden = run_sequence(ctx, series);
  TypeRepresentation rep;
  rep.type = std::string(kSeriesType);
  rep.z = ctx.linear(w_t_, b_t_, hidden.back());
  return rep;
}

PatientRepresentation HtadModel::type_level_aggregate(GradContext& ctx, std::span<const TypeRepresentation> reps,
                                                      Var s) const {
  if (reps.empty()) throw DataError("type-level aggregation with no types present");
  std::vector<Var> zs;
  zs.reserve(reps.size());
  for (const auto& r : reps) zs.push_back(r.z);
  std::optional<Var> query;
  if (config_.attention_mode != AttentionMode::mean) query = s;
  const Var beta = attention_weights(ctx, query, zs, config_.attention_dim);
  PatientRepresentation out;
  out.f = activate(ctx, ctx.weighted_sum(beta, zs));
  out.types.assign(reps.begin(), reps.end());
  const auto b = ctx.value(beta);
  out.beta.assign(b.begin(), b.end());
  return out;
}

ContextEncoding HtadModel::encode_context(GradContext& ctx, const ContextInput& input) const {
  if (input.empty()) throw DataError("patient " + input.patient + " has no context data");
  ContextEncoding enc;
  for (const auto& tn : input.types) {
    if (tn.rows.empty()) continue;
    ContextEncoding::TypeNodes nodes;
    nodes.type_index = tn.type_index;
    nodes.source = &tn;
    for (std::size_t row : tn.rows) {
      nodes.transformed.push_back(transform_context(ctx, tn.type_index, ctx.param_row(m_, row)));
    }
    enc.types.push_back(std::move(nodes));
  }
  if (input.series && config_.series_channels > 0) enc.series = encode_time_series(ctx, *input.series);
  if (enc.types.empty() && !enc.series) throw DataError("patient " + input.patient + " has no usable context data");
  return enc;
}

PatientRepresentation HtadModel::represent(GradContext& ctx, const ContextEncoding& enc, std::size_t target) const {
  const bool attentive = config_.attention_mode != AttentionMode::mean;
  std::vector<TypeRepresentation> reps;
  reps.reserve(enc.types.size() + 1);
  if (!enc.types.empty()) {
    const Var q = attentive ? attention_vector_node(ctx, target) : Var{};
    for (const auto& tn : enc.types) reps.push_back(node_level_aggregate(ctx, tn.type_index, tn.transformed, q));
  }
  if (enc.series) reps.push_back(*enc.series);
  const Var s = attentive ? attention_vector_type(ctx, target) : Var{};
  return type_level_aggregate(ctx, reps, s);
}

Var HtadModel::transformed_target(GradContext& ctx, std::size_t target) const {
  return ctx.linear(w_d_, b_d_, ctx.param_row(m_, targets_.at(target).embedding_row));
}

Var HtadModel::ranking_score(GradContext& ctx, Var f, std::size_t target) const {
  const Var hd = transformed_target(ctx, target);
  if (ctx.width(hd) != ctx.width(f)) throw NumericError("ranking_score: width mismatch");
  return ctx.dot(f, hd);
}

AttentionTrace HtadModel::make_trace(const GradContext& /*ctx*/, const ContextEncoding& enc,
                                     const PatientRepresentation& rep, const std::string& patient,
                                     std::size_t target) const {
  AttentionTrace trace;
  trace.patient = patient;
  trace.diagnosis = targets_.at(target).name;
  for (std::size_t i = 0; i < rep.types.size(); ++i) {
    const auto& tr = rep.types[i];
    trace.beta[tr.type] = rep.beta[i];
    if (i < enc.types.size()) {
      const auto& labels = enc.types[i].source->labels;
      auto& alpha = trace.alpha[tr.type];
      for (std::size_t k = 0; k < tr.alpha.size(); ++k) alpha[labels.at(k)] = tr.alpha[k];
    }
  }
  return trace;
}

ContextInput make_context_input(const HinGraph& graph, const EmbeddingIndex& index, const ModelConfig& config,
                                NodeId patient, const Series* series) {
  const TypedNeighborhood hood = typed_neighborhood(graph, patient);
  ContextInput input;
  input.patient = graph.node(patient).item;
  for (std::size_t ti = 0; ti < config.context_types.size(); ++ti) {
    auto it = hood.by_type.find(config.context_types[ti]);
    if (it == hood.by_type.end()) continue;
    TypeNeighbors tn;
    tn.type_index = ti;
    for (NodeId n : it->second) {
      const std::string key = graph.key_of(n);
      if (auto row = index.find(key)) {
        tn.rows.push_back(*row);
        tn.labels.push_back(key);
      }
    }
    if (!tn.rows.empty()) input.types.push_back(std::move(tn));
  }
  if (series && config.series_channels > 0) input.series = *series;
  return input;
}

std::pair<PatientRepresentation, AttentionTrace> patient_representation(
    GradContext& ctx, const HtadModel& model, const HinGraph& graph, const EmbeddingIndex& index, NodeId patient,
    std::size_t target, const Series* series) {
  const ContextInput input = make_context_input(graph, index, model.config(), patient, series);
  const ContextEncoding enc = model.encode_context(ctx, input);
  PatientRepresentation rep = model.represent(ctx, enc, target);
  AttentionTrace trace = model.make_trace(ctx, enc, rep, input.patient, target);
  return {std::move(rep), std::move(trace)};
}

}  // namespace htad
