#include "htad/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>

namespace htad {

using nlohmann::json;

// ----------------------------------------------------------- RunConfig

namespace {

const std::set<std::string>& known_config_keys() {
  static const std::set<std::string> keys = {
      "F",          "F_prime",     "attention_mode", "activation",    "use_series",
      "series_hidden", "head_hidden", "context_types", "numeric_types", "bins",
      "candidates", "omega",       "lambda",         "epsilon",       "negatives",
      "lr",         "batch_size",  "epochs",         "pretrain_epochs", "series_pretrain_epochs",
      "seed",       "mode",        "task",           "clip_norm",     "metapaths"};
  return keys;
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config field \"") + key + "\" has the wrong type");
  }
}

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known_config_keys().contains(key)) throw ConfigError("unknown config field: " + key);
  }
  RunConfig c;
  read_field(j, "F", c.embedding_dim);
  read_field(j, "F_prime", c.attention_dim);
  std::string s;
  if (j.contains("attention_mode")) {
    read_field(j, "attention_mode", s);
    c.attention_mode = parse_attention_mode(s);
  }
  if (j.contains("activation")) {
    read_field(j, "activation", s);
    c.activation = parse_activation(s);
  }
  read_field(j, "use_series", c.use_series);
  read_field(j, "series_hidden", c.series_hidden);
  read_field(j, "head_hidden", c.head_hidden);
  read_field(j, "context_types", c.context_types);
  read_field(j, "numeric_types", c.numeric_types);
  read_field(j, "bins", c.bins);
  read_field(j, "candidates", c.candidates);
  auto& t = c.training;
  read_field(j, "omega", t.omega);
  read_field(j, "lambda", t.lambda);
  read_field(j, "epsilon", t.epsilon);
  read_field(j, "negatives", t.negatives);
  read_field(j, "lr", t.lr);
  read_field(j, "batch_size", t.batch_size);
  read_field(j, "epochs", t.epochs);
  read_field(j, "pretrain_epochs", t.pretrain_epochs);
  read_field(j, "series_pretrain_epochs", t.series_pretrain_epochs);
  read_field(j, "seed", t.seed);
  read_field(j, "clip_norm", t.clip_norm);
  read_field(j, "metapaths", t.metapaths);
  if (j.contains("task")) {
    read_field(j, "task", s);
    t.task = parse_task(s);
  }
  // Low-level ranking pre-trains the unsupervised objective; phenotyping
  // samples both objectives jointly.
  t.mode = t.task == Task::rank ? TrainingMode::pretrain_unsup : TrainingMode::joint;
  if (j.contains("mode")) {
    read_field(j, "mode", s);
    t.mode = parse_training_mode(s);
  }
  std::sort(c.context_types.begin(), c.context_types.end());
  c.validate();
  return c;
}

json RunConfig::to_json() const {
  const auto& t = training;
  return json{{"F", embedding_dim},
              {"F_prime", attention_dim},
              {"attention_mode", to_string(attention_mode)},
              {"activation", to_string(activation)},
              {"use_series", use_series},
              {"series_hidden", series_hidden},
              {"head_hidden", head_hidden},
              {"context_types", context_types},
              {"numeric_types", numeric_types},
              {"bins", bins},
              {"candidates", candidates},
              {"omega", t.omega},
              {"lambda", t.lambda},
              {"epsilon", t.epsilon},
              {"negatives", t.negatives},
              {"lr", t.lr},
              {"batch_size", t.batch_size},
              {"epochs", t.epochs},
              {"pretrain_epochs", t.pretrain_epochs},
              {"series_pretrain_epochs", t.series_pretrain_epochs},
              {"seed", t.seed},
              {"mode", to_string(t.mode)},
              {"task", to_string(t.task)},
              {"clip_norm", t.clip_norm},
              {"metapaths", t.metapaths}};
}

void RunConfig::validate() const {
  if (embedding_dim == 0 || attention_dim == 0) throw ConfigError("F and F_prime must be positive");
  if (use_series && series_hidden == 0) throw ConfigError("series_hidden must be positive");
  if (bins == 0) throw ConfigError("bins must be positive");
  if (candidates < 2) throw ConfigError("candidates must be at least 2");
  for (const auto& m : training.metapaths) MetaPathSchema::parse(m);
  training.validate();
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return RunConfig::from_json(j);
}

// ------------------------------------------------------------- Dataset

std::vector<std::string> record_types(std::span<const ClinicalRecord> records) {
  std::set<std::string> types;
  for (const auto& r : records) types.insert(r.type);
  return {types.begin(), types.end()};
}

Dataset make_dataset(std::vector<ClinicalRecord> records, std::span<const TargetLink> targets,
                     std::map<std::string, Series> series, std::vector<std::string> series_channels,
                     std::span<const std::string> context_types) {
  std::set<std::string> patients;
  for (const auto& r : records) patients.insert(r.patient);
  for (const auto& t : targets) patients.insert(t.patient);
  const std::vector<std::string> patient_list(patients.begin(), patients.end());
  Dataset d;
  d.graph = build_graph(records, patient_list, targets, context_types);
  d.series = std::move(series);
  d.series_channels = std::move(series_channels);
  std::map<std::string, std::set<std::string>> dx;
  for (const auto& t : targets) dx[t.patient].insert(t.diagnosis);
  for (auto& [p, ds] : dx) {
    d.labelled_patients.push_back(p);
    d.diagnoses_of[p] = {ds.begin(), ds.end()};
  }
  return d;
}

// --------------------------------------------------------- ModelBundle

namespace {

std::string group_key(const std::string& group) { return node_key("group", group, std::nullopt); }
std::string diagnosis_key(const std::string& d) { return node_key(kDiagnosisType, d, std::nullopt); }

std::vector<Target> make_targets(Task task, const DiagnosisVocab& vocab, EmbeddingIndex& index) {
  std::vector<Target> targets;
  if (task == Task::phenotype) {
    for (std::size_t g = 0; g < vocab.group_count(); ++g) {
      targets.push_back(Target{vocab.groups()[g], index.add(group_key(vocab.groups()[g])), g});
    }
  } else {
    for (const auto& d : vocab.diagnoses()) {
      targets.push_back(Target{d, index.add(diagnosis_key(d)), vocab.group(d)});
    }
  }
  return targets;
}

void add_auxiliary_params(ModelBundle& b, Rng& rng) {
  const auto& t = b.config.training;
  if (t.task == Task::phenotype) {
    const std::size_t hidden = b.config.head_hidden ? b.config.head_hidden : b.config.attention_dim;
    b.head = ClassificationHead::create(b.store, b.config.attention_dim, hidden, b.vocab.group_count(), rng);
  }
  if (!t.metapaths.empty()) b.relation_bias = b.store.add("b_r", {t.metapaths.size(), 1}, true);
  if (t.series_pretrain_epochs > 0 && b.model_config.series_channels > 0) {
    auto w = b.store.add("seq/W", {b.model_config.series_channels, b.model_config.series_hidden});
    init_glorot_uniform(b.store[w].value, rng);
    b.store.add("seq/b", {b.model_config.series_channels});
  }
}

}  // namespace

ModelBundle ModelBundle::create(const RunConfig& config, const Dataset& train, const DiagnosisVocab& vocab,
                                const ValueBinner& binner) {
  config.validate();
  ModelBundle b;
  b.config = config;
  b.vocab = vocab;
  b.binner = binner;
  if (vocab.group_count() == 0) throw DataError("diagnosis grouping is empty");
  for (const auto& [p, ds] : train.diagnoses_of) {
    for (const auto& d : ds) {
      if (!vocab.contains(d)) throw DataError("diagnosis " + d + " has no group in the grouping file");
    }
  }

  ModelConfig& mc = b.model_config;
  mc.embedding_dim = config.embedding_dim;
  mc.attention_dim = config.attention_dim;
  mc.attention_mode = config.attention_mode;
  mc.activation = config.activation;
  for (TypeId t : train.graph.context_types()) mc.context_types.push_back(train.graph.type_name(t));
  mc.group_count = vocab.group_count();
  mc.series_hidden = config.series_hidden;
  if (config.use_series && !train.series.empty()) {
    mc.series_channels = train.series_channels.size();
    b.series_channels = train.series_channels;
  }

  for (const auto& n : train.graph.nodes()) {
    if (n.type != train.graph.patient_type()) b.index.add(node_key(train.graph.type_name(n.type), n.item, n.value));
  }
  auto targets = make_targets(config.training.task, vocab, b.index);

  Rng rng(config.training.seed);
  b.model = HtadModel::create(mc, std::move(targets), b.index.size(), b.store, rng);
  add_auxiliary_params(b, rng);
  return b;
}

std::string ModelBundle::metadata() const {
  json vocab_json = json::array();
  for (const auto& d : vocab.diagnoses()) vocab_json.push_back({d, vocab.groups()[vocab.group(d)]});
  json targets = json::array();
  for (const auto& t : model->targets()) targets.push_back({{"name", t.name}, {"row", t.embedding_row}, {"group", t.group}});
  json meta = {{"format", "htad"},
               {"config", config.to_json()},
               {"context_types", model_config.context_types},
               {"series_channels", series_channels},
               {"vocab", vocab_json},
               {"binner", binner.edges()},
               {"index", index.keys()},
               {"targets", targets}};
  return meta.dump();
}

void ModelBundle::save(const std::filesystem::path& path) const { save_checkpoint(path.string(), store, metadata()); }

ModelBundle ModelBundle::load(const std::filesystem::path& path) {
  Checkpoint ck = load_checkpoint(path.string());
  json meta;
  try {
    meta = json::parse(ck.metadata);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }
  if (meta.value("format", "") != "htad") throw DataError("checkpoint metadata has an unknown format");
  ModelBundle b;
  try {
    b.config = RunConfig::from_json(meta.at("config"));
    std::vector<std::pair<std::string, std::string>> mapping;
    for (const auto& e : meta.at("vocab")) mapping.emplace_back(e.at(0).get<std::string>(), e.at(1).get<std::string>());
    b.vocab = DiagnosisVocab(mapping);
    b.binner = ValueBinner(meta.at("binner").get<std::map<std::string, std::vector<double>>>());
    for (const auto& k : meta.at("index")) b.index.add(k.get<std::string>());
    b.series_channels = meta.at("series_channels").get<std::vector<std::string>>();
    ModelConfig& mc = b.model_config;
    mc.embedding_dim = b.config.embedding_dim;
    mc.attention_dim = b.config.attention_dim;
    mc.attention_mode = b.config.attention_mode;
    mc.activation = b.config.activation;
    mc.context_types = meta.at("context_types").get<std::vector<std::string>>();
    mc.group_count = b.vocab.group_count();
    mc.series_hidden = b.config.series_hidden;
    mc.series_channels = b.series_channels.size();
    std::vector<Target> targets;
    for (const auto& t : meta.at("targets")) {
      targets.push_back(Target{t.at("name").get<std::string>(), t.at("row").get<std::size_t>(),
                               t.at("group").get<std::size_t>()});
    }
    b.store = std::move(ck.store);
    b.model.emplace(mc, std::move(targets), b.store);
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint metadata is incomplete: ") + e.what());
  }
  if (b.store.contains("head/W1")) b.head = ClassificationHead::bind(b.store);
  if (b.store.contains("b_r")) b.relation_bias = b.store.id("b_r");
  return b;
}

ContextInput context_input(const ModelBundle& bundle, const Dataset& data, const std::string& patient) {
  auto node = data.graph.find_patient(patient);
  if (!node) throw DataError("unknown patient: " + patient);
  const Series* series = nullptr;
  if (auto it = data.series.find(patient); it != data.series.end()) series = &it->second;
  return make_context_input(data.graph, bundle.index, bundle.model_config, *node, series);
}

std::vector<double> phenotype_logits(const ModelBundle& bundle, const ContextInput& input) {
  if (!bundle.head) throw ConfigError("model has no classification head");
  GradContext ctx(bundle.store);
  const auto enc = bundle.htad().encode_context(ctx, input);
  std::vector<Var> reps;
  for (std::size_t t = 0; t < bundle.htad().target_count(); ++t) reps.push_back(bundle.htad().represent(ctx, enc, t).f);
  std::vector<double> out;
  for (Var l : classification_forward(ctx, reps, *bundle.head)) out.push_back(ctx.scalar(l));
  return out;
}

std::vector<double> rank_scores(const ModelBundle& bundle, const ContextInput& input,
                                std::span<const std::size_t> targets) {
  GradContext ctx(bundle.store);
  const auto enc = bundle.htad().encode_context(ctx, input);
  std::vector<double> out;
  out.reserve(targets.size());
  for (std::size_t t : targets) {
    const auto rep = bundle.htad().represent(ctx, enc, t);
    out.push_back(ctx.scalar(bundle.htad().ranking_score(ctx, rep.f, t)));
  }
  return out;
}

// ------------------------------------------------------------- Trainer

Trainer::Trainer(ModelBundle& bundle, const Dataset& data, Execution exec)
    : bundle_(bundle), data_(data), exec_(exec), rng_(bundle.config.training.seed + 0x9E3779B97F4A7C15ull) {
  const Task task = bundle_.task();
  const auto& model = bundle_.htad();
  std::map<std::string, std::size_t> target_of;
  for (std::size_t t = 0; t < model.target_count(); ++t) target_of[model.targets()[t].name] = t;

  for (const auto& p : data_.labelled_patients) {
    PatientExample ex;
    ex.input = context_input(bundle_, data_, p);
    if (ex.input.empty()) continue;
    const auto& ds = data_.diagnoses_of.at(p);
    if (task == Task::phenotype) {
      ex.labels.assign(bundle_.vocab.group_count(), 0.0);
      for (const auto& d : ds) ex.labels[bundle_.vocab.group(d)] = 1.0;
    } else {
      for (const auto& d : ds) {
        auto it = target_of.find(d);
        if (it == target_of.end()) throw DataError("diagnosis not in the model vocabulary: " + d);
        ex.positives.push_back(it->second);
      }
    }
    examples_.push_back(std::move(ex));
  }
  if (examples_.empty()) throw DataError("no training patient has usable context data");

  if (task == Task::rank) {
    std::vector<std::size_t> all(model.target_count());
    for (std::size_t t = 0; t < all.size(); ++t) all[t] = t;
    diagnosis_sampler_ = NegativeSampler::uniform(std::move(all));
  }

  const auto& paths = bundle_.config.training.metapaths;
  for (std::size_t r = 0; r < paths.size() && bundle_.relation_bias; ++r) {
    const auto schema = MetaPathSchema::parse(paths[r]);
    const bool known = std::all_of(schema.types.begin(), schema.types.end(),
                                   [&](const std::string& t) { return data_.graph.find_type(t).has_value(); });
    if (!known) continue;
    MetaPathSampler sampler(data_.graph, schema);
    if (sampler.empty()) continue;
    std::vector<std::size_t> support;
    std::vector<double> degrees;
    for (NodeId n : dest_set(data_.graph, schema)) {
      auto row = bundle_.index.find(data_.graph.key_of(n));
      if (!row) continue;
      support.push_back(*row);
      degrees.push_back(static_cast<double>(data_.graph.neighbors(n).size()));
    }
    if (support.size() < 2) continue;
    relations_.push_back(Relation{r, std::move(sampler), NegativeSampler::from_degrees(std::move(support), degrees)});
  }

  order_.resize(examples_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  cursor_ = order_.size();
}

std::size_t Trainer::steps_per_epoch() const {
  const std::size_t b = bundle_.config.training.batch_size;
  return (examples_.size() + b - 1) / b;
}

Var Trainer::supervised_loss(GradContext& ctx, const PatientExample& ex,
                             std::span<const std::vector<std::size_t>> negatives) const {
  const auto& model = bundle_.htad();
  const auto enc = model.encode_context(ctx, ex.input);
  if (bundle_.task() == Task::phenotype) {
    std::vector<Var> reps;
    reps.reserve(model.target_count());
    for (std::size_t t = 0; t < model.target_count(); ++t) reps.push_back(model.represent(ctx, enc, t).f);
    const auto logits = classification_forward(ctx, reps, *bundle_.head);
    return classification_loss(ctx, logits, ex.labels);
  }
  const double margin = bundle_.config.training.epsilon;
  std::map<std::size_t, Var> scores;
  auto score = [&](std::size_t t) {
    auto it = scores.find(t);
    if (it != scores.end()) return it->second;
    const Var s = model.ranking_score(ctx, model.represent(ctx, enc, t).f, t);
    scores.emplace(t, s);
    return s;
  };
  std::vector<Var> terms;
  for (std::size_t k = 0; k < ex.positives.size(); ++k) {
    const Var pos = score(ex.positives[k]);
    for (std::size_t neg : negatives[k]) terms.push_back(hinge_loss(ctx, pos, score(neg), margin));
  }
  return ctx.mean(terms);
}

void Trainer::apply_update(double /*unused*/) {
  const auto& t = bundle_.config.training;
  clip_global_norm(bundle_.store, t.clip_norm);
  adam_step(bundle_.store, AdamConfig{t.lr});
}

namespace {

// Adds lambda * sum ||h||^2 over `rows` of M to the store gradients and
// returns its value.
double add_l2(ParameterStore& store, ParamId m, std::span<const std::size_t> rows, double lambda) {
  if (lambda == 0.0 || rows.empty()) return 0.0;
  GradContext ctx(store);
  const Var pen = l2_penalty(ctx, m, rows, lambda);
  ctx.backward(pen);
  ctx.grads().accumulate_into(store);
  return ctx.scalar(pen);
}

}  // namespace

double Trainer::supervised_step(std::span<const std::size_t> batch) {
  const auto& t = bundle_.config.training;
  std::vector<std::vector<std::vector<std::size_t>>> negatives(batch.size());
  if (bundle_.task() == Task::rank) {
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& ex = examples_[batch[b]];
      for (std::size_t k = 0; k < ex.positives.size(); ++k) {
        negatives[b].push_back(diagnosis_sampler_->sample_many(rng_, t.negatives, ex.positives));
      }
    }
  }
  const auto result = accumulate_batch_gradients(
      bundle_.store, batch.size(),
      [&](GradContext& ctx, std::size_t b) { return supervised_loss(ctx, examples_[batch[b]], negatives[b]); },
      exec_, bundle_.htad().embeddings());
  const double pen = add_l2(bundle_.store, bundle_.htad().embeddings(), result.touched_rows, t.lambda);
  apply_update(pen);
  return result.mean_loss + pen;
}

double Trainer::unsupervised_step(std::size_t pairs) {
  if (relations_.empty()) throw DataError("no metapath has instances in this graph");
  const auto& t = bundle_.config.training;
  struct Pair {
    std::size_t relation, i, j;
    std::vector<std::size_t> negatives;
  };
  std::vector<Pair> batch;
  batch.reserve(pairs);
  std::uniform_int_distribution<std::size_t> pick(0, relations_.size() - 1);
  for (std::size_t k = 0; k < pairs; ++k) {
    const Relation& rel = relations_[pick(rng_)];
    const auto [src, dst] = rel.sampler.sample(rng_);
    const std::size_t i = *bundle_.index.find(data_.graph.key_of(src));
    const std::size_t j = *bundle_.index.find(data_.graph.key_of(dst));
    const std::size_t exclude[] = {j};
    batch.push_back(Pair{rel.id, i, j, rel.negatives.sample_many(rng_, t.negatives, exclude)});
  }
  const ParamId m = bundle_.htad().embeddings();
  const auto result = accumulate_batch_gradients(
      bundle_.store, batch.size(),
      [&](GradContext& ctx, std::size_t k) {
        const Pair& p = batch[k];
        return unsup_ns_loss(ctx, m, *bundle_.relation_bias, p.relation, p.i, p.j, p.negatives);
      },
      exec_, m);
  const double pen = add_l2(bundle_.store, m, result.touched_rows, t.lambda);
  apply_update(pen);
  return result.mean_loss + pen;
}

void Trainer::pretrain_series(std::size_t epochs) {
  if (!bundle_.store.contains("seq/W") || bundle_.model_config.series_channels == 0) return;
  const ParamId w = bundle_.store.id("seq/W");
  const ParamId b = bundle_.store.id("seq/b");
  std::vector<const Series*> series;
  for (const auto& ex : examples_) {
    if (ex.input.series && ex.input.series->steps > 1) series.push_back(&*ex.input.series);
  }
  if (series.empty()) return;
  const std::size_t bs = bundle_.config.training.batch_size;
  for (std::size_t e = 0; e < epochs; ++e) {
    for (std::size_t start = 0; start < series.size(); start += bs) {
      const std::size_t n = std::min(bs, series.size() - start);
      accumulate_batch_gradients(
          bundle_.store, n,
          [&](GradContext& ctx, std::size_t k) {
            const Series& s = *series[start + k];
            const auto hidden = bundle_.htad().run_sequence(ctx, s);
            std::vector<Var> terms;
            for (std::size_t t = 0; t + 1 < s.steps; ++t) {
              const auto next = s.step(t + 1);
              const Var pred = ctx.linear(w, b, hidden[t]);
              terms.push_back(ctx.squared_norm(ctx.sub(pred, ctx.constant({next.begin(), next.end()}))));
            }
            return ctx.mean(terms);
          },
          exec_);
      apply_update(0.0);
    }
  }
}

void Trainer::run(const std::function<void(const TrainingStep&)>& on_step,
                  const std::function<void(std::size_t)>& on_epoch) {
  const auto& t = bundle_.config.training;
  if (t.series_pretrain_epochs > 0) pretrain_series(t.series_pretrain_epochs);

  auto next_batch = [&] {
    std::vector<std::size_t> batch;
    while (batch.size() < std::min(t.batch_size, order_.size())) {
      if (cursor_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        cursor_ = 0;
      }
      batch.push_back(order_[cursor_++]);
    }
    return batch;
  };
  auto timed = [&](Objective obj, auto&& fn) {
    const auto start = std::chrono::steady_clock::now();
    const double loss = fn();
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    ++step_;
    if (on_step) on_step(TrainingStep{step_, obj, loss, ms});
  };

  const std::size_t spe = steps_per_epoch();
  if (t.mode == TrainingMode::pretrain_unsup && !relations_.empty()) {
    for (std::size_t s = 0; s < t.pretrain_epochs * spe; ++s) {
      timed(Objective::unsupervised, [&] { return unsupervised_step(t.batch_size); });
    }
  }
  for (std::size_t e = 0; e < t.epochs; ++e) {
    for (std::size_t s = 0; s < spe; ++s) {
      Objective obj = Objective::supervised;
      if (t.mode == TrainingMode::joint && !relations_.empty()) obj = joint_step_selector(t.omega, rng_);
      if (obj == Objective::unsupervised) {
        timed(obj, [&] { return unsupervised_step(t.batch_size); });
      } else {
        const auto batch = next_batch();
        timed(obj, [&] { return supervised_step(batch); });
      }
    }
    if (on_epoch) on_epoch(e + 1);
  }
}

double Trainer::full_supervised_loss() {
  const auto& t = bundle_.config.training;
  // Fixed negatives so repeated calls are comparable.
  Rng local(t.seed ^ 0xA5A5A5A5ull);
  std::vector<std::vector<std::vector<std::size_t>>> negatives(examples_.size());
  if (bundle_.task() == Task::rank) {
    for (std::size_t i = 0; i < examples_.size(); ++i) {
      for (std::size_t k = 0; k < examples_[i].positives.size(); ++k) {
        negatives[i].push_back(diagnosis_sampler_->sample_many(local, t.negatives, examples_[i].positives));
      }
    }
  }
  std::vector<double> losses(examples_.size());
  for_each_index(
      examples_.size(),
      [&](std::size_t i) {
        GradContext ctx(bundle_.store);
        losses[i] = ctx.scalar(supervised_loss(ctx, examples_[i], negatives[i]));
      },
      exec_);
  double total = 0;
  for (double l : losses) total += l;
  return total / static_cast<double>(losses.size());
}

// ---------------------------------------------------------- evaluation

EvalResult evaluate(const ModelBundle& bundle, const Dataset& data, Execution exec) {
  EvalResult out;
  std::vector<std::string> patients;
  std::vector<ContextInput> inputs;
  for (const auto& p : data.labelled_patients) {
    for (const auto& d : data.diagnoses_of.at(p)) {
      if (!bundle.vocab.contains(d)) throw DataError("vocabulary mismatch: diagnosis " + d + " unknown to the checkpoint");
    }
    ContextInput in = context_input(bundle, data, p);
    if (in.empty()) {
      ++out.skipped;
      continue;
    }
    patients.push_back(p);
    inputs.push_back(std::move(in));
  }
  if (patients.empty()) throw DataError("no evaluation patient has usable context data");
  out.patients = patients.size();
  const std::size_t n = patients.size();

  if (bundle.task() == Task::phenotype) {
    std::vector<std::vector<double>> logits(n);
    for_each_index(n, [&](std::size_t i) { logits[i] = phenotype_logits(bundle, inputs[i]); }, exec);
    const std::size_t groups = bundle.vocab.group_count();
    std::vector<std::vector<double>> scores(groups);
    std::vector<std::vector<int>> labels(groups);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<int> y(groups, 0);
      for (const auto& d : data.diagnoses_of.at(patients[i])) y[bundle.vocab.group(d)] = 1;
      for (std::size_t g = 0; g < groups; ++g) {
        scores[g].push_back(1.0 / (1.0 + std::exp(-logits[i][g])));
        labels[g].push_back(y[g]);
      }
    }
    out.report = json{{"task", "phenotype"},
                      {"patients", n},
                      {"auc",
                       {{"micro", auc_roc(scores, labels, AucMode::micro)},
                        {"macro", auc_roc(scores, labels, AucMode::macro)},
                        {"weighted", auc_roc(scores, labels, AucMode::weighted)}}}};
    return out;
  }

  std::map<std::string, std::size_t> target_of;
  for (std::size_t t = 0; t < bundle.htad().target_count(); ++t) target_of[bundle.htad().targets()[t].name] = t;
  std::vector<std::string> vocabulary;
  for (const auto& t : bundle.htad().targets()) vocabulary.push_back(t.name);

  Rng rng(bundle.config.training.seed ^ 0xC0FFEEull);
  std::vector<std::vector<std::size_t>> candidates(n);
  std::vector<std::vector<bool>> relevant(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& pos = data.diagnoses_of.at(patients[i]);
    const std::set<std::string> pos_set(pos.begin(), pos.end());
    for (const auto& c : build_ranking_candidates(pos, vocabulary, rng, bundle.config.candidates)) {
      candidates[i].push_back(target_of.at(c));
      relevant[i].push_back(pos_set.contains(c));
    }
  }
  std::vector<std::vector<bool>> ranked(n);
  for_each_index(
      n,
      [&](std::size_t i) {
        const auto scores = rank_scores(bundle, inputs[i], candidates[i]);
        ranked[i] = rank_by_score(scores, relevant[i]);
      },
      exec);
  json map = json::object();
  for (std::size_t k : {4, 6, 8, 10}) map[std::to_string(k)] = map_at_k(ranked, k);
  out.report = json{{"task", "rank"}, {"patients", n}, {"candidates", bundle.config.candidates}, {"map", map}};
  return out;
}

std::vector<AttentionTrace> collect_traces(const ModelBundle& bundle, const Dataset& data, Execution exec) {
  // One trace per (patient, linked target): the patient's diagnoses for the
  // rank task, the groups of those diagnoses for the phenotype task.
  const auto& model = bundle.htad();
  std::map<std::string, std::size_t> target_of;
  for (std::size_t t = 0; t < model.target_count(); ++t) target_of[model.targets()[t].name] = t;
  std::vector<ContextInput> inputs;
  std::vector<std::vector<std::size_t>> linked;
  for (const auto& p : data.labelled_patients) {
    ContextInput in = context_input(bundle, data, p);
    if (in.empty()) continue;
    std::set<std::size_t> targets;
    for (const auto& d : data.diagnoses_of.at(p)) {
      if (!bundle.vocab.contains(d)) throw DataError("vocabulary mismatch: diagnosis " + d + " unknown to the checkpoint");
      const std::string name =
          bundle.task() == Task::phenotype ? bundle.vocab.groups()[bundle.vocab.group(d)] : d;
      targets.insert(target_of.at(name));
    }
    inputs.push_back(std::move(in));
    linked.emplace_back(targets.begin(), targets.end());
  }
  std::vector<std::vector<AttentionTrace>> per_patient(inputs.size());
  for_each_index(
      inputs.size(),
      [&](std::size_t i) {
        GradContext ctx(bundle.store);
        const auto enc = model.encode_context(ctx, inputs[i]);
        for (std::size_t t : linked[i]) {
          const auto rep = model.represent(ctx, enc, t);
          per_patient[i].push_back(model.make_trace(ctx, enc, rep, inputs[i].patient, t));
        }
      },
      exec);
  std::vector<AttentionTrace> out;
  for (auto& v : per_patient) {
    for (auto& t : v) out.push_back(std::move(t));
  }
  return out;
}

}  // namespace htad
