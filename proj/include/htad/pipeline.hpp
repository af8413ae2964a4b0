#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "htad/data.hpp"
#include "htad/eval.hpp"
#include "htad/hin.hpp"
#include "htad/kernels.hpp"
#include "htad/model.hpp"
#include "htad/objectives.hpp"

namespace htad {

// One JSON document holding model and training settings.
struct RunConfig {
  std::size_t embedding_dim = 256;
  std::size_t attention_dim = 128;
  AttentionMode attention_mode = AttentionMode::group;
  Activation activation = Activation::tanh;
  bool use_series = true;
  std::size_t series_hidden = 64;
  std::size_t head_hidden = 0;  // 0: same as attention_dim
  std::vector<std::string> context_types;  // empty: every record type in the data
  std::vector<std::string> numeric_types;
  std::size_t bins = 5;
  std::size_t candidates = 100;
  TrainingConfig training;

  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;
};

RunConfig load_run_config(const std::filesystem::path& path);

// Graph plus per-patient labels and series for one split.
struct Dataset {
  HinGraph graph;
  std::map<std::string, Series> series;
  std::vector<std::string> series_channels;
  std::vector<std::string> labelled_patients;  // patients with at least one target, sorted
  std::map<std::string, std::vector<std::string>> diagnoses_of;
};

Dataset make_dataset(std::vector<ClinicalRecord> records, std::span<const TargetLink> targets,
                     std::map<std::string, Series> series, std::vector<std::string> series_channels,
                     std::span<const std::string> context_types);

std::vector<std::string> record_types(std::span<const ClinicalRecord> records);

// Model, head, vocabularies and parameters: everything a checkpoint holds.
struct ModelBundle {
  RunConfig config;
  ModelConfig model_config;
  DiagnosisVocab vocab;
  ValueBinner binner;
  EmbeddingIndex index;
  std::vector<std::string> series_channels;
  ParameterStore store;
  std::optional<HtadModel> model;
  std::optional<ClassificationHead> head;
  std::optional<ParamId> relation_bias;

  static ModelBundle create(const RunConfig& config, const Dataset& train, const DiagnosisVocab& vocab,
                            const ValueBinner& binner);
  static ModelBundle load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  std::string metadata() const;

  const HtadModel& htad() const { return *model; }
  Task task() const { return config.training.task; }
};

ContextInput context_input(const ModelBundle& bundle, const Dataset& data, const std::string& patient);

// Forward-only helpers over a frozen store.
std::vector<double> phenotype_logits(const ModelBundle& bundle, const ContextInput& input);
std::vector<double> rank_scores(const ModelBundle& bundle, const ContextInput& input,
                                std::span<const std::size_t> targets);

struct TrainingStep {
  std::size_t step = 0;
  Objective objective = Objective::supervised;
  double loss = 0.0;
  double ms = 0.0;
};

class Trainer {
 public:
  Trainer(ModelBundle& bundle, const Dataset& data, Execution exec = Execution::parallel);

  // Runs the configured schedule. `on_step` sees every step; `on_epoch`
  // fires after each block of steps_per_epoch() steps.
  void run(const std::function<void(const TrainingStep&)>& on_step = {},
           const std::function<void(std::size_t)>& on_epoch = {});

  double supervised_step(std::span<const std::size_t> batch);
  double unsupervised_step(std::size_t pairs);
  void pretrain_series(std::size_t epochs);

  std::size_t steps_per_epoch() const;
  std::size_t train_patient_count() const { return examples_.size(); }
  std::size_t relation_count() const { return relations_.size(); }
  Rng& rng() { return rng_; }

  // Mean supervised loss over all training patients (no update).
  double full_supervised_loss();

 private:
  struct PatientExample {
    ContextInput input;
    std::vector<double> labels;          // phenotype: one per group
    std::vector<std::size_t> positives;  // rank: target indices
  };
  struct Relation {
    std::size_t id = 0;
    MetaPathSampler sampler;
    NegativeSampler negatives;
  };

  Var supervised_loss(GradContext& ctx, const PatientExample& ex,
                      std::span<const std::vector<std::size_t>> negatives) const;
  void apply_update(double penalty_rows_loss);

  ModelBundle& bundle_;
  const Dataset& data_;
  Execution exec_;
  Rng rng_;
  std::vector<PatientExample> examples_;
  std::vector<Relation> relations_;
  std::optional<NegativeSampler> diagnosis_sampler_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t step_ = 0;
};

struct EvalResult {
  nlohmann::json report;
  std::size_t patients = 0;
  std::size_t skipped = 0;
};

EvalResult evaluate(const ModelBundle& bundle, const Dataset& data, Execution exec = Execution::parallel);

std::vector<AttentionTrace> collect_traces(const ModelBundle& bundle, const Dataset& data,
                                           Execution exec = Execution::parallel);

}  // namespace htad
