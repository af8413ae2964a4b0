#pragma once

#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "htad/hin.hpp"
#include "htad/numerics.hpp"

namespace htad {

enum class AttentionMode {
  transform,  // q^d = W_q h_d + b_q, s^d = W_s h_d + b_s
  group,      // q^d, s^d are rows of Q, S for d's group
  mean,       // ablation: uniform weights at both levels
};

enum class Activation { tanh, sigmoid };

AttentionMode parse_attention_mode(std::string_view s);
std::string to_string(AttentionMode m);
Activation parse_activation(std::string_view s);
std::string to_string(Activation a);

inline constexpr std::string_view kSeriesType = "series";

struct ModelConfig {
  std::size_t embedding_dim = 256;  // F
  std::size_t attention_dim = 128;  // F'
  AttentionMode attention_mode = AttentionMode::group;
  Activation activation = Activation::tanh;
  std::vector<std::string> context_types;  // categorical types, sorted
  std::size_t group_count = 0;             // |D'|
  std::size_t series_channels = 0;         // 0: no time-series type
  std::size_t series_hidden = 64;

  void validate() const;
};

// One prediction target (a diagnosis for ranking, a group for phenotyping):
// the embedding row used as h_d and its attention group.
struct Target {
  std::string name;
  std::size_t embedding_row = 0;
  std::size_t group = 0;
};

// Maps node keys to rows of the embedding matrix M.
class EmbeddingIndex {
 public:
  std::size_t add(const std::string& key);
  std::optional<std::size_t> find(const std::string& key) const;
  std::size_t size() const { return keys_.size(); }
  const std::vector<std::string>& keys() const { return keys_; }

 private:
  std::vector<std::string> keys_;
  std::unordered_map<std::string, std::size_t> rows_;
};

// Ordered measurement vectors s_1..s_T, row-major [steps x channels].
struct Series {
  std::size_t steps = 0;
  std::size_t channels = 0;
  std::vector<double> values;

  std::span<const double> step(std::size_t t) const {
    return std::span<const double>(values).subspan(t * channels, channels);
  }
};

struct TypeNeighbors {
  std::size_t type_index = 0;  // position in ModelConfig::context_types
  std::vector<std::size_t> rows;
  std::vector<std::string> labels;  // node keys, for traces
};

// Everything the aggregation needs about one patient.
struct ContextInput {
  std::string patient;
  std::vector<TypeNeighbors> types;  // only non-empty types, ascending type_index
  std::optional<Series> series;

  bool empty() const { return types.empty() && !series; }
};

struct TypeRepresentation {
  std::string type;
  Var z;
  std::vector<double> alpha;  // empty for the time-series type
};

struct PatientRepresentation {
  Var f;
  std::vector<TypeRepresentation> types;
  std::vector<double> beta;  // aligned with types
};

struct AttentionTrace {
  std::string patient;
  std::string diagnosis;
  std::map<std::string, std::map<std::string, double>> alpha;  // type -> node -> weight
  std::map<std::string, double> beta;                          // type -> weight
};

// Transformed neighbours and the time-series type representation for one
// patient. These do not depend on the target, so they are computed once and
// reused across targets.
struct ContextEncoding {
  struct TypeNodes {
    std::size_t type_index = 0;
    std::vector<Var> transformed;
    const TypeNeighbors* source = nullptr;
  };
  std::vector<TypeNodes> types;
  std::optional<TypeRepresentation> series;
};

class HtadModel {
 public:
  // Registers and initialises every parameter in `store`.
  static HtadModel create(const ModelConfig& config, std::vector<Target> targets, std::size_t embedding_rows,
                          ParameterStore& store, Rng& rng);
  // Binds to parameters already present in `store` (e.g. from a checkpoint).
  HtadModel(const ModelConfig& config, std::vector<Target> targets, const ParameterStore& store);

  const ModelConfig& config() const { return config_; }
  const std::vector<Target>& targets() const { return targets_; }
  std::size_t target_count() const { return targets_.size(); }
  ParamId embeddings() const { return m_; }

  Var transform_context(GradContext& ctx, std::size_t type_index, Var node_embedding) const;
  Var attention_vector_node(GradContext& ctx, std::size_t target) const;
  Var attention_vector_type(GradContext& ctx, std::size_t target) const;
  TypeRepresentation node_level_aggregate(GradContext& ctx, std::size_t type_index,
                                          std::span<const Var> transformed, Var q) const;
  TypeRepresentation encode_time_series(GradContext& ctx, const Series& series) const;
  PatientRepresentation type_level_aggregate(GradContext& ctx, std::span<const TypeRepresentation> reps,
                                             Var s) const;

  ContextEncoding encode_context(GradContext& ctx, const ContextInput& input) const;
  PatientRepresentation represent(GradContext& ctx, const ContextEncoding& enc, std::size_t target) const;

  // h'_d = W_d h_d + b_d
  Var transformed_target(GradContext& ctx, std::size_t target) const;
  // f_{p,d} . h'_d
  Var ranking_score(GradContext& ctx, Var f, std::size_t target) const;

  // Runs the recurrent cell and returns every hidden state (for pre-training).
  std::vector<Var> run_sequence(GradContext& ctx, const Series& series) const;

  AttentionTrace make_trace(const GradContext& ctx, const ContextEncoding& enc, const PatientRepresentation& rep,
                            const std::string& patient, std::size_t target) const;

 private:
  HtadModel(const ModelConfig& config, std::vector<Target> targets);
  void bind(const ParameterStore& store);
  Var activate(GradContext& ctx, Var x) const;

  ModelConfig config_;
  std::vector<Target> targets_;
  ParamId m_;
  std::vector<ParamId> w_c_, b_c_;
  ParamId w_d_, b_d_;
  ParamId w_q_, b_q_, w_s_, b_s_;  // transform mode
  ParamId q_, s_;                  // group mode
  ParamId lstm_w_, lstm_b_, w_t_, b_t_;
};

// Builds the model input for one patient from the graph. Nodes missing from
// the embedding index and types unknown to the model are dropped.
ContextInput make_context_input(const HinGraph& graph, const EmbeddingIndex& index, const ModelConfig& config,
                                NodeId patient, const Series* series);

// Composes neighbourhood lookup, node-level and type-level aggregation for
// one (patient, target). Throws DataError if the patient has no context data.
std::pair<PatientRepresentation, AttentionTrace> patient_representation(
    GradContext& ctx, const HtadModel& model, const HinGraph& graph, const EmbeddingIndex& index, NodeId patient,
    std::size_t target, const Series* series);

}  // namespace htad
