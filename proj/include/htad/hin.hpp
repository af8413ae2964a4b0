#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "htad/numerics.hpp"

namespace htad {

inline constexpr std::string_view kPatientType = "patient";
inline constexpr std::string_view kDiagnosisType = "diagnosis";

struct ClinicalRecord {
  std::string patient;
  std::string item;
  std::string type;
  std::optional<std::string> value;  // absent for value-less types
};

struct TargetLink {
  std::string patient;
  std::string diagnosis;
};

struct NodeId {
  std::uint32_t index = 0;
  friend auto operator<=>(NodeId, NodeId) = default;
};

struct TypeId {
  std::uint32_t index = 0;
  friend auto operator<=>(TypeId, TypeId) = default;
};

struct EdgeTypeId {
  std::uint32_t index = 0;
  friend auto operator<=>(EdgeTypeId, EdgeTypeId) = default;
};

struct Node {
  TypeId type;
  std::string item;  // patient id, diagnosis id, or record item id
  std::optional<std::string> value;
};

struct Edge {
  NodeId patient;
  NodeId other;
  EdgeTypeId type;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

// Stable textual identity of a node: "<type>|<item>|<value or empty>".
std::string node_key(std::string_view type, std::string_view item, const std::optional<std::string>& value);

// Typed graph of patients, context records, and diagnosis targets. Immutable
// after build_graph; node ids are canonical (sorted by type, item, value) so
// they do not depend on input order.
class HinGraph {
 public:
  std::size_t node_count() const { return nodes_.size(); }
  std::size_t edge_count() const { return edges_.size(); }
  const Node& node(NodeId n) const { return nodes_.at(n.index); }
  std::span<const Node> nodes() const { return nodes_; }
  std::span<const Edge> edges() const { return edges_; }

  const std::vector<std::string>& type_names() const { return type_names_; }
  TypeId type_id(std::string_view name) const;
  std::optional<TypeId> find_type(std::string_view name) const;
  const std::string& type_name(TypeId t) const { return type_names_.at(t.index); }
  TypeId patient_type() const { return TypeId{0}; }
  TypeId target_type() const { return TypeId{1}; }
  bool is_context_type(TypeId t) const { return t.index >= 2; }
  std::vector<TypeId> context_types() const;

  const std::vector<std::string>& edge_type_names() const { return edge_type_names_; }
  // Edge type joining a patient to nodes of type `t`.
  EdgeTypeId edge_type_for(TypeId t) const;
  // h: V -> A and g: E -> R.
  TypeId node_type(NodeId n) const { return nodes_.at(n.index).type; }
  EdgeTypeId edge_type(std::size_t edge_index) const { return edges_.at(edge_index).type; }

  std::span<const NodeId> neighbors(NodeId n) const { return adjacency_.at(n.index); }
  std::span<const NodeId> nodes_of_type(TypeId t) const { return type_index_.at(t.index); }

  std::optional<NodeId> find_node(std::string_view key) const;
  std::optional<NodeId> find_patient(std::string_view patient_id) const;
  std::optional<NodeId> find_diagnosis(std::string_view diagnosis_id) const;
  std::string key_of(NodeId n) const;

 private:
  friend HinGraph build_graph(std::span<const ClinicalRecord>, std::span<const std::string>,
                              std::span<const TargetLink>, std::span<const std::string>);

  std::vector<std::string> type_names_;
  std::vector<std::string> edge_type_names_;
  std::vector<Node> nodes_;
  std::vector<Edge> edges_;
  std::vector<std::vector<NodeId>> adjacency_;
  std::vector<std::vector<NodeId>> type_index_;
  std::unordered_map<std::string, NodeId> by_key_;
};

// Maps records to context nodes identified by (item, value), patients to
// patient nodes, and target links to diagnosis nodes. Duplicate
// (patient, record) pairs collapse to a single edge.
// Throws DataError for an unknown patient, an undeclared record type, or an
// (item, value) pair seen under two different types.
HinGraph build_graph(std::span<const ClinicalRecord> records, std::span<const std::string> patients,
                     std::span<const TargetLink> targets, std::span<const std::string> context_types);

struct TypedNeighborhood {
  NodeId patient;
  std::map<std::string, std::vector<NodeId>> by_type;  // context types only
  std::vector<NodeId> targets;
};

TypedNeighborhood typed_neighborhood(const HinGraph& graph, NodeId patient);
TypedNeighborhood typed_neighborhood(const HinGraph& graph, std::string_view patient_id);

// Ordered node types of a metapath, e.g. lab <- patient -> diagnosis. Every
// adjacent pair must be joined by a graph edge type, so types alternate
// between patient and a non-patient type.
struct MetaPathSchema {
  std::vector<std::string> types;

  // Accepts "lab<-patient->diagnosis" (arrows are traversal direction only).
  static MetaPathSchema parse(std::string_view text);
  std::string to_string() const;
};

void validate_schema(const HinGraph& graph, const MetaPathSchema& schema);

// Nodes reachable as the endpoint of some path instance of the schema.
std::vector<NodeId> dest_set(const HinGraph& graph, const MetaPathSchema& schema);

// Precomputes, for each position of the schema, which nodes can still
// complete a path. Sampling then picks uniformly among viable choices at
// every hop, so every returned pair has an explicit matching path.
class MetaPathSampler {
 public:
  MetaPathSampler(const HinGraph& graph, MetaPathSchema schema);

  bool empty() const { return starts_.empty(); }
  const MetaPathSchema& schema() const { return schema_; }
  std::pair<NodeId, NodeId> sample(Rng& rng) const;
  // Full node sequence of a sampled instance.
  std::vector<NodeId> sample_path(Rng& rng) const;

 private:
  const HinGraph* graph_;
  MetaPathSchema schema_;
  std::vector<TypeId> types_;
  std::vector<std::vector<char>> viable_;  // [position][node]
  std::vector<NodeId> starts_;
};

std::pair<NodeId, NodeId> sample_metapath_pair(const HinGraph& graph, const MetaPathSchema& schema, Rng& rng);

}  // namespace htad
