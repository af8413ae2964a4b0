#include "htad/hin.hpp"

#include <algorithm>
#include <set>
#include <tuple>

namespace htad {

std::string node_key(std::string_view type, std::string_view item, const std::optional<std::string>& value) {
  std::string key;
  key.reserve(type.size() + item.size() + 8);
  key.append(type).append("|").append(item).append("|");
  if (value) key.append("=").append(*value);
  return key;
}

TypeId HinGraph::type_id(std::string_view name) const {
  auto t = find_type(name);
  if (!t) throw DataError("unknown node type: " + std::string(name));
  return *t;
}

std::optional<TypeId> HinGraph::find_type(std::string_view name) const {
  for (std::uint32_t i = 0; i < type_names_.size(); ++i) {
    if (type_names_[i] == name) return TypeId{i};
  }
  return std::nullopt;
}

std::vector<TypeId> HinGraph::context_types() const {
  std::vector<TypeId> out;
  for (std::uint32_t i = 2; i < type_names_.size(); ++i) out.push_back(TypeId{i});
  return out;
}

EdgeTypeId HinGraph::edge_type_for(TypeId t) const {
  if (t.index == 0 || t.index >= type_names_.size()) throw DataError("no edge type joins patients to that type");
  return EdgeTypeId{t.index - 1};
}

std::optional<NodeId> HinGraph::find_node(std::string_view key) const {
  auto it = by_key_.find(std::string(key));
  if (it == by_key_.end()) return std::nullopt;
  return it->second;
}

std::optional<NodeId> HinGraph::find_patient(std::string_view patient_id) const {
  return find_node(node_key(kPatientType, patient_id, std::nullopt));
}

std::optional<NodeId> HinGraph::find_diagnosis(std::string_view diagnosis_id) const {
  return find_node(node_key(kDiagnosisType, diagnosis_id, std::nullopt));
}

std::string HinGraph::key_of(NodeId n) const {
  const Node& nd = node(n);
  return node_key(type_names_[nd.type.index], nd.item, nd.value);
}

HinGraph build_graph(std::span<const ClinicalRecord> records, std::span<const std::string> patients,
                     std::span<const TargetLink> targets, std::span<const std::string> context_types) {
  HinGraph g;
  std::set<std::string> ctx_set(context_types.begin(), context_types.end());
  for (const auto& t : ctx_set) {
    if (t == kPatientType || t == kDiagnosisType) throw ConfigError("reserved type used as context type: " + t);
    if (t.empty()) throw ConfigError("empty context type name");
  }
  g.type_names_ = {std::string(kPatientType), std::string(kDiagnosisType)};
  g.type_names_.insert(g.type_names_.end(), ctx_set.begin(), ctx_set.end());
  for (std::size_t i = 1; i < g.type_names_.size(); ++i) {
    g.edge_type_names_.push_back(std::string(kPatientType) + "-" + g.type_names_[i]);
  }

  const std::set<std::string> patient_set(patients.begin(), patients.end());

  // (type, item, value) of every non-patient node, plus raw edges by identity.
  using Ident = std::tuple<std::uint32_t, std::string, std::optional<std::string>>;
  std::set<Ident> idents;
  std::map<std::pair<std::string, std::optional<std::string>>, std::uint32_t> context_type_of;
  std::vector<std::pair<std::string, Ident>> raw_edges;
  raw_edges.reserve(records.size() + targets.size());

  for (const auto& r : records) {
    if (!patient_set.contains(r.patient)) throw DataError("record references unknown patient: " + r.patient);
    auto t = g.find_type(r.type);
    if (!t || !g.is_context_type(*t)) throw DataError("undeclared record type: " + r.type);
    auto [it, inserted] = context_type_of.try_emplace({r.item, r.value}, t->index);
    if (!inserted && it->second != t->index) {
      throw DataError("item " + r.item + " appears under two record types");
    }
    Ident id{t->index, r.item, r.value};
    idents.insert(id);
    raw_edges.emplace_back(r.patient, std::move(id));
  }
  for (const auto& l : targets) {
    if (!patient_set.contains(l.patient)) throw DataError("target references unknown patient: " + l.patient);
    Ident id{1u, l.diagnosis, std::nullopt};
    idents.insert(id);
    raw_edges.emplace_back(l.patient, std::move(id));
  }

  // Canonical numbering: patients (sorted) first, then other nodes in
  // (type, item, value) order.
  for (const auto& p : patient_set) {
    g.nodes_.push_back(Node{TypeId{0}, p, std::nullopt});
  }
  for (const auto& [t, item, value] : idents) g.nodes_.push_back(Node{TypeId{t}, item, value});

  g.adjacency_.assign(g.nodes_.size(), {});
  g.type_index_.assign(g.type_names_.size(), {});
  for (std::uint32_t i = 0; i < g.nodes_.size(); ++i) {
    const NodeId n{i};
    g.by_key_.emplace(g.key_of(n), n);
    g.type_index_[g.nodes_[i].type.index].push_back(n);
  }

  std::set<std::pair<NodeId, NodeId>> seen;
  for (const auto& [patient, ident] : raw_edges) {
    const NodeId p = *g.find_patient(patient);
    const auto& [t, item, value] = ident;
    const NodeId o = *g.find_node(node_key(g.type_names_[t], item, value));
    if (!seen.emplace(p, o).second) continue;
    g.edges_.push_back(Edge{p, o, g.edge_type_for(TypeId{t})});
  }
  std::sort(g.edges_.begin(), g.edges_.end());
  for (const auto& e : g.edges_) {
    g.adjacency_[e.patient.index].push_back(e.other);
    g.adjacency_[e.other.index].push_back(e.patient);
  }
  for (auto& adj : g.adjacency_) std::sort(adj.begin(), adj.end());
  return g;
}

TypedNeighborhood typed_neighborhood(const HinGraph& graph, NodeId patient) {
  if (patient.index >= graph.node_count() || graph.node_type(patient) != graph.patient_type()) {
    throw DataError("typed_neighborhood: not a patient node");
  }
  TypedNeighborhood out;
  out.patient = patient;
  for (NodeId n : graph.neighbors(patient)) {
    const TypeId t = graph.node_type(n);
    if (t == graph.target_type()) {
      out.targets.push_back(n);
    } else {
      out.by_type[graph.type_name(t)].push_back(n);
    }
  }
  return out;
}

TypedNeighborhood typed_neighborhood(const HinGraph& graph, std::string_view patient_id) {
  auto p = graph.find_patient(patient_id);
  if (!p) throw DataError("unknown patient: " + std::string(patient_id));
  return typed_neighborhood(graph, *p);
}

// ------------------------------------------------------------ metapaths

MetaPathSchema MetaPathSchema::parse(std::string_view text) {
  MetaPathSchema s;
  std::string current;
  std::size_t i = 0;
  auto flush = [&] {
    if (current.empty()) throw ConfigError("malformed metapath: " + std::string(text));
    s.types.push_back(current);
    current.clear();
  };
  while (i < text.size()) {
    if (text.compare(i, 2, "<-") == 0 || text.compare(i, 2, "->") == 0) {
      flush();
      i += 2;
    } else if (text[i] == ' ') {
      ++i;
    } else {
      current.push_back(text[i++]);
    }
  }
  flush();
  if (s.types.size() < 2) throw ConfigError("metapath needs at least two node types: " + std::string(text));
  // Every edge touches a patient, so legal schemas alternate through it.
  for (std::size_t k = 0; k + 1 < s.types.size(); ++k) {
    if ((s.types[k] == kPatientType) == (s.types[k + 1] == kPatientType)) {
      throw ConfigError("no edge type joins " + s.types[k] + " and " + s.types[k + 1]);
    }
  }
  return s;
}

std::string MetaPathSchema::to_string() const {
  // Patient-centred schemas print as a <- patient -> b.
  std::string out;
  for (std::size_t i = 0; i < types.size(); ++i) {
    if (i > 0) out += (types[i - 1] == kPatientType) ? "->" : "<-";
    out += types[i];
  }
  return out;
}

void validate_schema(const HinGraph& graph, const MetaPathSchema& schema) {
  if (schema.types.size() < 2) throw ConfigError("metapath needs at least two node types");
  for (const auto& t : schema.types) {
    if (!graph.find_type(t)) throw ConfigError("metapath uses unknown node type: " + t);
  }
  for (std::size_t i = 0; i + 1 < schema.types.size(); ++i) {
    const bool a = schema.types[i] == kPatientType;
    const bool b = schema.types[i + 1] == kPatientType;
    if (a == b) {
      throw ConfigError("no edge type joins " + schema.types[i] + " and " + schema.types[i + 1]);
    }
  }
}

std::vector<NodeId> dest_set(const HinGraph& graph, const MetaPathSchema& schema) {
  validate_schema(graph, schema);
  std::vector<char> frontier(graph.node_count(), 0);
  for (NodeId n : graph.nodes_of_type(graph.type_id(schema.types[0]))) frontier[n.index] = 1;
  for (std::size_t k = 1; k < schema.types.size(); ++k) {
    const TypeId next = graph.type_id(schema.types[k]);
    std::vector<char> reached(graph.node_count(), 0);
    for (std::uint32_t i = 0; i < frontier.size(); ++i) {
      if (!frontier[i]) continue;
      for (NodeId m : graph.neighbors(NodeId{i})) {
        if (graph.node_type(m) == next) reached[m.index] = 1;
      }
    }
    frontier = std::move(reached);
  }
  std::vector<NodeId> out;
  for (std::uint32_t i = 0; i < frontier.size(); ++i) {
    if (frontier[i]) out.push_back(NodeId{i});
  }
  return out;
}

MetaPathSampler::MetaPathSampler(const HinGraph& graph, MetaPathSchema schema)
    : graph_(&graph), schema_(std::move(schema)) {
  validate_schema(graph, schema_);
  for (const auto& t : schema_.types) types_.push_back(graph.type_id(t));
  const std::size_t len = types_.size();
  viable_.assign(len, std::vector<char>(graph.node_count(), 0));
  for (NodeId n : graph.nodes_of_type(types_[len - 1])) viable_[len - 1][n.index] = 1;
  for (std::size_t k = len - 1; k-- > 0;) {
    for (NodeId n : graph.nodes_of_type(types_[k])) {
      for (NodeId m : graph.neighbors(n)) {
        if (viable_[k + 1][m.index]) {
          viable_[k][n.index] = 1;
          break;
        }
      }
    }
  }
  for (NodeId n : graph.nodes_of_type(types_[0])) {
    if (viable_[0][n.index]) starts_.push_back(n);
  }
}

std::vector<NodeId> MetaPathSampler::sample_path(Rng& rng) const {
  if (starts_.empty()) throw DataError("metapath has no instances: " + schema_.to_string());
  std::vector<NodeId> path;
  path.reserve(types_.size());
  path.push_back(starts_[std::uniform_int_distribution<std::size_t>(0, starts_.size() - 1)(rng)]);
  std::vector<NodeId> choices;
  for (std::size_t k = 1; k < types_.size(); ++k) {
    choices.clear();
    for (NodeId m : graph_->neighbors(path.back())) {
      if (graph_->node_type(m) == types_[k] && viable_[k][m.index]) choices.push_back(m);
    }
    path.push_back(choices[std::uniform_int_distribution<std::size_t>(0, choices.size() - 1)(rng)]);
  }
  return path;
}

std::pair<NodeId, NodeId> MetaPathSampler::sample(Rng& rng) const {
  auto path = sample_path(rng);
  return {path.front(), path.back()};
}

std::pair<NodeId, NodeId> sample_metapath_pair(const HinGraph& graph, const MetaPathSchema& schema, Rng& rng) {
  return MetaPathSampler(graph, schema).sample(rng);
}

}  // namespace htad
