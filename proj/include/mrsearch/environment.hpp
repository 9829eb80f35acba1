#pragma once

// Synthetic multi-hop search environment: a functional knowledge graph,
// k-hop tasks over it, and a noisy lookup tool.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mrsearch/random.hpp"

namespace mrsearch {

using EntityId = int;
using RelationId = int;

inline constexpr int kMaxHops = 8;

/// Functional relation graph: every (head, relation) pair has exactly one tail.
class KnowledgeGraph {
 public:
  KnowledgeGraph() = default;

  /// `tails` is indexed by head * num_relations + relation.
  KnowledgeGraph(int num_entities, int num_relations, std::vector<EntityId> tails)
      : num_entities_(num_entities), num_relations_(num_relations), tails_(std::move(tails)) {
    if (num_entities < 1 || num_relations < 1) {
      throw std::invalid_argument("KnowledgeGraph: num_entities and num_relations must be positive");
    }
    if (tails_.size() != static_cast<std::size_t>(num_entities) * static_cast<std::size_t>(num_relations)) {
      throw std::invalid_argument("KnowledgeGraph: fact table must populate every (head, relation) pair");
    }
    for (auto t : tails_) {
      if (t < 0 || t >= num_entities) {
        throw std::invalid_argument("KnowledgeGraph: tail id out of range");
      }
    }
  }

  int num_entities() const { return num_entities_; }
  int num_relations() const { return num_relations_; }
  std::size_t num_facts() const { return tails_.size(); }

  bool valid_entity(EntityId e) const { return e >= 0 && e < num_entities_; }
  bool valid_relation(RelationId r) const { return r >= 0 && r < num_relations_; }

  EntityId tail(EntityId head, RelationId relation) const {
    if (!valid_entity(head) || !valid_relation(relation)) {
      throw std::out_of_range("KnowledgeGraph::tail: id out of range (head=" + std::to_string(head) +
                              ", relation=" + std::to_string(relation) + ")");
    }
    return tails_[static_cast<std::size_t>(head) * num_relations_ + relation];
  }

  const std::vector<EntityId>& tails() const { return tails_; }

  friend bool operator==(const KnowledgeGraph&, const KnowledgeGraph&) = default;

 private:
  int num_entities_ = 0;
  int num_relations_ = 0;
  std::vector<EntityId> tails_;
};

/// A k-hop question: follow `path` from `start`; `gold` is where it ends.
struct Task {
  EntityId start = 0;
  std::vector<RelationId> path;
  EntityId gold = 0;

  int hops() const { return static_cast<int>(path.size()); }
  friend bool operator==(const Task&, const Task&) = default;
};

/// Result of one lookup. `is_distractor` is diagnostic only and never feeds
/// the policy.
struct Observation {
  EntityId head = 0;
  RelationId relation = 0;
  EntityId tail = 0;
  bool is_distractor = false;

  friend bool operator==(const Observation&, const Observation&) = default;
};

inline KnowledgeGraph build_graph(int num_entities, int num_relations, std::uint64_t seed) {
  if (num_entities < 4) {
    throw std::invalid_argument("build_graph: num_entities must be >= 4 (got " + std::to_string(num_entities) + ")");
  }
  if (num_relations < 1) {
    throw std::invalid_argument("build_graph: num_relations must be >= 1 (got " + std::to_string(num_relations) + ")");
  }
  Rng rng = make_rng(seed, {stream::kGraph});
  std::vector<EntityId> tails(static_cast<std::size_t>(num_entities) * num_relations);
  for (auto& t : tails) t = uniform_index(rng, num_entities);
  return KnowledgeGraph(num_entities, num_relations, std::move(tails));
}

inline EntityId walk_path(const KnowledgeGraph& graph, EntityId start, const std::vector<RelationId>& path) {
  EntityId e = start;
  for (auto r : path) e = graph.tail(e, r);
  return e;
}

inline Task generate_task(const KnowledgeGraph& graph, int hops, Rng& rng) {
  if (hops < 1 || hops > kMaxHops) {
    throw std::invalid_argument("generate_task: hops must be in [1, " + std::to_string(kMaxHops) + "]");
  }
  Task task;
  task.start = uniform_index(rng, graph.num_entities());
  task.path.resize(static_cast<std::size_t>(hops));
  for (auto& r : task.path) r = uniform_index(rng, graph.num_relations());
  task.gold = walk_path(graph, task.start, task.path);
  return task;
}

/// Noisy lookup: the gold fact with probability 1 - noise, otherwise a tail
/// drawn uniformly from the entities other than the gold tail.
inline Observation query(const KnowledgeGraph& graph, EntityId head, RelationId relation, double noise, Rng& rng) {
  if (!(noise >= 0.0 && noise < 1.0)) {
    throw std::invalid_argument("query: noise must be in [0, 1)");
  }
  const EntityId gold = graph.tail(head, relation);
  if (uniform01(rng) >= noise) {
    return {head, relation, gold, false};
  }
  if (graph.num_entities() < 2) {
    throw std::invalid_argument("query: distractors need at least two entities");
  }
  EntityId other = uniform_index(rng, graph.num_entities() - 1);
  if (other >= gold) ++other;
  return {head, relation, other, true};
}

/// Graph plus tool noise level; what a rollout interacts with.
struct SearchEnvironment {
  KnowledgeGraph graph;
  double noise = 0.0;

  Observation query(EntityId head, RelationId relation, Rng& rng) const {
    return mrsearch::query(graph, head, relation, noise, rng);
  }
};

// JSON

inline nlohmann::json to_json(const KnowledgeGraph& g) {
  nlohmann::json facts = nlohmann::json::array();
  for (int h = 0; h < g.num_entities(); ++h) {
    for (int r = 0; r < g.num_relations(); ++r) {
      facts.push_back({h, r, g.tail(h, r)});
    }
  }
  return {{"num_entities", g.num_entities()}, {"num_relations", g.num_relations()}, {"facts", facts}};
}

inline KnowledgeGraph graph_from_json(const nlohmann::json& j) {
  const int ne = j.at("num_entities").get<int>();
  const int nr = j.at("num_relations").get<int>();
  if (ne < 1 || nr < 1) throw std::invalid_argument("graph JSON: sizes must be positive");
  std::vector<EntityId> tails(static_cast<std::size_t>(ne) * nr, -1);
  for (const auto& f : j.at("facts")) {
    const int h = f.at(0).get<int>();
    const int r = f.at(1).get<int>();
    const int t = f.at(2).get<int>();
    if (h < 0 || h >= ne || r < 0 || r >= nr) throw std::invalid_argument("graph JSON: fact id out of range");
    auto& slot = tails[static_cast<std::size_t>(h) * nr + r];
    if (slot != -1 && slot != t) throw std::invalid_argument("graph JSON: (head, relation) maps to two tails");
    slot = t;
  }
  return KnowledgeGraph(ne, nr, std::move(tails));
}

inline nlohmann::json to_json(const Task& t) {
  return {{"start", t.start}, {"path", t.path}, {"gold", t.gold}};
}

inline Task task_from_json(const nlohmann::json& j) {
  Task t;
  t.start = j.at("start").get<int>();
  t.path = j.at("path").get<std::vector<int>>();
  t.gold = j.at("gold").get<int>();
  return t;
}

inline nlohmann::json tasks_to_json(const std::vector<Task>& tasks) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& t : tasks) arr.push_back(to_json(t));
  return arr;
}

inline std::vector<Task> tasks_from_json(const nlohmann::json& j) {
  std::vector<Task> tasks;
  for (const auto& t : j) tasks.push_back(task_from_json(t));
  return tasks;
}

}  // namespace mrsearch
