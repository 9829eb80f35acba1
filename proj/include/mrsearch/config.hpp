#pragma once

// Experiment configuration: JSON file plus key=value overrides.

#include <cstdint>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mrsearch/advantage.hpp"
#include "mrsearch/environment.hpp"
#include "mrsearch/rollout.hpp"

namespace mrsearch {

enum class AdvantageMode { Turn, Step };

/// How the clipped surrogate averages over tokens.
///   Hierarchical: token mean per episode, episode mean per meta-episode,
///                 member mean across the group.
///   FlatToken:    plain mean over all policy tokens of the group.
enum class Normalization { Hierarchical, FlatToken };

struct TrainConfig {
  // environment
  int entities = 50;
  int relations = 4;
  std::uint64_t graph_seed = 1;
  int hops = 2;
  double noise = 0.35;
  // algorithm
  int group_size = 5;
  int episodes = 3;
  int tool_budget = 2;
  double gamma = 1.0;
  double clip_eps = 0.2;
  double learning_rate = 1e-2;
  int iterations = 300;
  int tasks_per_iteration = 8;
  ContextMode context_mode = ContextMode::Full;
  AdvantageMode advantage_mode = AdvantageMode::Turn;
  Normalization normalization = Normalization::Hierarchical;
  EpisodeMask mask;  // empty means all ones
  // evaluation / bookkeeping
  int eval_episodes = 3;
  int eval_tasks = 500;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  int checkpoint_interval = 50;
  bool parallel = false;

  EpisodeMask effective_mask() const { return mask.empty() ? full_mask(episodes) : mask; }
  SearchEnvironment environment() const;
};

/// Raised for invalid configurations; `what()` lists every offending field.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::vector<std::string>& problems)
      : std::runtime_error(join(problems)), problems_(problems) {}
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& p) {
    std::string s = "invalid config:";
    for (const auto& x : p) s += "\n  " + x;
    return s;
  }
  std::vector<std::string> problems_;
};

inline std::string to_string(AdvantageMode m) { return m == AdvantageMode::Turn ? "turn" : "step"; }
inline std::string to_string(Normalization n) { return n == Normalization::Hierarchical ? "hierarchical" : "flat"; }

inline std::vector<std::string> validate(const TrainConfig& c) {
  std::vector<std::string> p;
  if (c.entities < 4) p.push_back("entities: must be >= 4");
  if (c.relations < 1) p.push_back("relations: must be >= 1");
  if (c.hops < 1 || c.hops > kMaxHops) p.push_back("k: must be in [1, " + std::to_string(kMaxHops) + "]");
  if (!(c.noise >= 0.0 && c.noise < 1.0)) p.push_back("rho: must be in [0, 1)");
  if (c.group_size < 2) p.push_back("G: must be >= 2");
  if (c.episodes < 1) p.push_back("N: must be >= 1");
  if (c.tool_budget < 1) p.push_back("T: must be >= 1");
  if (!(c.gamma >= 0.0 && c.gamma <= 1.0)) p.push_back("gamma: must be in [0, 1]");
  if (!(c.clip_eps > 0.0)) p.push_back("epsilon: must be > 0");
  if (!(c.learning_rate > 0.0)) p.push_back("lr: must be > 0");
  if (c.iterations < 1) p.push_back("iterations: must be >= 1");
  if (c.tasks_per_iteration < 1) p.push_back("tasks_per_iteration: must be >= 1");
  if (!c.mask.empty()) {
    if (static_cast<int>(c.mask.size()) != c.episodes) p.push_back("mask: length must equal N");
    for (int m : c.mask)
      if (m != 0 && m != 1) {
        p.push_back("mask: entries must be 0 or 1");
        break;
      }
  }
  if (c.eval_episodes < c.episodes) p.push_back("N_eval: must be >= N");
  if (c.eval_tasks < 1) p.push_back("eval_tasks: must be >= 1");
  if (c.seeds.empty()) p.push_back("seeds: must list at least one seed");
  if (c.checkpoint_interval < 0) p.push_back("checkpoint_interval: must be >= 0");
  return p;
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"entities", c.entities},
          {"relations", c.relations},
          {"graph_seed", c.graph_seed},
          {"k", c.hops},
          {"rho", c.noise},
          {"G", c.group_size},
          {"N", c.episodes},
          {"T", c.tool_budget},
          {"gamma", c.gamma},
          {"epsilon", c.clip_eps},
          {"lr", c.learning_rate},
          {"iterations", c.iterations},
          {"tasks_per_iteration", c.tasks_per_iteration},
          {"context_mode", to_string(c.context_mode)},
          {"advantage_mode", to_string(c.advantage_mode)},
          {"normalization", to_string(c.normalization)},
          {"mask", c.effective_mask()},
          {"N_eval", c.eval_episodes},
          {"eval_tasks", c.eval_tasks},
          {"seeds", c.seeds},
          {"checkpoint_interval", c.checkpoint_interval},
          {"parallel", c.parallel}};
}

/// Keys a config file must spell out.
inline const std::vector<std::string>& required_config_keys() {
  static const std::vector<std::string> keys{"G", "N", "T"};
  return keys;
}

/// Parses and validates. Missing keys fall back to defaults except the
/// required ones; unknown keys are rejected.
inline TrainConfig config_from_json(const nlohmann::json& j) {
  std::vector<std::string> problems;
  if (!j.is_object()) throw ConfigError({"<root>: config must be a JSON object"});
  for (const auto& key : required_config_keys())
    if (!j.contains(key)) problems.push_back(key + ": required field is missing");

  static const std::set<std::string> known{
      "entities", "relations", "graph_seed", "k",    "rho",    "G",          "N",                   "T",
      "gamma",    "epsilon",   "lr",         "iterations", "tasks_per_iteration", "context_mode",
      "advantage_mode", "normalization", "mask", "N_eval", "eval_tasks", "seeds", "checkpoint_interval", "parallel"};
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) problems.push_back(key + ": unknown field");

  TrainConfig c;
  auto read = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const nlohmann::json::exception&) {
      problems.push_back(std::string(key) + ": wrong type");
    }
  };
  read("entities", c.entities);
  read("relations", c.relations);
  read("graph_seed", c.graph_seed);
  read("k", c.hops);
  read("rho", c.noise);
  read("G", c.group_size);
  read("N", c.episodes);
  read("T", c.tool_budget);
  read("gamma", c.gamma);
  read("epsilon", c.clip_eps);
  read("lr", c.learning_rate);
  read("iterations", c.iterations);
  read("tasks_per_iteration", c.tasks_per_iteration);
  read("mask", c.mask);
  read("eval_tasks", c.eval_tasks);
  read("seeds", c.seeds);
  read("checkpoint_interval", c.checkpoint_interval);
  read("parallel", c.parallel);
  c.eval_episodes = c.episodes;
  read("N_eval", c.eval_episodes);

  auto read_enum = [&](const char* key, auto&& parse) {
    if (!j.contains(key)) return;
    try {
      parse(j.at(key).get<std::string>());
    } catch (const std::exception&) {
      problems.push_back(std::string(key) + ": unrecognized value");
    }
  };
  read_enum("context_mode", [&](const std::string& s) { c.context_mode = context_mode_from_string(s); });
  read_enum("advantage_mode", [&](const std::string& s) {
    if (s == "turn") c.advantage_mode = AdvantageMode::Turn;
    else if (s == "step") c.advantage_mode = AdvantageMode::Step;
    else throw std::invalid_argument(s);
  });
  read_enum("normalization", [&](const std::string& s) {
    if (s == "hierarchical") c.normalization = Normalization::Hierarchical;
    else if (s == "flat") c.normalization = Normalization::FlatToken;
    else throw std::invalid_argument(s);
  });

  if (problems.empty()) {
    auto more = validate(c);
    problems.insert(problems.end(), more.begin(), more.end());
  }
  if (!problems.empty()) throw ConfigError(problems);
  return c;
}

/// Applies "key=value" overrides; values parse as JSON when possible and
/// fall back to plain strings (so context_mode=short works unquoted).
inline void apply_overrides(nlohmann::json& j, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError({o + ": override must look like key=value"});
    const std::string key = o.substr(0, eq);
    const std::string value = o.substr(eq + 1);
    auto parsed = nlohmann::json::parse(value, nullptr, false);
    j[key] = parsed.is_discarded() ? nlohmann::json(value) : parsed;
  }
}

/// FNV-1a over the canonical JSON form; echoed into reports.
inline std::string config_hash(const TrainConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_json(c).dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << h;
  std::string s = os.str();
  return std::string(16 - s.size(), '0') + s;
}

inline SearchEnvironment TrainConfig::environment() const {
  return {build_graph(entities, relations, graph_seed), noise};
}

}  // namespace mrsearch
