#pragma once

// Sampling phase: tool-use episodes ending in an answer, structured
// reflection records, meta-episodes of N chained episodes, and groups of G
// meta-episodes per task.

#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "mrsearch/environment.hpp"
#include "mrsearch/policy.hpp"
#include "mrsearch/random.hpp"
#include "mrsearch/verifier.hpp"

namespace mrsearch {

enum class Decoding { Sample, Greedy };

/// How memory carries between the episodes of a meta-episode.
///   Full:  every earlier episode's record accumulates.
///   Short: only the immediately preceding episode's record.
///   Fresh: nothing carries over; every episode starts as episode 0.
enum class ContextMode { Full, Short, Fresh };

inline std::string to_string(ContextMode m) {
  switch (m) {
    case ContextMode::Full: return "full";
    case ContextMode::Short: return "short";
    case ContextMode::Fresh: return "fresh";
  }
  return "full";
}

inline ContextMode context_mode_from_string(const std::string& s) {
  if (s == "full") return ContextMode::Full;
  if (s == "short") return ContextMode::Short;
  if (s == "fresh") return ContextMode::Fresh;
  throw std::invalid_argument("unknown context mode '" + s + "' (expected full, short or fresh)");
}

/// Loss-mask segment kinds. Actions are policy tokens; observations are
/// tool output and never enter the loss.
enum class Segment { PolicyToken, ToolOutput };

struct Turn {
  std::optional<std::string> deliberation;  // always empty for the synthetic agent
  int action = 0;
  double logprob = 0.0;
  bool forced = false;  // answer forced by an exhausted tool budget; logprob 0
  std::optional<Observation> observation;
  Vector features;  // policy input at this decision; not serialized

  std::vector<Segment> segments() const {
    if (observation) return {Segment::PolicyToken, Segment::ToolOutput};
    return {Segment::PolicyToken};
  }
};

struct Episode {
  std::vector<Turn> turns;
  Answer answer;

  // Every turn but the final answer is a tool call.
  int tool_calls() const { return turns.empty() ? 0 : static_cast<int>(turns.size()) - 1; }

  std::vector<Observation> observations() const {
    std::vector<Observation> out;
    for (const auto& t : turns)
      if (t.observation) out.push_back(*t.observation);
    return out;
  }
};

/// Structured carry-over between episodes: prior answers plus evidence.
/// Holds no rewards and no distractor flags.
struct ReflectionRecord {
  Memory memory;
  std::vector<SlotStats> slots;
};

inline ReflectionRecord reflect(const Memory& context, const Episode& episode, const Task& task) {
  ReflectionRecord rec;
  rec.memory = context;
  rec.memory.answers.push_back(episode.answer);
  for (const auto& o : episode.observations()) rec.memory.observations.push_back(as_triple(o));
  rec.slots = slot_statistics(rec.memory, task);
  return rec;
}

struct MetaEpisode {
  Task task;
  std::vector<Episode> episodes;
  std::vector<ReflectionRecord> reflections;  // between consecutive episodes: N - 1 entries
  ContextMode mode = ContextMode::Full;

  int num_episodes() const { return static_cast<int>(episodes.size()); }
};

/// One episode: sample actions from the frozen policy until it answers or
/// the tool budget is spent, in which case the answer is forced.
template <Policy P>
Episode rollout_episode(const P& policy, const SearchEnvironment& env, const Memory& context, int episode_index,
                        const Task& task, int max_tool_calls, Rng& rng, Decoding decoding = Decoding::Sample) {
  if (max_tool_calls < 1) throw std::invalid_argument("rollout_episode: tool budget T must be >= 1");
  const int k = task.hops();
  Memory memory = context;
  Episode ep;
  int used = 0;
  for (;;) {
    AgentState state = make_state(memory, task, episode_index, max_tool_calls - used);
    Turn turn;
    turn.features = encode_features(state);
    if (used == max_tool_calls) {
      turn.action = answer_action(k);
      turn.forced = true;
      turn.logprob = 0.0;
    } else {
      const Vector logits = policy.logits(turn.features);
      const ActionToken tok = decoding == Decoding::Greedy ? greedy_action(logits) : sample_action(logits, rng);
      turn.action = tok.index;
      turn.logprob = tok.logprob;
    }

    if (is_answer(turn.action, k)) {
      ep.answer = chain_answer(state.slots);
      ep.turns.push_back(std::move(turn));
      break;
    }

    const int slot = turn.action;
    const auto& stats = state.slots[static_cast<std::size_t>(slot)];
    if (stats.queryable) {
      const EntityId head = slot == 0 ? task.start : *state.slots[static_cast<std::size_t>(slot) - 1].candidate;
      const Observation obs = env.query(head, task.path[static_cast<std::size_t>(slot)], rng);
      memory.observations.push_back(as_triple(obs));
      turn.observation = obs;
    }
    // Querying a slot whose head is unknown is a no-op that still spends budget.
    ++used;
    ep.turns.push_back(std::move(turn));
  }
  return ep;
}

/// Memory the policy starts episode n from, rebuilt from the earlier episodes.
inline Memory context_before(const std::vector<Episode>& episodes, const Task& task, ContextMode mode, int n) {
  Memory ctx;
  if (n == 0 || mode == ContextMode::Fresh) return ctx;
  if (mode == ContextMode::Short) return reflect(Memory{}, episodes[static_cast<std::size_t>(n) - 1], task).memory;
  for (int m = 0; m < n; ++m) ctx = reflect(ctx, episodes[static_cast<std::size_t>(m)], task).memory;
  return ctx;
}

template <Policy P>
MetaEpisode rollout_meta_episode(const P& policy, const SearchEnvironment& env, const Task& task, int num_episodes,
                                 int max_tool_calls, ContextMode mode, Rng& rng,
                                 Decoding decoding = Decoding::Sample) {
  if (num_episodes < 1) throw std::invalid_argument("rollout_meta_episode: N must be >= 1");
  MetaEpisode meta;
  meta.task = task;
  meta.mode = mode;
  Memory context;
  for (int n = 0; n < num_episodes; ++n) {
    const int index = mode == ContextMode::Fresh ? 0 : n;
    Episode ep = rollout_episode(policy, env, context, index, task, max_tool_calls, rng, decoding);
    if (n + 1 < num_episodes) {
      ReflectionRecord rec = reflect(mode == ContextMode::Full ? context : Memory{}, ep, task);
      context = mode == ContextMode::Fresh ? Memory{} : rec.memory;
      meta.reflections.push_back(std::move(rec));
    }
    meta.episodes.push_back(std::move(ep));
  }
  return meta;
}

/// G meta-episodes on one task. Member i draws from its own stream derived
/// from (seed, i), so the result does not depend on execution order.
template <Policy P>
std::vector<MetaEpisode> rollout_group(const P& policy, const SearchEnvironment& env, const Task& task,
                                       int group_size, int num_episodes, int max_tool_calls, ContextMode mode,
                                       std::uint64_t seed, bool parallel = false,
                                       Decoding decoding = Decoding::Sample) {
  if (group_size < 2) throw std::invalid_argument("rollout_group: G must be >= 2 for a leave-one-out baseline");
  std::vector<MetaEpisode> group(static_cast<std::size_t>(group_size));
  auto run_member = [&](int i) {
    Rng rng = make_rng(seed, {stream::kMember, static_cast<std::uint64_t>(i)});
    group[static_cast<std::size_t>(i)] =
        rollout_meta_episode(policy, env, task, num_episodes, max_tool_calls, mode, rng, decoding);
  };
  if (parallel) {
    std::vector<std::jthread> workers;
    workers.reserve(group.size());
    for (int i = 0; i < group_size; ++i) workers.emplace_back(run_member, i);
  } else {
    for (int i = 0; i < group_size; ++i) run_member(i);
  }
  return group;
}

// Trajectory log (one meta-episode per JSONL line).

inline nlohmann::json to_json(const Observation& o) {
  return {{"head", o.head}, {"relation", o.relation}, {"tail", o.tail}, {"distractor", o.is_distractor}};
}

inline nlohmann::json to_json(const MetaEpisode& meta, int group_id, int member) {
  const int k = meta.task.hops();
  nlohmann::json episodes = nlohmann::json::array();
  for (const auto& ep : meta.episodes) {
    nlohmann::json turns = nlohmann::json::array();
    for (const auto& t : ep.turns) {
      nlohmann::json mask = nlohmann::json::array();
      for (auto s : t.segments()) mask.push_back(s == Segment::PolicyToken ? 1 : 0);
      turns.push_back({{"action", action_name(t.action, k)},
                       {"logprob", t.logprob},
                       {"forced", t.forced},
                       {"obs", t.observation ? to_json(*t.observation) : nlohmann::json(nullptr)},
                       {"mask", mask}});
    }
    episodes.push_back({{"turns", turns}, {"answer", to_json(ep.answer)}});
  }
  return {{"task", to_json(meta.task)},
          {"group_id", group_id},
          {"member", member},
          {"episodes", episodes},
          {"mode", to_string(meta.mode)}};
}

/// A parsed log line. Ingested turns carry no feature vectors.
struct LoggedMetaEpisode {
  int group_id = 0;
  int member = 0;
  MetaEpisode meta;
  Answer gold;
};

inline LoggedMetaEpisode meta_from_json(const nlohmann::json& j) {
  LoggedMetaEpisode out;
  out.group_id = j.at("group_id").get<int>();
  out.member = j.at("member").get<int>();
  const auto& task = j.at("task");
  // Ingested logs may carry a text gold answer; synthetic ones carry an entity id.
  out.gold = answer_from_json(task.at("gold"));
  out.meta.task.start = task.value("start", 0);
  out.meta.task.path = task.value("path", std::vector<int>{});
  out.meta.task.gold = out.gold.is_entity() ? out.gold.entity_id() : -1;
  out.meta.mode = context_mode_from_string(j.value("mode", std::string("full")));
  const int k = out.meta.task.hops();
  for (const auto& je : j.at("episodes")) {
    Episode ep;
    for (const auto& jt : je.at("turns")) {
      Turn t;
      t.action = action_from_name(jt.at("action").get<std::string>(), k);
      t.logprob = jt.at("logprob").get<double>();
      t.forced = jt.value("forced", false);
      if (!jt.at("obs").is_null()) {
        const auto& o = jt.at("obs");
        t.observation = Observation{o.at("head").get<int>(), o.at("relation").get<int>(), o.at("tail").get<int>(),
                                    o.value("distractor", false)};
      }
      ep.turns.push_back(std::move(t));
    }
    if (ep.turns.empty() || !is_answer(ep.turns.back().action, k)) {
      throw std::invalid_argument("trajectory log: every episode must end with an answer turn");
    }
    ep.answer = answer_from_json(je.at("answer"));
    out.meta.episodes.push_back(std::move(ep));
  }
  if (out.meta.episodes.empty()) throw std::invalid_argument("trajectory log: meta-episode has no episodes");
  return out;
}

}  // namespace mrsearch
