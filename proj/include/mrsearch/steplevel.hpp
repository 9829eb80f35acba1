#pragma once

// Step-level credit assignment: every tool call becomes a micro-episode
// scored by the intermediate answer standing after it.
//
// Steps of a meta-episode are flattened in order. An episode contributes one
// step per tool call; an episode with no tool calls contributes a single
// step for its answer turn. The final answer is always scored as the last
// step of its episode (for synthetic rollouts it coincides with the
// intermediate answer after the last tool call).

#include <algorithm>
#include <stdexcept>
#include <vector>

#include "mrsearch/advantage.hpp"
#include "mrsearch/policy.hpp"
#include "mrsearch/rollout.hpp"
#include "mrsearch/verifier.hpp"

namespace mrsearch {

/// Majority-vote chain end for the memory so far; missing on ties or gaps.
inline Answer intermediate_answer(const Memory& memory, const Task& task) { return chain_answer(memory, task); }

struct StepRef {
  int episode = 0;
  int turn = 0;  // the turn that closes this step
  friend bool operator==(const StepRef&, const StepRef&) = default;
};

/// Step index of every turn in episode `ep`, given the episode's first step.
/// The answer turn shares the step of the last tool call.
inline std::vector<int> turn_steps(const Episode& ep, int first_step) {
  std::vector<int> steps(ep.turns.size());
  const int calls = ep.tool_calls();
  for (int t = 0; t < static_cast<int>(ep.turns.size()); ++t) {
    steps[static_cast<std::size_t>(t)] = first_step + std::min(t, std::max(calls - 1, 0));
  }
  return steps;
}

inline int num_steps(const Episode& ep) { return std::max(ep.tool_calls(), 1); }

struct StepRewardTable {
  std::vector<std::vector<double>> rewards;      // [member][step]
  std::vector<std::vector<StepRef>> alignment;   // [member][step]

  int group_size() const { return static_cast<int>(rewards.size()); }
};

inline StepRewardTable step_rewards(const std::vector<MetaEpisode>& group, const Answer& gold) {
  StepRewardTable table;
  for (const auto& meta : group) {
    std::vector<double> r;
    std::vector<StepRef> align;
    for (int n = 0; n < meta.num_episodes(); ++n) {
      const auto& ep = meta.episodes[static_cast<std::size_t>(n)];
      const int calls = ep.tool_calls();
      if (calls == 0) {
        r.push_back(exact_match(ep.answer, gold));
        align.push_back({n, 0});
        continue;
      }
      Memory memory = context_before(meta.episodes, meta.task, meta.mode, n);
      for (int t = 0; t < calls; ++t) {
        const auto& turn = ep.turns[static_cast<std::size_t>(t)];
        if (turn.observation) memory.observations.push_back(as_triple(*turn.observation));
        const bool last = t == calls - 1;
        r.push_back(exact_match(last ? ep.answer : intermediate_answer(memory, meta.task), gold));
        align.push_back({n, t});
      }
    }
    table.rewards.push_back(std::move(r));
    table.alignment.push_back(std::move(align));
  }
  return table;
}

inline StepRewardTable step_rewards(const std::vector<MetaEpisode>& group) {
  if (group.empty()) throw std::invalid_argument("step_rewards: empty group");
  return step_rewards(group, Answer::entity(group.front().task.gold));
}

struct StepAdvantages {
  std::vector<std::vector<double>> rloo;        // [member][step]
  std::vector<std::vector<double>> discounted;  // [member][step]
};

/// Leave-one-out at each absolute step index over the members that reach
/// it; steps reached by fewer than two members get zero. Discounting then
/// runs over the member's flattened step sequence, with each step weighted
/// by its episode's mask entry.
inline StepAdvantages step_rloo(const StepRewardTable& table, double gamma, const EpisodeMask& mask) {
  const int g = table.group_size();
  if (g < 2) throw std::invalid_argument("step_rloo: need G >= 2 members");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("step_rloo: gamma must be in [0, 1]");

  std::size_t longest = 0;
  for (const auto& r : table.rewards) longest = std::max(longest, r.size());

  StepAdvantages adv;
  adv.rloo.resize(static_cast<std::size_t>(g));
  adv.discounted.resize(static_cast<std::size_t>(g));
  for (int i = 0; i < g; ++i) adv.rloo[static_cast<std::size_t>(i)].assign(table.rewards[static_cast<std::size_t>(i)].size(), 0.0);

  for (std::size_t s = 0; s < longest; ++s) {
    int present = 0;
    for (const auto& r : table.rewards) present += s < r.size() ? 1 : 0;
    if (present < 2) continue;
    for (int i = 0; i < g; ++i) {
      const auto& ri = table.rewards[static_cast<std::size_t>(i)];
      if (s >= ri.size()) continue;
      double others = 0.0;
      for (int j = 0; j < g; ++j) {
        const auto& rj = table.rewards[static_cast<std::size_t>(j)];
        if (j != i && s < rj.size()) others += rj[s];
      }
      adv.rloo[static_cast<std::size_t>(i)][s] = ri[s] - others / static_cast<double>(present - 1);
    }
  }

  for (int i = 0; i < g; ++i) {
    const auto& rl = adv.rloo[static_cast<std::size_t>(i)];
    const auto& align = table.alignment[static_cast<std::size_t>(i)];
    auto& out = adv.discounted[static_cast<std::size_t>(i)];
    out.assign(rl.size(), 0.0);
    for (std::size_t s = 0; s < rl.size(); ++s) {
      double acc = 0.0;
      double w = 1.0;
      for (std::size_t sp = s; sp < rl.size(); ++sp) {
        const auto ep = static_cast<std::size_t>(align[sp].episode);
        if (ep >= mask.size()) throw std::invalid_argument("step_rloo: mask shorter than the number of episodes");
        if (mask[ep] != 0) acc += w * rl[sp];
        w *= gamma;
      }
      out[s] = acc;
    }
  }
  return adv;
}

}  // namespace mrsearch
