#pragma once

// Turn-level rewards, leave-one-out baselines and discounted cumulative
// advantages over a group of meta-episodes.
//
// All reductions run left to right in index order so results are
// reproducible bit for bit.

#include <stdexcept>
#include <string>
#include <vector>

#include "mrsearch/policy.hpp"
#include "mrsearch/rollout.hpp"
#include "mrsearch/verifier.hpp"

namespace mrsearch {

/// Binary per-episode mask: 1 = exploitation (reward counts), 0 = exploration.
using EpisodeMask = std::vector<int>;

inline EpisodeMask full_mask(int num_episodes) { return EpisodeMask(static_cast<std::size_t>(num_episodes), 1); }

/// G x N rewards together with the discount and mask used to propagate them.
struct RewardTable {
  Matrix values;
  double gamma = 1.0;
  EpisodeMask mask;

  int group_size() const { return static_cast<int>(values.rows()); }
  int num_episodes() const { return static_cast<int>(values.cols()); }
};

struct AdvantageTable {
  Matrix rloo;        // reward minus the mean of the other members at the same turn
  Matrix discounted;  // masked discounted sum of future rloo values
};

/// values(i, n) = EM of member i's episode-n answer against the gold answer.
inline Matrix turn_rewards(const std::vector<MetaEpisode>& group, const Answer& gold) {
  if (group.empty()) throw std::invalid_argument("turn_rewards: empty group");
  const int n_episodes = group.front().num_episodes();
  Matrix r(static_cast<Eigen::Index>(group.size()), n_episodes);
  for (std::size_t i = 0; i < group.size(); ++i) {
    if (group[i].num_episodes() != n_episodes) {
      throw std::invalid_argument("turn_rewards: ragged group (member " + std::to_string(i) + " has " +
                                  std::to_string(group[i].num_episodes()) + " episodes, expected " +
                                  std::to_string(n_episodes) + ")");
    }
    for (int n = 0; n < n_episodes; ++n) {
      r(static_cast<Eigen::Index>(i), n) = exact_match(group[i].episodes[static_cast<std::size_t>(n)].answer, gold);
    }
  }
  return r;
}

inline Matrix turn_rewards(const std::vector<MetaEpisode>& group) {
  if (group.empty()) throw std::invalid_argument("turn_rewards: empty group");
  return turn_rewards(group, Answer::entity(group.front().task.gold));
}

inline Matrix rloo_baseline(const Matrix& rewards) {
  const Eigen::Index g = rewards.rows();
  if (g < 2) throw std::invalid_argument("rloo_baseline: need G >= 2 members (got " + std::to_string(g) + ")");
  Matrix out(g, rewards.cols());
  for (Eigen::Index n = 0; n < rewards.cols(); ++n) {
    for (Eigen::Index i = 0; i < g; ++i) {
      double others = 0.0;
      for (Eigen::Index j = 0; j < g; ++j)
        if (j != i) others += rewards(j, n);
      out(i, n) = rewards(i, n) - others / static_cast<double>(g - 1);
    }
  }
  return out;
}

/// A(i, n) = sum_{n' = n}^{N-1} gamma^(n' - n) * rloo(i, n') * mask[n'].
inline Matrix discounted_advantage(const Matrix& rloo, double gamma, const EpisodeMask& mask) {
  if (static_cast<Eigen::Index>(mask.size()) != rloo.cols()) {
    throw std::invalid_argument("discounted_advantage: mask length " + std::to_string(mask.size()) +
                                " does not match N=" + std::to_string(rloo.cols()));
  }
  for (int m : mask)
    if (m != 0 && m != 1) throw std::invalid_argument("discounted_advantage: mask entries must be 0 or 1");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("discounted_advantage: gamma must be in [0, 1]");

  Matrix out(rloo.rows(), rloo.cols());
  for (Eigen::Index i = 0; i < rloo.rows(); ++i) {
    for (Eigen::Index n = 0; n < rloo.cols(); ++n) {
      double acc = 0.0;
      double w = 1.0;
      for (Eigen::Index np = n; np < rloo.cols(); ++np) {
        if (mask[static_cast<std::size_t>(np)] != 0) acc += w * rloo(i, np);
        w *= gamma;
      }
      out(i, n) = acc;
    }
  }
  return out;
}

inline AdvantageTable compute_advantages(const RewardTable& table) {
  AdvantageTable adv;
  adv.rloo = rloo_baseline(table.values);
  adv.discounted = discounted_advantage(adv.rloo, table.gamma, table.mask);
  return adv;
}

}  // namespace mrsearch
