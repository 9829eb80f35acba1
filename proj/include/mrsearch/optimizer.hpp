#pragma once

// Clipped surrogate objective with per-episode advantage broadcasting, its
// exact gradient, an adaptive-moment ascent step, and one training iteration.

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mrsearch/advantage.hpp"
#include "mrsearch/config.hpp"
#include "mrsearch/policy.hpp"
#include "mrsearch/rollout.hpp"
#include "mrsearch/steplevel.hpp"

namespace mrsearch {

/// One policy token. Observations never become tokens.
struct SurrogateToken {
  Vector features;
  int action = 0;
  double old_logprob = 0.0;
  bool forced = false;  // probability 1 under both policies: ratio 1, no gradient
  int member = 0;
  int unit = 0;  // episode index (turn mode) or flattened step index (step mode)
};

struct SurrogateBatch {
  std::vector<SurrogateToken> tokens;
  std::vector<std::vector<double>> advantages;  // [member][unit]
  double clip_eps = 0.2;
  Normalization normalization = Normalization::Hierarchical;
};

inline std::vector<std::vector<double>> rows_of(const Matrix& m) {
  std::vector<std::vector<double>> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index n = 0; n < m.cols(); ++n) out[static_cast<std::size_t>(i)].push_back(m(i, n));
  return out;
}

/// Each episode's advantage is broadcast to every action token in it.
inline SurrogateBatch make_turn_batch(const std::vector<MetaEpisode>& group, const Matrix& advantages, double clip_eps,
                                      Normalization norm = Normalization::Hierarchical) {
  SurrogateBatch b;
  b.advantages = rows_of(advantages);
  b.clip_eps = clip_eps;
  b.normalization = norm;
  for (std::size_t i = 0; i < group.size(); ++i) {
    for (int n = 0; n < group[i].num_episodes(); ++n) {
      for (const auto& t : group[i].episodes[static_cast<std::size_t>(n)].turns) {
        b.tokens.push_back({t.features, t.action, t.logprob, t.forced, static_cast<int>(i), n});
      }
    }
  }
  return b;
}

/// Each step's advantage is broadcast to the action tokens of that step.
inline SurrogateBatch make_step_batch(const std::vector<MetaEpisode>& group, const StepAdvantages& advantages,
                                      double clip_eps, Normalization norm = Normalization::Hierarchical) {
  SurrogateBatch b;
  b.advantages = advantages.discounted;
  b.clip_eps = clip_eps;
  b.normalization = norm;
  for (std::size_t i = 0; i < group.size(); ++i) {
    int first = 0;
    for (const auto& ep : group[i].episodes) {
      const auto steps = turn_steps(ep, first);
      for (std::size_t t = 0; t < ep.turns.size(); ++t) {
        const auto& turn = ep.turns[t];
        b.tokens.push_back({turn.features, turn.action, turn.logprob, turn.forced, static_cast<int>(i), steps[t]});
      }
      first += num_steps(ep);
    }
  }
  return b;
}

namespace detail {

/// Normalizing weight of every token under the batch's averaging scheme.
inline std::vector<double> token_weights(const SurrogateBatch& b) {
  if (b.tokens.empty()) throw std::invalid_argument("surrogate: empty batch");
  if (!(b.clip_eps > 0.0)) throw std::invalid_argument("surrogate: clip epsilon must be > 0");
  const auto members = b.advantages.size();
  std::vector<std::vector<int>> counts(members);
  for (std::size_t i = 0; i < members; ++i) counts[i].assign(b.advantages[i].size(), 0);
  for (const auto& t : b.tokens) {
    if (t.member < 0 || static_cast<std::size_t>(t.member) >= members || t.unit < 0 ||
        static_cast<std::size_t>(t.unit) >= counts[static_cast<std::size_t>(t.member)].size()) {
      throw std::invalid_argument("surrogate: token refers to a missing advantage entry");
    }
    if (!std::isfinite(t.old_logprob)) throw std::invalid_argument("surrogate: non-finite old logprob");
    ++counts[static_cast<std::size_t>(t.member)][static_cast<std::size_t>(t.unit)];
  }
  for (std::size_t i = 0; i < members; ++i)
    for (std::size_t u = 0; u < counts[i].size(); ++u)
      if (counts[i][u] == 0) {
        throw std::invalid_argument("surrogate: member " + std::to_string(i) + " unit " + std::to_string(u) +
                                    " has no policy tokens");
      }

  std::vector<double> w;
  w.reserve(b.tokens.size());
  for (const auto& t : b.tokens) {
    if (b.normalization == Normalization::FlatToken) {
      w.push_back(1.0 / static_cast<double>(b.tokens.size()));
    } else {
      const auto m = static_cast<std::size_t>(t.member);
      w.push_back(1.0 / (static_cast<double>(members) * static_cast<double>(counts[m].size()) *
                         static_cast<double>(counts[m][static_cast<std::size_t>(t.unit)])));
    }
  }
  return w;
}

inline double clip(double x, double lo, double hi) { return x < lo ? lo : (x > hi ? hi : x); }

}  // namespace detail

inline double clipped_surrogate(const PolicyParams& params, const SurrogateBatch& batch) {
  const auto w = detail::token_weights(batch);
  const double lo = 1.0 - batch.clip_eps, hi = 1.0 + batch.clip_eps;
  double j = 0.0;
  for (std::size_t t = 0; t < batch.tokens.size(); ++t) {
    const auto& tok = batch.tokens[t];
    const double a = batch.advantages[static_cast<std::size_t>(tok.member)][static_cast<std::size_t>(tok.unit)];
    const double ratio = tok.forced ? 1.0 : std::exp(logprob_of(params, tok.features, tok.action) - tok.old_logprob);
    j += w[t] * std::min(ratio * a, detail::clip(ratio, lo, hi) * a);
  }
  return j;
}

/// Exact gradient of clipped_surrogate. A token contributes only while the
/// unclipped branch attains the min; the flat clipped branch contributes 0.
template <class Score = ScoreFunction>
Matrix surrogate_gradient(const PolicyParams& params, const SurrogateBatch& batch, Score score = &grad_logprob) {
  const auto w = detail::token_weights(batch);
  const double lo = 1.0 - batch.clip_eps, hi = 1.0 + batch.clip_eps;
  Matrix g = Matrix::Zero(params.weights.rows(), params.weights.cols());
  for (std::size_t t = 0; t < batch.tokens.size(); ++t) {
    const auto& tok = batch.tokens[t];
    if (tok.forced) continue;
    const double a = batch.advantages[static_cast<std::size_t>(tok.member)][static_cast<std::size_t>(tok.unit)];
    if (a == 0.0) continue;
    const double ratio = std::exp(logprob_of(params, tok.features, tok.action) - tok.old_logprob);
    if (ratio * a > detail::clip(ratio, lo, hi) * a) continue;
    g += (w[t] * a * ratio) * score(params, tok.features, tok.action);
  }
  return g;
}

/// Adaptive-moment state for gradient ascent.
struct OptimState {
  Matrix first_moment;
  Matrix second_moment;
  long step = 0;
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  OptimState() = default;
  OptimState(const PolicyParams& p, double lr)
      : first_moment(Matrix::Zero(p.weights.rows(), p.weights.cols())),
        second_moment(Matrix::Zero(p.weights.rows(), p.weights.cols())),
        learning_rate(lr) {}
};

inline PolicyParams update(const PolicyParams& params, OptimState& state, const Matrix& gradient) {
  if (gradient.rows() != params.weights.rows() || gradient.cols() != params.weights.cols()) {
    throw std::invalid_argument("update: gradient shape does not match parameters");
  }
  for (Eigen::Index r = 0; r < gradient.rows(); ++r)
    for (Eigen::Index c = 0; c < gradient.cols(); ++c)
      if (!std::isfinite(gradient(r, c))) {
        throw std::invalid_argument("update: non-finite gradient entry at (" + std::to_string(r) + ", " +
                                    std::to_string(c) + ") = " + std::to_string(gradient(r, c)));
      }
  if (state.first_moment.size() == 0) {
    state.first_moment = Matrix::Zero(gradient.rows(), gradient.cols());
    state.second_moment = Matrix::Zero(gradient.rows(), gradient.cols());
  }
  ++state.step;
  state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * gradient;
  state.second_moment = state.beta2 * state.second_moment + (1.0 - state.beta2) * gradient.cwiseProduct(gradient);
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  PolicyParams next = params;
  next.weights.array() += state.learning_rate * (state.first_moment.array() / c1) /
                          ((state.second_moment.array() / c2).sqrt() + state.epsilon);
  if (!next.finite()) throw std::runtime_error("update: parameters became non-finite");
  return next;
}

struct IterationMetrics {
  std::vector<double> mean_reward;  // per episode index
  double mean_tool_calls = 0.0;     // per episode
  double grad_norm = 0.0;
  double objective = 0.0;
};

/// Advantages for one group under the configured mode, packed as a batch.
inline SurrogateBatch make_batch(const std::vector<MetaEpisode>& group, const TrainConfig& cfg) {
  const EpisodeMask mask = cfg.effective_mask();
  if (cfg.advantage_mode == AdvantageMode::Step) {
    const auto adv = step_rloo(step_rewards(group), cfg.gamma, mask);
    return make_step_batch(group, adv, cfg.clip_eps, cfg.normalization);
  }
  const RewardTable table{turn_rewards(group), cfg.gamma, mask};
  return make_turn_batch(group, compute_advantages(table).discounted, cfg.clip_eps, cfg.normalization);
}

/// Samples a group per task under the frozen snapshot, accumulates the
/// surrogate gradient over tasks in index order, and applies one update.
inline IterationMetrics train_iteration(PolicyParams& params, OptimState& opt, const SearchEnvironment& env,
                                        const std::vector<Task>& tasks, const TrainConfig& cfg,
                                        std::uint64_t rollout_seed,
                                        std::vector<std::vector<MetaEpisode>>* groups_out = nullptr) {
  if (tasks.empty()) throw std::invalid_argument("train_iteration: empty task batch");
  const PolicyParams snapshot = params;
  IterationMetrics m;
  m.mean_reward.assign(static_cast<std::size_t>(cfg.episodes), 0.0);
  Matrix grad = Matrix::Zero(params.weights.rows(), params.weights.cols());
  double episodes_seen = 0.0, calls = 0.0;

  for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
    const auto group = rollout_group(snapshot, env, tasks[ti], cfg.group_size, cfg.episodes, cfg.tool_budget,
                                     cfg.context_mode, derive_seed(rollout_seed, {ti}), cfg.parallel);
    const Matrix rewards = turn_rewards(group);
    for (int n = 0; n < cfg.episodes; ++n) m.mean_reward[static_cast<std::size_t>(n)] += rewards.col(n).sum();
    for (const auto& meta : group)
      for (const auto& ep : meta.episodes) {
        calls += ep.tool_calls();
        episodes_seen += 1.0;
      }

    const SurrogateBatch batch = make_batch(group, cfg);
    grad += surrogate_gradient(params, batch);
    m.objective += clipped_surrogate(params, batch);
    if (groups_out) groups_out->push_back(group);
  }

  const double nt = static_cast<double>(tasks.size());
  for (auto& r : m.mean_reward) r /= nt * cfg.group_size;
  m.mean_tool_calls = calls / episodes_seen;
  grad /= nt;
  m.objective /= nt;
  m.grad_norm = grad.norm();
  params = update(params, opt, grad);
  return m;
}

}  // namespace mrsearch
