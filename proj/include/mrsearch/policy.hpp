#pragma once

// Linear-softmax policy over {QuerySlot(1..k), AnswerNow}, the feature
// encoding of the cross-episode memory, and exact score functions.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mrsearch/environment.hpp"
#include "mrsearch/random.hpp"
#include "mrsearch/verifier.hpp"

namespace mrsearch {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// A fact as seen by the agent: no ground-truth correctness flag.
struct Triple {
  EntityId head = 0;
  RelationId relation = 0;
  EntityId tail = 0;
  friend bool operator==(const Triple&, const Triple&) = default;
};

inline Triple as_triple(const Observation& o) { return {o.head, o.relation, o.tail}; }

/// Everything the agent carries between turns and episodes: prior answers
/// and every fact it has been shown.
struct Memory {
  std::vector<Answer> answers;
  std::vector<Triple> observations;
  friend bool operator==(const Memory&, const Memory&) = default;
};

/// Majority-vote statistics for one hop of the task chain.
struct SlotStats {
  bool queryable = false;  // the head entity for this hop is known
  int count = 0;           // observations of (head, relation)
  int distinct = 0;        // distinct tails among them
  int margin = 0;          // top count minus runner-up count
  bool resolved = false;   // a unique majority tail exists
  std::optional<EntityId> candidate;
  friend bool operator==(const SlotStats&, const SlotStats&) = default;
};

/// Walks the task chain through the memory: slot 0 starts at the task's
/// start entity, and each later slot's head is the previous slot's majority
/// tail. Slots after an unresolved one are not queryable.
inline std::vector<SlotStats> slot_statistics(const Memory& memory, const Task& task) {
  std::vector<SlotStats> stats(task.path.size());
  std::optional<EntityId> head = task.start;
  for (std::size_t j = 0; j < task.path.size(); ++j) {
    auto& s = stats[j];
    if (!head) break;
    s.queryable = true;
    std::map<EntityId, int> votes;
    for (const auto& o : memory.observations) {
      if (o.head == *head && o.relation == task.path[j]) ++votes[o.tail];
    }
    int best = 0, second = 0;
    EntityId best_tail = -1;
    for (const auto& [tail, n] : votes) {
      s.count += n;
      if (n > best) {
        second = best;
        best = n;
        best_tail = tail;
      } else if (n > second) {
        second = n;
      }
    }
    s.distinct = static_cast<int>(votes.size());
    s.margin = best - second;
    s.resolved = s.count > 0 && s.margin > 0;
    if (s.resolved) s.candidate = best_tail;
    head = s.candidate;
  }
  return stats;
}

/// The answer the agent would give now: the final slot's majority tail, or
/// missing when the chain is unresolved (including ties).
inline Answer chain_answer(const std::vector<SlotStats>& stats) {
  if (stats.empty() || !stats.back().candidate) return Answer::missing();
  return Answer::entity(*stats.back().candidate);
}

inline Answer chain_answer(const Memory& memory, const Task& task) {
  return chain_answer(slot_statistics(memory, task));
}

// Feature layout: per slot [queryable, count, distinct, margin, resolved],
// then [episode index, remaining tool budget, bias].
inline constexpr int kCountCap = 8;
inline constexpr int kSlotFeatures = 5;
inline constexpr int kGlobalFeatures = 3;

constexpr int feature_dim(int hops) { return kSlotFeatures * hops + kGlobalFeatures; }
constexpr int num_actions(int hops) { return hops + 1; }
constexpr int episode_feature(int hops) { return kSlotFeatures * hops; }
constexpr int budget_feature(int hops) { return kSlotFeatures * hops + 1; }
constexpr int bias_feature(int hops) { return kSlotFeatures * hops + 2; }

/// What the policy conditions on at a decision point.
struct AgentState {
  std::vector<SlotStats> slots;
  int episode_index = 0;
  int remaining_budget = 0;
};

inline AgentState make_state(const Memory& memory, const Task& task, int episode_index, int remaining_budget) {
  return {slot_statistics(memory, task), episode_index, remaining_budget};
}

inline Vector encode_features(const AgentState& state) {
  const int k = static_cast<int>(state.slots.size());
  Vector f = Vector::Zero(feature_dim(k));
  auto cap = [](int v) { return static_cast<double>(std::min(v, kCountCap)); };
  for (int j = 0; j < k; ++j) {
    const auto& s = state.slots[static_cast<std::size_t>(j)];
    const int base = kSlotFeatures * j;
    f[base + 0] = s.queryable ? 1.0 : 0.0;
    f[base + 1] = cap(s.count);
    f[base + 2] = cap(s.distinct);
    f[base + 3] = cap(s.margin);
    f[base + 4] = s.resolved ? 1.0 : 0.0;
  }
  f[episode_feature(k)] = cap(state.episode_index);
  f[budget_feature(k)] = cap(state.remaining_budget);
  f[bias_feature(k)] = 1.0;
  return f;
}

inline Vector encode_features(const Memory& memory, const Task& task, int episode_index, int remaining_budget) {
  return encode_features(make_state(memory, task, episode_index, remaining_budget));
}

/// Action indices: 0..k-1 query slot j+1, k answers.
constexpr int query_action(int slot_zero_based) { return slot_zero_based; }
constexpr int answer_action(int hops) { return hops; }
constexpr bool is_answer(int action, int hops) { return action == hops; }

inline std::string action_name(int action, int hops) {
  if (is_answer(action, hops)) return "answer";
  return "query:" + std::to_string(action + 1);
}

inline int action_from_name(const std::string& name, int hops) {
  if (name == "answer") return answer_action(hops);
  if (name.rfind("query:", 0) == 0) {
    const int slot = std::stoi(name.substr(6));
    if (slot < 1 || slot > hops) throw std::invalid_argument("action slot out of range: " + name);
    return query_action(slot - 1);
  }
  throw std::invalid_argument("unknown action: " + name);
}

/// A sampled action with its log-probability under the sampling policy.
struct ActionToken {
  int index = 0;
  double logprob = 0.0;
};

/// Anything rollouts can sample from.
template <class P>
concept Policy = requires(const P& p, const Vector& features) {
  { p.num_actions() } -> std::convertible_to<int>;
  { p.logits(features) } -> std::convertible_to<Vector>;
};

/// Weights of the linear-softmax policy, one row per action.
struct PolicyParams {
  int hops = 1;
  Matrix weights;

  PolicyParams() = default;
  explicit PolicyParams(int k) : hops(k), weights(Matrix::Zero(mrsearch::num_actions(k), mrsearch::feature_dim(k))) {}
  PolicyParams(int k, Matrix w) : hops(k), weights(std::move(w)) {
    if (weights.rows() != mrsearch::num_actions(k) || weights.cols() != mrsearch::feature_dim(k)) {
      throw std::invalid_argument("PolicyParams: weight shape does not match hop count");
    }
  }

  int num_actions() const { return static_cast<int>(weights.rows()); }
  int feature_dim() const { return static_cast<int>(weights.cols()); }

  Vector logits(const Vector& features) const {
    if (features.size() != weights.cols()) {
      throw std::invalid_argument("action_logits: feature dimension " + std::to_string(features.size()) +
                                  " does not match weights (" + std::to_string(weights.cols()) + ")");
    }
    return weights * features;
  }

  bool finite() const { return weights.allFinite(); }
};

inline Vector action_logits(const PolicyParams& params, const Vector& features) { return params.logits(features); }

/// Max-subtracted log-softmax.
inline Vector log_softmax(const Vector& logits) {
  const double mx = logits.maxCoeff();
  double sum = 0.0;
  for (Eigen::Index a = 0; a < logits.size(); ++a) sum += std::exp(logits[a] - mx);
  return (logits.array() - mx - std::log(sum)).matrix();
}

inline Vector softmax(const Vector& logits) { return log_softmax(logits).array().exp().matrix(); }

inline ActionToken sample_action(const Vector& logits, Rng& rng) {
  if (logits.size() == 0 || !logits.allFinite()) {
    throw std::invalid_argument("sample_action: logits must be finite and non-empty");
  }
  const Vector lp = log_softmax(logits);
  const double u = uniform01(rng);
  double acc = 0.0;
  int chosen = static_cast<int>(lp.size()) - 1;
  for (Eigen::Index a = 0; a < lp.size(); ++a) {
    acc += std::exp(lp[a]);
    if (u < acc) {
      chosen = static_cast<int>(a);
      break;
    }
  }
  return {chosen, lp[chosen]};
}

/// Argmax, lowest index wins ties.
inline ActionToken greedy_action(const Vector& logits) {
  if (logits.size() == 0 || !logits.allFinite()) {
    throw std::invalid_argument("greedy_action: logits must be finite and non-empty");
  }
  Eigen::Index best = 0;
  for (Eigen::Index a = 1; a < logits.size(); ++a) {
    if (logits[a] > logits[best]) best = a;
  }
  return {static_cast<int>(best), log_softmax(logits)[best]};
}

inline double logprob_of(const PolicyParams& params, const Vector& features, int action) {
  if (action < 0 || action >= params.num_actions()) throw std::out_of_range("logprob_of: action out of range");
  return log_softmax(params.logits(features))[action];
}

/// d log pi(action | features) / d weights: row a gets (1[a == action] - pi(a)) * features.
inline Matrix grad_logprob(const PolicyParams& params, const Vector& features, int action) {
  if (action < 0 || action >= params.num_actions()) throw std::out_of_range("grad_logprob: action out of range");
  Vector coef = -softmax(params.logits(features));
  coef[action] += 1.0;
  return coef * features.transpose();
}

/// Score-function signature shared by the optimizer and gradient checks.
using ScoreFunction = Matrix (*)(const PolicyParams&, const Vector&, int);

// Checkpoint JSON: {"k", "feature_dim", "weights": row-major}.

inline nlohmann::json to_json(const PolicyParams& p) {
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(p.weights.size()));
  for (Eigen::Index r = 0; r < p.weights.rows(); ++r)
    for (Eigen::Index c = 0; c < p.weights.cols(); ++c) flat.push_back(p.weights(r, c));
  return {{"k", p.hops}, {"feature_dim", p.feature_dim()}, {"weights", flat}};
}

inline PolicyParams params_from_json(const nlohmann::json& j) {
  const int k = j.at("k").get<int>();
  const int d = j.at("feature_dim").get<int>();
  if (k < 1 || k > kMaxHops) throw std::invalid_argument("checkpoint: k out of range");
  if (d != feature_dim(k)) {
    throw std::invalid_argument("checkpoint: feature_dim " + std::to_string(d) + " does not match k=" +
                                std::to_string(k) + " (expected " + std::to_string(feature_dim(k)) + ")");
  }
  const auto flat = j.at("weights").get<std::vector<double>>();
  const int rows = num_actions(k);
  if (flat.size() != static_cast<std::size_t>(rows) * d) throw std::invalid_argument("checkpoint: weight count mismatch");
  Matrix w(rows, d);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < d; ++c) w(r, c) = flat[static_cast<std::size_t>(r) * d + c];
  return PolicyParams(k, std::move(w));
}

}  // namespace mrsearch
