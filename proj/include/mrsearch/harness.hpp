#pragma once

// Experiment orchestration: training runs, greedy evaluation with turn
// extrapolation, the meta-vs-independent comparison, gradient checks,
// exhaustive oracles on enumerable micro environments, and standalone
// advantage computation over trajectory logs.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mrsearch/advantage.hpp"
#include "mrsearch/config.hpp"
#include "mrsearch/environment.hpp"
#include "mrsearch/optimizer.hpp"
#include "mrsearch/policy.hpp"
#include "mrsearch/random.hpp"
#include "mrsearch/rollout.hpp"
#include "mrsearch/steplevel.hpp"
#include "mrsearch/verifier.hpp"

namespace mrsearch {

/// Shortest round-trip decimal form; keeps CSV output byte-stable.
inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) return "nan";
  return std::string(buf, end);
}

inline std::string csv_row(const std::vector<std::string>& cells) {
  std::string s;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) s.push_back(',');
    s += cells[i];
  }
  return s;
}

// ---------------------------------------------------------------------------
// Training

/// Salt separating the rollout streams of the two comparison arms.
enum class Arm : std::uint64_t { Meta = 0, Independent = 1 };

inline std::vector<Task> training_tasks(const TrainConfig& cfg, const KnowledgeGraph& graph, Rng& task_rng) {
  std::vector<Task> tasks;
  tasks.reserve(static_cast<std::size_t>(cfg.tasks_per_iteration));
  for (int t = 0; t < cfg.tasks_per_iteration; ++t) tasks.push_back(generate_task(graph, cfg.hops, task_rng));
  return tasks;
}

struct TrainResult {
  PolicyParams params;
  std::vector<IterationMetrics> history;
};

/// Called after every iteration with (iteration index, metrics, params).
using IterationCallback = std::function<void(int, const IterationMetrics&, const PolicyParams&)>;

/// Optionally appends every sampled group to `trajectory_log` as JSONL, with
/// group_id = iteration * tasks_per_iteration + task index.
inline TrainResult train(const TrainConfig& cfg, std::uint64_t seed, Arm arm = Arm::Meta,
                         const IterationCallback& on_iteration = {}, std::ostream* trajectory_log = nullptr) {
  if (auto p = validate(cfg); !p.empty()) throw ConfigError(p);
  const SearchEnvironment env = cfg.environment();
  TrainResult out{PolicyParams(cfg.hops), {}};
  OptimState opt(out.params, cfg.learning_rate);
  // Task streams depend only on the seed, so both arms see the same tasks.
  Rng task_rng = make_rng(seed, {stream::kTasks});
  for (int it = 0; it < cfg.iterations; ++it) {
    const auto tasks = training_tasks(cfg, env.graph, task_rng);
    const auto rollout_seed =
        derive_seed(seed, {stream::kRollout, static_cast<std::uint64_t>(arm), static_cast<std::uint64_t>(it)});
    std::vector<std::vector<MetaEpisode>> groups;
    auto m = train_iteration(out.params, opt, env, tasks, cfg, rollout_seed, trajectory_log ? &groups : nullptr);
    if (trajectory_log) {
      for (std::size_t g = 0; g < groups.size(); ++g)
        for (std::size_t i = 0; i < groups[g].size(); ++i) {
          const int gid = it * cfg.tasks_per_iteration + static_cast<int>(g);
          *trajectory_log << to_json(groups[g][i], gid, static_cast<int>(i)).dump() << '\n';
        }
    }
    if (on_iteration) on_iteration(it, m, out.params);
    out.history.push_back(std::move(m));
  }
  return out;
}

inline std::string metrics_header(int num_episodes) {
  std::vector<std::string> h{"iteration"};
  for (int n = 0; n < num_episodes; ++n) h.push_back("mean_reward_turn_" + std::to_string(n));
  h.insert(h.end(), {"mean_tool_calls", "grad_norm", "objective"});
  return csv_row(h);
}

inline std::string metrics_row(int iteration, const IterationMetrics& m) {
  std::vector<std::string> r{std::to_string(iteration)};
  for (double v : m.mean_reward) r.push_back(format_double(v));
  r.insert(r.end(), {format_double(m.mean_tool_calls), format_double(m.grad_norm), format_double(m.objective)});
  return csv_row(r);
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  return nlohmann::json::parse(is);
}

/// Runs training and writes metrics.csv, config.json, periodic checkpoints
/// and checkpoint_final.json into `out_dir`, plus trajectories.jsonl on request.
inline TrainResult run_train(const TrainConfig& cfg, std::uint64_t seed, const std::filesystem::path& out_dir,
                             Arm arm = Arm::Meta, bool log_trajectories = false) {
  std::filesystem::create_directories(out_dir);
  nlohmann::json echo = to_json(cfg);
  echo["seed"] = seed;
  echo["config_hash"] = config_hash(cfg);
  write_json_file(out_dir / "config.json", echo);

  std::ofstream csv(out_dir / "metrics.csv", std::ios::binary);
  if (!csv) throw std::runtime_error("cannot write " + (out_dir / "metrics.csv").string());
  csv << metrics_header(cfg.episodes) << '\n';
  std::ofstream traj;
  if (log_trajectories) traj.open(out_dir / "trajectories.jsonl", std::ios::binary);
  auto result = train(cfg, seed, arm, [&](int it, const IterationMetrics& m, const PolicyParams& p) {
    csv << metrics_row(it, m) << '\n';
    if (cfg.checkpoint_interval > 0 && (it + 1) % cfg.checkpoint_interval == 0) {
      char name[64];
      std::snprintf(name, sizeof(name), "checkpoint_%06d.json", it + 1);
      write_json_file(out_dir / name, to_json(p));
    }
  }, log_trajectories ? &traj : nullptr);
  write_json_file(out_dir / "checkpoint_final.json", to_json(result.params));
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

enum class EvalProtocol {
  Sequential,       // one meta-episode of N_eval episodes per task
  ParallelMajority  // N_eval independent fresh episodes; turn n answers with the majority of the first n
};

struct EvalOptions {
  int num_turns = 3;
  ContextMode mode = ContextMode::Full;
  Decoding decoding = Decoding::Greedy;
  EvalProtocol protocol = EvalProtocol::Sequential;
};

struct EvalReport {
  std::vector<double> em;  // per turn index
  double mean_tool_calls = 0.0;
  std::uint64_t seed = 0;
  std::string config_hash;
};

/// Majority over present answers; ties go to the lowest entity id.
inline Answer majority_answer(const std::vector<Answer>& answers) {
  std::map<EntityId, int> votes;
  for (const auto& a : answers)
    if (a.is_entity()) ++votes[a.entity_id()];
  Answer best;
  int best_n = 0;
  for (const auto& [e, n] : votes)
    if (n > best_n) {
      best_n = n;
      best = Answer::entity(e);
    }
  return best;
}

/// Evaluation tasks come from their own stream, separate from training.
inline std::vector<Task> evaluation_tasks(const TrainConfig& cfg, const KnowledgeGraph& graph, std::uint64_t seed) {
  Rng rng = make_rng(seed, {stream::kEvalTasks});
  std::vector<Task> tasks;
  for (int i = 0; i < cfg.eval_tasks; ++i) tasks.push_back(generate_task(graph, cfg.hops, rng));
  return tasks;
}

template <Policy P>
EvalReport evaluate(const P& policy, const TrainConfig& cfg, std::uint64_t seed, const EvalOptions& opt) {
  if (opt.num_turns < 1) throw std::invalid_argument("evaluate: N_eval must be >= 1");
  const SearchEnvironment env = cfg.environment();
  const auto tasks = evaluation_tasks(cfg, env.graph, seed);
  EvalReport rep;
  rep.seed = seed;
  rep.config_hash = config_hash(cfg);
  rep.em.assign(static_cast<std::size_t>(opt.num_turns), 0.0);
  double calls = 0.0, episodes = 0.0;
  for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
    const auto& task = tasks[ti];
    Rng rng = make_rng(seed, {stream::kEvalRollout, ti});
    const Answer gold = Answer::entity(task.gold);
    if (opt.protocol == EvalProtocol::Sequential) {
      const auto meta =
          rollout_meta_episode(policy, env, task, opt.num_turns, cfg.tool_budget, opt.mode, rng, opt.decoding);
      for (int n = 0; n < opt.num_turns; ++n) {
        const auto& ep = meta.episodes[static_cast<std::size_t>(n)];
        rep.em[static_cast<std::size_t>(n)] += exact_match(ep.answer, gold);
        calls += ep.tool_calls();
        episodes += 1.0;
      }
    } else {
      std::vector<Answer> answers;
      for (int n = 0; n < opt.num_turns; ++n) {
        const auto ep = rollout_episode(policy, env, Memory{}, 0, task, cfg.tool_budget, rng, Decoding::Sample);
        answers.push_back(ep.answer);
        rep.em[static_cast<std::size_t>(n)] += exact_match(majority_answer(answers), gold);
        calls += ep.tool_calls();
        episodes += 1.0;
      }
    }
  }
  for (auto& e : rep.em) e /= static_cast<double>(tasks.size());
  rep.mean_tool_calls = calls / episodes;
  return rep;
}

inline std::string eval_header() { return "seed,config_hash,turn,em,mean_tool_calls"; }

inline void write_eval_rows(std::ostream& os, const EvalReport& rep) {
  for (std::size_t n = 0; n < rep.em.size(); ++n) {
    os << csv_row({std::to_string(rep.seed), rep.config_hash, std::to_string(n + 1), format_double(rep.em[n]),
                   format_double(rep.mean_tool_calls)})
       << '\n';
  }
}

// ---------------------------------------------------------------------------
// Meta vs independent comparison

/// How the independent arm is evaluated across turns.
///   Fresh:    memory cleared before every turn (each turn is a new first episode).
///   Carry:    memory carried across turns although training never used it.
///   Parallel: majority vote over independent sampled episodes.
enum class BaselineEval { Fresh, Carry, Parallel };

inline BaselineEval baseline_eval_from_string(const std::string& s) {
  if (s == "fresh") return BaselineEval::Fresh;
  if (s == "carry") return BaselineEval::Carry;
  if (s == "parallel") return BaselineEval::Parallel;
  throw std::invalid_argument("unknown baseline evaluation '" + s + "' (expected fresh, carry or parallel)");
}

/// The independent arm trains single-episode meta-episodes with the same
/// task stream and everything else unchanged.
inline TrainConfig independent_config(const TrainConfig& cfg) {
  TrainConfig b = cfg;
  b.episodes = 1;
  b.mask.clear();
  return b;
}

inline EvalOptions baseline_eval_options(BaselineEval mode, int turns) {
  EvalOptions o;
  o.num_turns = turns;
  switch (mode) {
    case BaselineEval::Fresh: o.mode = ContextMode::Fresh; break;
    case BaselineEval::Carry: o.mode = ContextMode::Full; break;
    case BaselineEval::Parallel: o.protocol = EvalProtocol::ParallelMajority; break;
  }
  return o;
}

struct ArmResult {
  std::uint64_t seed = 0;
  EvalReport meta;
  EvalReport independent;
  PolicyParams meta_params;
  PolicyParams independent_params;
};

inline ArmResult compare_seed(const TrainConfig& cfg, std::uint64_t seed, BaselineEval baseline = BaselineEval::Fresh) {
  ArmResult r;
  r.seed = seed;
  const auto meta = train(cfg, seed, Arm::Meta);
  const auto indep = train(independent_config(cfg), seed, Arm::Independent);
  EvalOptions mo;
  mo.num_turns = cfg.eval_episodes;
  mo.mode = cfg.context_mode;
  r.meta = evaluate(meta.params, cfg, seed, mo);
  r.independent = evaluate(indep.params, cfg, seed, baseline_eval_options(baseline, cfg.eval_episodes));
  r.meta_params = meta.params;
  r.independent_params = indep.params;
  return r;
}

inline std::string compare_header() { return "seed,turn,arm,em,config_hash"; }

inline void write_compare_rows(std::ostream& os, const ArmResult& r) {
  for (std::size_t n = 0; n < r.meta.em.size(); ++n) {
    os << csv_row({std::to_string(r.seed), std::to_string(n + 1), "meta", format_double(r.meta.em[n]),
                   r.meta.config_hash})
       << '\n';
    os << csv_row({std::to_string(r.seed), std::to_string(n + 1), "independent",
                   format_double(r.independent.em[n]), r.meta.config_hash})
       << '\n';
  }
}

// ---------------------------------------------------------------------------
// Gradient check

struct GradCheckResult {
  double step = 0.0;
  double max_relative_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckResult> results;
  double tolerance = 1e-6;
  bool passed() const {
    for (const auto& r : results)
      if (!(r.max_relative_error < tolerance)) return false;
    return !results.empty();
  }
};

/// Central differences of clipped_surrogate, one weight at a time.
inline Matrix finite_difference_gradient(const PolicyParams& params, const SurrogateBatch& batch, double h) {
  Matrix g(params.weights.rows(), params.weights.cols());
  PolicyParams probe = params;
  for (Eigen::Index r = 0; r < g.rows(); ++r)
    for (Eigen::Index c = 0; c < g.cols(); ++c) {
      const double w = params.weights(r, c);
      probe.weights(r, c) = w + h;
      const double up = clipped_surrogate(probe, batch);
      probe.weights(r, c) = w - h;
      const double down = clipped_surrogate(probe, batch);
      probe.weights(r, c) = w;
      g(r, c) = (up - down) / (2.0 * h);
    }
  return g;
}

/// max |a - b| over entries, relative to the larger of the two max-norms.
inline double relative_error(const Matrix& a, const Matrix& b) {
  const double scale = std::max(a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff());
  const double diff = (a - b).cwiseAbs().maxCoeff();
  if (scale == 0.0) return diff;
  return diff / scale;
}

/// A random on-policy instance: random weights, one group rolled out under
/// them (so the snapshot equals the current parameters), and random
/// advantages per episode.
inline std::pair<PolicyParams, SurrogateBatch> random_surrogate_instance(const TrainConfig& cfg, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 0.5);
  PolicyParams params(cfg.hops);
  for (Eigen::Index r = 0; r < params.weights.rows(); ++r)
    for (Eigen::Index c = 0; c < params.weights.cols(); ++c) params.weights(r, c) = normal(rng);
  const SearchEnvironment env = cfg.environment();
  const Task task = generate_task(env.graph, cfg.hops, rng);
  const auto group = rollout_group(params, env, task, cfg.group_size, cfg.episodes, cfg.tool_budget,
                                   cfg.context_mode, rng());
  Matrix adv(cfg.group_size, cfg.episodes);
  for (Eigen::Index i = 0; i < adv.rows(); ++i)
    for (Eigen::Index n = 0; n < adv.cols(); ++n) adv(i, n) = 2.0 * normal(rng);
  return {params, make_turn_batch(group, adv, cfg.clip_eps, cfg.normalization)};
}

template <class Score = ScoreFunction>
GradCheckReport grad_check(const TrainConfig& cfg, std::uint64_t seed, const std::vector<double>& steps,
                           int instances = 20, Score score = &grad_logprob, double tolerance = 1e-6) {
  GradCheckReport rep;
  rep.tolerance = tolerance;
  for (double h : steps) rep.results.push_back({h, 0.0});
  Rng rng = make_rng(seed, {stream::kInit});
  for (int k = 0; k < instances; ++k) {
    const auto [params, batch] = random_surrogate_instance(cfg, rng);
    const Matrix analytic = surrogate_gradient(params, batch, score);
    for (auto& r : rep.results) {
      const Matrix fd = finite_difference_gradient(params, batch, r.step);
      r.max_relative_error = std::max(r.max_relative_error, relative_error(analytic, fd));
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Exhaustive oracle on an enumerable micro environment

struct MicroConfig {
  int entities = 3;
  int relations = 1;
  int episodes = 2;
  int tool_budget = 1;
  int hops = 1;
  double noise = 0.3;
  double gamma = 1.0;
  long samples = 100000;
  std::uint64_t seed = 1;
  double param_scale = 1.0;
};

inline std::vector<std::string> validate(const MicroConfig& m) {
  std::vector<std::string> p;
  if (m.hops != 1) p.push_back("k: oracle needs k = 1");
  if (m.entities < 2 || m.entities > 3) p.push_back("entities: oracle needs 2 or 3 entities");
  if (m.relations < 1 || m.relations > 3) p.push_back("relations: oracle needs 1 to 3 relations");
  if (m.tool_budget != 1) p.push_back("T: oracle needs T = 1");
  if (m.episodes < 1 || m.episodes > 2) p.push_back("N: oracle needs N <= 2");
  if (!(m.noise >= 0.0 && m.noise < 1.0)) p.push_back("rho: must be in [0, 1)");
  if (!(m.gamma >= 0.0 && m.gamma <= 1.0)) p.push_back("gamma: must be in [0, 1]");
  if (m.samples < 2) p.push_back("samples: need at least 2");
  return p;
}

inline SearchEnvironment micro_environment(const MicroConfig& m) {
  Rng rng = make_rng(m.seed, {stream::kGraph});
  std::vector<EntityId> tails(static_cast<std::size_t>(m.entities) * m.relations);
  for (auto& t : tails) t = uniform_index(rng, m.entities);
  return {KnowledgeGraph(m.entities, m.relations, std::move(tails)), m.noise};
}

struct OracleReport {
  double exact_objective = 0.0;
  double mc_objective = 0.0;
  double mc_objective_se = 0.0;
  Matrix exact_gradient;
  Matrix mc_gradient;
  Matrix mc_gradient_se;
  long trajectories = 0;  // enumerated with nonzero probability
  long samples = 0;

  static bool within(double est, double exact, double se) {
    return se > 0.0 ? std::abs(est - exact) <= 3.0 * se : std::abs(est - exact) <= 1e-12;
  }
  bool objective_ok() const { return within(mc_objective, exact_objective, mc_objective_se); }
  bool gradient_ok() const {
    for (Eigen::Index r = 0; r < exact_gradient.rows(); ++r)
      for (Eigen::Index c = 0; c < exact_gradient.cols(); ++c)
        if (!within(mc_gradient(r, c), exact_gradient(r, c), mc_gradient_se(r, c))) return false;
    return true;
  }
  bool passed() const { return objective_ok() && gradient_ok(); }
};

namespace detail {

struct Enumeration {
  const PolicyParams& params;
  const SearchEnvironment& env;
  const MicroConfig& cfg;
  const Task& task;
  double objective = 0.0;
  Matrix gradient;
  long leaves = 0;

  // Walks every branch of episode n onwards; `ret` is the discounted reward
  // collected so far and `score` the summed score function of the choices.
  void walk(int n, const Memory& memory, double prob, double ret, const Matrix& score) {
    if (prob == 0.0) return;
    if (n == cfg.episodes) {
      objective += prob * ret;
      gradient += (prob * ret) * score;
      ++leaves;
      return;
    }
    const double discount = std::pow(cfg.gamma, n);
    const Answer gold = Answer::entity(task.gold);
    const Vector f = encode_features(memory, task, n, cfg.tool_budget);
    const Vector pi = softmax(params.logits(f));
    const int answer = answer_action(1);

    // Answer right away.
    {
      Memory next = memory;
      const Answer a = chain_answer(memory, task);
      next.answers.push_back(a);
      walk(n + 1, next, prob * pi[answer], ret + discount * exact_match(a, gold),
           score + grad_logprob(params, f, answer));
    }
    // Query the single slot, then the exhausted budget forces the answer.
    const EntityId truth = env.graph.tail(task.start, task.path[0]);
    for (EntityId tail = 0; tail < env.graph.num_entities(); ++tail) {
      const double p_obs =
          tail == truth ? 1.0 - env.noise : env.noise / static_cast<double>(env.graph.num_entities() - 1);
      Memory next = memory;
      next.observations.push_back({task.start, task.path[0], tail});
      const Answer a = chain_answer(next, task);
      next.answers.push_back(a);
      walk(n + 1, next, prob * pi[query_action(0)] * p_obs, ret + discount * exact_match(a, gold),
           score + grad_logprob(params, f, query_action(0)));
    }
  }
};

}  // namespace detail

/// Exact meta objective and its gradient by enumerating every trajectory of
/// every task, against Monte-Carlo estimates from sampled rollouts.
inline OracleReport run_oracle(const MicroConfig& m, const PolicyParams& params) {
  if (auto p = validate(m); !p.empty()) throw ConfigError(p);
  if (params.hops != 1) throw std::invalid_argument("oracle: policy must have k = 1");
  const SearchEnvironment env = micro_environment(m);

  std::vector<Task> tasks;
  for (int s = 0; s < m.entities; ++s)
    for (int r = 0; r < m.relations; ++r) tasks.push_back({s, {r}, env.graph.tail(s, r)});

  OracleReport rep;
  const Matrix zero = Matrix::Zero(params.weights.rows(), params.weights.cols());
  rep.exact_gradient = zero;
  for (const auto& task : tasks) {
    detail::Enumeration e{params, env, m, task, 0.0, zero, 0};
    e.walk(0, Memory{}, 1.0, 0.0, zero);
    rep.exact_objective += e.objective / static_cast<double>(tasks.size());
    rep.exact_gradient += e.gradient / static_cast<double>(tasks.size());
    rep.trajectories += e.leaves;
  }

  // Monte Carlo with Welford accumulators.
  Rng rng = make_rng(m.seed, {stream::kRollout});
  double mean = 0.0, m2 = 0.0;
  Matrix gmean = zero, gm2 = zero;
  for (long s = 1; s <= m.samples; ++s) {
    const Task& task = tasks[static_cast<std::size_t>(uniform_index(rng, static_cast<int>(tasks.size())))];
    const auto meta = rollout_meta_episode(params, env, task, m.episodes, m.tool_budget, ContextMode::Full, rng);
    double ret = 0.0, w = 1.0;
    Matrix score = zero;
    for (const auto& ep : meta.episodes) {
      ret += w * exact_match(ep.answer, Answer::entity(task.gold));
      w *= m.gamma;
      for (const auto& t : ep.turns)
        if (!t.forced) score += grad_logprob(params, t.features, t.action);
    }
    const Matrix g = ret * score;
    const double d = ret - mean;
    mean += d / static_cast<double>(s);
    m2 += d * (ret - mean);
    const Matrix gd = g - gmean;
    gmean += gd / static_cast<double>(s);
    gm2 += gd.cwiseProduct(g - gmean);
  }
  const double n = static_cast<double>(m.samples);
  rep.samples = m.samples;
  rep.mc_objective = mean;
  rep.mc_objective_se = std::sqrt(m2 / (n - 1.0) / n);
  rep.mc_gradient = gmean;
  rep.mc_gradient_se = (gm2 / (n - 1.0) / n).cwiseSqrt();
  return rep;
}

inline PolicyParams random_params(int hops, double scale, std::uint64_t seed) {
  Rng rng = make_rng(seed, {stream::kInit});
  std::normal_distribution<double> normal(0.0, scale);
  PolicyParams p(hops);
  for (Eigen::Index r = 0; r < p.weights.rows(); ++r)
    for (Eigen::Index c = 0; c < p.weights.cols(); ++c) p.weights(r, c) = normal(rng);
  return p;
}

// ---------------------------------------------------------------------------
// Standalone advantages over trajectory logs

struct AdvantageOptions {
  double gamma = 1.0;
  EpisodeMask mask;  // empty = all ones
  bool step_level = false;
};

/// Reads JSONL meta-episodes, groups them by group_id (members ordered by
/// member index), and writes one CSV row per (member, turn) or per step.
inline void compute_log_advantages(std::istream& jsonl, std::ostream& csv, const AdvantageOptions& opt) {
  std::map<int, std::vector<LoggedMetaEpisode>> groups;
  std::string line;
  long lineno = 0;
  while (std::getline(jsonl, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto rec = meta_from_json(nlohmann::json::parse(line));
      groups[rec.group_id].push_back(std::move(rec));
    } catch (const std::exception& e) {
      throw std::invalid_argument("trajectory log line " + std::to_string(lineno) + ": " + e.what());
    }
  }

  csv << (opt.step_level ? "group_id,member,turn,step,reward,rloo,advantage" : "group_id,member,turn,reward,rloo,advantage")
      << '\n';
  for (auto& [gid, members] : groups) {
    std::sort(members.begin(), members.end(), [](const auto& a, const auto& b) { return a.member < b.member; });
    const Answer gold = members.front().gold;
    std::vector<MetaEpisode> group;
    for (const auto& m : members) {
      if (!(m.gold == gold)) throw std::invalid_argument("group " + std::to_string(gid) + ": members disagree on gold");
      group.push_back(m.meta);
    }
    const int n_episodes = group.front().num_episodes();
    const EpisodeMask mask = opt.mask.empty() ? full_mask(n_episodes) : opt.mask;

    if (!opt.step_level) {
      const RewardTable table{turn_rewards(group, gold), opt.gamma, mask};
      const auto adv = compute_advantages(table);
      for (std::size_t i = 0; i < members.size(); ++i)
        for (int n = 0; n < n_episodes; ++n) {
          const auto ii = static_cast<Eigen::Index>(i);
          csv << csv_row({std::to_string(gid), std::to_string(members[i].member), std::to_string(n),
                          format_double(table.values(ii, n)), format_double(adv.rloo(ii, n)),
                          format_double(adv.discounted(ii, n))})
              << '\n';
        }
    } else {
      const auto table = step_rewards(group, gold);
      const auto adv = step_rloo(table, opt.gamma, mask);
      for (std::size_t i = 0; i < members.size(); ++i)
        for (std::size_t s = 0; s < table.rewards[i].size(); ++s) {
          csv << csv_row({std::to_string(gid), std::to_string(members[i].member),
                          std::to_string(table.alignment[i][s].episode), std::to_string(s),
                          format_double(table.rewards[i][s]), format_double(adv.rloo[i][s]),
                          format_double(adv.discounted[i][s])})
              << '\n';
        }
    }
  }
}

}  // namespace mrsearch
