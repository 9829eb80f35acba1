#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "mrsearch/advantage.hpp"
#include "mrsearch/steplevel.hpp"

using namespace mrsearch;

namespace {

// Leave-one-out written as total-minus-self, a different route from the library loop.
Matrix rloo_oracle(const Matrix& r) {
  const double g = static_cast<double>(r.rows());
  Matrix out(r.rows(), r.cols());
  for (Eigen::Index n = 0; n < r.cols(); ++n) {
    const double total = r.col(n).sum();
    for (Eigen::Index i = 0; i < r.rows(); ++i) out(i, n) = r(i, n) - (total - r(i, n)) / (g - 1.0);
  }
  return out;
}

Matrix discount_oracle(const Matrix& a, double gamma, const EpisodeMask& m) {
  Matrix out = Matrix::Zero(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index n = 0; n < a.cols(); ++n)
      for (Eigen::Index np = n; np < a.cols(); ++np)
        out(i, n) += std::pow(gamma, static_cast<double>(np - n)) * a(i, np) * m[static_cast<std::size_t>(np)];
  return out;
}

Matrix random_rewards(Rng& rng, int g, int n, bool binary) {
  Matrix r(g, n);
  for (Eigen::Index i = 0; i < r.size(); ++i)
    r.data()[i] = binary ? static_cast<double>(uniform_index(rng, 2)) : 4.0 * uniform01(rng) - 2.0;
  return r;
}

// k=1 meta-episode: each inner vector lists the tails observed by one
// episode's tool calls; answers follow the majority rule.
MetaEpisode build_meta(const Task& task, const std::vector<std::vector<int>>& tails,
                       ContextMode mode = ContextMode::Full) {
  MetaEpisode meta;
  meta.task = task;
  meta.mode = mode;
  for (std::size_t n = 0; n < tails.size(); ++n) {
    Memory mem = context_before(meta.episodes, task, mode, static_cast<int>(n));
    Episode ep;
    for (int t : tails[n]) {
      Turn turn;
      turn.action = query_action(0);
      turn.observation = Observation{task.start, task.path[0], t, t != task.gold};
      mem.observations.push_back(as_triple(*turn.observation));
      ep.turns.push_back(turn);
    }
    Turn ans;
    ans.action = answer_action(task.hops());
    ep.turns.push_back(ans);
    ep.answer = chain_answer(mem, task);
    meta.episodes.push_back(ep);
  }
  return meta;
}

const Task kTask{0, {0}, 5};

}  // namespace

TEST(TurnRewards, AllGold) {
  std::vector<MetaEpisode> group(3, build_meta(kTask, {{5}, {5}}));
  EXPECT_EQ(turn_rewards(group), Matrix::Ones(3, 2));
}

TEST(TurnRewards, PerEpisodeScoring) {
  const auto m = build_meta(kTask, {{}, {2}, {5, 5}});
  EXPECT_EQ(turn_rewards({m, m}).row(0), (Eigen::RowVector3d() << 0, 0, 1).finished());
}

TEST(TurnRewards, RaggedGroupThrows) {
  EXPECT_THROW(turn_rewards({build_meta(kTask, {{5}}), build_meta(kTask, {{5}, {5}})}), std::invalid_argument);
  EXPECT_THROW(turn_rewards(std::vector<MetaEpisode>{}), std::invalid_argument);
}

TEST(Rloo, Examples) {
  EXPECT_TRUE(rloo_baseline(Matrix::Constant(5, 3, 0.7)).isZero(1e-15));
  Matrix r(3, 1);
  r << 1, 0, 1;
  Matrix e(3, 1);
  e << 0.5, -1.0, 0.5;
  EXPECT_TRUE(rloo_baseline(r).isApprox(e, 1e-15));
  Matrix r2(2, 1);
  r2 << 1, 0;
  Matrix e2(2, 1);
  e2 << 1.0, -1.0;
  EXPECT_EQ(rloo_baseline(r2), e2);
  EXPECT_THROW(rloo_baseline(Matrix::Ones(1, 3)), std::invalid_argument);
}

TEST(Rloo, MatchesOracleAndSumsToZero) {
  Rng rng = make_rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    const int g = 2 + uniform_index(rng, 7), n = 1 + uniform_index(rng, 6);
    const Matrix r = random_rewards(rng, g, n, trial % 2 == 0);
    const Matrix a = rloo_baseline(r);
    EXPECT_LT((a - rloo_oracle(r)).cwiseAbs().maxCoeff(), 1e-12);
    for (int c = 0; c < n; ++c) EXPECT_NEAR(a.col(c).sum(), 0.0, 1e-12);
  }
}

TEST(Rloo, PerturbationSlopes) {
  Rng rng = make_rng(4);
  const Matrix r = random_rewards(rng, 5, 3, false);
  Matrix p = r;
  const double d = 0.375;
  p(2, 1) += d;
  const Matrix diff = rloo_baseline(p) - rloo_baseline(r);
  for (int i = 0; i < 5; ++i)
    for (int n = 0; n < 3; ++n) {
      const double expect = n != 1 ? 0.0 : (i == 2 ? d : -d / 4.0);
      EXPECT_NEAR(diff(i, n), expect, 1e-12);
    }
}

TEST(Rloo, ColumnShiftInvariance) {
  Rng rng = make_rng(5);
  const Matrix r = random_rewards(rng, 4, 3, false);
  Matrix s = r;
  s.col(1).array() += 3.25;
  EXPECT_LT((rloo_baseline(s) - rloo_baseline(r)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Discount, Examples) {
  Matrix a(1, 2);
  a << 0.5, -1.0;
  auto row = [](double x, double y) { return (Matrix(1, 2) << x, y).finished(); };
  EXPECT_TRUE(discounted_advantage(a, 1.0, {1, 1}).isApprox(row(-0.5, -1.0)));
  EXPECT_TRUE(discounted_advantage(a, 0.5, {1, 1}).isApprox(row(0.0, -1.0)));
  EXPECT_TRUE(discounted_advantage(a, 1.0, {0, 1}).isApprox(row(-1.0, -1.0)));
}

TEST(Discount, GammaZeroIsIdentity) {
  Rng rng = make_rng(6);
  for (int t = 0; t < 50; ++t) {
    const Matrix a = rloo_baseline(random_rewards(rng, 2 + t % 5, 1 + t % 6, false));
    EXPECT_EQ(discounted_advantage(a, 0.0, full_mask(static_cast<int>(a.cols()))), a);
  }
}

TEST(Discount, MatchesOracle) {
  Rng rng = make_rng(7);
  for (int t = 0; t < 200; ++t) {
    const int n = 1 + uniform_index(rng, 6);
    const Matrix a = rloo_baseline(random_rewards(rng, 2 + uniform_index(rng, 7), n, false));
    EpisodeMask m(static_cast<std::size_t>(n));
    for (auto& x : m) x = uniform_index(rng, 2);
    const double gamma = uniform01(rng);
    EXPECT_LT((discounted_advantage(a, gamma, m) - discount_oracle(a, gamma, m)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Discount, TelescopingAndMaskNullity) {
  Rng rng = make_rng(8);
  const Matrix a = rloo_baseline(random_rewards(rng, 6, 4, true));
  const Matrix d = discounted_advantage(a, 1.0, full_mask(4));
  for (int i = 0; i < 6; ++i) EXPECT_NEAR(d(i, 0), a.row(i).sum(), 1e-12);
  EXPECT_NEAR(d.col(0).sum(), 0.0, 1e-12);
  EXPECT_TRUE(discounted_advantage(a, 0.9, {0, 0, 0, 0}).isZero(0.0));
}

TEST(Discount, Validation) {
  const Matrix a = Matrix::Ones(2, 3);
  EXPECT_THROW(discounted_advantage(a, 1.0, {1, 1}), std::invalid_argument);
  EXPECT_THROW(discounted_advantage(a, 1.0, {1, 2, 1}), std::invalid_argument);
  EXPECT_THROW(discounted_advantage(a, 1.5, {1, 1, 1}), std::invalid_argument);
  EXPECT_THROW(discounted_advantage(a, -0.1, {1, 1, 1}), std::invalid_argument);
}

TEST(IntermediateAnswer, Examples) {
  const Task t2{0, {1, 2}, 9};
  EXPECT_FALSE(intermediate_answer(Memory{}, t2).present());
  Memory full;
  full.observations = {{0, 1, 4}, {4, 2, 9}};
  EXPECT_EQ(intermediate_answer(full, t2), Answer::entity(9));
  Memory conflict = full;
  conflict.observations.push_back({4, 2, 3});
  conflict.observations.push_back({4, 2, 3});
  EXPECT_EQ(intermediate_answer(conflict, t2), Answer::entity(3));
  conflict.observations.push_back({4, 2, 9});
  EXPECT_FALSE(intermediate_answer(conflict, t2).present());
  conflict.observations.push_back({4, 2, 9});
  EXPECT_EQ(intermediate_answer(conflict, t2), Answer::entity(9));
}

TEST(StepRewards, AlignmentAndRewards) {
  // Episode 0: two calls (wrong then right, tie => missing, then forced answer).
  // Episode 1: zero calls. Episode 2: one call.
  const auto m = build_meta(kTask, {{2, 5}, {}, {5}});
  const auto table = step_rewards({m, m});
  ASSERT_EQ(table.rewards[0].size(), 4u);
  EXPECT_EQ(table.rewards[0], (std::vector<double>{0, 0, 0, 1}));
  const std::vector<StepRef> align{{0, 0}, {0, 1}, {1, 0}, {2, 0}};
  EXPECT_EQ(table.alignment[0], align);
  EXPECT_EQ(turn_steps(m.episodes[0], 0), (std::vector<int>{0, 1, 1}));
  EXPECT_EQ(turn_steps(m.episodes[1], 2), (std::vector<int>{2}));
}

TEST(StepRewards, IntermediateAnswersCountTowardsEarlierSteps) {
  const auto m = build_meta(kTask, {{5, 2, 2}});
  const auto table = step_rewards({m, m});
  EXPECT_EQ(table.rewards[0], (std::vector<double>{1, 0, 0}));
}

TEST(StepRloo, Examples) {
  StepRewardTable same{{{1, 0}, {1, 0}, {1, 0}}, {}};
  for (int i = 0; i < 3; ++i) same.alignment.push_back({{0, 0}, {0, 1}});
  const auto a = step_rloo(same, 1.0, {1});
  for (const auto& row : a.rloo)
    for (double v : row) EXPECT_EQ(v, 0.0);

  StepRewardTable ragged{{{1, 0, 1}, {0}, {1}}, {{{0, 0}, {0, 1}, {0, 2}}, {{0, 0}}, {{0, 0}}}};
  const auto b = step_rloo(ragged, 1.0, {1});
  EXPECT_EQ(b.rloo[0][1], 0.0);
  EXPECT_EQ(b.rloo[0][2], 0.0);
  EXPECT_NEAR(b.rloo[0][0], 0.5, 1e-15);
  EXPECT_NEAR(b.rloo[1][0], -1.0, 1e-15);
  EXPECT_NEAR(b.rloo[2][0], 0.5, 1e-15);
}

TEST(StepRloo, AlignedColumnsSumToZero) {
  Rng rng = make_rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const int g = 2 + uniform_index(rng, 5);
    StepRewardTable t;
    std::size_t shortest = 100;
    for (int i = 0; i < g; ++i) {
      const int len = 1 + uniform_index(rng, 6);
      shortest = std::min(shortest, static_cast<std::size_t>(len));
      std::vector<double> r;
      std::vector<StepRef> al;
      for (int s = 0; s < len; ++s) {
        r.push_back(uniform_index(rng, 2));
        al.push_back({0, s});
      }
      t.rewards.push_back(r);
      t.alignment.push_back(al);
    }
    const auto a = step_rloo(t, 1.0, {1});
    for (std::size_t s = 0; s < shortest; ++s) {
      double sum = 0.0;
      for (int i = 0; i < g; ++i) sum += a.rloo[static_cast<std::size_t>(i)][s];
      EXPECT_NEAR(sum, 0.0, 1e-12);
    }
  }
}

TEST(StepRloo, ReducesToTurnLevelWithOneCallPerEpisode) {
  Rng rng = make_rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const int g = 2 + uniform_index(rng, 5), n = 1 + uniform_index(rng, 4);
    std::vector<MetaEpisode> group;
    for (int i = 0; i < g; ++i) {
      std::vector<std::vector<int>> tails;
      for (int e = 0; e < n; ++e) tails.push_back({uniform_index(rng, 2) ? 5 : uniform_index(rng, 5)});
      group.push_back(build_meta(kTask, tails));
    }
    const double gamma = uniform01(rng);
    EpisodeMask mask(static_cast<std::size_t>(n));
    for (auto& x : mask) x = uniform_index(rng, 2);
    const auto turn = compute_advantages({turn_rewards(group), gamma, mask});
    const auto step = step_rloo(step_rewards(group), gamma, mask);
    for (int i = 0; i < g; ++i)
      for (int e = 0; e < n; ++e) {
        EXPECT_NEAR(step.rloo[i][e], turn.rloo(i, e), 1e-12);
        EXPECT_NEAR(step.discounted[i][e], turn.discounted(i, e), 1e-12);
      }
  }
}

TEST(StepRloo, Validation) {
  StepRewardTable one{{{1}}, {{{0, 0}}}};
  EXPECT_THROW(step_rloo(one, 1.0, {1}), std::invalid_argument);
  StepRewardTable two{{{1}, {0}}, {{{0, 0}}, {{0, 0}}}};
  EXPECT_THROW(step_rloo(two, 2.0, {1}), std::invalid_argument);
  StepRewardTable far{{{1}, {0}}, {{{1, 0}}, {{1, 0}}}};
  EXPECT_THROW(step_rloo(far, 1.0, {1}), std::invalid_argument);
}
