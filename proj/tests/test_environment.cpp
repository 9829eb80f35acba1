#include <cmath>
#include <set>
#include <string>

#include <gtest/gtest.h>

#include "mrsearch/environment.hpp"
#include "mrsearch/random.hpp"
#include "mrsearch/verifier.hpp"

using namespace mrsearch;

TEST(Random, DerivedStreamsAreStableAndDistinct) {
  EXPECT_EQ(derive_seed(7, {1, 2}), derive_seed(7, {1, 2}));
  EXPECT_NE(derive_seed(7, {1, 2}), derive_seed(7, {2, 1}));
  EXPECT_NE(derive_seed(7, {1}), derive_seed(8, {1}));
  Rng a = make_rng(3, {stream::kRollout}), b = make_rng(3, {stream::kRollout});
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a(), b());
}

TEST(Random, Uniform01InUnitInterval) {
  Rng rng = make_rng(1);
  for (int i = 0; i < 10000; ++i) {
    const double u = uniform01(rng);
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(Graph, OneFactPerHead) {
  const auto g = build_graph(4, 1, 7);
  EXPECT_EQ(g.num_facts(), 4u);
  for (int h = 0; h < 4; ++h) EXPECT_TRUE(g.valid_entity(g.tail(h, 0)));
}

TEST(Graph, DeterministicUnderSeed) {
  EXPECT_EQ(build_graph(30, 3, 11), build_graph(30, 3, 11));
  EXPECT_NE(build_graph(30, 3, 11), build_graph(30, 3, 12));
}

TEST(Graph, CountsAndRanges) {
  const auto g = build_graph(100, 3, 1);
  EXPECT_EQ(g.num_facts(), 300u);
  int n = 0;
  for (int h = 0; h < 100; ++h)
    for (int r = 0; r < 3; ++r) {
      const int t = g.tail(h, r);
      EXPECT_GE(t, 0);
      EXPECT_LT(t, 100);
      ++n;
    }
  EXPECT_EQ(n, 300);
}

TEST(Graph, RejectsBadInputs) {
  EXPECT_THROW(build_graph(3, 1, 1), std::invalid_argument);
  EXPECT_THROW(build_graph(10, 0, 1), std::invalid_argument);
  EXPECT_THROW(KnowledgeGraph(2, 1, {0}), std::invalid_argument);
  EXPECT_THROW(KnowledgeGraph(2, 1, {0, 2}), std::invalid_argument);
  const auto g = build_graph(5, 2, 1);
  EXPECT_THROW(g.tail(5, 0), std::out_of_range);
  EXPECT_THROW(g.tail(0, 2), std::out_of_range);
  EXPECT_THROW(g.tail(-1, 0), std::out_of_range);
}

TEST(Graph, JsonRoundTrip) {
  const auto g = build_graph(12, 3, 5);
  const auto j = to_json(g);
  EXPECT_EQ(j.at("facts").size(), 36u);
  EXPECT_EQ(graph_from_json(j), g);
  EXPECT_EQ(graph_from_json(nlohmann::json::parse(j.dump())), g);
}

TEST(Task, SingleHopIsLookup) {
  const auto g = build_graph(20, 3, 2);
  Rng rng = make_rng(4);
  for (int i = 0; i < 50; ++i) {
    const auto t = generate_task(g, 1, rng);
    EXPECT_EQ(t.gold, g.tail(t.start, t.path[0]));
  }
}

TEST(Task, TwoHopComposition) {
  // 0 -r0-> 2 -r1-> 3
  KnowledgeGraph g(4, 2, {2, 0, 0, 0, 0, 3, 0, 0});
  EXPECT_EQ(walk_path(g, 0, {0, 1}), 3);
}

TEST(Task, PathWalkingOracle) {
  const auto g = build_graph(100, 3, 1);
  const auto facts = to_json(g).at("facts");
  std::map<std::pair<int, int>, int> table;
  for (const auto& f : facts) table[{f[0].get<int>(), f[1].get<int>()}] = f[2].get<int>();
  Rng rng = make_rng(9);
  for (int i = 0; i < 1000; ++i) {
    const auto t = generate_task(g, 1 + i % 4, rng);
    int e = t.start;
    for (int r : t.path) e = table.at({e, r});
    ASSERT_EQ(e, t.gold) << "task " << i;
  }
}

TEST(Task, RejectsBadHops) {
  const auto g = build_graph(10, 2, 1);
  Rng rng = make_rng(1);
  EXPECT_THROW(generate_task(g, 0, rng), std::invalid_argument);
  EXPECT_THROW(generate_task(g, kMaxHops + 1, rng), std::invalid_argument);
}

TEST(Task, JsonRoundTrip) {
  const auto g = build_graph(10, 2, 1);
  Rng rng = make_rng(1);
  std::vector<Task> tasks;
  for (int i = 0; i < 5; ++i) tasks.push_back(generate_task(g, 3, rng));
  EXPECT_EQ(tasks_from_json(nlohmann::json::parse(tasks_to_json(tasks).dump())), tasks);
}

TEST(Query, NoiselessAlwaysGold) {
  const auto g = build_graph(10, 2, 1);
  Rng rng = make_rng(1);
  for (int i = 0; i < 1000; ++i) {
    const auto o = query(g, i % 10, i % 2, 0.0, rng);
    EXPECT_FALSE(o.is_distractor);
    EXPECT_EQ(o.tail, g.tail(i % 10, i % 2));
  }
}

TEST(Query, GoldFrequencyBand) {
  const auto g = build_graph(10, 2, 1);
  Rng rng = make_rng(21);
  int gold = 0;
  for (int i = 0; i < 10000; ++i) gold += query(g, 3, 1, 0.4, rng).is_distractor ? 0 : 1;
  EXPECT_NEAR(gold / 10000.0, 0.60, 0.02);
}

TEST(Query, TwoEntityDistractorIsTheOther) {
  KnowledgeGraph g(2, 1, {1, 0});
  Rng rng = make_rng(5);
  int distractors = 0;
  for (int i = 0; i < 500; ++i) {
    const auto o = query(g, 0, 0, 0.9, rng);
    if (o.is_distractor) {
      EXPECT_EQ(o.tail, 0);
      ++distractors;
    } else {
      EXPECT_EQ(o.tail, 1);
    }
  }
  EXPECT_GT(distractors, 0);
}

TEST(Query, DistractorExclusivityAndUniformity) {
  const auto g = build_graph(6, 1, 3);
  const int gold = g.tail(2, 0);
  Rng rng = make_rng(8);
  std::map<int, int> hist;
  const int n = 60000;
  for (int i = 0; i < n; ++i) {
    const auto o = query(g, 2, 0, 0.5, rng);
    EXPECT_EQ(o.is_distractor, o.tail != gold);
    if (o.is_distractor) ++hist[o.tail];
  }
  EXPECT_EQ(hist.count(gold), 0u);
  EXPECT_EQ(hist.size(), 5u);
  const double p = 0.5 / 5.0, sd = std::sqrt(n * p * (1 - p));
  for (const auto& [t, c] : hist) EXPECT_NEAR(c, n * p, 4 * sd) << "tail " << t;
}

TEST(Query, ReplayDeterminism) {
  const SearchEnvironment env{build_graph(20, 3, 4), 0.3};
  Rng a = make_rng(77), b = make_rng(77);
  for (int i = 0; i < 200; ++i) EXPECT_EQ(env.query(i % 20, i % 3, a), env.query(i % 20, i % 3, b));
}

TEST(Query, RejectsBadNoise) {
  const auto g = build_graph(5, 1, 1);
  Rng rng = make_rng(1);
  EXPECT_THROW(query(g, 0, 0, 1.0, rng), std::invalid_argument);
  EXPECT_THROW(query(g, 0, 0, -0.1, rng), std::invalid_argument);
}

TEST(Normalize, Examples) {
  EXPECT_EQ(normalize("  The Eiffel Tower! "), "eiffel tower");
  EXPECT_EQ(normalize(""), "");
  EXPECT_EQ(normalize("Mario   Caserini"), "mario caserini");
  EXPECT_EQ(normalize("An apple a day"), "apple day");
  EXPECT_EQ(normalize("theatre"), "theatre");
}

TEST(Normalize, Idempotent) {
  for (std::string s : {"  The Eiffel Tower! ", "A-B, the c.", "THE an A", "x\t\ny", "...", "U.S.A. the"}) {
    EXPECT_EQ(normalize(normalize(s)), normalize(s)) << s;
  }
}

TEST(ExactMatch, Examples) {
  EXPECT_EQ(exact_match(Answer::entity(17), Answer::entity(17)), 1.0);
  EXPECT_EQ(exact_match(Answer::missing(), Answer::entity(3)), 0.0);
  EXPECT_EQ(exact_match(Answer::missing(), Answer::text("x")), 0.0);
  EXPECT_EQ(exact_match(Answer::text("Paris"), Answer::text("London")), 0.0);
  EXPECT_EQ(exact_match(Answer::text("the Paris!"), Answer::text("paris")), 1.0);
  EXPECT_EQ(exact_match(Answer::entity(4), Answer::entity(5)), 0.0);
}

TEST(ExactMatch, SymmetricAndBinary) {
  const std::vector<Answer> as{Answer::missing(), Answer::entity(1), Answer::entity(2),
                               Answer::text("The One"), Answer::text("one"), Answer::text("1")};
  for (const auto& a : as)
    for (const auto& b : as) {
      const double r = exact_match(a, b);
      EXPECT_TRUE(r == 0.0 || r == 1.0);
      EXPECT_EQ(r, exact_match(b, a));
    }
}

TEST(Answer, JsonRoundTrip) {
  for (const auto& a : {Answer::missing(), Answer::entity(9), Answer::text("abc")})
    EXPECT_EQ(answer_from_json(to_json(a)), a);
  EXPECT_THROW(answer_from_json(nlohmann::json::array()), std::invalid_argument);
}
