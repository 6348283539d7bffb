#include <gtest/gtest.h>

#include <numeric>

#include "liv/planner.hpp"

namespace liv {
namespace {

PlannerConfig small(PlannerKind kind, int iterations = 2) {
  PlannerConfig c = PlannerConfig::defaults(kind);
  c.horizon = 6;
  c.num_sequences = 16;
  c.iterations = iterations;
  c.seed = 11;
  return c;
}

WorldState start(const TaskSpec& task) { return init_episode(std::uint64_t{5}, task); }

// Scores a rollout by the final gripper x, which rewards moving right.
RolloutScorer rightward() {
  return [](const std::vector<Rollout>& rs) {
    std::vector<double> s;
    for (const auto& r : rs) s.push_back(r.states.back().gripper.x);
    return s;
  };
}

RolloutScorer constant() {
  return [](const std::vector<Rollout>& rs) { return std::vector<double>(rs.size(), 1.0); };
}

TEST(MppiWeights, NormalizedAndArgmaxLimit) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> scores(20);
    for (double& s : scores) s = 100.0 * rng.normal();
    const double lambda = std::exp(rng.uniform(-5.0, 5.0));
    const auto w = mppi_weights(scores, lambda);
    EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 1.0, 1e-12);
    for (double x : w) EXPECT_GE(x, 0.0);
  }
  const auto w = mppi_weights({0.1, 0.9, 0.9, 0.2}, 1e-9);
  EXPECT_EQ(w, (std::vector<double>{0.0, 1.0, 0.0, 0.0}));
}

TEST(MppiWeights, HigherScoreNeverWeighsLess) {
  const auto w = mppi_weights({1.0, 3.0, 2.0}, 0.7);
  EXPECT_GT(w[1], w[2]);
  EXPECT_GT(w[2], w[0]);
}

TEST(Planner, EqualScoresKeepMppiMean) {
  const TaskSpec& task = task_by_id(0);
  PlannerConfig c = small(PlannerKind::mppi, 4);
  const PlanResult r = mppi_plan(constant(), start(task), task, c);
  ASSERT_EQ(r.sequence.size(), 6u);
  for (const Action& a : r.sequence) EXPECT_EQ(a, (Action{0.0, 0.0, c.grip_init}));
}

TEST(Planner, CemEliteFractionOneIsPopulationMean) {
  // With every candidate an elite, one iteration returns the sample mean of
  // the same draws the planner makes internally.
  const TaskSpec& task = task_by_id(1);
  PlannerConfig c = small(PlannerKind::cem, 1);
  c.elite_fraction = 1.0;
  const PlanResult r = cem_plan(rightward(), start(task), task, c);
  Rng rng(derive_seed(c.seed, 0xCE11));
  const ActionPlan mean0 = detail::initial_mean(c);
  const ActionPlan std0 = detail::initial_stddev(c);
  ActionPlan sum = ActionPlan::Zero(kActionDim, c.horizon);
  for (int k = 0; k < c.num_sequences; ++k) sum += detail::sample_plan(mean0, std0, c.noise_smoothing, rng);
  const auto expected = to_actions(clamp_plan(sum / c.num_sequences));
  ASSERT_EQ(r.sequence.size(), expected.size());
  for (std::size_t t = 0; t < expected.size(); ++t) {
    EXPECT_NEAR(r.sequence[t].dx, expected[t].dx, 1e-12);
    EXPECT_NEAR(r.sequence[t].dy, expected[t].dy, 1e-12);
    EXPECT_NEAR(r.sequence[t].grip, expected[t].grip, 1e-12);
  }
}

TEST(Planner, CemTopEliteIsBestCandidate) {
  const TaskSpec& task = task_by_id(1);
  PlannerConfig c = small(PlannerKind::cem, 1);
  c.elite_fraction = 1.0 / c.num_sequences;
  const PlanResult r = cem_plan(rightward(), start(task), task, c);
  Rng rng(derive_seed(c.seed, 0xCE11));
  const ActionPlan mean0 = detail::initial_mean(c);
  const ActionPlan std0 = detail::initial_stddev(c);
  double best = -1e300;
  ActionPlan best_plan;
  for (int k = 0; k < c.num_sequences; ++k) {
    ActionPlan p = detail::sample_plan(mean0, std0, c.noise_smoothing, rng);
    const double s = simulate(start(task), p, task).states.back().gripper.x;
    if (s > best) {
      best = s;
      best_plan = p;
    }
  }
  EXPECT_EQ(r.sequence, to_actions(best_plan));
}

TEST(Planner, ActionsRespectBoundsAndHorizon) {
  const TaskSpec& task = task_by_id(2);
  for (PlannerKind kind : {PlannerKind::mppi, PlannerKind::cem}) {
    PlannerConfig c = small(kind);
    c.noise_std = 1.0;
    const PlanResult r = plan(rightward(), start(task), task, c);
    ASSERT_EQ(r.sequence.size(), static_cast<std::size_t>(c.horizon));
    EXPECT_EQ(r.trajectory.size(), static_cast<std::size_t>(c.horizon) + 1);
    for (const Action& a : r.sequence) {
      EXPECT_LE(std::abs(a.dx), kMaxDisplacement);
      EXPECT_LE(std::abs(a.dy), kMaxDisplacement);
      EXPECT_GE(a.grip, 0.0);
      EXPECT_LE(a.grip, 1.0);
    }
  }
}

TEST(Planner, DeterministicForFixedSeed) {
  const TaskSpec& task = task_by_id(3);
  for (PlannerKind kind : {PlannerKind::mppi, PlannerKind::cem}) {
    const PlannerConfig c = small(kind);
    const PlanResult a = plan(oracle_scorer(task), start(task), task, c);
    const PlanResult b = plan(oracle_scorer(task), start(task), task, c);
    EXPECT_EQ(a.sequence, b.sequence);
    EXPECT_EQ(a.scores, b.scores);
  }
}

TEST(Planner, RightwardScorerMovesRight) {
  const TaskSpec& task = task_by_id(0);
  PlannerConfig c = small(PlannerKind::mppi, 6);
  c.num_sequences = 64;
  const WorldState s0 = start(task);
  const PlanResult r = mppi_plan(rightward(), s0, task, c);
  EXPECT_GT(r.trajectory.back().gripper.x, s0.gripper.x);
}

TEST(Planner, InvalidConfigRejected) {
  const TaskSpec& task = task_by_id(0);
  PlannerConfig c = small(PlannerKind::cem);
  c.elite_fraction = 0.0;
  EXPECT_THROW(plan(constant(), start(task), task, c), Error);
  c = small(PlannerKind::mppi);
  c.horizon = 0;
  EXPECT_THROW(plan(constant(), start(task), task, c), Error);
}

TEST(Planner, NonFiniteScoreRaises) {
  const TaskSpec& task = task_by_id(0);
  RolloutScorer nan_scorer = [](const std::vector<Rollout>& rs) {
    return std::vector<double>(rs.size(), std::nan(""));
  };
  EXPECT_THROW(plan(nan_scorer, start(task), task, small(PlannerKind::mppi)), NumericError);
}

class LearnedScoring : public ::testing::Test {
 protected:
  static LivModel model() {
    EncoderConfig c;
    c.embed_dim = 8;
    c.vision_hidden = {16};
    return init_model(c, 21);
  }
};

TEST_F(LearnedScoring, TerminalScoreEqualsSummedRewards) {
  const LivModel m = model();
  const TaskSpec& task = task_by_id(1);
  Rng rng(8);
  std::vector<Rollout> rollouts;
  for (int k = 0; k < 4; ++k) {
    ActionPlan p(kActionDim, 5);
    for (Eigen::Index t = 0; t < p.cols(); ++t) {
      const Action a = random_action(rng);
      p.col(t) << a.dx, a.dy, a.grip;
    }
    rollouts.push_back(simulate(start(task), p, task));
  }
  const GoalSpec goal = TextGoal{task.token_ids};
  const auto scores = learned_scorer(m, goal, 0.98)(rollouts);
  for (std::size_t k = 0; k < rollouts.size(); ++k) {
    std::vector<Image> frames;
    for (const auto& s : rollouts[k].states) frames.push_back(render(s));
    EXPECT_NEAR(scores[k], score_rollout(m, frames, goal, 0.98), 1e-9);
  }
}

TEST_F(LearnedScoring, GoalRescalingKeepsTheArgmax) {
  const LivModel m = model();
  const TaskSpec& task = task_by_id(2);
  const PlannerConfig c = small(PlannerKind::cem, 1);
  const ImageGoal goal{render(start(task_by_id(0)))};
  const PlanResult a = cem_plan(m, start(task), task, goal, 0.98, c);
  // Cosine similarity ignores the goal embedding's norm, so scaling the
  // text-encoder output layer must leave a text-goal plan untouched.
  LivModel scaled = m;
  const std::size_t last = m.config.text_hidden.size();
  for (const char* part : {"W", "b"}) {
    for (double& x : scaled.params.at(layer_name(kTextPrefix, last, part)).data) x *= 4.0;
  }
  const GoalSpec text = TextGoal{task.token_ids};
  const PlanResult b = cem_plan(m, start(task), task, text, 0.98, c);
  const PlanResult d = cem_plan(scaled, start(task), task, text, 0.98, c);
  EXPECT_EQ(b.sequence, d.sequence);
  EXPECT_EQ(a.sequence.size(), b.sequence.size());
}

TEST(PlanningSuite, OracleSanity) {
  PlannerConfig c = PlannerConfig::defaults(PlannerKind::mppi);
  c.num_sequences = 64;
  c.iterations = 4;
  const PlanningReport r = run_planning_suite(oracle_scorers(), registered_tasks(), c, 3, 1);
  EXPECT_GE(r.success.mean, 0.5);
  EXPECT_EQ(r.to_json(), run_planning_suite(oracle_scorers(), registered_tasks(), c, 3, 1).to_json());
  EXPECT_EQ(r.to_json().at("planner"), "mppi");
}

TEST(PlanningSuite, CemBudgetDoesNotHurtWithOracle) {
  PlannerConfig one = PlannerConfig::defaults(PlannerKind::cem);
  PlannerConfig three = one;
  three.iterations = 3;
  const double s1 = run_planning_suite(oracle_scorers(), registered_tasks(), one, 13, 2).success.mean;
  const double s3 = run_planning_suite(oracle_scorers(), registered_tasks(), three, 13, 2).success.mean;
  EXPECT_GE(s3, s1 - 0.05) << "1 iteration " << s1 << ", 3 iterations " << s3;
}

}  // namespace
}  // namespace liv
