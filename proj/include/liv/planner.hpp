#pragma once

// Open-loop trajectory optimization over the ground-truth BlockWorld
// dynamics: MPPI (exponentially weighted averaging) and CEM (elite refit).
// Candidates are scored by a RolloutScorer, either the learned
// potential-based reward or an oracle distance reward.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "liv/parallel.hpp"
#include "liv/policy.hpp"
#include "liv/reward.hpp"

namespace liv {

enum class PlannerKind { mppi, cem };

inline std::string_view to_string(PlannerKind k) { return k == PlannerKind::mppi ? "mppi" : "cem"; }

struct PlannerConfig {
  PlannerKind kind = PlannerKind::mppi;
  int horizon = kDefaultHorizon;
  int num_sequences = 128;
  int iterations = 8;
  double temperature = 0.5;      // MPPI lambda
  double elite_fraction = 0.1;   // CEM
  double noise_std = 0.04;       // dx, dy
  double grip_noise_std = 0.25;  // grip channel
  double grip_init = 0.75;       // initial mean of the grip channel
  double noise_smoothing = 0.4;  // beta in e_t = beta * n_t + (1 - beta) * e_{t-1}; 1 is white noise
  double variance_floor = 1e-3;  // CEM
  std::uint64_t seed = 0;
  std::vector<Action> warm_start;

  static PlannerConfig defaults(PlannerKind kind) {
    PlannerConfig c;
    c.kind = kind;
    if (kind == PlannerKind::cem) {
      c.num_sequences = 200;
      c.iterations = 1;
    }
    return c;
  }

  void validate() const {
    if (horizon < 1) throw Error("planning horizon must be >= 1");
    if (num_sequences < 1) throw Error("number of sequences must be >= 1");
    if (iterations < 0) throw Error("iterations must be >= 0");
    if (!(elite_fraction > 0.0 && elite_fraction <= 1.0)) throw Error("elite fraction must lie in (0, 1]");
    if (temperature < 0.0) throw Error("temperature must be >= 0");
    if (noise_std < 0.0 || grip_noise_std < 0.0) throw Error("noise std must be >= 0");
    if (!(noise_smoothing > 0.0 && noise_smoothing <= 1.0)) throw Error("noise smoothing must lie in (0, 1]");
    if (warm_start.size() > static_cast<std::size_t>(horizon)) throw Error("warm start longer than horizon");
  }

  Json to_json() const {
    return {{"kind", std::string(to_string(kind))},
            {"horizon", horizon},
            {"num_sequences", num_sequences},
            {"iterations", iterations},
            {"temperature", temperature},
            {"elite_fraction", elite_fraction},
            {"noise_std", noise_std},
            {"grip_noise_std", grip_noise_std},
            {"grip_init", grip_init},
            {"noise_smoothing", noise_smoothing},
            {"variance_floor", variance_floor},
            {"seed", seed},
            {"warm_start_length", warm_start.size()}};
  }
};

// 3 x H matrix: column t is the action at step t (dx, dy, grip).
using ActionPlan = Matrix;

inline ActionPlan clamp_plan(ActionPlan plan) {
  for (Eigen::Index t = 0; t < plan.cols(); ++t) {
    plan(0, t) = clamp_displacement(plan(0, t));
    plan(1, t) = clamp_displacement(plan(1, t));
    plan(2, t) = std::isnan(plan(2, t)) ? 0.0 : std::clamp(plan(2, t), 0.0, 1.0);
  }
  return plan;
}

inline std::vector<Action> to_actions(const ActionPlan& plan) {
  std::vector<Action> out;
  out.reserve(static_cast<std::size_t>(plan.cols()));
  for (Eigen::Index t = 0; t < plan.cols(); ++t) out.push_back({plan(0, t), plan(1, t), plan(2, t)});
  return out;
}

struct Rollout {
  std::vector<WorldState> states;  // H + 1 states, initial first
  bool success = false;            // latched over the rollout
};

inline Rollout simulate(const WorldState& initial, const ActionPlan& plan, const TaskSpec& task) {
  Rollout r;
  r.states.reserve(static_cast<std::size_t>(plan.cols()) + 1);
  r.states.push_back(initial);
  for (Eigen::Index t = 0; t < plan.cols(); ++t) {
    r.states.push_back(step(r.states.back(), {plan(0, t), plan(1, t), plan(2, t)}));
    r.success = r.success || is_success(r.states.back(), task);
  }
  return r;
}

// Scores a batch of candidate rollouts; higher is better.
using RolloutScorer = std::function<std::vector<double>(const std::vector<Rollout>&)>;

// Sum of potential rewards along a frame sequence.
inline double score_rollout(const LivModel& model, std::span<const Image> frames, const GoalSpec& goal, double gamma) {
  if (frames.size() < 2) throw Error("scoring needs at least 2 frames");
  const auto v = values_against(model, frames, embed_goal(model, goal), gamma);
  double total = 0.0;
  for (std::size_t t = 0; t + 1 < v.size(); ++t) total += v[t + 1] - v[t];
  return total;
}

// Learned reward. The summed potential reward telescopes to
// V(o_T) - V(o_0), so only the first and last frames are encoded.
inline RolloutScorer learned_scorer(const LivModel& model, const GoalSpec& goal, double gamma) {
  const Vector goal_embedding = embed_goal(model, goal);
  return [&model, goal_embedding, gamma](const std::vector<Rollout>& rollouts) {
    std::vector<Image> frames;
    frames.reserve(2 * rollouts.size());
    for (const auto& r : rollouts) frames.push_back(render(r.states.back()));
    for (const auto& r : rollouts) frames.push_back(render(r.states.front()));
    const auto v = values_against(model, frames, goal_embedding, gamma);
    std::vector<double> scores(rollouts.size());
    for (std::size_t i = 0; i < rollouts.size(); ++i) scores[i] = v[i] - v[rollouts.size() + i];
    return scores;
  };
}

// Ground-truth shaping for one state: -d(block, zone) - 0.5 * d(gripper,
// block), the second term gated off once the block is inside the success
// radius, plus 1 while the task's success criterion holds.
inline double oracle_reward(const WorldState& s, const TaskSpec& task) {
  const Vec2 block = s.blocks[task.block_index()];
  const double to_zone = distance(block, task.zone());
  double r = -to_zone;
  if (to_zone > kSuccessRadius) r -= 0.5 * distance(s.gripper, block);
  if (is_success(s, task)) r += 1.0;
  return r;
}

// Mean oracle reward over the visited states, in value units (divided by
// 1 - gamma) so one temperature suits both the oracle and learned scorers.
inline RolloutScorer oracle_scorer(const TaskSpec& task, double gamma = LossConfig{}.gamma) {
  return [task, gamma](const std::vector<Rollout>& rollouts) {
    std::vector<double> scores;
    scores.reserve(rollouts.size());
    for (const auto& r : rollouts) {
      double total = 0.0;
      for (std::size_t t = 1; t < r.states.size(); ++t) total += oracle_reward(r.states[t], task);
      scores.push_back(total / static_cast<double>(r.states.size() - 1) / (1.0 - gamma));
    }
    return scores;
  };
}

struct PlanResult {
  std::vector<Action> sequence;     // H actions
  std::vector<double> scores;       // candidates of the final iteration
  std::vector<WorldState> trajectory;
  bool success = false;
};

namespace detail {

inline ActionPlan initial_mean(const PlannerConfig& cfg) {
  ActionPlan mean = ActionPlan::Zero(kActionDim, cfg.horizon);
  mean.row(2).setConstant(cfg.grip_init);
  for (std::size_t t = 0; t < cfg.warm_start.size(); ++t) {
    const Action& a = cfg.warm_start[t];
    mean.col(static_cast<Eigen::Index>(t)) << a.dx, a.dy, a.grip;
  }
  return mean;
}

inline ActionPlan sample_plan(const ActionPlan& mean, const ActionPlan& stddev, double smoothing, Rng& rng) {
  ActionPlan plan(mean.rows(), mean.cols());
  Vector noise = Vector::Zero(mean.rows());
  for (Eigen::Index t = 0; t < mean.cols(); ++t) {
    for (Eigen::Index d = 0; d < mean.rows(); ++d) {
      noise(d) = smoothing * stddev(d, t) * rng.normal() + (1.0 - smoothing) * noise(d);
      plan(d, t) = mean(d, t) + noise(d);
    }
  }
  return clamp_plan(plan);
}

inline ActionPlan initial_stddev(const PlannerConfig& cfg) {
  ActionPlan s(kActionDim, cfg.horizon);
  s.row(0).setConstant(cfg.noise_std);
  s.row(1).setConstant(cfg.noise_std);
  s.row(2).setConstant(cfg.grip_noise_std);
  return s;
}

inline PlanResult finish(const ActionPlan& mean, std::vector<double> scores, const WorldState& initial,
                         const TaskSpec& task) {
  const ActionPlan executed = clamp_plan(mean);
  Rollout r = simulate(initial, executed, task);
  return {to_actions(executed), std::move(scores), std::move(r.states), r.success};
}

}  // namespace detail

// MPPI weights exp((s_k - max s) / lambda), normalized. lambda < 1e-8 puts
// all weight on the first best candidate.
inline std::vector<double> mppi_weights(const std::vector<double>& scores, double temperature) {
  std::vector<double> w(scores.size(), 0.0);
  const auto best = std::max_element(scores.begin(), scores.end());
  if (temperature < 1e-8) {
    w[static_cast<std::size_t>(best - scores.begin())] = 1.0;
    return w;
  }
  double sum = 0.0;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    w[k] = std::exp((scores[k] - *best) / temperature);
    sum += w[k];
  }
  for (double& x : w) x /= sum;
  return w;
}

inline PlanResult mppi_plan(const RolloutScorer& scorer, const WorldState& initial, const TaskSpec& task,
                            const PlannerConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, 0x3991));
  ActionPlan mean = detail::initial_mean(cfg);
  const ActionPlan stddev = detail::initial_stddev(cfg);
  if (cfg.iterations == 0) {
    // No optimization: execute one draw from the proposal distribution.
    return detail::finish(detail::sample_plan(mean, stddev, cfg.noise_smoothing, rng), {}, initial, task);
  }
  std::vector<double> scores;
  for (int it = 0; it < cfg.iterations; ++it) {
    std::vector<ActionPlan> plans;
    std::vector<Rollout> rollouts;
    for (int k = 0; k < cfg.num_sequences; ++k) {
      plans.push_back(detail::sample_plan(mean, stddev, cfg.noise_smoothing, rng));
      rollouts.push_back(simulate(initial, plans.back(), task));
    }
    scores = scorer(rollouts);
    for (double s : scores) {
      if (!std::isfinite(s)) throw NumericError("non-finite rollout score");
    }
    const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
    if (*lo == *hi) continue;  // no preference signal, keep the current mean
    const auto w = mppi_weights(scores, cfg.temperature);
    ActionPlan next = ActionPlan::Zero(mean.rows(), mean.cols());
    for (std::size_t k = 0; k < plans.size(); ++k) next += w[k] * plans[k];
    mean = std::move(next);
  }
  return detail::finish(mean, std::move(scores), initial, task);
}

inline PlanResult cem_plan(const RolloutScorer& scorer, const WorldState& initial, const TaskSpec& task,
                           const PlannerConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, 0xCE11));
  ActionPlan mean = detail::initial_mean(cfg);
  ActionPlan stddev = detail::initial_stddev(cfg);
  if (cfg.iterations == 0) return detail::finish(detail::sample_plan(mean, stddev, cfg.noise_smoothing, rng), {}, initial, task);
  const double std_floor = std::sqrt(cfg.variance_floor);
  const auto elites = static_cast<std::size_t>(std::ceil(cfg.elite_fraction * cfg.num_sequences - 1e-9));
  std::vector<double> scores;
  for (int it = 0; it < cfg.iterations; ++it) {
    std::vector<ActionPlan> plans;
    std::vector<Rollout> rollouts;
    for (int k = 0; k < cfg.num_sequences; ++k) {
      plans.push_back(detail::sample_plan(mean, stddev, cfg.noise_smoothing, rng));
      rollouts.push_back(simulate(initial, plans.back(), task));
    }
    scores = scorer(rollouts);
    for (double s : scores) {
      if (!std::isfinite(s)) throw NumericError("non-finite rollout score");
    }
    std::vector<std::size_t> order(plans.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    const std::size_t count = std::max<std::size_t>(1, elites);
    ActionPlan next = ActionPlan::Zero(mean.rows(), mean.cols());
    for (std::size_t e = 0; e < count; ++e) next += plans[order[e]];
    next /= static_cast<double>(count);
    ActionPlan var = ActionPlan::Zero(mean.rows(), mean.cols());
    for (std::size_t e = 0; e < count; ++e) var += (plans[order[e]] - next).cwiseAbs2();
    var /= static_cast<double>(count);
    mean = std::move(next);
    stddev = var.cwiseSqrt().cwiseMax(std_floor);
  }
  return detail::finish(mean, std::move(scores), initial, task);
}

inline PlanResult plan(const RolloutScorer& scorer, const WorldState& initial, const TaskSpec& task,
                       const PlannerConfig& cfg) {
  return cfg.kind == PlannerKind::mppi ? mppi_plan(scorer, initial, task, cfg) : cem_plan(scorer, initial, task, cfg);
}

inline PlanResult mppi_plan(const LivModel& model, const WorldState& initial, const TaskSpec& task,
                            const GoalSpec& goal, double gamma, const PlannerConfig& cfg) {
  return mppi_plan(learned_scorer(model, goal, gamma), initial, task, cfg);
}

inline PlanResult cem_plan(const LivModel& model, const WorldState& initial, const TaskSpec& task,
                           const GoalSpec& goal, double gamma, const PlannerConfig& cfg) {
  return cem_plan(learned_scorer(model, goal, gamma), initial, task, cfg);
}

// ---------------------------------------------------------------------------
// Planning suite.

using ScorerFactory = std::function<RolloutScorer(const TaskSpec&)>;

inline ScorerFactory learned_text_goal_scorers(const LivModel& model, double gamma) {
  return [&model, gamma](const TaskSpec& task) { return learned_scorer(model, TextGoal{task.token_ids}, gamma); };
}

inline ScorerFactory oracle_scorers(double gamma = LossConfig{}.gamma) {
  return [gamma](const TaskSpec& task) { return oracle_scorer(task, gamma); };
}

struct PlanningReport {
  PlannerConfig config;
  SuccessReport success;

  Json to_json() const {
    Json per_task = Json::object();
    for (const auto& [task, rate] : success.per_task) per_task[std::to_string(task)] = rate;
    return {{"planner", std::string(to_string(config.kind))},
            {"config", config.to_json()},
            {"per_task", per_task},
            {"mean", success.mean}};
  }
};

inline PlanningReport run_planning_suite(const ScorerFactory& scorers, const std::vector<TaskSpec>& tasks,
                                         const PlannerConfig& cfg, int episodes_per_task, std::uint64_t seed,
                                         int threads = 1) {
  if (episodes_per_task < 1) throw Error("episodes per task must be >= 1");
  cfg.validate();
  const std::size_t per = static_cast<std::size_t>(episodes_per_task);
  std::vector<char> success(tasks.size() * per, 0);
  parallel_for(success.size(), threads, [&](std::size_t i) {
    const TaskSpec& task = tasks[i / per];
    const int episode = static_cast<int>(i % per);
    const std::uint64_t episode_seed = evaluation_seed(seed, task.task_id, episode);
    Rng rng(episode_seed);
    const WorldState initial = init_episode(rng, task);
    PlannerConfig local = cfg;
    local.seed = derive_seed(episode_seed, 0x9A);
    success[i] = plan(scorers(task), initial, task, local).success;
  });
  PlanningReport report{cfg, {}};
  double total = 0.0;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    double hits = 0.0;
    for (std::size_t e = 0; e < per; ++e) hits += success[t * per + e];
    report.success.per_task[tasks[t].task_id] = hits / static_cast<double>(per);
    total += hits;
  }
  report.success.mean = total / static_cast<double>(success.size());
  return report;
}

}  // namespace liv
