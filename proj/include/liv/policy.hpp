#pragma once

// Language-conditioned behavior cloning on frozen encoder features, and
// closed-loop evaluation in BlockWorld.

#include <array>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "liv/parallel.hpp"
#include "liv/reward.hpp"

namespace liv {

inline const std::string kPolicyPrefix = "policy";

enum class TaskEncoding { language, one_hot };

inline std::string_view to_string(TaskEncoding e) { return e == TaskEncoding::language ? "language" : "one_hot"; }

struct PolicyModel {
  ParamStore params;
  TaskEncoding encoding = TaskEncoding::language;
  std::size_t embed_dim = 0;
  std::vector<TaskSpec> tasks = registered_tasks();
  std::vector<std::size_t> hidden = {256, 256};

  std::size_t encoding_width() const { return encoding == TaskEncoding::language ? embed_dim : tasks.size(); }
  std::size_t input_width() const { return embed_dim + encoding_width(); }
};

inline PolicyModel init_policy(std::size_t embed_dim, TaskEncoding encoding, std::vector<std::size_t> hidden,
                               std::uint64_t seed) {
  PolicyModel policy;
  policy.embed_dim = embed_dim;
  policy.encoding = encoding;
  policy.hidden = std::move(hidden);
  std::vector<std::size_t> widths{policy.input_width()};
  widths.insert(widths.end(), policy.hidden.begin(), policy.hidden.end());
  widths.push_back(kActionDim);
  Rng rng(derive_seed(seed, 0xB0C1));
  add_mlp(policy.params, kPolicyPrefix, widths, rng);
  round_to_storage_precision(policy.params);
  return policy;
}

inline Json policy_metadata(const PolicyModel& policy) {
  return {{"kind", "liv_policy"},
          {"policy",
           {{"encoding", std::string(to_string(policy.encoding))},
            {"embed_dim", policy.embed_dim},
            {"hidden", policy.hidden},
            {"action_dim", kActionDim},
            {"task_table", tasks_to_json(policy.tasks)}}}};
}

inline PolicyModel policy_from_checkpoint(const Checkpoint& ckpt) {
  PolicyModel policy;
  try {
    const Json& p = ckpt.metadata.at("policy");
    policy.encoding = p.at("encoding").get<std::string>() == "one_hot" ? TaskEncoding::one_hot : TaskEncoding::language;
    policy.embed_dim = p.at("embed_dim").get<std::size_t>();
    policy.hidden = p.at("hidden").get<std::vector<std::size_t>>();
    policy.tasks.clear();
    for (const auto& t : p.at("task_table")) policy.tasks.push_back(task_by_id(t.at("task_id").get<int>()));
  } catch (const Json::exception& e) {
    throw CorruptCheckpointError(std::string("checkpoint lacks policy metadata: ") + e.what());
  }
  PolicyModel fresh = init_policy(policy.embed_dim, policy.encoding, policy.hidden, 0);
  if (!fresh.params.same_layout(ckpt.params)) throw CorruptCheckpointError("policy tensors do not match metadata");
  policy.params = ckpt.params;
  return policy;
}

inline std::size_t task_slot(const PolicyModel& policy, int task_id) {
  for (std::size_t i = 0; i < policy.tasks.size(); ++i) {
    if (policy.tasks[i].task_id == task_id) return i;
  }
  throw Error("unknown task id " + std::to_string(task_id));
}

// Task-encoding slice of the policy input.
inline Vector encode_task(const PolicyModel& policy, const LivModel& encoder, const TaskSpec& task) {
  if (policy.encoding == TaskEncoding::language) return encode_text(encoder, task.token_ids);
  Vector v = Vector::Zero(static_cast<Eigen::Index>(policy.tasks.size()));
  v(static_cast<Eigen::Index>(task_slot(policy, task.task_id))) = 1.0;
  return v;
}

// The network predicts each action channel divided by its bound, so the
// displacement channels are not drowned out by the 0/1 grip target. Raw
// outputs are reported in action units.
inline constexpr std::array<double, kActionDim> kActionScale{kMaxDisplacement, kMaxDisplacement, 1.0};

inline Action raw_output(const Matrix& out, Eigen::Index col = 0) {
  return {kActionScale[0] * out(0, col), kActionScale[1] * out(1, col), kActionScale[2] * out(2, col)};
}

// Raw output (dx, dy, grip) executed as clamped displacement and a binary grip.
inline Action execute_output(double dx, double dy, double grip) {
  return {clamp_displacement(dx), clamp_displacement(dy), grip >= 0.5 ? 1.0 : 0.0};
}

inline Action policy_action(const PolicyModel& policy, const LivModel& encoder, const Image& frame,
                            const TaskSpec& task) {
  Vector input(static_cast<Eigen::Index>(policy.input_width()));
  input << encode_image(encoder, frame), encode_task(policy, encoder, task);
  const Action raw = raw_output(mlp_forward_batch(policy.params, kPolicyPrefix, input));
  return execute_output(raw.dx, raw.dy, raw.grip);
}

// ---------------------------------------------------------------------------
// Behavior cloning.

struct BcConfig {
  int steps = 5000;
  std::size_t batch = 64;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  TaskEncoding encoding = TaskEncoding::language;
  std::vector<std::size_t> hidden = {256, 256};

  Json to_json() const {
    return {{"steps", steps},
            {"batch", batch},
            {"learning_rate", learning_rate},
            {"seed", seed},
            {"encoding", std::string(to_string(encoding))},
            {"hidden", hidden}};
  }
};

struct BcResult {
  PolicyModel policy;
  std::vector<double> loss_log;  // MSE per step
};

struct BcSample {
  std::size_t feature;  // column in the frame-feature matrix
  std::size_t task;     // column in the task-encoding matrix
  Action action;
};

inline BcResult bc_train(const LivModel& encoder, const Dataset& data, const BcConfig& config) {
  if (vocabulary_hash(data.vocabulary) != vocabulary_hash(vocabulary())) {
    throw VocabularyMismatchError(vocabulary_hash(vocabulary()), vocabulary_hash(data.vocabulary));
  }
  PolicyModel policy = init_policy(encoder.embed_dim(), config.encoding, config.hidden, config.seed);

  // Frozen features, computed once.
  std::vector<Image> frames;
  std::vector<BcSample> samples;
  std::vector<Vector> task_codes;
  std::map<std::vector<int>, std::size_t> code_index;
  for (const auto& video : data.videos) {
    if (!video.actions || !video.annotated()) continue;
    if (config.encoding == TaskEncoding::one_hot && !video.task_id) continue;
    const std::vector<int> key =
        config.encoding == TaskEncoding::language ? video.token_ids : std::vector<int>{*video.task_id};
    auto [it, inserted] = code_index.emplace(key, task_codes.size());
    if (inserted) {
      task_codes.push_back(config.encoding == TaskEncoding::language
                               ? encode_text(encoder, video.token_ids)
                               : encode_task(policy, encoder, task_by_id(*video.task_id)));
    }
    for (std::size_t t = 0; t < video.actions->size(); ++t) {
      samples.push_back({frames.size(), it->second, (*video.actions)[t]});
      frames.push_back(video.frames[t]);
    }
  }
  if (samples.empty()) throw Error("dataset has no annotated videos with actions for behavior cloning");

  const auto k = static_cast<Eigen::Index>(encoder.embed_dim());
  Matrix features(k, static_cast<Eigen::Index>(frames.size()));
  constexpr std::size_t kChunk = 512;
  for (std::size_t start = 0; start < frames.size(); start += kChunk) {
    const std::size_t count = std::min(kChunk, frames.size() - start);
    features.middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count)) =
        encode_images(encoder, std::span<const Image>(frames).subspan(start, count));
  }

  AdamState adam = AdamState::for_params(policy.params, {.learning_rate = config.learning_rate});
  Rng rng(derive_seed(config.seed, 0xBC));
  BcResult result;
  const auto batch = static_cast<Eigen::Index>(config.batch);
  const auto width = static_cast<Eigen::Index>(policy.input_width());
  Matrix input(width, batch);
  Matrix target(kActionDim, batch);
  for (int step = 0; step < config.steps; ++step) {
    for (Eigen::Index n = 0; n < batch; ++n) {
      const BcSample& s = samples[rng.below(samples.size())];
      input.col(n) << features.col(static_cast<Eigen::Index>(s.feature)), task_codes[s.task];
      target.col(n) << s.action.dx / kActionScale[0], s.action.dy / kActionScale[1], s.action.grip / kActionScale[2];
    }
    MlpCache cache;
    const Matrix out = mlp_forward_batch(policy.params, kPolicyPrefix, input, &cache);
    const Matrix diff = out - target;
    const double mse = diff.squaredNorm() / static_cast<double>(diff.size());
    Gradients grads = policy.params.zeros_like();
    mlp_backward(policy.params, kPolicyPrefix, cache, (2.0 / static_cast<double>(diff.size())) * diff, grads);
    check_finite(mse, grads);
    adam_step(policy.params, grads, adam);
    round_to_storage_precision(policy.params);
    result.loss_log.push_back(mse);
  }
  result.policy = std::move(policy);
  return result;
}

// ---------------------------------------------------------------------------
// Closed-loop evaluation.

using PolicyFn = std::function<Action(const WorldState&, const Image&, const TaskSpec&, Rng&)>;

struct SuccessReport {
  std::map<int, double> per_task;
  double mean = 0.0;

  Json to_json() const {
    Json j = Json::object();
    for (const auto& [task, rate] : per_task) j[std::to_string(task)] = rate;
    j["mean"] = mean;
    return j;
  }
};

inline std::uint64_t evaluation_seed(std::uint64_t seed, int task_id, int episode) {
  return derive_seed(seed, 0xE0A1'0000ULL + static_cast<std::uint64_t>(task_id) * 100'003ULL +
                               static_cast<std::uint64_t>(episode));
}

// Success is latched: an episode counts once is_success holds after any step.
inline bool rollout_success(const PolicyFn& policy, const TaskSpec& task, std::uint64_t episode_seed, int steps) {
  Rng rng(episode_seed);
  WorldState state = init_episode(rng, task);
  for (int s = 0; s < steps; ++s) {
    state = step(state, policy(state, render(state), task, rng));
    if (is_success(state, task)) return true;
  }
  return false;
}

inline SuccessReport evaluate_rollouts(const PolicyFn& policy, const std::vector<TaskSpec>& tasks,
                                       int episodes_per_task, std::uint64_t seed, int threads = 1,
                                       int steps = kDefaultHorizon) {
  if (episodes_per_task < 1) throw Error("episodes per task must be >= 1");
  const std::size_t per = static_cast<std::size_t>(episodes_per_task);
  std::vector<char> success(tasks.size() * per, 0);
  parallel_for(success.size(), threads, [&](std::size_t i) {
    const TaskSpec& task = tasks[i / per];
    success[i] = rollout_success(policy, task, evaluation_seed(seed, task.task_id, static_cast<int>(i % per)), steps);
  });
  SuccessReport report;
  double total = 0.0;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    double hits = 0.0;
    for (std::size_t e = 0; e < per; ++e) hits += success[t * per + e];
    report.per_task[tasks[t].task_id] = hits / static_cast<double>(per);
    total += hits;
  }
  report.mean = total / static_cast<double>(success.size());
  return report;
}

inline SuccessReport evaluate_policy(const PolicyModel& policy, const LivModel& encoder,
                                     const std::vector<TaskSpec>& tasks, int episodes_per_task, std::uint64_t seed,
                                     int threads = 1) {
  // Task codes do not change during a rollout; cache them per task.
  std::map<int, Vector> codes;
  for (const auto& t : tasks) codes[t.task_id] = encode_task(policy, encoder, t);
  PolicyFn fn = [&](const WorldState&, const Image& frame, const TaskSpec& task, Rng&) {
    Vector input(static_cast<Eigen::Index>(policy.input_width()));
    input << encode_image(encoder, frame), codes.at(task.task_id);
    const Action raw = raw_output(mlp_forward_batch(policy.params, kPolicyPrefix, input));
    return execute_output(raw.dx, raw.dy, raw.grip);
  };
  return evaluate_rollouts(fn, tasks, episodes_per_task, seed, threads);
}

inline PolicyFn expert_policy() {
  return [](const WorldState& s, const Image&, const TaskSpec& t, Rng& rng) { return expert_action(s, t, rng); };
}

inline PolicyFn random_policy() {
  return [](const WorldState&, const Image&, const TaskSpec&, Rng& rng) { return random_action(rng); };
}

}  // namespace liv
