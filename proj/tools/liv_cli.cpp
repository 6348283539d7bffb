// liv: data generation, training, reward evaluation, behavior cloning,
// planning and verification for the BlockWorld reward-learning pipeline.
//
// Exit codes: 0 success, 1 runtime or domain error, 2 usage error,
// 3 verification failure.

#include <malloc.h>

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "liv/planner.hpp"
#include "liv/verify.hpp"

namespace fs = std::filesystem;
using namespace liv;

namespace {

constexpr const char* kToolVersion = "liv 1.0.0";

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr int kExitVerification = 3;

// Thrown for flag combinations CLI11 cannot express; mapped to exit 2.
class UsageError : public Error {
 public:
  using Error::Error;
};

struct Inputs {
  std::map<std::string, std::string> fingerprints;

  void add(const std::string& role, const fs::path& dir) { fingerprints[role] = directory_fingerprint(dir); }
};

void write_manifest(const fs::path& dir, const std::string& command, const Json& config, const Inputs& inputs,
                    std::uint64_t seed) {
  Json in = Json::object();
  for (const auto& [role, hash] : inputs.fingerprints) in[role] = hash;
  write_json_file(dir / "run_manifest.json", {{"command", command},
                                              {"config", config},
                                              {"config_hash", sha256_hex(canonical_json(config))},
                                              {"inputs", in},
                                              {"tool_version", kToolVersion},
                                              {"seed", seed}});
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, sep)) {
    if (!item.empty()) parts.push_back(item);
  }
  return parts;
}

int parse_index(const std::string& s) {
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(s, &used);
  } catch (const std::exception&) {
    throw UsageError("bad episode index '" + s + "'");
  }
  if (used != s.size() || v < 0) throw UsageError("bad episode index '" + s + "'");
  return v;
}

// Episode selection: "all", "last:N", or comma-separated ids and a-b ranges.
std::vector<int> select_episodes(const std::string& spec, std::size_t available) {
  const auto count = static_cast<int>(available);
  std::vector<int> ids;
  if (spec == "all") {
    for (int i = 0; i < count; ++i) ids.push_back(i);
    return ids;
  }
  if (spec.starts_with("last:")) {
    const int n = parse_index(spec.substr(5));
    if (n > count) throw Error("requested last " + std::to_string(n) + " of " + std::to_string(count) + " episodes");
    for (int i = count - n; i < count; ++i) ids.push_back(i);
    return ids;
  }
  for (const auto& part : split(spec, ',')) {
    const auto dash = part.find('-');
    if (dash == std::string::npos) {
      ids.push_back(parse_index(part));
    } else {
      const int lo = parse_index(part.substr(0, dash));
      const int hi = parse_index(part.substr(dash + 1));
      if (hi < lo) throw UsageError("empty episode range '" + part + "'");
      for (int i = lo; i <= hi; ++i) ids.push_back(i);
    }
  }
  for (int id : ids) {
    if (id >= count) throw Error("unknown episode id " + std::to_string(id) + " (dataset has " + std::to_string(count) + ")");
  }
  if (ids.empty()) throw UsageError("no episodes selected");
  return ids;
}

std::vector<TaskSpec> select_tasks(const std::vector<int>& ids) {
  std::vector<TaskSpec> tasks;
  for (int id : ids) tasks.push_back(task_by_id(id));
  return tasks;
}

double checkpoint_gamma(const Checkpoint& ckpt) { return ckpt.metadata.value("gamma", LossConfig{}.gamma); }

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string out;
  int episodes = 100;
  std::string policy = "expert";
  int horizon = kDefaultHorizon;
  std::uint64_t seed = 0;
  std::vector<int> tasks = {0, 1, 2, 3};
};

int run_gen_data(const GenDataArgs& a) {
  DatasetConfig cfg{.episodes = a.episodes,
                    .policy = a.policy == "expert" ? DataPolicy::expert : DataPolicy::random,
                    .horizon = a.horizon,
                    .seed = a.seed,
                    .task_ids = a.tasks};
  const Dataset data = generate_dataset(cfg);
  save_dataset(data, a.out);
  const Json config = {{"episodes", a.episodes}, {"policy", a.policy}, {"horizon", a.horizon},
                       {"seed", a.seed},         {"tasks", a.tasks}};
  write_manifest(a.out, "gen-data", config, {}, a.seed);
  std::cout << "wrote " << data.videos.size() << " episodes (" << data.labeled_count() << " labeled) to " << a.out
            << "\n";
  return 0;
}

struct TrainArgs {
  std::string data;
  std::string out;
  std::string init;
  std::string objective = "liv";
  int steps = 2000;
  std::size_t batch = 64;
  double lr = 1e-4;
  double weight_decay = 1e-3;
  double gamma = 0.98;
  double p_degenerate = 0.0;
  bool symmetric = false;
  std::string infonce_scale = "one";
  std::size_t embed_dim = 32;
  int eval_every = 50;
  std::uint64_t seed = 0;
};

int run_train(const TrainArgs& a, const std::string& command) {
  TrainConfig cfg;
  cfg.objective = objective_from_string(a.objective);
  cfg.steps = a.steps;
  cfg.batch = a.batch;
  cfg.learning_rate = a.lr;
  cfg.weight_decay = a.weight_decay;
  cfg.seed = a.seed;
  cfg.eval_every = a.eval_every;
  cfg.loss.gamma = a.gamma;
  cfg.loss.p_degenerate = a.p_degenerate;
  cfg.loss.infonce_symmetric = a.symmetric;
  cfg.loss.infonce_outer_scale = a.infonce_scale == "one" ? InfoNceScale::one : InfoNceScale::one_minus_gamma;
  cfg.encoder.embed_dim = a.embed_dim;

  const Dataset data = load_dataset(a.data);
  Inputs inputs;
  inputs.add("dataset", a.data);
  TrainInit init;
  if (!a.init.empty()) {
    init.checkpoint = load_checkpoint(a.init);
    init.checkpoint_fingerprint = directory_fingerprint(a.init);
    inputs.add("init_checkpoint", a.init);
  }
  const TrainResult result = train(data, cfg, init);
  save_checkpoint(result.checkpoint, a.out);
  write_text_file(fs::path(a.out) / "metrics.csv", metrics_csv(result.metrics));
  write_manifest(a.out, command, cfg.to_json(), inputs, a.seed);
  if (result.aborted) {
    std::cerr << "training stopped after " << result.steps_completed << " steps: " << result.error
              << " (last good parameters saved)\n";
    return kExitRuntime;
  }
  std::cout << "trained " << result.steps_completed << " steps; checkpoint in " << a.out << "\n";
  return 0;
}

struct EvalRewardArgs {
  std::string ckpt;
  std::string data;
  std::string episodes = "all";
  std::string goal = "both";
  std::string out;
};

int run_eval_reward(const EvalRewardArgs& a) {
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  const LivModel model = model_from_checkpoint(ckpt);
  const Dataset data = load_dataset(a.data);
  check_vocabulary(ckpt.metadata, data);
  const double gamma = checkpoint_gamma(ckpt);
  const std::vector<int> ids = select_episodes(a.episodes, data.videos.size());
  const bool want_image = a.goal != "text";
  const bool want_text = a.goal != "image";

  fs::create_directories(fs::path(a.out) / "curves");
  Json per_episode = Json::array();
  double image_sum = 0.0, text_sum = 0.0;
  int image_n = 0, text_n = 0;
  for (int id : ids) {
    const AnnotatedVideo& video = data.videos[static_cast<std::size_t>(id)];
    if (video.frames.size() < 2) throw Error("episode " + std::to_string(id) + " has fewer than 2 frames");
    std::optional<CostCurve> image, text;
    if (want_image) image = cost_curve(model, video, ImageGoal{video.frames.back()}, gamma);
    if (want_text) {
      if (video.annotated()) {
        text = cost_curve(model, video, TextGoal{video.token_ids}, gamma);
      } else if (!want_image) {
        throw MissingTextError("episode " + std::to_string(id) + " has no annotation for a text goal");
      }
    }
    std::string csv = "frame";
    if (want_image) csv += ",image_goal_cost";
    if (want_text) csv += ",text_goal_cost";
    csv += "\n";
    for (std::size_t f = 0; f < video.frames.size(); ++f) {
      csv += std::to_string(f);
      if (want_image) csv += "," + format_real(image->values[f]);
      if (want_text) csv += "," + (text ? format_real(text->values[f]) : std::string());
      csv += "\n";
    }
    write_text_file(fs::path(a.out) / "curves" / (episode_stem(static_cast<std::size_t>(id)) + ".csv"),
                    csv);

    Json row = {{"episode", id}};
    if (image) {
      const CurveMetrics m = curve_metrics(*image);
      row["image_spearman"] = m.spearman;
      row["image_monotone_fraction"] = m.monotone_fraction;
      image_sum += m.spearman;
      ++image_n;
    }
    if (text) {
      const CurveMetrics m = curve_metrics(*text);
      row["text_spearman"] = m.spearman;
      row["text_monotone_fraction"] = m.monotone_fraction;
      text_sum += m.spearman;
      ++text_n;
    }
    per_episode.push_back(row);
  }
  Json metrics = {{"episodes", per_episode}, {"goal", a.goal}, {"gamma", gamma}};
  if (image_n > 0) metrics["mean_image_spearman"] = image_sum / image_n;
  if (text_n > 0) metrics["mean_text_spearman"] = text_sum / text_n;
  write_json_file(fs::path(a.out) / "metrics.json", metrics);

  Inputs inputs;
  inputs.add("checkpoint", a.ckpt);
  inputs.add("dataset", a.data);
  write_manifest(a.out, "eval-reward", {{"episodes", a.episodes}, {"goal", a.goal}, {"gamma", gamma}}, inputs, 0);
  if (image_n > 0) std::cout << "mean image-goal spearman " << image_sum / image_n << "\n";
  if (text_n > 0) std::cout << "mean text-goal spearman " << text_sum / text_n << "\n";
  return 0;
}

struct BcArgs {
  std::string ckpt;
  std::string data;
  std::string encoding = "language";
  std::string out;
  int steps = 5000;
  std::size_t batch = 64;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

int run_bc(const BcArgs& a) {
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  const LivModel encoder = model_from_checkpoint(ckpt);
  const Dataset data = load_dataset(a.data);
  check_vocabulary(ckpt.metadata, data);
  BcConfig cfg;
  cfg.steps = a.steps;
  cfg.batch = a.batch;
  cfg.learning_rate = a.lr;
  cfg.seed = a.seed;
  cfg.encoding = a.encoding == "language" ? TaskEncoding::language : TaskEncoding::one_hot;
  const BcResult result = bc_train(encoder, data, cfg);

  Json meta = policy_metadata(result.policy);
  meta["bc_config"] = cfg.to_json();
  meta["encoder_fingerprint"] = directory_fingerprint(a.ckpt);
  meta["dataset_fingerprint"] = dataset_fingerprint(data);
  save_checkpoint(result.policy.params, meta, a.out);
  std::string csv = "step,mse\n";
  for (std::size_t s = 0; s < result.loss_log.size(); ++s) csv += std::to_string(s) + "," + format_real(result.loss_log[s]) + "\n";
  write_text_file(fs::path(a.out) / "loss.csv", csv);

  Inputs inputs;
  inputs.add("encoder_checkpoint", a.ckpt);
  inputs.add("dataset", a.data);
  write_manifest(a.out, "bc", cfg.to_json(), inputs, a.seed);
  std::cout << "final mse " << (result.loss_log.empty() ? 0.0 : result.loss_log.back()) << "; policy in " << a.out
            << "\n";
  return 0;
}

struct RolloutArgs {
  std::string policy;
  std::string baseline;
  std::string ckpt;
  std::string out;
  int episodes_per_task = 25;
  std::uint64_t seed = 0;
  std::vector<int> tasks = {0, 1, 2, 3};
};

int run_rollout(const RolloutArgs& a, int threads) {
  if (a.policy.empty() == a.baseline.empty()) throw UsageError("give exactly one of --policy or --baseline");
  const std::vector<TaskSpec> tasks = select_tasks(a.tasks);
  Inputs inputs;
  Json config = {{"episodes_per_task", a.episodes_per_task}, {"seed", a.seed}, {"tasks", a.tasks}};
  SuccessReport report;
  if (!a.baseline.empty()) {
    const PolicyFn fn = a.baseline == "expert" ? expert_policy() : random_policy();
    report = evaluate_rollouts(fn, tasks, a.episodes_per_task, a.seed, threads);
    config["baseline"] = a.baseline;
  } else {
    if (a.ckpt.empty()) throw UsageError("--policy needs --ckpt (the frozen encoder it was trained on)");
    const Checkpoint pc = load_checkpoint(a.policy);
    const PolicyModel policy = policy_from_checkpoint(pc);
    const std::string encoder_hash = directory_fingerprint(a.ckpt);
    const std::string expected = pc.metadata.value("encoder_fingerprint", std::string());
    if (!expected.empty() && expected != encoder_hash) {
      throw Error("policy was trained on encoder " + expected + " but --ckpt is " + encoder_hash);
    }
    const LivModel encoder = model_from_checkpoint(load_checkpoint(a.ckpt));
    report = evaluate_policy(policy, encoder, tasks, a.episodes_per_task, a.seed, threads);
    inputs.add("policy", a.policy);
    inputs.fingerprints["encoder_checkpoint"] = encoder_hash;
    config["encoding"] = std::string(to_string(policy.encoding));
  }
  fs::create_directories(a.out);
  write_json_file(fs::path(a.out) / "success.json", report.to_json());
  write_manifest(a.out, "rollout", config, inputs, a.seed);
  std::cout << "mean success " << report.mean << "\n";
  return 0;
}

struct PlanArgs {
  std::string ckpt;
  std::string planner = "mppi";
  std::string out;
  std::optional<int> iterations;
  std::optional<int> sequences;
  std::optional<int> horizon;
  std::optional<double> lambda;
  std::optional<double> noise_std;
  std::optional<double> grip_noise_std;
  std::optional<double> smoothing;
  std::optional<double> elite_fraction;
  int episodes_per_task = 25;
  std::uint64_t seed = 0;
  bool oracle = false;
  std::vector<int> tasks = {0, 1, 2, 3};
};

int run_plan(const PlanArgs& a, int threads) {
  PlannerConfig cfg = PlannerConfig::defaults(a.planner == "mppi" ? PlannerKind::mppi : PlannerKind::cem);
  if (a.iterations) cfg.iterations = *a.iterations;
  if (a.sequences) cfg.num_sequences = *a.sequences;
  if (a.horizon) cfg.horizon = *a.horizon;
  if (a.lambda) cfg.temperature = *a.lambda;
  if (a.noise_std) cfg.noise_std = *a.noise_std;
  if (a.grip_noise_std) cfg.grip_noise_std = *a.grip_noise_std;
  if (a.smoothing) cfg.noise_smoothing = *a.smoothing;
  if (a.elite_fraction) cfg.elite_fraction = *a.elite_fraction;
  cfg.validate();
  const std::vector<TaskSpec> tasks = select_tasks(a.tasks);

  Inputs inputs;
  std::optional<LivModel> model;
  double gamma = LossConfig{}.gamma;
  if (!a.ckpt.empty()) {
    const Checkpoint ckpt = load_checkpoint(a.ckpt);
    model = model_from_checkpoint(ckpt);
    gamma = checkpoint_gamma(ckpt);
    inputs.add("checkpoint", a.ckpt);
  } else if (!a.oracle) {
    throw UsageError("plan needs --ckpt unless --oracle-reward is given");
  }
  const ScorerFactory scorers = a.oracle ? oracle_scorers(gamma) : learned_text_goal_scorers(*model, gamma);
  const PlanningReport report = run_planning_suite(scorers, tasks, cfg, a.episodes_per_task, a.seed, threads);

  Json out = report.to_json();
  out["reward"] = a.oracle ? "oracle" : "learned_text_goal";
  fs::create_directories(a.out);
  write_json_file(fs::path(a.out) / "report.json", out);
  Json config = cfg.to_json();
  config["episodes_per_task"] = a.episodes_per_task;
  config["tasks"] = a.tasks;
  config["reward"] = out["reward"];
  write_manifest(a.out, "plan", config, inputs, a.seed);
  std::cout << to_string(cfg.kind) << " mean success " << report.success.mean << "\n";
  return 0;
}

struct VerifyArgs {
  std::string suite = "all";
  std::uint64_t seed = 0;
  std::string out;
  bool corrupt = false;
};

int run_verify(const VerifyArgs& a) {
  const VerifyReport report = run_verification(a.suite, {.seed = a.seed, .corrupt_loss = a.corrupt});
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_json_file(fs::path(a.out) / "report.json", report.to_json());
    write_manifest(a.out, "verify", {{"suite", a.suite}, {"corrupt_loss", a.corrupt}}, {}, a.seed);
  }
  for (const auto& c : report.checks) {
    std::printf("%-30s %s  observed %.3e  tolerance %.1e\n", c.name.c_str(), c.passed ? "PASS" : "FAIL", c.observed,
                c.tolerance);
  }
  return report.passed() ? 0 : kExitVerification;
}

}  // namespace

int main(int argc, char** argv) {
  // Training allocates and frees many short-lived matrices of a few hundred
  // kilobytes; keeping them off mmap avoids page-fault churn.
  mallopt(M_MMAP_THRESHOLD, 64 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);

  CLI::App app{"BlockWorld language-image value learning: data, training, evaluation, planning"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  int threads = 1;
  const auto add_threads = [&threads](CLI::App* sub) {
    sub->add_option("--threads", threads, "Worker threads; 1 gives the bit-reproducible serial schedule")
        ->check(CLI::PositiveNumber);
  };
  const auto tasks_check = CLI::Range(0, 3);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a BlockWorld video dataset");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--episodes", gen.episodes, "Number of episodes")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--policy", gen.policy, "Behavior policy")->check(CLI::IsMember({"expert", "random"}));
  gen_cmd->add_option("--horizon", gen.horizon, "Actions per episode")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--seed", gen.seed, "Dataset seed");
  gen_cmd->add_option("--tasks", gen.tasks, "Task ids to sample from")->check(tasks_check)->delimiter(',');
  add_threads(gen_cmd);

  TrainArgs tr;
  const auto add_train_flags = [&tr](CLI::App* sub) {
    sub->add_option("--data", tr.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    sub->add_option("--out", tr.out, "Checkpoint output directory")->required();
    sub->add_option("--objective", tr.objective, "Training objective")
        ->check(CLI::IsMember({"liv", "vip-i", "vip-l", "infonce", "mm-vip"}));
    sub->add_option("--steps", tr.steps, "Gradient steps")->check(CLI::PositiveNumber);
    sub->add_option("--batch", tr.batch, "Batch size")->check(CLI::PositiveNumber);
    sub->add_option("--lr", tr.lr, "Adam learning rate")->check(CLI::NonNegativeNumber);
    sub->add_option("--weight-decay", tr.weight_decay, "Decoupled weight decay")->check(CLI::NonNegativeNumber);
    sub->add_option("--gamma", tr.gamma, "Discount factor")->check(CLI::Range(0.0, 1.0));
    sub->add_option("--p-degenerate", tr.p_degenerate, "Probability of a degenerate sample")->check(CLI::Range(0.0, 1.0));
    sub->add_flag("--infonce-symmetric", tr.symmetric, "Average both InfoNCE directions");
    sub->add_option("--infonce-scale", tr.infonce_scale, "Outer InfoNCE scale")
        ->check(CLI::IsMember({"one", "one-minus-gamma"}));
    sub->add_option("--embed-dim", tr.embed_dim, "Embedding width K (fresh models only)")->check(CLI::PositiveNumber);
    sub->add_option("--eval-every", tr.eval_every, "Metrics logging period")->check(CLI::PositiveNumber);
    sub->add_option("--seed", tr.seed, "Training seed");
  };
  auto* train_cmd = app.add_subcommand("train", "Train an encoder pair");
  add_train_flags(train_cmd);
  train_cmd->add_option("--init", tr.init, "Start from this checkpoint")->check(CLI::ExistingDirectory);
  add_threads(train_cmd);
  auto* finetune_cmd = app.add_subcommand("finetune", "Continue training from a checkpoint on in-domain data");
  add_train_flags(finetune_cmd);
  finetune_cmd->add_option("--init", tr.init, "Pre-trained checkpoint")->required()->check(CLI::ExistingDirectory);
  add_threads(finetune_cmd);

  EvalRewardArgs ev;
  auto* eval_cmd = app.add_subcommand("eval-reward", "Cost curves of episodes against image and text goals");
  eval_cmd->add_option("--ckpt", ev.ckpt, "Encoder checkpoint")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--data", ev.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--episodes", ev.episodes, "all | last:N | ids and ranges, e.g. 0,3,10-19");
  eval_cmd->add_option("--goal", ev.goal, "Goal modality")->check(CLI::IsMember({"image", "text", "both"}));
  eval_cmd->add_option("--out", ev.out, "Output directory")->required();
  add_threads(eval_cmd);

  BcArgs bc;
  auto* bc_cmd = app.add_subcommand("bc", "Behavior cloning on frozen encoder features");
  bc_cmd->add_option("--ckpt", bc.ckpt, "Frozen encoder checkpoint")->required()->check(CLI::ExistingDirectory);
  bc_cmd->add_option("--data", bc.data, "Dataset with actions")->required()->check(CLI::ExistingDirectory);
  bc_cmd->add_option("--encoding", bc.encoding, "Task conditioning")->check(CLI::IsMember({"language", "one-hot"}));
  bc_cmd->add_option("--steps", bc.steps, "Gradient steps")->check(CLI::PositiveNumber);
  bc_cmd->add_option("--batch", bc.batch, "Batch size")->check(CLI::PositiveNumber);
  bc_cmd->add_option("--lr", bc.lr, "Adam learning rate")->check(CLI::NonNegativeNumber);
  bc_cmd->add_option("--seed", bc.seed, "Policy seed");
  bc_cmd->add_option("--out", bc.out, "Policy checkpoint directory")->required();
  add_threads(bc_cmd);

  RolloutArgs ro;
  auto* rollout_cmd = app.add_subcommand("rollout", "Closed-loop success rates of a policy");
  rollout_cmd->add_option("--policy", ro.policy, "Policy checkpoint")->check(CLI::ExistingDirectory);
  rollout_cmd->add_option("--baseline", ro.baseline, "Scripted policy instead of a checkpoint")
      ->check(CLI::IsMember({"expert", "random"}));
  rollout_cmd->add_option("--ckpt", ro.ckpt, "Encoder checkpoint the policy was trained on")
      ->check(CLI::ExistingDirectory);
  rollout_cmd->add_option("--episodes-per-task", ro.episodes_per_task, "Seeded rollouts per task")
      ->check(CLI::PositiveNumber);
  rollout_cmd->add_option("--seed", ro.seed, "Evaluation seed");
  rollout_cmd->add_option("--tasks", ro.tasks, "Task ids")->check(tasks_check)->delimiter(',');
  rollout_cmd->add_option("--out", ro.out, "Output directory")->required();
  add_threads(rollout_cmd);

  PlanArgs pl;
  auto* plan_cmd = app.add_subcommand("plan", "Open-loop planning with a learned or oracle reward");
  plan_cmd->add_option("--ckpt", pl.ckpt, "Encoder checkpoint for the text-goal reward")->check(CLI::ExistingDirectory);
  plan_cmd->add_option("--planner", pl.planner, "Planner")->check(CLI::IsMember({"mppi", "cem"}));
  plan_cmd->add_option("--iterations", pl.iterations, "Optimization iterations")->check(CLI::NonNegativeNumber);
  plan_cmd->add_option("--sequences", pl.sequences, "Sampled sequences per iteration")->check(CLI::PositiveNumber);
  plan_cmd->add_option("--horizon", pl.horizon, "Planning horizon")->check(CLI::PositiveNumber);
  plan_cmd->add_option("--lambda", pl.lambda, "MPPI temperature")->check(CLI::NonNegativeNumber);
  plan_cmd->add_option("--noise-std", pl.noise_std, "Displacement noise std")->check(CLI::NonNegativeNumber);
  plan_cmd->add_option("--grip-noise-std", pl.grip_noise_std, "Grip noise std")->check(CLI::NonNegativeNumber);
  plan_cmd->add_option("--smoothing", pl.smoothing, "Noise filter coefficient in (0, 1]")->check(CLI::Range(0.0, 1.0));
  plan_cmd->add_option("--elite-fraction", pl.elite_fraction, "CEM elite fraction")->check(CLI::Range(0.0, 1.0));
  plan_cmd->add_option("--episodes-per-task", pl.episodes_per_task, "Seeded episodes per task")
      ->check(CLI::PositiveNumber);
  plan_cmd->add_option("--seed", pl.seed, "Evaluation seed");
  plan_cmd->add_option("--tasks", pl.tasks, "Task ids")->check(tasks_check)->delimiter(',');
  plan_cmd->add_flag("--oracle-reward", pl.oracle, "Score rollouts with the ground-truth distance reward");
  plan_cmd->add_option("--out", pl.out, "Output directory")->required();
  add_threads(plan_cmd);

  VerifyArgs ve;
  auto* verify_cmd = app.add_subcommand("verify", "Run the property suites");
  verify_cmd->add_option("--suite", ve.suite, "Suite")->check(CLI::IsMember({"prop1", "gradcheck", "invariants", "all"}));
  verify_cmd->add_option("--seed", ve.seed, "Suite seed");
  verify_cmd->add_option("--out", ve.out, "Write report.json here");
  verify_cmd->add_flag("--corrupt-loss", ve.corrupt, "Test hook: perturb the losses so the suite must fail")
      ->group("");
  add_threads(verify_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen_cmd) return run_gen_data(gen);
    if (*train_cmd) return run_train(tr, "train");
    if (*finetune_cmd) return run_train(tr, "finetune");
    if (*eval_cmd) return run_eval_reward(ev);
    if (*bc_cmd) return run_bc(bc);
    if (*rollout_cmd) return run_rollout(ro, threads);
    if (*plan_cmd) return run_plan(pl, threads);
    if (*verify_cmd) return run_verify(ve);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
