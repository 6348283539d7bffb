#pragma once

// Property suites behind `liv verify`: the degenerate-batch identity between
// VIP-L and InfoNCE, finite-difference gradient checks for every objective,
// and reward/serialization invariants.

#include <unistd.h>

#include <filesystem>
#include <string>
#include <vector>

#include "liv/checkpoint.hpp"
#include "liv/dataset_io.hpp"
#include "liv/reward.hpp"
#include "liv/training.hpp"

namespace liv {

struct CheckResult {
  std::string name;
  bool passed = false;
  double observed = 0.0;   // worst value seen
  double tolerance = 0.0;  // pass iff observed <= tolerance
  int cases = 0;

  Json to_json() const {
    return {{"name", name}, {"passed", passed}, {"observed", observed}, {"tolerance", tolerance},
            {"margin", tolerance - observed}, {"cases", cases}};
  }
};

struct VerifyReport {
  std::string suite;
  std::uint64_t seed = 0;
  std::vector<CheckResult> checks;

  bool passed() const {
    for (const auto& c : checks) {
      if (!c.passed) return false;
    }
    return !checks.empty();
  }

  Json to_json() const {
    Json list = Json::array();
    for (const auto& c : checks) list.push_back(c.to_json());
    return {{"suite", suite}, {"seed", seed}, {"passed", passed()}, {"checks", list}};
  }
};

struct VerifyOptions {
  std::uint64_t seed = 0;
  // Test hook: perturbs loss values and gradients so the loss checks must
  // fail. Used as a negative control for the verification pipeline itself.
  bool corrupt_loss = false;
};

inline constexpr double kProp1Tolerance = 1e-10;
inline constexpr double kGradcheckTolerance = 1e-4;
// A loss near 1 carries about 1e-11 of rounding noise in a central
// difference at step 1e-5, which swamps coordinates whose gradient is below
// 1e-7. At 1e-4 the noise drops tenfold and truncation stays negligible.
inline constexpr double kGradcheckStep = 1e-4;
inline constexpr double kTelescopeTolerancePerStep = 1e-6;
inline constexpr double kAlgebraTolerance = 1e-12;

namespace detail {

inline CheckResult finish_check(std::string name, double observed, double tolerance, int cases) {
  return {std::move(name), observed <= tolerance, observed, tolerance, cases};
}

inline Dataset verification_data(std::uint64_t seed) {
  return generate_dataset({.episodes = 8, .policy = DataPolicy::expert, .horizon = kDefaultHorizon,
                           .seed = derive_seed(seed, 0xDA7A)});
}

// A model small enough for dense finite differences (about 3.4k parameters).
inline EncoderConfig gradcheck_encoder() {
  EncoderConfig c;
  c.embed_dim = 8;
  c.vision_hidden = {1};
  c.token_dim = 8;
  c.text_hidden = {16};
  return c;
}

// Fresh weights with randomized biases, so a one-unit vision bottleneck
// still yields embeddings pointing in different directions. The bottleneck
// bias is shifted well above the spread of its input term so the unit stays
// active on every frame; a dead unit would make the loss locally constant.
// A wide output bias lets the embedding direction, not only its length,
// follow the bottleneck activation.
inline LivModel gradcheck_model(std::uint64_t seed) {
  LivModel m = init_model(gradcheck_encoder(), seed);
  Rng rng(derive_seed(seed, 0xB1A5));
  for (auto& [name, t] : m.params) {
    if (name.ends_with(".b")) {
      for (double& v : t.data) v = rng.normal(0.0, 0.5);
    }
  }
  for (double& v : m.params.at(layer_name(kVisionPrefix, 0, "b")).data) v = 1.5 + std::abs(v);
  for (double& v : m.params.at(layer_name(kVisionPrefix, 1, "b")).data) v *= 4.0;
  return m;
}

}  // namespace detail

// vip_l == infonce + 1 on fully degenerate batches (o_t = o_k = o_k+1 = g).
inline CheckResult check_prop1(const VerifyOptions& opt, int draws_per_batch_size = 25) {
  const Dataset data = detail::verification_data(opt.seed);
  const LossConfig degenerate{.p_degenerate = 1.0};
  double worst = 0.0;
  int cases = 0;
  for (std::size_t batch_size : {1, 2, 8, 64}) {
    for (int d = 0; d < draws_per_batch_size; ++d) {
      const std::uint64_t draw = derive_seed(opt.seed, 0x9000 + static_cast<std::uint64_t>(cases));
      const LivModel model = init_model(EncoderConfig{}, draw);
      Rng rng(derive_seed(draw, 1));
      const SampledBatch batch = sample_batch(data, batch_size, rng, degenerate, true);
      double vip_l = vip_l_loss(model, batch, degenerate.gamma);
      if (opt.corrupt_loss) vip_l += 1e-3;
      const double infonce = infonce_loss(model, batch, degenerate);
      worst = std::max(worst, std::abs(vip_l - (infonce + 1.0)));
      ++cases;
    }
  }
  return detail::finish_check("prop1_degenerate_identity", worst, kProp1Tolerance, cases);
}

struct GradcheckVariant {
  std::string name;
  Objective objective;
  bool symmetric = false;
};

inline std::vector<GradcheckVariant> gradcheck_variants() {
  return {{"vip_i", Objective::vip_i},
          {"vip_l", Objective::vip_l},
          {"infonce", Objective::infonce},
          {"infonce_symmetric", Objective::infonce, true},
          {"liv", Objective::liv},
          {"multimodal_vip", Objective::multimodal_vip}};
}

inline std::vector<CheckResult> check_gradients(const VerifyOptions& opt, int draws = 20, int samples = 24) {
  const Dataset data = detail::verification_data(opt.seed);
  std::vector<CheckResult> out;
  for (const auto& variant : gradcheck_variants()) {
    double worst = 0.0;
    for (int d = 0; d < draws; ++d) {
      const std::uint64_t draw = derive_seed(opt.seed, 0x6C00 + 97 * static_cast<std::uint64_t>(d));
      const LivModel model = detail::gradcheck_model(draw);
      const LossConfig config{.infonce_symmetric = variant.symmetric, .p_degenerate = 0.0};
      Rng rng(derive_seed(draw, 2));
      const SampledBatch batch = sample_batch(data, 8, rng, config, needs_text(variant.objective));
      DifferentiableLoss loss = make_batch_loss(model.config, batch, variant.objective, config);
      if (opt.corrupt_loss) {
        loss.value_and_gradient = [inner = loss.value_and_gradient](const ParamStore& p, Gradients& g) {
          const double v = inner(p, g);
          for (auto& [name, t] : g) {
            for (double& x : t.data) x *= 1.01;
          }
          return v;
        };
      }
      const FiniteDiffReport report = finite_diff_check(loss, model.params, kGradcheckStep, samples, rng);
      worst = std::max(worst, report.max_relative_error);
    }
    out.push_back(detail::finish_check("gradcheck_" + variant.name, worst, kGradcheckTolerance, draws));
  }
  return out;
}

inline std::vector<CheckResult> check_invariants(const VerifyOptions& opt, int cases = 1000) {
  EncoderConfig compact;
  compact.vision_hidden = {64, 32};
  Rng rng(derive_seed(opt.seed, 0x1A7));
  double telescope = 0.0, goal_reward = 0.0, self_value = 0.0, bound = 0.0, maximal = 0.0, scale = 0.0,
         permutation = 0.0;
  for (int c = 0; c < cases; ++c) {
    const LivModel model = init_model(compact, derive_seed(opt.seed, 0x1B000 + static_cast<std::uint64_t>(c)));
    const double gamma = rng.uniform(0.5, 0.99);
    const TaskSpec& task = registered_tasks()[rng.below(registered_tasks().size())];
    WorldState s = init_episode(rng, task);
    const int steps = static_cast<int>(rng.uniform_int(1, 12));
    std::vector<Image> frames{render(s)};
    for (int t = 0; t < steps; ++t) {
      s = step(s, random_action(rng));
      frames.push_back(render(s));
    }
    const GoalSpec goal = rng.uniform() < 0.5 ? GoalSpec{ImageGoal{frames.back()}} : GoalSpec{TextGoal{task.token_ids}};
    double summed = 0.0;
    for (std::size_t t = 0; t + 1 < frames.size(); ++t) summed += potential_reward(model, frames[t], frames[t + 1], goal, gamma);
    const double delta = value(model, frames.back(), goal, gamma) - value(model, frames.front(), goal, gamma);
    telescope = std::max(telescope, std::abs(summed - delta) / (kTelescopeTolerancePerStep * steps));

    const Image& g = frames.back();
    goal_reward = std::max(goal_reward, std::abs(potential_reward(model, g, g, ImageGoal{g}, gamma)));
    const double top = 1.0 / (1.0 - gamma);
    self_value = std::max(self_value, std::abs(value(model, g, ImageGoal{g}, gamma) - top) / top);
    const double v0 = value(model, frames.front(), ImageGoal{g}, gamma);
    bound = std::max(bound, (std::abs(v0) - top) / top);
    maximal = std::max(maximal, (v0 - value(model, g, ImageGoal{g}, gamma)) / top);

    const Vector a = encode_image(model, frames.front());
    const Vector b = encode_image(model, g);
    const double factor = std::exp(rng.uniform(std::log(1e-3), std::log(1e3)));
    scale = std::max(scale, std::abs(similarity(factor * a, b, gamma) - similarity(a, b, gamma)) / top);

    std::vector<int> shuffled = task.token_ids;
    std::reverse(shuffled.begin(), shuffled.end());
    permutation = std::max(permutation, (encode_text(model, shuffled) - encode_text(model, task.token_ids)).cwiseAbs().maxCoeff());
  }
  std::vector<CheckResult> out;
  // Telescoping is reported as a fraction of its 1e-6 * T budget.
  out.push_back(detail::finish_check("telescoping_sum", telescope, 1.0, cases));
  out.push_back(detail::finish_check("reward_at_goal_is_zero", goal_reward, 0.0, cases));
  out.push_back(detail::finish_check("goal_self_value", self_value, kAlgebraTolerance, cases));
  out.push_back(detail::finish_check("similarity_bounds", std::max(bound, 0.0), kAlgebraTolerance, cases));
  out.push_back(detail::finish_check("goal_value_is_maximal", std::max(maximal, 0.0), kAlgebraTolerance, cases));
  out.push_back(detail::finish_check("positive_scale_invariance", scale, kAlgebraTolerance, cases));
  out.push_back(detail::finish_check("text_permutation_invariance", permutation, 0.0, cases));
  return out;
}

// Save/load round trips and same-seed regeneration, compared bit for bit.
inline std::vector<CheckResult> check_round_trips(const VerifyOptions& opt) {
  namespace fs = std::filesystem;
  const fs::path root = fs::temp_directory_path() /
                        ("liv_verify_" + std::to_string(::getpid()) + "_" + std::to_string(opt.seed));
  fs::remove_all(root);
  std::vector<CheckResult> out;
  try {
    const Dataset data = detail::verification_data(opt.seed);
    save_dataset(data, root / "data");
    const Dataset loaded = load_dataset(root / "data");
    const bool same_data = dataset_fingerprint(loaded) == dataset_fingerprint(data);
    out.push_back(detail::finish_check("dataset_round_trip", same_data ? 0.0 : 1.0, 0.0, 1));

    const bool regenerated = dataset_fingerprint(detail::verification_data(opt.seed)) == dataset_fingerprint(data);
    out.push_back(detail::finish_check("dataset_regeneration", regenerated ? 0.0 : 1.0, 0.0, 1));

    const LivModel model = init_model(EncoderConfig{}, derive_seed(opt.seed, 0xC4));
    save_checkpoint(model.params, encoder_metadata(model), root / "ckpt");
    const Checkpoint back = load_checkpoint(root / "ckpt");
    const bool same_params = back.params == model.params;
    out.push_back(detail::finish_check("checkpoint_round_trip", same_params ? 0.0 : 1.0, 0.0, 1));
  } catch (...) {
    fs::remove_all(root);
    throw;
  }
  fs::remove_all(root);
  return out;
}

inline bool is_known_suite(std::string_view suite) {
  return suite == "prop1" || suite == "gradcheck" || suite == "invariants" || suite == "all";
}

inline VerifyReport run_verification(std::string_view suite, const VerifyOptions& opt) {
  if (!is_known_suite(suite)) throw Error("unknown verification suite '" + std::string(suite) + "'");
  VerifyReport report{std::string(suite), opt.seed, {}};
  const bool all = suite == "all";
  if (all || suite == "prop1") report.checks.push_back(check_prop1(opt));
  if (all || suite == "gradcheck") {
    for (auto& c : check_gradients(opt)) report.checks.push_back(std::move(c));
  }
  if (all || suite == "invariants") {
    for (auto& c : check_invariants(opt)) report.checks.push_back(std::move(c));
    for (auto& c : check_round_trips(opt)) report.checks.push_back(std::move(c));
  }
  return report;
}

}  // namespace liv
