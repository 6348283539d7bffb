#pragma once

// Training loop shared by pre-training and fine-tuning: sample a batch,
// evaluate the objective and its gradient, take an Adam step. Fine-tuning is
// the same loop started from a checkpoint.

#include <cmath>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "liv/objectives.hpp"

namespace liv {

struct TrainConfig {
  Objective objective = Objective::liv;
  int steps = 2000;
  std::size_t batch = 64;
  double learning_rate = 1e-4;
  double weight_decay = 1e-3;
  std::uint64_t seed = 0;
  int eval_every = 50;
  LossConfig loss;
  EncoderConfig encoder;  // ignored when starting from a checkpoint

  void validate() const {
    if (steps < 1) throw Error("steps must be >= 1");
    if (batch < 1) throw Error("batch must be >= 1");
    if (eval_every < 1) throw Error("eval_every must be >= 1");
    loss.validate();
  }

  Json to_json() const {
    return {{"objective", std::string(to_string(objective))},
            {"steps", steps},
            {"batch", batch},
            {"learning_rate", learning_rate},
            {"weight_decay", weight_decay},
            {"seed", seed},
            {"eval_every", eval_every},
            {"loss", loss.to_json()},
            {"encoder", encoder.to_json()}};
  }
};

struct MetricsRow {
  int step = 0;
  double loss = 0.0;
  std::optional<double> vip_i;
  std::optional<double> infonce;
  std::optional<double> vip_l;
  double grad_norm = 0.0;
};

inline constexpr const char* kMetricsHeader = "step,loss,vip_i,infonce,vip_l,grad_norm";

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream out;
  out << kMetricsHeader << '\n';
  auto opt = [](const std::optional<double>& v) { return v ? format_real(*v) : std::string(); };
  for (const auto& r : rows) {
    out << r.step << ',' << format_real(r.loss) << ',' << opt(r.vip_i) << ',' << opt(r.infonce) << ','
        << opt(r.vip_l) << ',' << format_real(r.grad_norm) << '\n';
  }
  return out.str();
}

struct TrainResult {
  LivModel model;
  Checkpoint checkpoint;
  std::vector<MetricsRow> metrics;
  int steps_completed = 0;
  bool aborted = false;
  std::string error;
};

inline void check_vocabulary(const Json& metadata, const Dataset& data) {
  const std::string expected = metadata.value("vocabulary_hash", std::string());
  const std::string actual = vocabulary_hash(data.vocabulary);
  if (expected != actual) throw VocabularyMismatchError(expected, actual);
}

// Starting point for `train`: a fresh model or a loaded checkpoint.
struct TrainInit {
  std::optional<Checkpoint> checkpoint;
  std::string checkpoint_fingerprint;
};

inline TrainResult train(const Dataset& data, const TrainConfig& config, const TrainInit& init = {}) {
  config.validate();
  if (vocabulary_hash(data.vocabulary) != vocabulary_hash(vocabulary())) {
    throw VocabularyMismatchError(vocabulary_hash(vocabulary()), vocabulary_hash(data.vocabulary));
  }
  const bool text = needs_text(config.objective);
  if (text && data.labeled_count() == 0) throw NoAnnotatedVideosError();

  LivModel model;
  if (init.checkpoint) {
    check_vocabulary(init.checkpoint->metadata, data);
    model = model_from_checkpoint(*init.checkpoint);
  } else {
    model = init_model(config.encoder, config.seed);
  }

  TrainResult result;
  result.model = model;
  AdamState adam = AdamState::for_params(model.params, {.learning_rate = config.learning_rate,
                                                        .weight_decay = config.weight_decay});
  Rng sampler(derive_seed(config.seed, 0x5A3B));

  for (int step = 0; step < config.steps; ++step) {
    try {
      const SampledBatch batch = sample_batch(data, config.batch, sampler, config.loss, text);
      Gradients grads = model.params.zeros_like();
      const LossBreakdown loss = evaluate_objective(model, batch, config.objective, config.loss, &grads);
      check_finite(loss.total, grads);
      if (step % config.eval_every == 0 || step + 1 == config.steps) {
        result.metrics.push_back({step, loss.total, loss.vip_i, loss.infonce, loss.vip_l, gradient_norm(grads)});
      }
      adam_step(model.params, grads, adam);
      round_to_storage_precision(model.params);
      for (const auto& [name, t] : model.params) {
        for (double v : t.data) {
          if (!std::isfinite(v)) throw NumericError("non-finite parameter after update", name);
        }
      }
    } catch (const NumericError& e) {
      result.aborted = true;
      result.error = e.what();
      break;
    } catch (const DegenerateEmbeddingError& e) {
      result.aborted = true;
      result.error = e.what();
      break;
    }
    // Only parameters that survived a full step are kept.
    result.model = model;
    result.steps_completed = step + 1;
  }

  Json meta = encoder_metadata(result.model);
  meta["gamma"] = config.loss.gamma;
  meta["train_config"] = config.to_json();
  meta["dataset_fingerprint"] = dataset_fingerprint(data);
  meta["steps_completed"] = result.steps_completed;
  meta["init"] = init.checkpoint ? "checkpoint:" + init.checkpoint_fingerprint : std::string("fresh");
  if (init.checkpoint) meta["encoder"] = result.model.config.to_json();
  result.checkpoint = {result.model.params, meta};
  return result;
}

// Mean objective over `batches` batches drawn with `seed`. Read-only.
inline double eval_loss(const LivModel& model, const Dataset& data, Objective objective, const LossConfig& config,
                        std::size_t batch_size, int batches, std::uint64_t seed) {
  if (batches < 1) throw Error("batches must be >= 1");
  Rng rng(derive_seed(seed, 0xE7A1));
  double sum = 0.0;
  for (int i = 0; i < batches; ++i) {
    const SampledBatch batch = sample_batch(data, batch_size, rng, config, needs_text(objective));
    sum += evaluate_objective(model, batch, objective, config).total;
  }
  return sum / batches;
}

}  // namespace liv
