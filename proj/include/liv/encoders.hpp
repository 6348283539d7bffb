#pragma once

// Vision encoder phi: flattened 32x32x3 image (scaled by 1/255) -> MLP -> R^K.
// Language encoder psi: mean-pooled token embeddings -> MLP -> R^K.

#include <span>
#include <string>
#include <vector>

#include "liv/checkpoint.hpp"
#include "liv/dataset_io.hpp"
#include "liv/diffnet.hpp"
#include "liv/worldgen.hpp"

namespace liv {

inline const std::string kVisionPrefix = "vision";
inline const std::string kTextPrefix = "text";
inline const std::string kTokenTable = "text.embed";

struct EncoderConfig {
  std::size_t embed_dim = 32;
  std::vector<std::size_t> vision_hidden = {256, 128};
  std::size_t token_dim = 32;
  std::vector<std::size_t> text_hidden = {64};
  std::size_t vocab_size = 8;

  void validate() const {
    if (embed_dim < 2) throw ShapeError("embedding width K must be >= 2");
    if (token_dim == 0 || vocab_size == 0) throw ShapeError("text widths must be positive");
    for (auto w : vision_hidden) {
      if (w == 0) throw ShapeError("vision hidden widths must be positive");
    }
    for (auto w : text_hidden) {
      if (w == 0) throw ShapeError("text hidden widths must be positive");
    }
  }

  Json to_json() const {
    return {{"embed_dim", embed_dim},
            {"vision_hidden", vision_hidden},
            {"token_dim", token_dim},
            {"text_hidden", text_hidden},
            {"vocab_size", vocab_size},
            {"image_dims", {kImageSide, kImageSide, kImageChannels}}};
  }

  static EncoderConfig from_json(const Json& j) {
    EncoderConfig c;
    c.embed_dim = j.at("embed_dim").get<std::size_t>();
    c.vision_hidden = j.at("vision_hidden").get<std::vector<std::size_t>>();
    c.token_dim = j.at("token_dim").get<std::size_t>();
    c.text_hidden = j.at("text_hidden").get<std::vector<std::size_t>>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.validate();
    return c;
  }
};

struct LivModel {
  EncoderConfig config;
  ParamStore params;

  std::size_t embed_dim() const { return config.embed_dim; }
};

inline std::vector<std::size_t> vision_widths(const EncoderConfig& c) {
  std::vector<std::size_t> w{static_cast<std::size_t>(kImageBytes)};
  w.insert(w.end(), c.vision_hidden.begin(), c.vision_hidden.end());
  w.push_back(c.embed_dim);
  return w;
}

inline std::vector<std::size_t> text_widths(const EncoderConfig& c) {
  std::vector<std::size_t> w{c.token_dim};
  w.insert(w.end(), c.text_hidden.begin(), c.text_hidden.end());
  w.push_back(c.embed_dim);
  return w;
}

inline LivModel init_model(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  LivModel model{config, {}};
  Rng rng(derive_seed(seed, 0x1A17));
  add_mlp(model.params, kVisionPrefix, vision_widths(config), rng);
  Tensor table = Tensor::zeros({config.vocab_size, config.token_dim});
  for (double& v : table.data) v = rng.normal();
  model.params.add(kTokenTable, std::move(table));
  add_mlp(model.params, kTextPrefix, text_widths(config), rng);
  round_to_storage_precision(model.params);
  return model;
}

inline Json encoder_metadata(const LivModel& model) {
  return {{"kind", "liv_encoder"},
          {"encoder", model.config.to_json()},
          {"embed_dim", model.config.embed_dim},
          {"vocabulary", vocabulary()},
          {"vocabulary_hash", vocabulary_hash(vocabulary())}};
}

inline LivModel model_from_checkpoint(const Checkpoint& ckpt) {
  EncoderConfig config;
  try {
    config = EncoderConfig::from_json(ckpt.metadata.at("encoder"));
  } catch (const Json::exception& e) {
    throw CorruptCheckpointError(std::string("checkpoint lacks encoder metadata: ") + e.what());
  }
  LivModel model = init_model(config, 0);
  if (!model.params.same_layout(ckpt.params)) {
    throw CorruptCheckpointError("checkpoint tensors do not match the encoder architecture in its metadata");
  }
  model.params = ckpt.params;
  return model;
}

// ---------------------------------------------------------------------------
// Vision encoder.

inline Matrix images_to_matrix(std::span<const Image> images) {
  Matrix x(kImageBytes, static_cast<Eigen::Index>(images.size()));
  for (std::size_t n = 0; n < images.size(); ++n) {
    const auto& img = images[n];
    for (int i = 0; i < kImageBytes; ++i) x(i, static_cast<Eigen::Index>(n)) = img[static_cast<std::size_t>(i)] / 255.0;
  }
  return x;
}

// K x N embeddings, one column per image. Unnormalized.
inline Matrix encode_images(const LivModel& model, std::span<const Image> images, MlpCache* cache = nullptr) {
  return mlp_forward_batch(model.params, kVisionPrefix, images_to_matrix(images), cache);
}

inline Vector encode_image(const LivModel& model, const Image& frame) {
  return encode_images(model, std::span<const Image>(&frame, 1)).col(0);
}

inline void vision_backward(const LivModel& model, const MlpCache& cache, const Matrix& grad_embeddings,
                            Gradients& grads) {
  mlp_backward(model.params, kVisionPrefix, cache, grad_embeddings, grads);
}

// ---------------------------------------------------------------------------
// Language encoder.

struct TextCache {
  std::vector<std::vector<int>> tokens;
  MlpCache mlp;
};

inline void validate_tokens(const LivModel& model, const std::vector<int>& tokens) {
  if (tokens.empty()) throw EmptyAnnotationError();
  for (int id : tokens) {
    if (id < 0 || static_cast<std::size_t>(id) >= model.config.vocab_size) {
      throw ShapeError("token id " + std::to_string(id) + " out of vocabulary range");
    }
  }
}

inline Matrix encode_texts(const LivModel& model, std::span<const std::vector<int>> texts, TextCache* cache = nullptr) {
  const Tensor& table = model.params.at(kTokenTable);
  const auto rows = table.matrix();
  Matrix pooled(static_cast<Eigen::Index>(model.config.token_dim), static_cast<Eigen::Index>(texts.size()));
  for (std::size_t n = 0; n < texts.size(); ++n) {
    validate_tokens(model, texts[n]);
    Vector sum = Vector::Zero(pooled.rows());
    for (int id : texts[n]) sum += rows.row(id).transpose();
    pooled.col(static_cast<Eigen::Index>(n)) = sum / static_cast<double>(texts[n].size());
  }
  if (cache) cache->tokens.assign(texts.begin(), texts.end());
  return mlp_forward_batch(model.params, kTextPrefix, pooled, cache ? &cache->mlp : nullptr);
}

inline Vector encode_text(const LivModel& model, const std::vector<int>& tokens) {
  return encode_texts(model, std::span<const std::vector<int>>(&tokens, 1)).col(0);
}

inline void text_backward(const LivModel& model, const TextCache& cache, const Matrix& grad_embeddings,
                          Gradients& grads) {
  Matrix grad_pooled;
  mlp_backward(model.params, kTextPrefix, cache.mlp, grad_embeddings, grads, &grad_pooled);
  auto table_grad = grads.at(kTokenTable).matrix();
  for (std::size_t n = 0; n < cache.tokens.size(); ++n) {
    const double inv = 1.0 / static_cast<double>(cache.tokens[n].size());
    for (int id : cache.tokens[n]) table_grad.row(id) += inv * grad_pooled.col(static_cast<Eigen::Index>(n)).transpose();
  }
}

}  // namespace liv
