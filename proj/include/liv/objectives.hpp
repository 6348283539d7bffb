#pragma once

// Value-learning objectives over sampled video sub-trajectories.
//
// The similarity metric is S(a, b) = cos(a, b) / (1 - gamma), so S lies in
// [-1/(1-gamma), 1/(1-gamma)] and (1 - gamma) * S is the plain cosine.
// Losses are evaluated on embedding matrices (one column per batch slot) and
// differentiated analytically; `evaluate_objective` wires them to the
// encoders and back-propagates into the parameters.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "liv/encoders.hpp"

namespace liv {

inline constexpr double kMinEmbeddingNorm = 1e-12;

enum class Objective { liv, vip_i, vip_l, infonce, multimodal_vip };
enum class InfoNceScale { one, one_minus_gamma };

inline std::string_view to_string(Objective o) {
  switch (o) {
    case Objective::liv: return "liv";
    case Objective::vip_i: return "vip-i";
    case Objective::vip_l: return "vip-l";
    case Objective::infonce: return "infonce";
    case Objective::multimodal_vip: return "mm-vip";
  }
  return "?";
}

inline Objective objective_from_string(std::string_view s) {
  for (auto o : {Objective::liv, Objective::vip_i, Objective::vip_l, Objective::infonce, Objective::multimodal_vip}) {
    if (to_string(o) == s) return o;
  }
  throw Error("unknown objective '" + std::string(s) + "'");
}

inline bool needs_text(Objective o) { return o != Objective::vip_i; }

struct LossConfig {
  double gamma = 0.98;
  InfoNceScale infonce_outer_scale = InfoNceScale::one;
  bool infonce_symmetric = false;
  double p_degenerate = 0.0;

  void validate() const {
    if (!(gamma > 0.0 && gamma < 1.0)) throw Error("gamma must lie in (0, 1)");
    if (!(p_degenerate >= 0.0 && p_degenerate <= 1.0)) throw Error("p_degenerate must lie in [0, 1]");
  }

  Json to_json() const {
    return {{"gamma", gamma},
            {"infonce_outer_scale", infonce_outer_scale == InfoNceScale::one ? "one" : "one_minus_gamma"},
            {"infonce_symmetric", infonce_symmetric},
            {"p_degenerate", p_degenerate}};
  }

  static LossConfig from_json(const Json& j) {
    LossConfig c;
    c.gamma = j.at("gamma").get<double>();
    c.infonce_outer_scale = j.at("infonce_outer_scale").get<std::string>() == "one" ? InfoNceScale::one
                                                                                   : InfoNceScale::one_minus_gamma;
    c.infonce_symmetric = j.at("infonce_symmetric").get<bool>();
    c.p_degenerate = j.at("p_degenerate").get<double>();
    c.validate();
    return c;
  }
};

// ---------------------------------------------------------------------------
// Similarity.

inline double checked_squared_norm(const Eigen::Ref<const Vector>& v) {
  const double sq = v.squaredNorm();
  if (!(std::sqrt(sq) >= kMinEmbeddingNorm)) throw DegenerateEmbeddingError("embedding norm below 1e-12");
  return sq;
}

inline double cosine(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) {
  const double c = a.dot(b) / std::sqrt(checked_squared_norm(a) * checked_squared_norm(b));
  return std::clamp(c, -1.0, 1.0);
}

inline double similarity(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b, double gamma) {
  return cosine(a, b) / (1.0 - gamma);
}

// Unit columns plus their original norms.
struct UnitColumns {
  Matrix unit;
  Vector norm;

  explicit UnitColumns(const Matrix& m) : unit(m), norm(m.cols()) {
    for (Eigen::Index i = 0; i < m.cols(); ++i) {
      norm(i) = std::sqrt(checked_squared_norm(m.col(i)));
      unit.col(i) /= norm(i);
    }
  }
};

// cos(a_i, b_i) for matching columns.
inline Vector paired_cosine(const UnitColumns& a, const UnitColumns& b) {
  Vector c = (a.unit.cwiseProduct(b.unit)).colwise().sum().transpose();
  return c.cwiseMax(-1.0).cwiseMin(1.0);
}

// Gradients of a loss with upstream g_i = dL/dcos(a_i, b_i).
inline void paired_cosine_backward(const UnitColumns& a, const UnitColumns& b, const Vector& cos, const Vector& g,
                                   Matrix& grad_a, Matrix& grad_b) {
  for (Eigen::Index i = 0; i < cos.size(); ++i) {
    grad_a.col(i) += g(i) / a.norm(i) * (b.unit.col(i) - cos(i) * a.unit.col(i));
    grad_b.col(i) += g(i) / b.norm(i) * (a.unit.col(i) - cos(i) * b.unit.col(i));
  }
}

// C(i, j) = cos(a_i, b_j).
inline Matrix cross_cosine(const UnitColumns& a, const UnitColumns& b) {
  Matrix c = a.unit.transpose() * b.unit;
  return c.cwiseMax(-1.0).cwiseMin(1.0);
}

inline void cross_cosine_backward(const UnitColumns& a, const UnitColumns& b, const Matrix& cos, const Matrix& g,
                                  Matrix& grad_a, Matrix& grad_b) {
  const Matrix gc = g.cwiseProduct(cos);
  const Vector row = gc.rowwise().sum();
  const Vector col = gc.colwise().sum().transpose();
  Matrix da = b.unit * g.transpose() - a.unit * row.asDiagonal();
  Matrix db = a.unit * g - b.unit * col.asDiagonal();
  grad_a += da * a.norm.cwiseInverse().asDiagonal();
  grad_b += db * b.norm.cwiseInverse().asDiagonal();
}

// Numerically stable log(sum(exp(x))) and its softmax.
inline double log_sum_exp(const Vector& x, Vector* softmax = nullptr) {
  const double m = x.maxCoeff();
  const Vector e = (x.array() - m).exp().matrix();
  const double s = e.sum();
  if (softmax) *softmax = e / s;
  return m + std::log(s);
}

// ---------------------------------------------------------------------------
// Embedding-level losses. Each column of each matrix is one batch slot.

struct BatchEmbeddings {
  Matrix initial;  // phi(o_t)
  Matrix current;  // phi(o_k)
  Matrix next;     // phi(o_{k+1})
  Matrix goal;     // phi(g)
  Matrix text;     // psi(l)

  static BatchEmbeddings zeros_like(const BatchEmbeddings& e) {
    auto z = [](const Matrix& m) { return Matrix::Zero(m.rows(), m.cols()).eval(); };
    return {z(e.initial), z(e.current), z(e.next), z(e.goal), z(e.text)};
  }
};

// (1-gamma)/B * sum_i -S(o_t^i, g^i) + log (1/B) sum_i exp[S(o_k^i, g^i) + 1 - gamma S(o_{k+1}^i, g^i)]
inline double vip_i_from_embeddings(const BatchEmbeddings& e, double gamma, BatchEmbeddings* grad = nullptr) {
  const double scale = 1.0 / (1.0 - gamma);
  const auto batch = static_cast<double>(e.goal.cols());
  const UnitColumns t(e.initial), k(e.current), k1(e.next), g(e.goal);
  const Vector ct = paired_cosine(t, g);
  const Vector ck = paired_cosine(k, g);
  const Vector ck1 = paired_cosine(k1, g);

  const double initial_term = (1.0 - gamma) / batch * (-(scale * ct).sum());
  const Vector exponent = ((scale * ck).array() + 1.0 - gamma * (scale * ck1).array()).matrix();
  Vector weights;
  const double log_mean = log_sum_exp(exponent, &weights) - std::log(batch);

  if (grad) {
    const Vector g_t = Vector::Constant(ct.size(), -(1.0 - gamma) * scale / batch);
    paired_cosine_backward(t, g, ct, g_t, grad->initial, grad->goal);
    paired_cosine_backward(k, g, ck, (scale * weights).eval(), grad->current, grad->goal);
    paired_cosine_backward(k1, g, ck1, (-gamma * scale * weights).eval(), grad->next, grad->goal);
  }
  return initial_term + log_mean;
}

// scale/B * sum_i -log( exp(cos(g^i, l^i)) / (1/B) sum_j exp(cos(g^j, l^i)) ), where
// cos = (1-gamma) S. The symmetric variant averages with the text-negatives direction.
inline double infonce_from_embeddings(const BatchEmbeddings& e, double gamma, const LossConfig& config,
                                      BatchEmbeddings* grad = nullptr) {
  const double scale = 1.0 / (1.0 - gamma);
  const Eigen::Index n = e.goal.cols();
  const auto batch = static_cast<double>(n);
  const double outer = config.infonce_outer_scale == InfoNceScale::one ? 1.0 : (1.0 - gamma);
  const UnitColumns l(e.text), g(e.goal);
  const Matrix cos = cross_cosine(l, g);  // (i, j) = cos(l_i, g_j)
  const Matrix logits = (1.0 - gamma) * (scale * cos);

  Matrix dlogits = Matrix::Zero(n, n);
  double image_negatives = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    Vector p;
    image_negatives += -logits(i, i) + log_sum_exp(logits.row(i).transpose(), &p) - std::log(batch);
    dlogits.row(i) += p.transpose();
    dlogits(i, i) -= 1.0;
  }
  double loss = outer / batch * image_negatives;

  if (config.infonce_symmetric) {
    double text_negatives = 0.0;
    Matrix dlogits_t = Matrix::Zero(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      Vector p;
      text_negatives += -logits(j, j) + log_sum_exp(logits.col(j), &p) - std::log(batch);
      dlogits_t.col(j) += p;
      dlogits_t(j, j) -= 1.0;
    }
    loss = 0.5 * (loss + outer / batch * text_negatives);
    dlogits = 0.5 * dlogits + 0.5 * dlogits_t;
  }

  if (grad) {
    const Matrix dcos = (outer / batch * (1.0 - gamma) * scale) * dlogits;
    cross_cosine_backward(l, g, cos, dcos, grad->text, grad->goal);
  }
  return loss;
}

// 1/B sum_i [ -(1-gamma) S(o_t^i, l^i) + log (1/B) sum_j exp[S(o_k^j, l^i) + 1 - gamma S(o_{k+1}^j, l^i)] ]
inline double vip_l_from_embeddings(const BatchEmbeddings& e, double gamma, BatchEmbeddings* grad = nullptr) {
  const double scale = 1.0 / (1.0 - gamma);
  const Eigen::Index n = e.text.cols();
  const auto batch = static_cast<double>(n);
  const UnitColumns l(e.text), t(e.initial), k(e.current), k1(e.next);
  const Vector ct = paired_cosine(t, l);
  const Matrix ck = cross_cosine(l, k);    // (i, j) = cos(l_i, o_k^j)
  const Matrix ck1 = cross_cosine(l, k1);  // (i, j) = cos(l_i, o_{k+1}^j)

  double total = 0.0;
  Matrix weights(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector exponent = ((scale * ck.row(i)).array() + 1.0 - gamma * (scale * ck1.row(i)).array()).transpose();
    Vector p;
    total += -(1.0 - gamma) * (scale * ct(i)) + log_sum_exp(exponent, &p) - std::log(batch);
    weights.row(i) = p.transpose();
  }

  if (grad) {
    const Vector g_t = Vector::Constant(n, -(1.0 - gamma) * scale / batch);
    paired_cosine_backward(t, l, ct, g_t, grad->initial, grad->text);
    cross_cosine_backward(l, k, ck, (scale / batch * weights).eval(), grad->text, grad->current);
    cross_cosine_backward(l, k1, ck1, (-gamma * scale / batch * weights).eval(), grad->text, grad->next);
  }
  return total / batch;
}

// ---------------------------------------------------------------------------
// Minibatch sampling.

struct SampledBatch {
  std::vector<Image> initial;  // o_t
  std::vector<Image> current;  // o_k
  std::vector<Image> next;     // o_{k+1}
  std::vector<Image> goal;     // g
  std::vector<std::optional<std::vector<int>>> texts;
  std::vector<std::size_t> video_ids;
  std::vector<int> t_index;  // 1-based, as in the sampling rule t in [1, h-1]
  std::vector<int> k_index;  // 1-based, t <= k < h
  std::vector<bool> degenerate;

  std::size_t size() const { return goal.size(); }

  void push(const AnnotatedVideo& video, std::size_t id, int t, int k, bool make_degenerate) {
    const Image& g = video.goal();
    if (make_degenerate) {
      initial.push_back(g);
      current.push_back(g);
      next.push_back(g);
    } else {
      initial.push_back(video.frames[static_cast<std::size_t>(t - 1)]);
      current.push_back(video.frames[static_cast<std::size_t>(k - 1)]);
      next.push_back(video.frames[static_cast<std::size_t>(k)]);
    }
    goal.push_back(g);
    texts.push_back(video.annotated() ? std::optional(video.token_ids) : std::nullopt);
    video_ids.push_back(id);
    t_index.push_back(t);
    k_index.push_back(k);
    degenerate.push_back(make_degenerate);
  }
};

inline SampledBatch sample_batch(const Dataset& data, std::size_t batch_size, Rng& rng, const LossConfig& config,
                                 bool require_text) {
  if (data.videos.empty()) throw Error("cannot sample from an empty dataset");
  if (batch_size == 0) throw Error("batch size must be >= 1");
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < data.videos.size(); ++i) {
    if (!require_text || data.videos[i].annotated()) pool.push_back(i);
  }
  if (pool.empty()) throw NoAnnotatedVideosError();

  SampledBatch batch;
  for (std::size_t s = 0; s < batch_size; ++s) {
    const std::size_t id = pool[rng.below(pool.size())];
    const AnnotatedVideo& video = data.videos[id];
    const int h = video.horizon();
    if (h < 2) throw Error("video " + std::to_string(id) + " has fewer than 2 frames");
    const int t = static_cast<int>(rng.uniform_int(1, h - 1));
    const int k = static_cast<int>(rng.uniform_int(t, h - 1));
    const bool degenerate = rng.uniform() < config.p_degenerate;
    batch.push(video, id, t, k, degenerate);
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Parameter-level evaluation.

struct LossBreakdown {
  double total = 0.0;
  std::optional<double> vip_i;
  std::optional<double> infonce;
  std::optional<double> vip_l;
};

inline std::vector<std::vector<int>> require_texts(const SampledBatch& batch) {
  std::vector<std::vector<int>> texts;
  texts.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (!batch.texts[i]) throw MissingTextError("batch slot " + std::to_string(i) + " has no annotation");
    texts.push_back(*batch.texts[i]);
  }
  return texts;
}

// Evaluates `objective` on `batch`; when `grads` is given, accumulates the
// exact parameter gradient into it.
inline LossBreakdown evaluate_objective(const LivModel& model, const SampledBatch& batch, Objective objective,
                                        const LossConfig& config, Gradients* grads = nullptr) {
  config.validate();
  const auto n = static_cast<Eigen::Index>(batch.size());
  if (n == 0) throw Error("empty batch");
  const bool use_vip_i = objective == Objective::vip_i || objective == Objective::liv ||
                         objective == Objective::multimodal_vip;
  const bool use_infonce = objective == Objective::infonce || objective == Objective::liv;
  const bool use_vip_l = objective == Objective::vip_l || objective == Objective::multimodal_vip;

  // All frames go through the vision encoder in one pass: [o_t | o_k | o_{k+1} | g].
  std::vector<Image> frames;
  frames.reserve(4 * batch.size());
  for (const auto* part : {&batch.initial, &batch.current, &batch.next, &batch.goal}) {
    frames.insert(frames.end(), part->begin(), part->end());
  }
  MlpCache vision_cache;
  const Matrix vision = encode_images(model, frames, grads ? &vision_cache : nullptr);

  BatchEmbeddings e;
  e.initial = vision.middleCols(0, n);
  e.current = vision.middleCols(n, n);
  e.next = vision.middleCols(2 * n, n);
  e.goal = vision.middleCols(3 * n, n);

  TextCache text_cache;
  if (use_infonce || use_vip_l) {
    const auto texts = require_texts(batch);
    e.text = encode_texts(model, texts, grads ? &text_cache : nullptr);
  } else {
    e.text = Matrix::Zero(vision.rows(), 0);
  }

  BatchEmbeddings de = BatchEmbeddings::zeros_like(e);
  BatchEmbeddings* dptr = grads ? &de : nullptr;
  LossBreakdown out;
  if (use_vip_i) out.vip_i = vip_i_from_embeddings(e, config.gamma, dptr);
  if (use_infonce) out.infonce = infonce_from_embeddings(e, config.gamma, config, dptr);
  if (use_vip_l) out.vip_l = vip_l_from_embeddings(e, config.gamma, dptr);
  out.total = out.vip_i.value_or(0.0) + out.infonce.value_or(0.0) + out.vip_l.value_or(0.0);

  if (grads) {
    Matrix dvision(vision.rows(), vision.cols());
    dvision << de.initial, de.current, de.next, de.goal;
    vision_backward(model, vision_cache, dvision, *grads);
    if (e.text.cols() > 0) text_backward(model, text_cache, de.text, *grads);
  }
  return out;
}

inline double vip_i_loss(const LivModel& m, const SampledBatch& b, double gamma) {
  return evaluate_objective(m, b, Objective::vip_i, LossConfig{.gamma = gamma}).total;
}
inline double infonce_loss(const LivModel& m, const SampledBatch& b, const LossConfig& config) {
  return evaluate_objective(m, b, Objective::infonce, config).total;
}
inline double vip_l_loss(const LivModel& m, const SampledBatch& b, double gamma) {
  return evaluate_objective(m, b, Objective::vip_l, LossConfig{.gamma = gamma}).total;
}
inline double liv_loss(const LivModel& m, const SampledBatch& b, const LossConfig& config) {
  return evaluate_objective(m, b, Objective::liv, config).total;
}
inline double multimodal_vip_loss(const LivModel& m, const SampledBatch& b, double gamma) {
  return evaluate_objective(m, b, Objective::multimodal_vip, LossConfig{.gamma = gamma}).total;
}

// The objective on a fixed batch as a function of the parameters, for the
// finite-difference oracle and the generic gradient API.
inline DifferentiableLoss make_batch_loss(const EncoderConfig& encoder, const SampledBatch& batch, Objective objective,
                                          const LossConfig& config) {
  return {
      [=](const ParamStore& p) { return evaluate_objective(LivModel{encoder, p}, batch, objective, config).total; },
      [=](const ParamStore& p, Gradients& g) {
        return evaluate_objective(LivModel{encoder, p}, batch, objective, config, &g).total;
      }};
}

}  // namespace liv
