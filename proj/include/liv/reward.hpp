#pragma once

// Goal-conditioned value V(o; goal) = S(phi(o), phi(g)) or S(phi(o), psi(l)),
// the potential-based reward R = V(o_{t+1}) - V(o_t), and per-frame cost
// curves.
//
// Units: value and reward use S, which is cosine / (1 - gamma). Cost curves
// report -cosine, i.e. -(1 - gamma) * V, so they lie in [-1, 1].

#include <algorithm>
#include <numeric>
#include <string>
#include <variant>
#include <vector>

#include "liv/objectives.hpp"

namespace liv {

struct ImageGoal {
  Image frame;
};

struct TextGoal {
  std::vector<int> token_ids;
};

using GoalSpec = std::variant<ImageGoal, TextGoal>;

inline std::string describe(const GoalSpec& goal) {
  if (const auto* text = std::get_if<TextGoal>(&goal)) {
    std::string out = "text:";
    for (std::size_t i = 0; i < text->token_ids.size(); ++i) {
      if (i) out += ' ';
      const int id = text->token_ids[i];
      out += (id >= 0 && id < static_cast<int>(vocabulary().size())) ? vocabulary()[static_cast<std::size_t>(id)]
                                                                     : std::to_string(id);
    }
    return out;
  }
  return "image";
}

inline Vector embed_goal(const LivModel& model, const GoalSpec& goal) {
  if (const auto* image = std::get_if<ImageGoal>(&goal)) return encode_image(model, image->frame);
  return encode_text(model, std::get<TextGoal>(goal).token_ids);
}

inline double value(const LivModel& model, const Image& frame, const GoalSpec& goal, double gamma) {
  return similarity(encode_image(model, frame), embed_goal(model, goal), gamma);
}

inline double potential_reward(const LivModel& model, const Image& current, const Image& next, const GoalSpec& goal,
                               double gamma) {
  const Vector g = embed_goal(model, goal);
  return similarity(encode_image(model, next), g, gamma) - similarity(encode_image(model, current), g, gamma);
}

// Values of many frames against one goal embedding, encoded in one batch.
inline std::vector<double> values_against(const LivModel& model, std::span<const Image> frames,
                                          const Vector& goal_embedding, double gamma) {
  const Matrix e = encode_images(model, frames);
  std::vector<double> out(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) out[i] = similarity(e.col(static_cast<Eigen::Index>(i)), goal_embedding, gamma);
  return out;
}

struct CostCurve {
  std::vector<double> values;  // -cosine per frame
  std::string goal;

  std::size_t frame_count() const { return values.size(); }
};

inline CostCurve cost_curve(const LivModel& model, const AnnotatedVideo& video, const GoalSpec& goal, double gamma) {
  if (video.frames.empty()) throw Error("cost curve needs a nonempty video");
  const auto v = values_against(model, video.frames, embed_goal(model, goal), gamma);
  CostCurve curve{{}, describe(goal)};
  curve.values.reserve(v.size());
  for (double x : v) curve.values.push_back(-(1.0 - gamma) * x);
  return curve;
}

struct CurveMetrics {
  double spearman = 0.0;
  double monotone_fraction = 0.0;
};

// Average ranks (1-based), ties share the mean of their positions.
inline std::vector<double> average_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

// Spearman correlation between frame index and negated cost (+1 = cost
// falls steadily), and the fraction of strictly decreasing steps.
inline CurveMetrics curve_metrics(const CostCurve& curve) {
  const auto& c = curve.values;
  if (c.size() < 2) throw Error("curve metrics need at least 2 frames");
  std::vector<double> index(c.size()), negated(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    index[i] = static_cast<double>(i);
    negated[i] = -c[i];
  }
  CurveMetrics m;
  m.spearman = pearson(average_ranks(index), average_ranks(negated));
  std::size_t falling = 0;
  for (std::size_t i = 0; i + 1 < c.size(); ++i) falling += c[i + 1] < c[i] ? 1 : 0;
  m.monotone_fraction = static_cast<double>(falling) / static_cast<double>(c.size() - 1);
  return m;
}

}  // namespace liv
