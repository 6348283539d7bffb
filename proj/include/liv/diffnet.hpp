#pragma once

// Minimal differentiable core: named parameter tensors, batched MLPs with
// hand-derived backward passes, Adam, and a finite-difference gradient oracle.
//
// All compute is in double precision. MLP tensors are named
// `<prefix>.layer<i>.W` (shape [out, in], row-major) and `<prefix>.layer<i>.b`
// (shape [out]).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "liv/errors.hpp"
#include "liv/rng.hpp"

namespace liv {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  static Tensor zeros(std::vector<std::size_t> shape) {
    const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    return {std::move(shape), std::vector<double>(n, 0.0)};
  }

  std::size_t size() const { return data.size(); }
  std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  Eigen::Map<RowMajorMatrix> matrix() {
    return {data.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())};
  }
  Eigen::Map<const RowMajorMatrix> matrix() const {
    return {data.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())};
  }
  Eigen::Map<Vector> vector() { return {data.data(), static_cast<Eigen::Index>(size())}; }
  Eigen::Map<const Vector> vector() const { return {data.data(), static_cast<Eigen::Index>(size())}; }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Named tensors with lexicographic iteration order.
///
/// Names are unique and shapes are fixed once a tensor is added. The same
/// type holds gradients (see `Gradients`), which must cover every parameter.
class ParamStore {
 public:
  using Map = std::map<std::string, Tensor>;

  Tensor& add(const std::string& name, Tensor tensor) {
    auto [it, inserted] = tensors_.emplace(name, std::move(tensor));
    if (!inserted) throw ShapeError("duplicate parameter '" + name + "'");
    return it->second;
  }

  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }

  Tensor& at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ShapeError("missing parameter '" + name + "'");
    return it->second;
  }
  const Tensor& at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ShapeError("missing parameter '" + name + "'");
    return it->second;
  }

  Map::iterator begin() { return tensors_.begin(); }
  Map::iterator end() { return tensors_.end(); }
  Map::const_iterator begin() const { return tensors_.begin(); }
  Map::const_iterator end() const { return tensors_.end(); }

  std::size_t tensor_count() const { return tensors_.size(); }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : tensors_) n += t.size();
    return n;
  }

  ParamStore zeros_like() const {
    ParamStore out;
    for (const auto& [name, t] : tensors_) out.add(name, Tensor::zeros(t.shape));
    return out;
  }

  // Flat view helpers used by the finite-difference oracle.
  std::pair<const std::string*, std::size_t> locate(std::size_t flat_index) const {
    for (const auto& [name, t] : tensors_) {
      if (flat_index < t.size()) return {&name, flat_index};
      flat_index -= t.size();
    }
    throw ShapeError("flat parameter index out of range");
  }

  bool same_layout(const ParamStore& other) const {
    if (tensors_.size() != other.tensors_.size()) return false;
    auto a = tensors_.begin();
    auto b = other.tensors_.begin();
    for (; a != tensors_.end(); ++a, ++b) {
      if (a->first != b->first || a->second.shape != b->second.shape) return false;
    }
    return true;
  }

  friend bool operator==(const ParamStore&, const ParamStore&) = default;

 private:
  Map tensors_;
};

using Gradients = ParamStore;

// Rounds every value to the nearest float32. Training keeps parameters on
// the float32 grid so checkpoints (stored as float32) reload bit-exactly.
inline void round_to_storage_precision(ParamStore& params) {
  for (auto& [name, t] : params) {
    for (double& v : t.data) v = static_cast<double>(static_cast<float>(v));
  }
}

// ---------------------------------------------------------------------------
// MLP: affine -> ReLU for hidden layers, affine output.

inline std::string layer_name(const std::string& prefix, std::size_t i, const char* suffix) {
  return prefix + ".layer" + std::to_string(i) + "." + suffix;
}

inline std::size_t mlp_depth(const ParamStore& params, const std::string& prefix) {
  std::size_t n = 0;
  while (params.contains(layer_name(prefix, n, "W"))) ++n;
  return n;
}

// He-normal weights, zero biases.
inline void add_mlp(ParamStore& params, const std::string& prefix, const std::vector<std::size_t>& widths, Rng& rng) {
  if (widths.size() < 2) throw ShapeError("MLP '" + prefix + "' needs at least input and output widths");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    if (widths[i] == 0 || widths[i + 1] == 0) throw ShapeError("MLP '" + prefix + "' has a zero width");
    Tensor w = Tensor::zeros({widths[i + 1], widths[i]});
    const double stddev = std::sqrt(2.0 / static_cast<double>(widths[i]));
    for (double& v : w.data) v = rng.normal(0.0, stddev);
    params.add(layer_name(prefix, i, "W"), std::move(w));
    params.add(layer_name(prefix, i, "b"), Tensor::zeros({widths[i + 1]}));
  }
}

// Post-activation values of every layer, input first. Sample n is column n.
struct MlpCache {
  std::vector<Matrix> activations;
};

inline Matrix mlp_forward_batch(const ParamStore& params, const std::string& prefix, const Matrix& input,
                                MlpCache* cache = nullptr) {
  const std::size_t depth = mlp_depth(params, prefix);
  if (depth == 0) throw ShapeError("no MLP layers under prefix '" + prefix + "'");
  if (cache) {
    cache->activations.clear();
    cache->activations.push_back(input);
  }
  Matrix x = input;
  for (std::size_t i = 0; i < depth; ++i) {
    const Tensor& w = params.at(layer_name(prefix, i, "W"));
    const Tensor& b = params.at(layer_name(prefix, i, "b"));
    if (w.shape.size() != 2 || b.shape.size() != 1 || w.cols() != static_cast<std::size_t>(x.rows()) ||
        b.size() != w.rows()) {
      throw ShapeError("shape mismatch in layer '" + layer_name(prefix, i, "W") + "'");
    }
    Matrix y = w.matrix() * x;
    y.colwise() += b.vector();
    if (i + 1 < depth) y = y.cwiseMax(0.0);
    x = std::move(y);
    if (cache) cache->activations.push_back(x);
  }
  return x;
}

inline std::vector<double> mlp_forward(const ParamStore& params, const std::string& prefix,
                                       std::span<const double> input) {
  const Matrix in = Eigen::Map<const Vector>(input.data(), static_cast<Eigen::Index>(input.size()));
  const Matrix out = mlp_forward_batch(params, prefix, in);
  return {out.data(), out.data() + out.size()};
}

// Accumulates parameter gradients for upstream gradient `grad_output`
// (same shape as the MLP output). Writes the input gradient when asked.
inline void mlp_backward(const ParamStore& params, const std::string& prefix, const MlpCache& cache,
                         const Matrix& grad_output, Gradients& grads, Matrix* grad_input = nullptr) {
  const std::size_t depth = cache.activations.size() - 1;
  Matrix delta = grad_output;
  for (std::size_t layer = depth; layer-- > 0;) {
    const Matrix& input = cache.activations[layer];
    const Tensor& w = params.at(layer_name(prefix, layer, "W"));
    grads.at(layer_name(prefix, layer, "W")).matrix().noalias() += delta * input.transpose();
    grads.at(layer_name(prefix, layer, "b")).vector() += delta.rowwise().sum();
    if (layer == 0 && !grad_input) break;
    Matrix upstream = w.matrix().transpose() * delta;
    if (layer > 0) {
      // ReLU mask from the post-activation of the previous layer.
      delta = upstream.cwiseProduct((input.array() > 0.0).cast<double>().matrix());
    } else {
      *grad_input = std::move(upstream);
    }
  }
}

// ---------------------------------------------------------------------------
// Scalar losses over a ParamStore.

struct DifferentiableLoss {
  std::function<double(const ParamStore&)> value;
  // Returns the loss and accumulates the exact gradient into `grads`
  // (pre-zeroed, same layout as the parameters).
  std::function<double(const ParamStore&, Gradients&)> value_and_gradient;
};

inline void check_finite(double loss, const Gradients& grads) {
  if (!std::isfinite(loss)) throw NumericError("non-finite loss");
  for (const auto& [name, t] : grads) {
    for (double v : t.data) {
      if (!std::isfinite(v)) throw NumericError("non-finite gradient", name);
    }
  }
}

inline std::pair<double, Gradients> loss_gradient(const DifferentiableLoss& loss, const ParamStore& params) {
  Gradients grads = params.zeros_like();
  const double value = loss.value_and_gradient(params, grads);
  check_finite(value, grads);
  return {value, std::move(grads)};
}

inline double gradient_norm(const Gradients& grads) {
  double sq = 0.0;
  for (const auto& [name, t] : grads) sq += t.vector().squaredNorm();
  return std::sqrt(sq);
}

struct FiniteDiffReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Central differences on `samples` randomly chosen scalar parameters.
// Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
inline FiniteDiffReport finite_diff_check(const DifferentiableLoss& loss, const ParamStore& params, double step,
                                          int samples, Rng& rng) {
  if (step <= 0.0) throw Error("finite-difference step must be positive");
  if (samples < 1) throw Error("finite-difference check needs at least one sample");
  const auto [value, grads] = loss_gradient(loss, params);
  (void)value;
  ParamStore probe = params;
  FiniteDiffReport report;
  const std::size_t total = params.parameter_count();
  for (int s = 0; s < samples; ++s) {
    const auto [name, index] = params.locate(rng.below(total));
    double& slot = probe.at(*name).data[index];
    const double original = slot;
    slot = original + step;
    const double plus = loss.value(probe);
    slot = original - step;
    const double minus = loss.value(probe);
    slot = original;
    if (!std::isfinite(plus) || !std::isfinite(minus)) throw NumericError("non-finite loss during probe", *name);
    const double numeric = (plus - minus) / (2.0 * step);
    const double analytic = grads.at(*name).data[index];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    const double rel = std::abs(analytic - numeric) / denom;
    if (rel >= report.max_relative_error) {
      report = {rel, *name, index, analytic, numeric};
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Adam with decoupled weight decay.

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

struct AdamState {
  AdamConfig config;
  ParamStore first_moment;
  ParamStore second_moment;
  std::uint64_t step = 0;

  static AdamState for_params(const ParamStore& params, AdamConfig config) {
    return {config, params.zeros_like(), params.zeros_like(), 0};
  }
};

// p <- p - lr*wd*p, then the bias-corrected Adam update.
inline void adam_step(ParamStore& params, const Gradients& grads, AdamState& state) {
  if (!params.same_layout(grads) || !params.same_layout(state.first_moment)) {
    throw ShapeError("Adam: gradient or moment layout does not match parameters");
  }
  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (auto& [name, p] : params) {
    const auto& g = grads.at(name).data;
    auto& m = state.first_moment.at(name).data;
    auto& v = state.second_moment.at(name).data;
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      if (c.weight_decay != 0.0) p.data[i] -= c.learning_rate * c.weight_decay * p.data[i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      p.data[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

}  // namespace liv
