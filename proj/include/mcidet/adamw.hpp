#pragma once

// AdamW: Adam with decoupled weight decay. Decay is applied to weight
// matrices only; biases and fusion weights are never decayed.

#include <cmath>
#include <vector>

#include "mcidet/error.hpp"
#include "mcidet/model.hpp"

namespace mcidet {

struct AdamWConfig {
  double lr = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

template <class S>
struct AdamWState {
  std::vector<Mat<S>> m;
  std::vector<Mat<S>> v;
  long step = 0;
};

inline void validate(const AdamWConfig& c) {
  if (!(c.lr > 0.0)) throw Error(ErrorCode::kInvalidArgument, "learning rate must be > 0");
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0 && c.beta2 >= 0.0 && c.beta2 < 1.0))
    throw Error(ErrorCode::kInvalidArgument, "betas must lie in [0, 1)");
  if (!(c.weight_decay >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "weight decay must be >= 0");
}

// One update over parallel parameter/gradient tensor lists.
template <class S>
void adamw_step(const std::vector<TensorRef<Mat<S>>>& params, const std::vector<TensorRef<const Mat<S>>>& grads,
                AdamWState<S>& state, const AdamWConfig& cfg) {
  validate(cfg);
  if (params.size() != grads.size()) throw Error(ErrorCode::kDimensionMismatch, "parameter/gradient count differs");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].tensor->rows() != params[i].tensor->rows() || grads[i].tensor->cols() != params[i].tensor->cols())
      throw Error(ErrorCode::kDimensionMismatch, "gradient shape mismatch for " + params[i].name);
    if (!grads[i].tensor->allFinite())
      throw Error(ErrorCode::kNonFinite, "non-finite gradient in " + params[i].name + " at step " +
                                             std::to_string(state.step + 1));
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.push_back(Mat<S>::Zero(p.tensor->rows(), p.tensor->cols()));
      state.v.push_back(Mat<S>::Zero(p.tensor->rows(), p.tensor->cols()));
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const S b1 = static_cast<S>(cfg.beta1);
  const S b2 = static_cast<S>(cfg.beta2);
  const S step_size = static_cast<S>(cfg.lr / bc1);
  const S inv_sqrt_bc2 = static_cast<S>(1.0 / std::sqrt(bc2));
  const S eps = static_cast<S>(cfg.eps);
  const S decay = static_cast<S>(1.0 - cfg.lr * cfg.weight_decay);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& theta = *params[i].tensor;
    const auto& g = *grads[i].tensor;
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (params[i].kind == TensorKind::kWeight && cfg.weight_decay != 0.0) theta *= decay;
    m = b1 * m + (S(1) - b1) * g;
    v = b2 * v + (S(1) - b2) * g.cwiseProduct(g);
    // m_hat / (sqrt(v_hat) + eps)
    theta.array() -= step_size * m.array() / (v.array().sqrt() * inv_sqrt_bc2 + eps);
  }
}

template <class S>
void adamw_step(ModelParams<S>& params, const Gradients<S>& grads, AdamWState<S>& state, const AdamWConfig& cfg) {
  adamw_step(params.tensors(), grads.tensors(), state, cfg);
  ++params.version;
}

}  // namespace mcidet
