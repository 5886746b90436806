#pragma once

// Layer-weight fusion followed by a stacked bidirectional LSTM classifier.
//
//   fused[t]  = sum_i softmax(p)_i * h[i][t]               (D x T)
//   layer l   = [LSTM_fwd ; LSTM_bwd](input_l)              (2H x T)
//   pooled    = mean_t layer_top[t]                         (2H)
//   logits    = head * dropout(proj * pooled + b_p) + b_h   (2)
//
// Logit index 0 is NC, index 1 is MCI. Everything is templated on the scalar
// type: float for training, double for gradient checking.

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mcidet/error.hpp"
#include "mcidet/feature_store.hpp"
#include "mcidet/rng.hpp"

namespace mcidet {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

// ---------------------------------------------------------------------------
// Fusion weights

enum class FusionInit { kUniform, kPrior };

struct FusionConfig {
  FusionInit init = FusionInit::kPrior;
  int major_layer = 18;  // 1-based
  double major_weight = 5.0;
};

// p_i = k at the major layer c (1-based), 0 elsewhere.
template <class S = double>
Mat<S> prior_init(int layers, int major_layer, double major_weight) {
  if (layers < 1) throw Error(ErrorCode::kInvalidArgument, "layer count must be >= 1");
  if (major_layer < 1 || major_layer > layers)
    throw Error(ErrorCode::kInvalidArgument,
                "major layer " + std::to_string(major_layer) + " outside [1, " + std::to_string(layers) + "]");
  if (!(major_weight >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "major weight must be >= 0");
  Mat<S> p = Mat<S>::Zero(layers, 1);
  p(major_layer - 1, 0) = static_cast<S>(major_weight);
  return p;
}

template <class S = double>
Mat<S> fusion_init(int layers, const FusionConfig& cfg) {
  if (cfg.init == FusionInit::kUniform) return Mat<S>::Zero(layers, 1);
  return prior_init<S>(layers, cfg.major_layer, cfg.major_weight);
}

template <class S>
Mat<S> softmax(const Mat<S>& v) {
  Mat<S> e = (v.array() - v.maxCoeff()).exp().matrix();
  return e / e.sum();
}

// Weighted sum over layers for frames [range.begin, range.end); D x T output.
template <class S>
Mat<S> fuse(const Mat<S>& p, const FeatureSequence& seq, FrameRange range) {
  if (p.rows() != seq.layers() || p.cols() != 1)
    throw Error(ErrorCode::kDimensionMismatch, "fusion weights have " + std::to_string(p.rows()) +
                                                   " entries, features have " + std::to_string(seq.layers()) +
                                                   " layers");
  if (range.begin < 0 || range.end > seq.frames() || range.size() < 1)
    throw Error(ErrorCode::kInvalidArgument, "frame range outside sequence");
  const Mat<S> w = softmax(p);
  const int D = seq.dim();
  const int T = range.size();
  Mat<S> out = Mat<S>::Zero(D, T);
  for (int l = 0; l < seq.layers(); ++l) {
    Eigen::Map<const Eigen::MatrixXf> h(seq.layer(l).data() + static_cast<std::size_t>(range.begin) * D, D, T);
    out.noalias() += w(l, 0) * h.template cast<S>();
  }
  return out;
}

template <class S>
Mat<S> fuse(const Mat<S>& p, const FeatureSequence& seq) {
  return fuse(p, seq, FrameRange{0, seq.frames()});
}

template <class S>
Mat<S> fuse(const Mat<S>& p, const SegmentView& view) {
  return fuse(p, *view.source, view.range);
}

// ---------------------------------------------------------------------------
// Parameters

struct ModelConfig {
  int layer_count = kDefaultLayerCount;
  int input_dim = 0;
  int recurrent_layers = 5;
  int hidden = 256;  // per direction
  int projection = 64;
  double dropout = 0.1;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void validate(const ModelConfig& c) {
  if (c.layer_count < 1 || c.input_dim < 1 || c.recurrent_layers < 1 || c.hidden < 1 || c.projection < 1)
    throw Error(ErrorCode::kInvalidArgument, "model dimensions must be >= 1");
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) throw Error(ErrorCode::kInvalidArgument, "dropout must be in [0, 1)");
}

enum class TensorKind { kFusion, kWeight, kBias };

template <class S>
struct LstmDirection {
  Mat<S> w_in;   // 4H x I, gate order i, f, g, o
  Mat<S> w_rec;  // 4H x H
  Mat<S> bias;   // 4H x 1
};

template <class T>
struct TensorRef {
  std::string name;
  T* tensor;
  TensorKind kind;
};

template <class S>
struct ModelParams {
  ModelConfig config;
  Mat<S> fusion;  // L x 1, unnormalized p
  std::vector<std::array<LstmDirection<S>, 2>> recurrent;
  Mat<S> proj_w;  // P x 2H
  Mat<S> proj_b;  // P x 1
  Mat<S> head_w;  // 2 x P
  Mat<S> head_b;  // 2 x 1
  // Bumped on every in-place update; forward caches remember it.
  std::uint64_t version = 0;

  static ModelParams zeros(const ModelConfig& c) {
    validate(c);
    ModelParams m;
    m.config = c;
    const int H = c.hidden;
    m.fusion = Mat<S>::Zero(c.layer_count, 1);
    m.recurrent.resize(c.recurrent_layers);
    for (int l = 0; l < c.recurrent_layers; ++l) {
      const int in = l == 0 ? c.input_dim : 2 * H;
      for (auto& d : m.recurrent[l]) {
        d.w_in = Mat<S>::Zero(4 * H, in);
        d.w_rec = Mat<S>::Zero(4 * H, H);
        d.bias = Mat<S>::Zero(4 * H, 1);
      }
    }
    m.proj_w = Mat<S>::Zero(c.projection, 2 * H);
    m.proj_b = Mat<S>::Zero(c.projection, 1);
    m.head_w = Mat<S>::Zero(2, c.projection);
    m.head_b = Mat<S>::Zero(2, 1);
    return m;
  }

  std::vector<TensorRef<Mat<S>>> tensors() { return collect<Mat<S>>(*this); }
  std::vector<TensorRef<const Mat<S>>> tensors() const { return collect<const Mat<S>>(*this); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors()) n += static_cast<std::size_t>(t.tensor->size());
    return n;
  }

  template <class T>
  ModelParams<T> cast() const {
    ModelParams<T> out = ModelParams<T>::zeros(config);
    auto dst = out.tensors();
    auto src = tensors();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i].tensor = src[i].tensor->template cast<T>();
    return out;
  }

  ModelParams& operator+=(const ModelParams& o) {
    auto a = tensors();
    auto b = o.tensors();
    for (std::size_t i = 0; i < a.size(); ++i) *a[i].tensor += *b[i].tensor;
    return *this;
  }

  ModelParams& operator*=(S s) {
    for (auto& t : tensors()) *t.tensor *= s;
    return *this;
  }

  bool all_finite() const {
    for (const auto& t : tensors())
      if (!t.tensor->allFinite()) return false;
    return true;
  }

 private:
  template <class T, class Self>
  static std::vector<TensorRef<T>> collect(Self& self) {
    std::vector<TensorRef<T>> out;
    out.push_back({"fusion.p", &self.fusion, TensorKind::kFusion});
    for (std::size_t l = 0; l < self.recurrent.size(); ++l) {
      for (int d = 0; d < 2; ++d) {
        const std::string prefix = "lstm." + std::to_string(l) + (d == 0 ? ".fwd." : ".bwd.");
        out.push_back({prefix + "w_in", &self.recurrent[l][d].w_in, TensorKind::kWeight});
        out.push_back({prefix + "w_rec", &self.recurrent[l][d].w_rec, TensorKind::kWeight});
        out.push_back({prefix + "bias", &self.recurrent[l][d].bias, TensorKind::kBias});
      }
    }
    out.push_back({"proj.w", &self.proj_w, TensorKind::kWeight});
    out.push_back({"proj.b", &self.proj_b, TensorKind::kBias});
    out.push_back({"head.w", &self.head_w, TensorKind::kWeight});
    out.push_back({"head.b", &self.head_b, TensorKind::kBias});
    return out;
  }
};

// Gradients share the parameter layout.
template <class S>
using Gradients = ModelParams<S>;

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every tensor, where fan_in is
// the input width of the weight the tensor belongs to (hidden size for LSTM
// biases). LSTM forget-gate biases start at 1. Draws are made in double so
// float and double models built from one seed agree.
template <class S>
ModelParams<S> init_params(const ModelConfig& config, const FusionConfig& fusion, std::uint64_t seed) {
  auto m = ModelParams<S>::zeros(config);
  m.fusion = fusion_init<S>(config.layer_count, fusion);
  Rng rng(derive_seed(seed, "init"));
  auto fill = [&rng](Mat<S>& t, double fan_in) {
    const double bound = 1.0 / std::sqrt(fan_in);
    for (Eigen::Index j = 0; j < t.cols(); ++j)
      for (Eigen::Index i = 0; i < t.rows(); ++i) t(i, j) = static_cast<S>(rng.uniform(-bound, bound));
  };
  const int H = config.hidden;
  for (auto& layer : m.recurrent) {
    for (auto& d : layer) {
      fill(d.w_in, static_cast<double>(d.w_in.cols()));
      fill(d.w_rec, H);
      fill(d.bias, H);
      d.bias.block(H, 0, H, 1).setOnes();
    }
  }
  fill(m.proj_w, 2.0 * H);
  fill(m.proj_b, 2.0 * H);
  fill(m.head_w, config.projection);
  fill(m.head_b, config.projection);
  return m;
}

// ---------------------------------------------------------------------------
// Forward

template <class S>
struct DirectionCache {
  Mat<S> gates;  // 4H x T, post-activation
  Mat<S> cell;   // H x T
  Mat<S> cell_tanh;
  Mat<S> hidden;
};

template <class S>
struct LayerCache {
  Mat<S> input;  // after dropout
  std::array<DirectionCache<S>, 2> dir;
  Mat<S> output;       // 2H x T, before dropout
  Mat<S> output_mask;  // empty when no dropout follows this layer
};

template <class S>
struct ForwardCache {
  const FeatureSequence* source = nullptr;  // null when forward started from a fused sequence
  FrameRange range;
  Mat<S> fusion_weights;
  Mat<S> fused;
  std::vector<LayerCache<S>> layers;
  Mat<S> pooled;
  Mat<S> projected;
  Mat<S> proj_mask;
  Mat<S> proj_out;
  Mat<S> logits;  // 2 x 1
  std::uint64_t version = 0;
  bool valid = false;
};

namespace detail {

template <class S>
auto sigmoid(const Eigen::ArrayBase<S>& x) {
  return (typename S::Scalar(1) + (-x).exp()).inverse();
}

template <class S>
DirectionCache<S> run_direction(const LstmDirection<S>& p, const Mat<S>& x, bool reverse) {
  const Eigen::Index H = p.w_rec.cols();
  const Eigen::Index T = x.cols();
  Mat<S> pre = p.w_in * x;
  pre.colwise() += p.bias.col(0);
  DirectionCache<S> c;
  c.gates.resize(4 * H, T);
  c.cell.resize(H, T);
  c.cell_tanh.resize(H, T);
  c.hidden.resize(H, T);
  Eigen::Matrix<S, Eigen::Dynamic, 1> h = Eigen::Matrix<S, Eigen::Dynamic, 1>::Zero(H);
  Eigen::Matrix<S, Eigen::Dynamic, 1> cell = h;
  Eigen::Matrix<S, Eigen::Dynamic, 1> a(4 * H);
  for (Eigen::Index s = 0; s < T; ++s) {
    const Eigen::Index t = reverse ? T - 1 - s : s;
    a.noalias() = pre.col(t) + p.w_rec * h;
    auto g = c.gates.col(t);
    g.segment(0, H) = sigmoid(a.segment(0, H).array()).matrix();
    g.segment(H, H) = sigmoid(a.segment(H, H).array()).matrix();
    g.segment(2 * H, H) = a.segment(2 * H, H).array().tanh().matrix();
    g.segment(3 * H, H) = sigmoid(a.segment(3 * H, H).array()).matrix();
    cell = (g.segment(H, H).array() * cell.array() + g.segment(0, H).array() * g.segment(2 * H, H).array()).matrix();
    c.cell.col(t) = cell;
    c.cell_tanh.col(t) = cell.array().tanh().matrix();
    h = (g.segment(3 * H, H).array() * c.cell_tanh.col(t).array()).matrix();
    c.hidden.col(t) = h;
  }
  return c;
}

template <class S>
Mat<S> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  Mat<S> m(rows, cols);
  const S keep_scale = static_cast<S>(1.0 / (1.0 - rate));
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.uniform() < rate ? S(0) : keep_scale;
  return m;
}

template <class S>
void forward_from_fused(const ModelParams<S>& params, ForwardCache<S>& cache, bool train, Rng* rng) {
  const auto& cfg = params.config;
  if (cache.fused.rows() != cfg.input_dim)
    throw Error(ErrorCode::kDimensionMismatch, "input dim " + std::to_string(cache.fused.rows()) +
                                                   " does not match model input dim " +
                                                   std::to_string(cfg.input_dim));
  if (cache.fused.cols() < 1) throw Error(ErrorCode::kInvalidArgument, "empty sequence");
  const bool drop = train && cfg.dropout > 0.0;
  if (drop && rng == nullptr) throw Error(ErrorCode::kInvalidArgument, "train mode requires an rng");

  const int n_layers = cfg.recurrent_layers;
  const Eigen::Index H = cfg.hidden;
  const Eigen::Index T = cache.fused.cols();
  cache.layers.assign(n_layers, {});
  for (int l = 0; l < n_layers; ++l) {
    auto& lc = cache.layers[l];
    if (l == 0) {
      lc.input = cache.fused;
    } else {
      const auto& prev = cache.layers[l - 1];
      lc.input = prev.output_mask.size() ? Mat<S>(prev.output.cwiseProduct(prev.output_mask)) : prev.output;
    }
    lc.dir[0] = run_direction(params.recurrent[l][0], lc.input, false);
    lc.dir[1] = run_direction(params.recurrent[l][1], lc.input, true);
    lc.output.resize(2 * H, T);
    lc.output.topRows(H) = lc.dir[0].hidden;
    lc.output.bottomRows(H) = lc.dir[1].hidden;
    if (!lc.output.allFinite())
      throw Error(ErrorCode::kNonFinite, "non-finite activation in recurrent layer " + std::to_string(l + 1));
    if (drop && l + 1 < n_layers) lc.output_mask = dropout_mask<S>(2 * H, T, cfg.dropout, *rng);
  }
  cache.pooled = cache.layers.back().output.rowwise().mean();
  cache.projected = params.proj_w * cache.pooled + params.proj_b;
  if (drop) {
    cache.proj_mask = dropout_mask<S>(cache.projected.rows(), 1, cfg.dropout, *rng);
    cache.proj_out = cache.projected.cwiseProduct(cache.proj_mask);
  } else {
    cache.proj_mask.resize(0, 0);
    cache.proj_out = cache.projected;
  }
  cache.logits = params.head_w * cache.proj_out + params.head_b;
  if (!cache.logits.allFinite()) throw Error(ErrorCode::kNonFinite, "non-finite logits");
  cache.version = params.version;
  cache.valid = true;
}

}  // namespace detail

// Full forward from layered features over a frame range.
template <class S>
ForwardCache<S> forward(const ModelParams<S>& params, const FeatureSequence& seq, FrameRange range, bool train,
                        Rng* rng = nullptr) {
  if (seq.dim() != params.config.input_dim)
    throw Error(ErrorCode::kDimensionMismatch, "feature dim " + std::to_string(seq.dim()) +
                                                   " does not match model input dim " +
                                                   std::to_string(params.config.input_dim));
  ForwardCache<S> cache;
  cache.source = &seq;
  cache.range = range;
  cache.fusion_weights = softmax(params.fusion);
  cache.fused = fuse(params.fusion, seq, range);
  detail::forward_from_fused(params, cache, train, rng);
  return cache;
}

template <class S>
ForwardCache<S> forward(const ModelParams<S>& params, const SegmentView& view, bool train, Rng* rng = nullptr) {
  return forward(params, *view.source, view.range, train, rng);
}

// Forward from an already fused D x T sequence; backward then leaves the
// fusion gradient at zero.
template <class S>
ForwardCache<S> forward_fused(const ModelParams<S>& params, const Mat<S>& fused, bool train, Rng* rng = nullptr) {
  ForwardCache<S> cache;
  cache.fused = fused;
  detail::forward_from_fused(params, cache, train, rng);
  return cache;
}

// ---------------------------------------------------------------------------
// Loss

template <class S>
S log_sum_exp(const Mat<S>& logits) {
  const S m = logits.maxCoeff();
  return m + std::log((logits.array() - m).exp().sum());
}

template <class S>
S cross_entropy(const Mat<S>& logits, Label label) {
  return log_sum_exp(logits) - logits(static_cast<int>(label), 0);
}

// ---------------------------------------------------------------------------
// Backward

namespace detail {

template <class S>
Mat<S> backward_direction(const LstmDirection<S>& p, const DirectionCache<S>& c, const Mat<S>& x, const Mat<S>& d_hidden,
                          bool reverse, LstmDirection<S>& g) {
  const Eigen::Index H = p.w_rec.cols();
  const Eigen::Index T = x.cols();
  Mat<S> dA(4 * H, T);
  Mat<S> h_prev = Mat<S>::Zero(H, T);
  using Vec = Eigen::Array<S, Eigen::Dynamic, 1>;
  Vec dh_next = Vec::Zero(H);
  Vec dc_next = Vec::Zero(H);
  Vec zeros = Vec::Zero(H);
  for (Eigen::Index s = T - 1; s >= 0; --s) {
    const Eigen::Index t = reverse ? T - 1 - s : s;
    const Eigen::Index tp = reverse ? t + 1 : t - 1;
    const bool first = s == 0;
    auto gates = c.gates.col(t).array();
    auto i = gates.segment(0, H);
    auto f = gates.segment(H, H);
    auto gg = gates.segment(2 * H, H);
    auto o = gates.segment(3 * H, H);
    auto tc = c.cell_tanh.col(t).array();
    const Vec c_prev = first ? zeros : Vec(c.cell.col(tp).array());
    if (!first) h_prev.col(t) = c.hidden.col(tp);

    const Vec dh = d_hidden.col(t).array() + dh_next;
    const Vec d_o = dh * tc;
    const Vec dc = dh * o * (S(1) - tc * tc) + dc_next;
    auto da = dA.col(t).array();
    da.segment(0, H) = dc * gg * i * (S(1) - i);
    da.segment(H, H) = dc * c_prev * f * (S(1) - f);
    da.segment(2 * H, H) = dc * i * (S(1) - gg * gg);
    da.segment(3 * H, H) = d_o * o * (S(1) - o);
    dc_next = dc * f;
    dh_next = (p.w_rec.transpose() * dA.col(t)).array();
  }
  g.w_in.noalias() += dA * x.transpose();
  g.w_rec.noalias() += dA * h_prev.transpose();
  g.bias += dA.rowwise().sum();
  return p.w_in.transpose() * dA;
}

}  // namespace detail

// Exact gradient of cross_entropy(forward(...).logits, label) for every
// parameter. Features are inputs, not parameters: no gradient is produced for
// them.
template <class S>
Gradients<S> backward(const ModelParams<S>& params, const ForwardCache<S>& cache, Label label) {
  if (!cache.valid) throw Error(ErrorCode::kStaleCache, "backward called without a forward cache");
  if (cache.version != params.version)
    throw Error(ErrorCode::kStaleCache, "parameters changed since the forward pass");
  const auto& cfg = params.config;
  const Eigen::Index H = cfg.hidden;
  const Eigen::Index T = cache.fused.cols();
  auto grads = Gradients<S>::zeros(cfg);

  Mat<S> d_logits = softmax(cache.logits);
  d_logits(static_cast<int>(label), 0) -= S(1);
  grads.head_w.noalias() = d_logits * cache.proj_out.transpose();
  grads.head_b = d_logits;
  Mat<S> d_proj = params.head_w.transpose() * d_logits;
  if (cache.proj_mask.size()) d_proj = d_proj.cwiseProduct(cache.proj_mask);
  grads.proj_w.noalias() = d_proj * cache.pooled.transpose();
  grads.proj_b = d_proj;
  const Mat<S> d_pooled = params.proj_w.transpose() * d_proj;

  Mat<S> d_out = (d_pooled / static_cast<S>(T)).replicate(1, T);
  Mat<S> d_fused;
  for (int l = cfg.recurrent_layers - 1; l >= 0; --l) {
    const auto& lc = cache.layers[l];
    const Mat<S> d_fwd = d_out.topRows(H);
    const Mat<S> d_bwd = d_out.bottomRows(H);
    Mat<S> d_in =
        detail::backward_direction(params.recurrent[l][0], lc.dir[0], lc.input, d_fwd, false, grads.recurrent[l][0]);
    d_in += detail::backward_direction(params.recurrent[l][1], lc.dir[1], lc.input, d_bwd, true, grads.recurrent[l][1]);
    if (l > 0) {
      const auto& prev = cache.layers[l - 1];
      d_out = prev.output_mask.size() ? Mat<S>(d_in.cwiseProduct(prev.output_mask)) : d_in;
    } else {
      d_fused = std::move(d_in);
    }
  }

  // d p_j = w_j * (G_j - sum_i w_i G_i), G_i = <d_fused, h_i>
  if (cache.source != nullptr) {
    const auto& seq = *cache.source;
    const int L = seq.layers();
    const int D = seq.dim();
    Mat<S> G(L, 1);
    for (int l = 0; l < L; ++l) {
      Eigen::Map<const Eigen::MatrixXf> h(seq.layer(l).data() + static_cast<std::size_t>(cache.range.begin) * D, D,
                                          T);
      G(l, 0) = d_fused.cwiseProduct(h.template cast<S>()).sum();
    }
    const Mat<S>& w = cache.fusion_weights;
    const S mean = w.cwiseProduct(G).sum();
    grads.fusion = w.cwiseProduct((G.array() - mean).matrix());
  }
  return grads;
}

}  // namespace mcidet
