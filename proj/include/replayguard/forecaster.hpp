#pragma once

// Short-horizon forecasters (dense, simple recurrent, GRU, LSTM) over k-step
// windows of the eight signals, with batched backpropagation through time,
// Adam training and a versioned binary weight file.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "replayguard/data_pipeline.hpp"
#include "replayguard/error.hpp"
#include "replayguard/hash.hpp"
#include "replayguard/random.hpp"

namespace replayguard {

enum class Arch { kAnn, kRnn, kGru, kLstm };

inline std::string_view arch_name(Arch a) {
  switch (a) {
    case Arch::kAnn:
      return "ANN";
    case Arch::kRnn:
      return "RNN";
    case Arch::kGru:
      return "GRU";
    case Arch::kLstm:
      return "LSTM";
  }
  return "GRU";
}

inline std::optional<Arch> arch_from_name(std::string_view s) {
  if (s == "ANN" || s == "ann") return Arch::kAnn;
  if (s == "RNN" || s == "rnn") return Arch::kRnn;
  if (s == "GRU" || s == "gru") return Arch::kGru;
  if (s == "LSTM" || s == "lstm") return Arch::kLstm;
  return std::nullopt;
}

// Pre-activation rows per hidden unit.
constexpr int gate_count(Arch a) {
  switch (a) {
    case Arch::kAnn:
    case Arch::kRnn:
      return 1;
    case Arch::kGru:
      return 3;
    case Arch::kLstm:
      return 4;
  }
  return 1;
}

enum class Precision { kFloat32, kFloat64 };

struct ModelSpec {
  Arch arch = Arch::kGru;
  int hidden_layers = 1;
  int neurons = 100;
  int window = 30;
  double learning_rate = 1e-4;
  int epochs = 50;
  int batch_size = 4;
  std::uint64_t seed = 0;
  int features = static_cast<int>(kSignalCount);
  // Arithmetic used while training; stored weights are always float64.
  Precision train_precision = Precision::kFloat32;

  // Tuned settings per architecture.
  static ModelSpec defaults(Arch a) {
    ModelSpec s;
    s.arch = a;
    switch (a) {
      case Arch::kAnn:
        s.learning_rate = 1e-4, s.neurons = 100, s.window = 10, s.epochs = 5,
        s.batch_size = 16;
        break;
      case Arch::kRnn:
        s.learning_rate = 1e-3, s.neurons = 15, s.window = 30, s.epochs = 50,
        s.batch_size = 8;
        break;
      case Arch::kGru:
        s.learning_rate = 1e-4, s.neurons = 100, s.window = 30, s.epochs = 50,
        s.batch_size = 4;
        break;
      case Arch::kLstm:
        s.learning_rate = 5e-3, s.neurons = 10, s.window = 10, s.epochs = 20,
        s.batch_size = 8;
        break;
    }
    return s;
  }

  void validate() const {
    require(hidden_layers >= 1, ErrorKind::kConfig, "hidden_layers must be >= 1");
    require(neurons >= 1, ErrorKind::kConfig, "neurons must be >= 1");
    require(window >= 1, ErrorKind::kConfig, "window must be >= 1");
    require(features >= 1, ErrorKind::kConfig, "features must be >= 1");
    require(learning_rate > 0 && std::isfinite(learning_rate), ErrorKind::kConfig,
            "learning_rate must be > 0");
    require(epochs >= 1, ErrorKind::kConfig, "epochs must be >= 1");
    require(batch_size >= 1, ErrorKind::kConfig, "batch_size must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Parameter layout. Every tensor is a column-major block of one flat vector.

struct ParamBlock {
  std::string name;
  std::size_t offset = 0;
  int rows = 0;
  int cols = 0;
  int fan_in = 1;

  std::size_t size() const {
    return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  }
};

struct Layout {
  std::vector<ParamBlock> blocks;
  std::size_t size = 0;

  void add(std::string name, int rows, int cols, int fan_in) {
    blocks.push_back({std::move(name), size, rows, cols, fan_in});
    size += blocks.back().size();
  }

  const ParamBlock& find(std::string_view name) const {
    for (const auto& b : blocks) {
      if (b.name == name) return b;
    }
    fail(ErrorKind::kDomain, "no parameter block '" + std::string(name) + "'");
  }
};

inline std::string layer_prefix(Arch a, int layer) {
  std::string p;
  switch (a) {
    case Arch::kAnn:
      p = "dense";
      break;
    case Arch::kRnn:
      p = "rnn";
      break;
    case Arch::kGru:
      p = "gru";
      break;
    case Arch::kLstm:
      p = "lstm";
      break;
  }
  return p + std::to_string(layer);
}

inline Layout make_layout(const ModelSpec& spec) {
  spec.validate();
  Layout lay;
  const int h = spec.neurons;
  const int g = gate_count(spec.arch) * h;
  for (int l = 0; l < spec.hidden_layers; ++l) {
    const std::string p = layer_prefix(spec.arch, l);
    if (spec.arch == Arch::kAnn) {
      const int in = l == 0 ? spec.window * spec.features : h;
      lay.add(p + ".W", h, in, in);
      lay.add(p + ".b", h, 1, in);
      continue;
    }
    const int in = l == 0 ? spec.features : h;
    lay.add(p + ".W_ih", g, in, in);
    lay.add(p + ".W_hh", g, h, h);
    if (spec.arch == Arch::kGru) {
      lay.add(p + ".b_ih", g, 1, h);
      lay.add(p + ".b_hh", g, 1, h);
    } else {
      lay.add(p + ".b", g, 1, h);
    }
  }
  lay.add("out.W", 1, h, h);
  lay.add("out.b", 1, 1, h);
  return lay;
}

struct ModelWeights {
  ModelSpec spec;
  Layout layout;
  Eigen::VectorXd params;

  Eigen::Map<Eigen::MatrixXd> block(std::string_view name) {
    const auto& b = layout.find(name);
    return {params.data() + b.offset, b.rows, b.cols};
  }
  Eigen::Map<const Eigen::MatrixXd> block(std::string_view name) const {
    const auto& b = layout.find(name);
    return {params.data() + b.offset, b.rows, b.cols};
  }
};

// Uniform in +-1/sqrt(fan_in); the output bias starts at zero.
inline ModelWeights init_model(const ModelSpec& spec, std::uint64_t seed) {
  ModelWeights w;
  w.spec = spec;
  w.layout = make_layout(spec);
  w.params = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(w.layout.size));
  Rng rng(derive_seed(seed, "init"));
  for (const auto& b : w.layout.blocks) {
    if (b.name == "out.b") continue;
    const double bound = 1.0 / std::sqrt(static_cast<double>(b.fan_in));
    for (std::size_t i = 0; i < b.size(); ++i) {
      w.params[static_cast<Eigen::Index>(b.offset + i)] = rng.uniform(-bound, bound);
    }
  }
  return w;
}

// ---------------------------------------------------------------------------
// Batched network evaluation and backpropagation.
//
// Recurrent input X is (features x k*B): column t*B + b is step t of sample b.
// Dense input X is (k*features x B): column b is the flattened window.

template <class T>
class Network {
 public:
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
  using Row = Eigen::Matrix<T, 1, Eigen::Dynamic>;
  using CMap = Eigen::Map<const Mat>;
  using MMap = Eigen::Map<Mat>;

  explicit Network(const ModelSpec& spec)
      : spec_(spec), layout_(make_layout(spec)) {
    layers_.resize(static_cast<std::size_t>(spec.hidden_layers));
  }

  const ModelSpec& spec() const { return spec_; }
  const Layout& layout() const { return layout_; }

  // Writes the window inputs of `count` samples into X.
  void pack(const double* const* inputs, int count, Mat& X) const {
    const int k = spec_.window;
    const int f = spec_.features;
    if (spec_.arch == Arch::kAnn) {
      X.resize(k * f, count);
      for (int b = 0; b < count; ++b) {
        for (int i = 0; i < k * f; ++i) X(i, b) = static_cast<T>(inputs[b][i]);
      }
      return;
    }
    X.resize(f, k * count);
    for (int b = 0; b < count; ++b) {
      for (int t = 0; t < k; ++t) {
        for (int c = 0; c < f; ++c) {
          X(c, t * count + b) = static_cast<T>(inputs[b][t * f + c]);
        }
      }
    }
  }

  // Predictions for a packed batch of B samples.
  const Row& forward(const T* params, const Mat& X, int B) {
    batch_ = B;
    const int h = spec_.neurons;
    if (spec_.arch == Arch::kAnn) {
      const Mat* in = &X;
      for (int l = 0; l < spec_.hidden_layers; ++l) {
        auto& L = layers_[static_cast<std::size_t>(l)];
        const std::string p = layer_prefix(spec_.arch, l);
        L.pre.noalias() = view(params, p + ".W") * (*in);
        L.pre.colwise() += view(params, p + ".b").col(0);
        L.act = L.pre.cwiseMax(T(0));
        in = &L.act;
      }
      head(params, *in);
      return y_;
    }
    const Mat* in = &X;
    for (int l = 0; l < spec_.hidden_layers; ++l) {
      auto& L = layers_[static_cast<std::size_t>(l)];
      switch (spec_.arch) {
        case Arch::kRnn:
          forward_rnn(params, l, *in, L);
          break;
        case Arch::kGru:
          forward_gru(params, l, *in, L);
          break;
        case Arch::kLstm:
          forward_lstm(params, l, *in, L);
          break;
        case Arch::kAnn:
          break;
      }
      in = &L.out;
    }
    const int k = spec_.window;
    last_ = layers_.back().H.middleCols(k * B, B);
    (void)h;
    head(params, last_);
    return y_;
  }

  // Accumulates d(loss)/d(params) into grad given d(loss)/d(prediction).
  // Requires the preceding forward call on the same X.
  void backward(const T* params, const Mat& X, const Row& dy, T* grad) {
    const int B = batch_;
    const int h = spec_.neurons;
    const int k = spec_.window;
    const Mat& top = spec_.arch == Arch::kAnn ? layers_.back().act : last_;
    gview(grad, "out.W").noalias() += dy * top.transpose();
    gview(grad, "out.b")(0, 0) += dy.sum();
    Mat d_top = view(params, "out.W").transpose() * dy;  // h x B

    if (spec_.arch == Arch::kAnn) {
      Mat dA = std::move(d_top);
      for (int l = spec_.hidden_layers - 1; l >= 0; --l) {
        auto& L = layers_[static_cast<std::size_t>(l)];
        const std::string p = layer_prefix(spec_.arch, l);
        Mat dZ = (dA.array() * (L.pre.array() > T(0)).template cast<T>()).matrix();
        const Mat& in = l == 0 ? X : layers_[static_cast<std::size_t>(l - 1)].act;
        gview(grad, p + ".W").noalias() += dZ * in.transpose();
        gview(grad, p + ".b").col(0) += dZ.rowwise().sum();
        if (l > 0) dA.noalias() = view(params, p + ".W").transpose() * dZ;
      }
      return;
    }

    Mat dH = Mat::Zero(h, k * B);
    dH.middleCols((k - 1) * B, B) = d_top;
    for (int l = spec_.hidden_layers - 1; l >= 0; --l) {
      auto& L = layers_[static_cast<std::size_t>(l)];
      const Mat& in = l == 0 ? X : layers_[static_cast<std::size_t>(l - 1)].out;
      Mat* dIn = l > 0 ? &dX_ : nullptr;
      switch (spec_.arch) {
        case Arch::kRnn:
          backward_rnn(params, l, in, L, dH, grad, dIn);
          break;
        case Arch::kGru:
          backward_gru(params, l, in, L, dH, grad, dIn);
          break;
        case Arch::kLstm:
          backward_lstm(params, l, in, L, dH, grad, dIn);
          break;
        case Arch::kAnn:
          break;
      }
      if (l > 0) dH.swap(dX_);
    }
  }

 private:
  struct LayerCache {
    Mat pre, act;        // dense
    Mat Gi;              // input projections, G x kB
    Mat H;               // hidden states, h x (k+1)B, first block h_{-1} = 0
    Mat out;             // H without the initial block, h x kB
    Mat R, Z, N, HN;     // GRU
    Mat A;               // LSTM activated gates (i, f, g, o), 4h x kB
    Mat C, TC;           // LSTM cell (h x (k+1)B) and tanh(cell) (h x kB)
  };

  CMap view(const T* params, std::string_view name) const {
    const auto& b = layout_.find(name);
    return {params + b.offset, b.rows, b.cols};
  }
  MMap gview(T* grad, std::string_view name) const {
    const auto& b = layout_.find(name);
    return {grad + b.offset, b.rows, b.cols};
  }

  static T sigmoid(T x) { return T(1) / (T(1) + std::exp(-x)); }

  void head(const T* params, const Mat& top) {
    y_.noalias() = view(params, "out.W") * top;
    y_.array() += view(params, "out.b")(0, 0);
  }

  void input_projection(const T* params, const std::string& p, const Mat& in,
                        const char* bias, LayerCache& L) {
    L.Gi.noalias() = view(params, p + ".W_ih") * in;
    L.Gi.colwise() += view(params, p + bias).col(0);
  }

  void forward_rnn(const T* params, int l, const Mat& in, LayerCache& L) {
    const int B = batch_, h = spec_.neurons, k = spec_.window;
    const std::string p = layer_prefix(spec_.arch, l);
    input_projection(params, p, in, ".b", L);
    const auto Whh = view(params, p + ".W_hh");
    L.H.resize(h, (k + 1) * B);
    L.H.leftCols(B).setZero();
    for (int t = 0; t < k; ++t) {
      auto hn = L.H.middleCols((t + 1) * B, B);
      hn.noalias() = Whh * L.H.middleCols(t * B, B);
      hn += L.Gi.middleCols(t * B, B);
      hn = hn.array().tanh().matrix();
    }
    L.out = L.H.rightCols(k * B);
  }

  void backward_rnn(const T* params, int l, const Mat& in, LayerCache& L,
                    const Mat& dH, T* grad, Mat* dIn) {
    const int B = batch_, h = spec_.neurons, k = spec_.window;
    const std::string p = layer_prefix(spec_.arch, l);
    const auto Whh = view(params, p + ".W_hh");
    Mat dA(h, k * B);
    Mat carry = Mat::Zero(h, B);
    for (int t = k - 1; t >= 0; --t) {
      const auto ht = L.H.middleCols((t + 1) * B, B);
      auto da = dA.middleCols(t * B, B);
      da = ((dH.middleCols(t * B, B) + carry).array() *
            (T(1) - ht.array().square()))
               .matrix();
      carry.noalias() = Whh.transpose() * da;
    }
    gview(grad, p + ".W_ih").noalias() += dA * in.transpose();
    gview(grad, p + ".W_hh").noalias() += dA * L.H.leftCols(k * B).transpose();
    gview(grad, p + ".b").col(0) += dA.rowwise().sum();
    if (dIn) dIn->noalias() = view(params, p + ".W_ih").transpose() * dA;
  }

  // Gate order r, z, n. h' = (1 - z) * n + z * h.
  void forward_gru(const T* params, int l, const Mat& in, LayerCache& L) {
    const int B = batch_, h = spec_.neurons, k = spec_.window;
    const std::string p = layer_prefix(spec_.arch, l);
    input_projection(params, p, in, ".b_ih", L);
    const auto Whh = view(params, p + ".W_hh");
    const auto bhh = view(params, p + ".b_hh").col(0);
    L.H.resize(h, (k + 1) * B);
    L.H.leftCols(B).setZero();
    L.R.resize(h, k * B);
    L.Z.resize(h, k * B);
    L.N.resize(h, k * B);
    L.HN.resize(h, k * B);
    Mat gh(3 * h, B);
    for (int t = 0; t < k; ++t) {
      const auto hp = L.H.middleCols(t * B, B);
      gh.noalias() = Whh * hp;
      gh.colwise() += bhh;
      const auto gi = L.Gi.middleCols(t * B, B);
      auto r = L.R.middleCols(t * B, B);
      auto z = L.Z.middleCols(t * B, B);
      auto n = L.N.middleCols(t * B, B);
      auto hn = L.HN.middleCols(t * B, B);
      r = (T(1) / (T(1) + (-(gi.topRows(h) + gh.topRows(h)).array()).exp())).matrix();
      z = (T(1) / (T(1) + (-(gi.middleRows(h, h) + gh.middleRows(h, h)).array()).exp()))
              .matrix();
      hn = gh.bottomRows(h);
      n = (gi.bottomRows(h).array() + r.array() * hn.array()).tanh().matrix();
      L.H.middleCols((t + 1) * B, B) =
          ((T(1) - z.array()) * n.array() + z.array() * hp.array()).matrix();
    }
    L.out = L.H.rightCols(k * B);
  }

  void backward_gru(const T* params, int l, const Mat& in, LayerCache& L,
                    const Mat& dH, T* grad, Mat* dIn) {
    const int B = batch_, h = spec_.neurons, k = spec_.window;
    const std::string p = layer_prefix(spec_.arch, l);
    const auto Whh = view(params, p + ".W_hh");
    Mat dGi(3 * h, k * B);
    Mat dGh(3 * h, k * B);
    Mat carry = Mat::Zero(h, B);
    Mat dh(h, B), dan(h, B);
    for (int t = k - 1; t >= 0; --t) {
      const auto hp = L.H.middleCols(t * B, B).array();
      const auto r = L.R.middleCols(t * B, B).array();
      const auto z = L.Z.middleCols(t * B, B).array();
      const auto n = L.N.middleCols(t * B, B).array();
      const auto hn = L.HN.middleCols(t * B, B).array();
      dh = dH.middleCols(t * B, B) + carry;
      const auto d = dh.array();
      dan = (d * (T(1) - z) * (T(1) - n.square())).matrix();
      auto gi = dGi.middleCols(t * B, B);
      auto gh = dGh.middleCols(t * B, B);
      gi.topRows(h) = (dan.array() * hn * r * (T(1) - r)).matrix();
      gi.middleRows(h, h) = (d * (hp - n) * z * (T(1) - z)).matrix();
      gi.bottomRows(h) = dan;
      gh.topRows(2 * h) = gi.topRows(2 * h);
      gh.bottomRows(h) = (dan.array() * r).matrix();
      carry = (d * z).matrix();
      carry.noalias() += Whh.transpose() * gh;
    }
    gview(grad, p + ".W_ih").noalias() += dGi * in.transpose();
    gview(grad, p + ".W_hh").noalias() += dGh * L.H.leftCols(k * B).transpose();
    gview(grad, p + ".b_ih").col(0) += dGi.rowwise().sum();
    gview(grad, p + ".b_hh").col(0) += dGh.rowwise().sum();
    if (dIn) dIn->noalias() = view(params, p + ".W_ih").transpose() * dGi;
  }

  // Gate order i, f, g, o. c' = f * c + i * g, h' = o * tanh(c').
  void forward_lstm(const T* params, int l, const Mat& in, LayerCache& L) {
    const int B = batch_, h = spec_.neurons, k = spec_.window;
    const std::string p = layer_prefix(spec_.arch, l);
    input_projection(params, p, in, ".b", L);
    const auto Whh = view(params, p + ".W_hh");
    L.H.resize(h, (k + 1) * B);
    L.H.leftCols(B).setZero();
    L.C.resize(h, (k + 1) * B);
    L.C.leftCols(B).setZero();
    L.TC.resize(h, k * B);
    L.A.resize(4 * h, k * B);
    for (int t = 0; t < k; ++t) {
      auto a = L.A.middleCols(t * B, B);
      a.noalias() = Whh * L.H.middleCols(t * B, B);
      a += L.Gi.middleCols(t * B, B);
      a.topRows(2 * h) =
          (T(1) / (T(1) + (-a.topRows(2 * h).array()).exp())).matrix();
      a.middleRows(2 * h, h) = a.middleRows(2 * h, h).array().tanh().matrix();
      a.bottomRows(h) = (T(1) / (T(1) + (-a.bottomRows(h).array()).exp())).matrix();
      auto c = L.C.middleCols((t + 1) * B, B);
      c = (a.middleRows(h, h).array() * L.C.middleCols(t * B, B).array() +
           a.topRows(h).array() * a.middleRows(2 * h, h).array())
              .matrix();
      auto tc = L.TC.middleCols(t * B, B);
      tc = c.array().tanh().matrix();
      L.H.middleCols((t + 1) * B, B) = (a.bottomRows(h).array() * tc.array()).matrix();
    }
    L.out = L.H.rightCols(k * B);
  }

  void backward_lstm(const T* params, int l, const Mat& in, LayerCache& L,
                     const Mat& dH, T* grad, Mat* dIn) {
    const int B = batch_, h = spec_.neurons, k = spec_.window;
    const std::string p = layer_prefix(spec_.arch, l);
    const auto Whh = view(params, p + ".W_hh");
    Mat dA(4 * h, k * B);
    Mat carry_h = Mat::Zero(h, B);
    Mat carry_c = Mat::Zero(h, B);
    Mat dc(h, B);
    for (int t = k - 1; t >= 0; --t) {
      const auto a = L.A.middleCols(t * B, B);
      const auto i = a.topRows(h).array();
      const auto f = a.middleRows(h, h).array();
      const auto g = a.middleRows(2 * h, h).array();
      const auto o = a.bottomRows(h).array();
      const auto tc = L.TC.middleCols(t * B, B).array();
      const auto cp = L.C.middleCols(t * B, B).array();
      const Mat dh = dH.middleCols(t * B, B) + carry_h;
      dc = (carry_c.array() + dh.array() * o * (T(1) - tc.square())).matrix();
      auto da = dA.middleCols(t * B, B);
      da.topRows(h) = (dc.array() * g * i * (T(1) - i)).matrix();
      da.middleRows(h, h) = (dc.array() * cp * f * (T(1) - f)).matrix();
      da.middleRows(2 * h, h) = (dc.array() * i * (T(1) - g.square())).matrix();
      da.bottomRows(h) = (dh.array() * tc * o * (T(1) - o)).matrix();
      carry_c = (dc.array() * f).matrix();
      carry_h.noalias() = Whh.transpose() * da;
    }
    gview(grad, p + ".W_ih").noalias() += dA * in.transpose();
    gview(grad, p + ".W_hh").noalias() += dA * L.H.leftCols(k * B).transpose();
    gview(grad, p + ".b").col(0) += dA.rowwise().sum();
    if (dIn) dIn->noalias() = view(params, p + ".W_ih").transpose() * dA;
  }

  ModelSpec spec_;
  Layout layout_;
  std::vector<LayerCache> layers_;
  Mat last_;
  Mat dX_;
  Row y_;
  int batch_ = 0;
};

// ---------------------------------------------------------------------------
// Inference

class Forecaster {
 public:
  explicit Forecaster(ModelWeights w) : w_(std::move(w)), net_(w_.spec) {
    require(static_cast<std::size_t>(w_.params.size()) == w_.layout.size,
            ErrorKind::kFormat, "weights do not match their layout");
  }

  const ModelWeights& weights() const { return w_; }
  int window() const { return w_.spec.window; }

  // One window, k x features row-major. Every prediction goes through the
  // same single-sample path so results do not depend on batching.
  double predict(const double* inputs) {
    net_.pack(&inputs, 1, X_);
    return net_.forward(w_.params.data(), X_, 1)(0, 0);
  }

  double predict(const WindowedSample& s) {
    require(s.inputs.size() ==
                static_cast<std::size_t>(w_.spec.window * w_.spec.features),
            ErrorKind::kDomain, "forward: sample shape does not match model window");
    return predict(s.inputs.data());
  }

  // Batched evaluation for callers that only need internal consistency.
  std::vector<double> predict_batch(const std::vector<const double*>& inputs) {
    std::vector<double> out;
    out.reserve(inputs.size());
    constexpr std::size_t kChunk = 256;
    for (std::size_t s = 0; s < inputs.size(); s += kChunk) {
      const int n = static_cast<int>(std::min(kChunk, inputs.size() - s));
      net_.pack(inputs.data() + s, n, X_);
      const auto& y = net_.forward(w_.params.data(), X_, n);
      for (int b = 0; b < n; ++b) out.push_back(y(0, b));
    }
    return out;
  }

 private:
  ModelWeights w_;
  Network<double> net_;
  Network<double>::Mat X_;
};

inline double forward(const ModelWeights& w, const WindowedSample& s) {
  Forecaster f(w);
  return f.predict(s);
}

// MSE of the model over a batch and its gradient, in float64. Used by the
// gradient checks.
inline double loss_and_gradient(const ModelWeights& w,
                                const std::vector<WindowedSample>& batch,
                                Eigen::VectorXd* grad) {
  Network<double> net(w.spec);
  std::vector<const double*> ptrs;
  for (const auto& s : batch) ptrs.push_back(s.inputs.data());
  Network<double>::Mat X;
  const int B = static_cast<int>(batch.size());
  net.pack(ptrs.data(), B, X);
  const auto& y = net.forward(w.params.data(), X, B);
  Network<double>::Row dy(B);
  double loss = 0.0;
  for (int b = 0; b < B; ++b) {
    const double e = y(0, b) - batch[static_cast<std::size_t>(b)].target;
    loss += e * e;
    dy(b) = 2.0 * e / B;
  }
  loss /= B;
  if (grad) {
    grad->setZero(w.params.size());
    net.backward(w.params.data(), X, dy, grad->data());
  }
  return loss;
}

struct EvalMetrics {
  double mse = 0.0;
  double rmse = 0.0;
  double mae = 0.0;
  double max_abs_error = 0.0;
  std::size_t count = 0;
};

inline EvalMetrics metrics_from_errors(const std::vector<double>& errors) {
  require(!errors.empty(), ErrorKind::kDomain, "evaluate: empty sample set");
  EvalMetrics m;
  for (double e : errors) {
    m.mse += e * e;
    m.mae += std::abs(e);
    m.max_abs_error = std::max(m.max_abs_error, std::abs(e));
  }
  m.count = errors.size();
  m.mse /= static_cast<double>(m.count);
  m.mae /= static_cast<double>(m.count);
  m.rmse = std::sqrt(m.mse);
  return m;
}

inline std::vector<double> predict_all(Forecaster& f,
                                       const std::vector<WindowedSample>& samples) {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(f.predict(s));
  return out;
}

inline EvalMetrics evaluate(const ModelWeights& w,
                            const std::vector<WindowedSample>& samples) {
  require(!samples.empty(), ErrorKind::kDomain, "evaluate: empty sample set");
  Forecaster f(w);
  std::vector<double> err;
  err.reserve(samples.size());
  for (const auto& s : samples) err.push_back(f.predict(s) - s.target);
  return metrics_from_errors(err);
}

// ---------------------------------------------------------------------------
// Training

struct EpochLoss {
  int epoch = 0;
  double train_mse = 0.0;
  double val_mse = NAN;
};

struct TrainReport {
  std::vector<EpochLoss> epochs;
  double wall_seconds = 0.0;
  int selected_epoch = 0;
};

struct TrainResult {
  ModelWeights weights;
  TrainReport report;
};

using EpochCallback = std::function<void(const EpochLoss&)>;

namespace detail {

template <class T>
double batched_mse(Network<T>& net, const Eigen::Matrix<T, Eigen::Dynamic, 1>& params,
                   const std::vector<WindowedSample>& samples) {
  constexpr std::size_t kChunk = 256;
  typename Network<T>::Mat X;
  std::vector<const double*> ptrs;
  double sum = 0.0;
  for (std::size_t s = 0; s < samples.size(); s += kChunk) {
    const std::size_t n = std::min(kChunk, samples.size() - s);
    ptrs.clear();
    for (std::size_t i = 0; i < n; ++i) ptrs.push_back(samples[s + i].inputs.data());
    net.pack(ptrs.data(), static_cast<int>(n), X);
    const auto& y = net.forward(params.data(), X, static_cast<int>(n));
    for (std::size_t i = 0; i < n; ++i) {
      const double e = static_cast<double>(y(0, static_cast<Eigen::Index>(i))) -
                       samples[s + i].target;
      sum += e * e;
    }
  }
  return sum / static_cast<double>(samples.size());
}

template <class T>
TrainResult train_impl(const ModelWeights& init,
                       const std::vector<WindowedSample>& train_set,
                       const std::vector<WindowedSample>& val_set,
                       const EpochCallback& on_epoch) {
  using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
  const ModelSpec& spec = init.spec;
  const auto start = std::chrono::steady_clock::now();
  Network<T> net(spec);
  Vec params = init.params.template cast<T>();
  Vec grad = Vec::Zero(params.size());
  Vec m = Vec::Zero(params.size());
  Vec v = Vec::Zero(params.size());
  const T lr = static_cast<T>(spec.learning_rate);
  const T beta1 = T(0.9), beta2 = T(0.999), eps = T(1e-8);
  double b1t = 1.0, b2t = 1.0;

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<const double*> ptrs;
  typename Network<T>::Mat X;
  typename Network<T>::Row dy;

  TrainResult out;
  for (int epoch = 1; epoch <= spec.epochs; ++epoch) {
    Rng rng(derive_seed(derive_seed(spec.seed, "shuffle"),
                        static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    double sum = 0.0;
    for (std::size_t s = 0; s < order.size();
         s += static_cast<std::size_t>(spec.batch_size)) {
      const std::size_t n =
          std::min(static_cast<std::size_t>(spec.batch_size), order.size() - s);
      const int B = static_cast<int>(n);
      ptrs.clear();
      for (std::size_t i = 0; i < n; ++i) ptrs.push_back(train_set[order[s + i]].inputs.data());
      net.pack(ptrs.data(), B, X);
      const auto& y = net.forward(params.data(), X, B);
      dy.resize(B);
      for (int b = 0; b < B; ++b) {
        const double e = static_cast<double>(y(0, b)) -
                         train_set[order[s + static_cast<std::size_t>(b)]].target;
        sum += e * e;
        dy(b) = static_cast<T>(2.0 * e / B);
      }
      grad.setZero();
      net.backward(params.data(), X, dy, grad.data());
      b1t *= static_cast<double>(beta1);
      b2t *= static_cast<double>(beta2);
      const T c1 = static_cast<T>(1.0 / (1.0 - b1t));
      const T c2 = static_cast<T>(1.0 / (1.0 - b2t));
      m = beta1 * m + (T(1) - beta1) * grad;
      v = beta2 * v + (T(1) - beta2) * grad.cwiseProduct(grad);
      params.array() -= lr * (m.array() * c1) / ((v.array() * c2).sqrt() + eps);
    }
    EpochLoss el;
    el.epoch = epoch;
    el.train_mse = sum / static_cast<double>(train_set.size());
    if (!val_set.empty()) el.val_mse = batched_mse(net, params, val_set);
    require(std::isfinite(el.train_mse) && params.allFinite(), ErrorKind::kNumeric,
            "train: non-finite loss at epoch " + std::to_string(epoch));
    out.report.epochs.push_back(el);
    if (on_epoch) on_epoch(el);
  }
  out.weights = init;
  out.weights.params = params.template cast<double>();
  out.report.selected_epoch = spec.epochs;
  out.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace detail

inline TrainResult train(const ModelWeights& init,
                         const std::vector<WindowedSample>& train_set,
                         const std::vector<WindowedSample>& val_set,
                         const EpochCallback& on_epoch = {}) {
  require(!train_set.empty(), ErrorKind::kDomain, "train: empty training set");
  const auto expected =
      static_cast<std::size_t>(init.spec.window * init.spec.features);
  for (const auto* set : {&train_set, &val_set}) {
    for (const auto& s : *set) {
      require(s.inputs.size() == expected, ErrorKind::kDomain,
              "train: sample shape does not match model window");
    }
  }
  if (init.spec.train_precision == Precision::kFloat64) {
    return detail::train_impl<double>(init, train_set, val_set, on_epoch);
  }
  return detail::train_impl<float>(init, train_set, val_set, on_epoch);
}

// ---------------------------------------------------------------------------
// Weight file: "RGFW", version byte, u32 header length, JSON header,
// float64 little-endian parameters, u64 FNV-1a of everything before it.

inline constexpr std::uint8_t kWeightsVersion = 1;

inline nlohmann::json spec_to_json(const ModelSpec& s) {
  return {{"arch", std::string(arch_name(s.arch))},
          {"hidden_layers", s.hidden_layers},
          {"neurons", s.neurons},
          {"window", s.window},
          {"features", s.features},
          {"learning_rate", s.learning_rate},
          {"epochs", s.epochs},
          {"batch_size", s.batch_size},
          {"seed", s.seed},
          {"train_precision", s.train_precision == Precision::kFloat32 ? "float32"
                                                                       : "float64"}};
}

inline ModelSpec spec_from_json(const nlohmann::json& j, ModelSpec s = {}) {
  if (j.contains("arch")) {
    auto a = arch_from_name(j.at("arch").get<std::string>());
    require(a.has_value(), ErrorKind::kConfig,
            "unknown arch '" + j.at("arch").get<std::string>() + "'");
    s = ModelSpec::defaults(*a);
  }
  s.hidden_layers = j.value("hidden_layers", s.hidden_layers);
  s.neurons = j.value("neurons", s.neurons);
  s.window = j.value("window", s.window);
  s.features = j.value("features", s.features);
  s.learning_rate = j.value("learning_rate", s.learning_rate);
  s.epochs = j.value("epochs", s.epochs);
  s.batch_size = j.value("batch_size", s.batch_size);
  s.seed = j.value("seed", s.seed);
  if (j.contains("train_precision")) {
    const auto p = j.at("train_precision").get<std::string>();
    require(p == "float32" || p == "float64", ErrorKind::kConfig,
            "train_precision must be float32 or float64");
    s.train_precision = p == "float32" ? Precision::kFloat32 : Precision::kFloat64;
  }
  s.validate();
  return s;
}

inline void write_weights(std::ostream& os, const ModelWeights& w) {
  nlohmann::json header = {{"spec", spec_to_json(w.spec)}};
  auto& blocks = header["blocks"] = nlohmann::json::array();
  for (const auto& b : w.layout.blocks) {
    blocks.push_back({{"name", b.name}, {"rows", b.rows}, {"cols", b.cols}});
  }
  header["count"] = w.layout.size;
  const std::string hs = header.dump();
  std::string buf = "RGFW";
  buf.push_back(static_cast<char>(kWeightsVersion));
  const auto hl = static_cast<std::uint32_t>(hs.size());
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((hl >> (8 * i)) & 0xff));
  buf += hs;
  for (Eigen::Index i = 0; i < w.params.size(); ++i) {
    std::uint64_t bits;
    const double v = w.params[i];
    std::memcpy(&bits, &v, sizeof bits);
    for (int b = 0; b < 8; ++b) buf.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
  }
  const std::uint64_t sum = fnv1a(buf);
  for (int b = 0; b < 8; ++b) buf.push_back(static_cast<char>((sum >> (8 * b)) & 0xff));
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline void save_weights(const std::string& path, const ModelWeights& w) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), ErrorKind::kConfig,
          "cannot open '" + path + "' for writing");
  write_weights(os, w);
  require(static_cast<bool>(os), ErrorKind::kConfig, "write failed for '" + path + "'");
}

inline ModelWeights read_weights(std::istream& is) {
  const std::string buf((std::istreambuf_iterator<char>(is)),
                        std::istreambuf_iterator<char>());
  auto u8 = [&](std::size_t i) { return static_cast<std::uint8_t>(buf[i]); };
  auto le = [&](std::size_t at, int bytes) {
    std::uint64_t v = 0;
    for (int b = 0; b < bytes; ++b) v |= std::uint64_t{u8(at + static_cast<std::size_t>(b))} << (8 * b);
    return v;
  };
  require(buf.size() >= 9 && buf.compare(0, 4, "RGFW") == 0, ErrorKind::kFormat,
          "weights: not a weight file");
  require(u8(4) == kWeightsVersion, ErrorKind::kVersion,
          "weights: file version " + std::to_string(u8(4)) + ", expected " +
              std::to_string(kWeightsVersion));
  const std::size_t hl = le(5, 4);
  require(buf.size() >= 9 + hl + 8, ErrorKind::kFormat, "weights: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(buf.substr(9, hl));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, std::string("weights: bad header: ") + e.what());
  }
  ModelWeights w;
  try {
    w.spec = spec_from_json(header.at("spec"));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, std::string("weights: bad spec: ") + e.what());
  }
  w.layout = make_layout(w.spec);
  require(header.value("count", std::size_t{0}) == w.layout.size, ErrorKind::kFormat,
          "weights: parameter count does not match spec");
  const std::size_t body = 9 + hl;
  require(buf.size() == body + 8 * w.layout.size + 8, ErrorKind::kFormat,
          "weights: truncated or oversized parameter block");
  const std::size_t end = body + 8 * w.layout.size;
  require(fnv1a(buf.data(), end) == le(end, 8), ErrorKind::kFormat,
          "weights: checksum mismatch");
  w.params.resize(static_cast<Eigen::Index>(w.layout.size));
  for (std::size_t i = 0; i < w.layout.size; ++i) {
    const std::uint64_t bits = le(body + 8 * i, 8);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    w.params[static_cast<Eigen::Index>(i)] = v;
  }
  require(w.params.allFinite(), ErrorKind::kFormat, "weights: non-finite parameter");
  return w;
}

inline ModelWeights load_weights(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorKind::kDependency,
          "cannot open weights '" + path + "'");
  return read_weights(is);
}

}  // namespace replayguard
