#pragma once

#include "cmo/rng.hpp"
#include "cmo/types.hpp"

#include <cmath>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cmo {

enum class Architecture { linear, mlp, tinyconv };

std::string_view to_string(Architecture a);
Architecture parse_architecture(std::string_view name);

/// Network description. `hidden` holds the hidden widths for mlp and the
/// channel count of each conv stage for tinyconv; linear ignores it.
struct ModelSpec {
  Architecture architecture = Architecture::tinyconv;
  ImageShape input;
  int num_classes = 2;
  std::vector<int> hidden;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

namespace detail {

struct ParamSlot {
  Index offset = 0;
  Index rows = 0;
  Index cols = 0;
  Index size() const { return rows * cols; }
};

struct Layer {
  enum class Kind { dense, conv3x3, relu, avgpool2 };
  Kind kind;
  ImageShape in;
  ImageShape out;
  int weight = -1;
  int bias = -1;
};

// Rows of `x` are images (H x W x C, channels interleaved). Returns one row per
// output pixel holding its 3x3 neighbourhood (zero padded), ordered
// (dy, dx, c).
template <typename Scalar>
RowMatrix<Scalar> im2col3x3(const RowMatrix<Scalar>& x, ImageShape s) {
  const Index batch = x.rows();
  const int w = s.width, h = s.height, ch = s.channels;
  RowMatrix<Scalar> cols = RowMatrix<Scalar>::Zero(batch * h * w, 9 * ch);
  for (Index b = 0; b < batch; ++b) {
    const Scalar* src = x.row(b).data();
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) {
        Scalar* dst = cols.row((b * h + y) * w + xx).data();
        for (int dy = -1; dy <= 1; ++dy) {
          const int yy = y + dy;
          if (yy < 0 || yy >= h) continue;
          for (int dx = -1; dx <= 1; ++dx) {
            const int xs = xx + dx;
            if (xs < 0 || xs >= w) continue;
            const Scalar* p = src + (Index{yy} * w + xs) * ch;
            Scalar* q = dst + ((dy + 1) * 3 + (dx + 1)) * ch;
            for (int c = 0; c < ch; ++c) q[c] = p[c];
          }
        }
      }
  }
  return cols;
}

template <typename Scalar>
RowMatrix<Scalar> col2im3x3(const RowMatrix<Scalar>& cols, Index batch, ImageShape s) {
  const int w = s.width, h = s.height, ch = s.channels;
  RowMatrix<Scalar> x = RowMatrix<Scalar>::Zero(batch, s.size());
  for (Index b = 0; b < batch; ++b) {
    Scalar* dst = x.row(b).data();
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) {
        const Scalar* src = cols.row((b * h + y) * w + xx).data();
        for (int dy = -1; dy <= 1; ++dy) {
          const int yy = y + dy;
          if (yy < 0 || yy >= h) continue;
          for (int dx = -1; dx <= 1; ++dx) {
            const int xs = xx + dx;
            if (xs < 0 || xs >= w) continue;
            Scalar* p = dst + (Index{yy} * w + xs) * ch;
            const Scalar* q = src + ((dy + 1) * 3 + (dx + 1)) * ch;
            for (int c = 0; c < ch; ++c) p[c] += q[c];
          }
        }
      }
  }
  return x;
}

}  // namespace detail

/// Small differentiable classifier with all parameters in one flat vector.
template <typename Scalar>
class BasicModel {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Matrix = RowMatrix<Scalar>;

  /// Per-layer inputs recorded by forward() for backward().
  struct Tape {
    std::vector<Matrix> inputs;
  };

  BasicModel() = default;

  /// Zero-initialized parameters.
  explicit BasicModel(ModelSpec spec) : spec_(std::move(spec)) {
    build();
    params_ = Vector::Zero(param_count_);
  }

  /// He-uniform weights, zero biases.
  static BasicModel initialized(ModelSpec spec, Rng& rng) {
    BasicModel m(std::move(spec));
    for (const auto& layer : m.layers_) {
      if (layer.weight < 0) continue;
      const auto& slot = m.slots_[static_cast<std::size_t>(layer.weight)];
      const Scalar bound = std::sqrt(Scalar(6) / static_cast<Scalar>(slot.rows));
      for (Index i = 0; i < slot.size(); ++i)
        m.params_[slot.offset + i] = static_cast<Scalar>(rng.uniform(-1.0, 1.0)) * bound;
    }
    return m;
  }

  const ModelSpec& spec() const { return spec_; }
  int num_classes() const { return spec_.num_classes; }
  Index input_size() const { return spec_.input.size(); }
  Index param_count() const { return param_count_; }
  const Vector& params() const { return params_; }
  Vector& params() { return params_; }

  void set_params(Vector p) {
    if (p.size() != param_count_) throw std::invalid_argument("parameter vector has the wrong length");
    params_ = std::move(p);
  }

  Matrix forward(const Matrix& x, Tape* tape = nullptr) const {
    if (x.cols() != input_size())
      throw std::invalid_argument("batch has " + std::to_string(x.cols()) + " features, model expects " +
                                  std::to_string(input_size()));
    if (tape) tape->inputs.clear();
    Matrix a = x;
    for (const auto& layer : layers_) {
      Matrix next = apply(layer, a);
      if (tape) tape->inputs.push_back(std::move(a));
      a = std::move(next);
    }
    if (!a.allFinite()) throw NumericError("non-finite activations in forward pass");
    return a;
  }

  /// Gradient of the loss w.r.t. parameters, given d loss / d logits.
  Vector backward(const Tape& tape, const Matrix& dlogits) const {
    if (tape.inputs.size() != layers_.size()) throw std::invalid_argument("tape does not match this model");
    Vector grad = Vector::Zero(param_count_);
    Matrix delta = dlogits;
    for (std::size_t l = layers_.size(); l-- > 0;) delta = back(layers_[l], tape.inputs[l], delta, grad, l > 0);
    return grad;
  }

 private:
  using Map = Eigen::Map<Matrix>;
  using ConstMap = Eigen::Map<const Matrix>;

  ConstMap tensor(int slot) const {
    const auto& s = slots_[static_cast<std::size_t>(slot)];
    return ConstMap(params_.data() + s.offset, s.rows, s.cols);
  }

  static Map tensor_of(Vector& v, const detail::ParamSlot& s) { return Map(v.data() + s.offset, s.rows, s.cols); }

  int add_slot(Index rows, Index cols) {
    slots_.push_back({param_count_, rows, cols});
    param_count_ += rows * cols;
    return static_cast<int>(slots_.size()) - 1;
  }

  void add_dense(ImageShape& shape, int out) {
    const ImageShape o{1, 1, out};
    const int w = add_slot(shape.size(), out);
    const int b = add_slot(1, out);
    layers_.push_back({detail::Layer::Kind::dense, shape, o, w, b});
    shape = o;
  }

  void add_relu(const ImageShape& shape) { layers_.push_back({detail::Layer::Kind::relu, shape, shape}); }

  void build() {
    if (spec_.num_classes < 2) throw std::invalid_argument("model needs at least two classes");
    if (spec_.input.size() < 1) throw std::invalid_argument("model input shape must be non-empty");
    for (int h : spec_.hidden)
      if (h < 1) throw std::invalid_argument("hidden sizes must be positive");
    ImageShape shape = spec_.input;
    switch (spec_.architecture) {
      case Architecture::linear:
        break;
      case Architecture::mlp:
        for (int h : spec_.hidden) {
          add_dense(shape, h);
          add_relu(shape);
        }
        break;
      case Architecture::tinyconv:
        for (int ch : spec_.hidden) {
          const ImageShape o{shape.width, shape.height, ch};
          const int w = add_slot(9 * shape.channels, ch);
          const int b = add_slot(1, ch);
          layers_.push_back({detail::Layer::Kind::conv3x3, shape, o, w, b});
          shape = o;
          add_relu(shape);
          if (shape.width >= 2 && shape.height >= 2) {
            const ImageShape p{shape.width / 2, shape.height / 2, shape.channels};
            layers_.push_back({detail::Layer::Kind::avgpool2, shape, p});
            shape = p;
          }
        }
        break;
    }
    add_dense(shape, spec_.num_classes);
  }

  Matrix apply(const detail::Layer& layer, const Matrix& a) const {
    using K = detail::Layer::Kind;
    switch (layer.kind) {
      case K::dense: {
        Matrix z = a * tensor(layer.weight);
        z.rowwise() += tensor(layer.bias).row(0);
        return z;
      }
      case K::conv3x3: {
        Matrix z = detail::im2col3x3<Scalar>(a, layer.in) * tensor(layer.weight);
        z.rowwise() += tensor(layer.bias).row(0);
        // (batch * pixels) x channels and batch x (pixels * channels) share one row-major layout.
        return ConstMap(z.data(), a.rows(), layer.out.size());
      }
      case K::relu:
        return a.cwiseMax(Scalar(0));
      case K::avgpool2: {
        Matrix z(a.rows(), layer.out.size());
        const int ch = layer.in.channels;
        for (Index b = 0; b < a.rows(); ++b)
          for (int y = 0; y < layer.out.height; ++y)
            for (int x = 0; x < layer.out.width; ++x)
              for (int c = 0; c < ch; ++c) {
                auto in = [&](int dx, int dy) {
                  return a(b, (Index{2 * y + dy} * layer.in.width + 2 * x + dx) * ch + c);
                };
                z(b, (Index{y} * layer.out.width + x) * ch + c) =
                    Scalar(0.25) * (in(0, 0) + in(1, 0) + in(0, 1) + in(1, 1));
              }
        return z;
      }
    }
    return a;
  }

  // Accumulates parameter gradients of `layer` into `grad` and returns the
  // gradient w.r.t. the layer input (skipped for the first layer).
  Matrix back(const detail::Layer& layer, const Matrix& a, const Matrix& delta, Vector& grad,
              bool need_input_grad) const {
    using K = detail::Layer::Kind;
    switch (layer.kind) {
      case K::dense: {
        tensor_of(grad, slots_[static_cast<std::size_t>(layer.weight)]).noalias() += a.transpose() * delta;
        tensor_of(grad, slots_[static_cast<std::size_t>(layer.bias)]).row(0) += delta.colwise().sum();
        if (!need_input_grad) return {};
        return delta * tensor(layer.weight).transpose();
      }
      case K::conv3x3: {
        const Matrix cols = detail::im2col3x3<Scalar>(a, layer.in);
        const ConstMap d(delta.data(), cols.rows(), layer.out.channels);
        tensor_of(grad, slots_[static_cast<std::size_t>(layer.weight)]).noalias() += cols.transpose() * d;
        tensor_of(grad, slots_[static_cast<std::size_t>(layer.bias)]).row(0) += d.colwise().sum();
        if (!need_input_grad) return {};
        const Matrix dcols = d * tensor(layer.weight).transpose();
        return detail::col2im3x3<Scalar>(dcols, a.rows(), layer.in);
      }
      case K::relu:
        return (a.array() > Scalar(0)).select(delta, Scalar(0));
      case K::avgpool2: {
        Matrix da = Matrix::Zero(a.rows(), a.cols());
        const int ch = layer.in.channels;
        for (Index b = 0; b < a.rows(); ++b)
          for (int y = 0; y < layer.out.height; ++y)
            for (int x = 0; x < layer.out.width; ++x)
              for (int c = 0; c < ch; ++c) {
                const Scalar g = Scalar(0.25) * delta(b, (Index{y} * layer.out.width + x) * ch + c);
                for (int dy = 0; dy < 2; ++dy)
                  for (int dx = 0; dx < 2; ++dx)
                    da(b, (Index{2 * y + dy} * layer.in.width + 2 * x + dx) * ch + c) += g;
              }
        return da;
      }
    }
    return delta;
  }

  ModelSpec spec_;
  std::vector<detail::ParamSlot> slots_;
  std::vector<detail::Layer> layers_;
  Index param_count_ = 0;
  Vector params_;
};

using Model = BasicModel<double>;

template <typename Scalar>
struct LossAndGrad {
  Scalar loss;
  RowMatrix<Scalar> dlogits;
};

template <typename Scalar>
RowMatrix<Scalar> log_softmax(const RowMatrix<Scalar>& logits) {
  RowMatrix<Scalar> out = logits;
  for (Index r = 0; r < out.rows(); ++r) {
    const Scalar m = out.row(r).maxCoeff();
    const Scalar lse = m + std::log((out.row(r).array() - m).exp().sum());
    out.row(r).array() -= lse;
  }
  return out;
}

template <typename Scalar>
RowMatrix<Scalar> softmax(const RowMatrix<Scalar>& logits) {
  return log_softmax(logits).array().exp().matrix();
}

/// Batch mean of lambda_i w[y_b] CE(z_i, y_b) + (1 - lambda_i) w[y_f] CE(z_i, y_f)
/// and its gradient w.r.t. the logits. `class_weights` may be empty (all ones).
template <typename Scalar>
LossAndGrad<Scalar> soft_ce(const RowMatrix<Scalar>& logits, std::span<const int> y_b, std::span<const int> y_f,
                            std::span<const double> lambda, std::span<const double> class_weights = {}) {
  const Index batch = logits.rows();
  const Index classes = logits.cols();
  if (static_cast<Index>(y_b.size()) != batch || static_cast<Index>(y_f.size()) != batch ||
      static_cast<Index>(lambda.size()) != batch)
    throw std::invalid_argument("label and lambda arrays must match the batch size");
  if (!class_weights.empty() && static_cast<Index>(class_weights.size()) != classes)
    throw std::invalid_argument("class weight vector must have one entry per class");
  const RowMatrix<Scalar> logp = log_softmax(logits);
  LossAndGrad<Scalar> out{Scalar(0), logp.array().exp().matrix()};
  const Scalar inv_batch = Scalar(1) / static_cast<Scalar>(batch);
  for (Index i = 0; i < batch; ++i) {
    const double lam = lambda[static_cast<std::size_t>(i)];
    if (!(lam >= 0.0 && lam <= 1.0)) throw std::invalid_argument("lambda must lie in [0, 1]");
    const int b = y_b[static_cast<std::size_t>(i)];
    const int f = y_f[static_cast<std::size_t>(i)];
    if (b < 0 || b >= classes || f < 0 || f >= classes) throw std::invalid_argument("label out of range");
    const Scalar wb = static_cast<Scalar>(lam) * (class_weights.empty() ? Scalar(1) : static_cast<Scalar>(class_weights[static_cast<std::size_t>(b)]));
    const Scalar wf = static_cast<Scalar>(1.0 - lam) * (class_weights.empty() ? Scalar(1) : static_cast<Scalar>(class_weights[static_cast<std::size_t>(f)]));
    out.loss -= wb * logp(i, b) + wf * logp(i, f);
    // d/dz of w CE(z, y) is w (softmax(z) - e_y).
    out.dlogits.row(i) *= wb + wf;
    out.dlogits(i, b) -= wb;
    out.dlogits(i, f) -= wf;
  }
  out.loss *= inv_batch;
  out.dlogits *= inv_batch;
  return out;
}

/// Batch mean of -sum_k target_k log softmax(z)_k.
template <typename Scalar>
Scalar soft_label_ce(const RowMatrix<Scalar>& logits, const RowMatrix<Scalar>& targets) {
  if (logits.rows() != targets.rows() || logits.cols() != targets.cols())
    throw std::invalid_argument("targets must match logits in shape");
  return -(targets.array() * log_softmax(logits).array()).sum() / static_cast<Scalar>(logits.rows());
}

/// Momentum SGD with coupled weight decay:
/// v <- momentum v + grad + weight_decay param; param <- param - lr v.
template <typename Scalar>
void sgd_step(Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& params, const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& grad,
              Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& velocity, Scalar lr, Scalar momentum, Scalar weight_decay) {
  if (grad.size() != params.size()) throw std::invalid_argument("gradient length does not match parameters");
  if (!grad.allFinite()) {
    Index bad = 0;
    for (; bad < grad.size() && std::isfinite(grad[bad]); ++bad) {
    }
    throw NumericError("non-finite gradient at parameter " + std::to_string(bad) + " of " +
                       std::to_string(grad.size()) + "; step aborted");
  }
  if (velocity.size() != params.size()) velocity = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(params.size());
  velocity = momentum * velocity + grad + weight_decay * params;
  params -= lr * velocity;
}

/// Versioned binary checkpoint: "CMOM", format version, architecture
/// descriptor, then the parameters as little-endian float64.
void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);
/// Same bytes as save_model, in memory.
std::string serialize_model(const Model& model);
Model deserialize_model(const std::string& bytes);

}  // namespace cmo
