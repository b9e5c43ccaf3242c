#pragma once

#include "ciper/common.hpp"

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace ciper::nn {

/**
 * Batch of feature maps. Rows enumerate positions image-major
 * ((n * h + y) * w + x); columns are channels. Dense features use h = w = 1,
 * so a batch of vectors is simply an N×F matrix.
 */
template <typename Scalar>
struct Activation {
  Matrix<Scalar> data;
  int n = 0;
  int h = 1;
  int w = 1;

  Eigen::Index channels() const { return data.cols(); }
  Eigen::Index positions() const { return data.rows(); }
};

template <typename Scalar>
Activation<Scalar> dense(Matrix<Scalar> m) {
  Activation<Scalar> a;
  a.n = static_cast<int>(m.rows());
  a.data = std::move(m);
  return a;
}

enum class Mode { train, eval };

template <typename Scalar>
struct Param {
  std::string name;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;

  Param() = default;
  Param(std::string n, Matrix<Scalar> v) : name(std::move(n)), value(std::move(v)) {
    grad = Matrix<Scalar>::Zero(value.rows(), value.cols());
  }
};

/// Non-trainable state saved with checkpoints (batch-norm running statistics).
template <typename Scalar>
struct Buffer {
  std::string name;
  Matrix<Scalar>* value;
};

/// Per-call saved state needed by backward.
template <typename Scalar>
struct Cache {
  Matrix<Scalar> x;
  Matrix<Scalar> aux;
  Vector<Scalar> stat;
  std::vector<Cache> children;
  int n = 0, h = 0, w = 0;
  bool frozen_stats = false;
};

template <typename Scalar>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Activation<Scalar> forward(const Activation<Scalar>& x, Mode mode, Cache<Scalar>& cache) = 0;
  /// Returns dL/dx and accumulates parameter gradients.
  virtual Activation<Scalar> backward(const Activation<Scalar>& dy, const Cache<Scalar>& cache) = 0;
  virtual void parameters(std::vector<Param<Scalar>*>&) {}
  virtual void buffers(std::vector<Buffer<Scalar>>&) {}
};

template <typename Scalar>
using LayerPtr = std::unique_ptr<Layer<Scalar>>;

// PyTorch-style default: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename Scalar>
Matrix<Scalar> uniform_init(Eigen::Index rows, Eigen::Index cols, double fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(fan_in);
  Matrix<Scalar> m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = static_cast<Scalar>(rng.uniform(-bound, bound));
  return m;
}

// He normal, fan-in, for rectifier stacks.
template <typename Scalar>
Matrix<Scalar> he_init(Eigen::Index rows, Eigen::Index cols, double fan_in, Rng& rng) {
  const double sd = std::sqrt(2.0 / fan_in);
  Matrix<Scalar> m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = static_cast<Scalar>(rng.normal() * sd);
  return m;
}

/// y = x Wᵀ + b with W stored out×in.
template <typename Scalar>
class Linear final : public Layer<Scalar> {
 public:
  Linear(std::string name, int in, int out, Rng& rng, bool bias = true)
      : weight_(name + ".weight", uniform_init<Scalar>(out, in, in, rng)), has_bias_(bias) {
    if (bias) bias_ = Param<Scalar>(name + ".bias", uniform_init<Scalar>(1, out, in, rng));
  }

  Activation<Scalar> forward(const Activation<Scalar>& x, Mode, Cache<Scalar>& cache) override {
    if (x.channels() != weight_.value.cols())
      throw ShapeError(weight_.name + ": expected " + std::to_string(weight_.value.cols()) + " inputs, got " +
                       std::to_string(x.channels()));
    cache.x = x.data;
    Activation<Scalar> y;
    y.n = x.n;
    y.h = x.h;
    y.w = x.w;
    y.data.noalias() = x.data * weight_.value.transpose();
    if (has_bias_) y.data.rowwise() += bias_.value.row(0);
    return y;
  }

  Activation<Scalar> backward(const Activation<Scalar>& dy, const Cache<Scalar>& cache) override {
    weight_.grad.noalias() += dy.data.transpose() * cache.x;
    if (has_bias_) bias_.grad.row(0) += dy.data.colwise().sum();
    Activation<Scalar> dx;
    dx.n = dy.n;
    dx.h = dy.h;
    dx.w = dy.w;
    dx.data.noalias() = dy.data * weight_.value;
    return dx;
  }

  void parameters(std::vector<Param<Scalar>*>& out) override {
    out.push_back(&weight_);
    if (has_bias_) out.push_back(&bias_);
  }

  Param<Scalar>& weight() { return weight_; }
  Param<Scalar>& bias() { return bias_; }

 private:
  Param<Scalar> weight_;
  Param<Scalar> bias_;
  bool has_bias_;
};

/// 2-D convolution by im2col + GEMM. Kernel stored (cin·k·k)×cout, no bias.
template <typename Scalar>
class Conv2d final : public Layer<Scalar> {
 public:
  Conv2d(std::string name, int cin, int cout, int kernel, int stride, int pad, Rng& rng)
      : weight_(name + ".weight", he_init<Scalar>(Eigen::Index{cin} * kernel * kernel, cout,
                                                  double(cin) * kernel * kernel, rng)),
        cin_(cin), kernel_(kernel), stride_(stride), pad_(pad) {}

  int out_size(int in) const { return (in + 2 * pad_ - kernel_) / stride_ + 1; }

  Activation<Scalar> forward(const Activation<Scalar>& x, Mode, Cache<Scalar>& cache) override {
    if (x.channels() != cin_)
      throw ShapeError(weight_.name + ": expected " + std::to_string(cin_) + " channels, got " +
                       std::to_string(x.channels()));
    const int ho = out_size(x.h), wo = out_size(x.w);
    if (ho <= 0 || wo <= 0) throw ShapeError(weight_.name + ": input smaller than kernel");
    cache.n = x.n;
    cache.h = x.h;
    cache.w = x.w;
    im2col(x, ho, wo, cache.x);
    Activation<Scalar> y;
    y.n = x.n;
    y.h = ho;
    y.w = wo;
    y.data.noalias() = cache.x * weight_.value;
    return y;
  }

  Activation<Scalar> backward(const Activation<Scalar>& dy, const Cache<Scalar>& cache) override {
    weight_.grad.noalias() += cache.x.transpose() * dy.data;
    const Matrix<Scalar> dcols = dy.data * weight_.value.transpose();
    Activation<Scalar> dx;
    dx.n = cache.n;
    dx.h = cache.h;
    dx.w = cache.w;
    dx.data = Matrix<Scalar>::Zero(Eigen::Index{cache.n} * cache.h * cache.w, cin_);
    col2im(dcols, out_size(cache.h), out_size(cache.w), dx);
    return dx;
  }

  void parameters(std::vector<Param<Scalar>*>& out) override { out.push_back(&weight_); }
  Param<Scalar>& weight() { return weight_; }

 private:
  void im2col(const Activation<Scalar>& x, int ho, int wo, Matrix<Scalar>& cols) const {
    const Eigen::Index rows = Eigen::Index{x.n} * ho * wo;
    cols.resize(rows, Eigen::Index{cin_} * kernel_ * kernel_);
    for (int ci = 0; ci < cin_; ++ci) {
      const Scalar* src = x.data.col(ci).data();
      for (int ky = 0; ky < kernel_; ++ky) {
        for (int kx = 0; kx < kernel_; ++kx) {
          Scalar* dst = cols.col((Eigen::Index{ci} * kernel_ + ky) * kernel_ + kx).data();
          for (int n = 0; n < x.n; ++n) {
            const Scalar* img = src + Eigen::Index{n} * x.h * x.w;
            for (int oy = 0; oy < ho; ++oy) {
              const int iy = oy * stride_ - pad_ + ky;
              if (iy < 0 || iy >= x.h) {
                std::fill(dst, dst + wo, Scalar(0));
                dst += wo;
                continue;
              }
              const Scalar* row = img + Eigen::Index{iy} * x.w;
              for (int ox = 0; ox < wo; ++ox) {
                const int ix = ox * stride_ - pad_ + kx;
                *dst++ = (ix >= 0 && ix < x.w) ? row[ix] : Scalar(0);
              }
            }
          }
        }
      }
    }
  }

  void col2im(const Matrix<Scalar>& dcols, int ho, int wo, Activation<Scalar>& dx) const {
    for (int ci = 0; ci < cin_; ++ci) {
      Scalar* dst = dx.data.col(ci).data();
      for (int ky = 0; ky < kernel_; ++ky) {
        for (int kx = 0; kx < kernel_; ++kx) {
          const Scalar* src = dcols.col((Eigen::Index{ci} * kernel_ + ky) * kernel_ + kx).data();
          for (int n = 0; n < dx.n; ++n) {
            Scalar* img = dst + Eigen::Index{n} * dx.h * dx.w;
            for (int oy = 0; oy < ho; ++oy) {
              const int iy = oy * stride_ - pad_ + ky;
              if (iy < 0 || iy >= dx.h) {
                src += wo;
                continue;
              }
              Scalar* row = img + Eigen::Index{iy} * dx.w;
              for (int ox = 0; ox < wo; ++ox, ++src) {
                const int ix = ox * stride_ - pad_ + kx;
                if (ix >= 0 && ix < dx.w) row[ix] += *src;
              }
            }
          }
        }
      }
    }
  }

  Param<Scalar> weight_;
  int cin_, kernel_, stride_, pad_;
};

inline constexpr double kNormEpsilon = 1e-5;

/**
 * Batch normalization over rows, one statistic per column. Covers both the
 * 1-D (N×F) and the spatial (positions×C) case.
 */
template <typename Scalar>
class BatchNorm final : public Layer<Scalar> {
 public:
  BatchNorm(std::string name, int features, double momentum = 0.1)
      : gamma_(name + ".weight", Matrix<Scalar>::Ones(1, features)),
        beta_(name + ".bias", Matrix<Scalar>::Zero(1, features)),
        running_mean_(Matrix<Scalar>::Zero(1, features)),
        running_var_(Matrix<Scalar>::Ones(1, features)),
        name_(std::move(name)),
        momentum_(static_cast<Scalar>(momentum)) {}

  Activation<Scalar> forward(const Activation<Scalar>& x, Mode mode, Cache<Scalar>& cache) override {
    if (x.channels() != gamma_.value.cols()) throw ShapeError(name_ + ": feature count mismatch");
    Activation<Scalar> y;
    y.n = x.n;
    y.h = x.h;
    y.w = x.w;
    const auto eps = static_cast<Scalar>(kNormEpsilon);
    if (mode == Mode::eval) {
      cache.frozen_stats = true;
      cache.stat = (running_var_.row(0).array() + eps).rsqrt().transpose();
      cache.aux = (x.data.rowwise() - running_mean_.row(0)).array().rowwise() * cache.stat.transpose().array();
      y.data = (cache.aux.array().rowwise() * gamma_.value.row(0).array()).rowwise() + beta_.value.row(0).array();
      return y;
    }
    const Eigen::Index p = x.positions();
    if (p < 2) throw PreconditionError(name_ + ": batch norm needs at least 2 values per feature in training mode");
    const RowVector<Scalar> mean = x.data.colwise().mean();
    Matrix<Scalar> centered = x.data.rowwise() - mean;
    const RowVector<Scalar> var = centered.colwise().squaredNorm() / static_cast<Scalar>(p);
    cache.stat = (var.array() + eps).rsqrt().transpose();
    cache.aux = centered.array().rowwise() * cache.stat.transpose().array();  // x̂
    y.data = (cache.aux.array().rowwise() * gamma_.value.row(0).array()).rowwise() + beta_.value.row(0).array();
    const Scalar unbias = static_cast<Scalar>(p) / static_cast<Scalar>(p - 1);
    running_mean_.row(0) = (Scalar(1) - momentum_) * running_mean_.row(0) + momentum_ * mean;
    running_var_.row(0) = (Scalar(1) - momentum_) * running_var_.row(0) + momentum_ * unbias * var;
    return y;
  }

  Activation<Scalar> backward(const Activation<Scalar>& dy, const Cache<Scalar>& cache) override {
    const auto p = static_cast<Scalar>(dy.positions());
    const Matrix<Scalar>& xhat = cache.aux;
    const RowVector<Scalar> sum_dy = dy.data.colwise().sum();
    const RowVector<Scalar> sum_dy_xhat = (dy.data.array() * xhat.array()).colwise().sum();
    gamma_.grad.row(0) += sum_dy_xhat;
    beta_.grad.row(0) += sum_dy;
    Activation<Scalar> dx;
    dx.n = dy.n;
    dx.h = dy.h;
    dx.w = dy.w;
    if (cache.frozen_stats) {
      const RowVector<Scalar> scale = gamma_.value.row(0).array() * cache.stat.transpose().array();
      dx.data = dy.data.array().rowwise() * scale.array();
      return dx;
    }
    const RowVector<Scalar> k = gamma_.value.row(0).array() * cache.stat.transpose().array() / p;
    dx.data = ((p * dy.data.array()).rowwise() - sum_dy.array() -
               xhat.array().rowwise() * sum_dy_xhat.array())
                  .rowwise() *
              k.array();
    return dx;
  }

  void parameters(std::vector<Param<Scalar>*>& out) override {
    out.push_back(&gamma_);
    out.push_back(&beta_);
  }
  void buffers(std::vector<Buffer<Scalar>>& out) override {
    out.push_back({name_ + ".running_mean", &running_mean_});
    out.push_back({name_ + ".running_var", &running_var_});
  }

 private:
  Param<Scalar> gamma_, beta_;
  Matrix<Scalar> running_mean_, running_var_;
  std::string name_;
  Scalar momentum_;
};

/// Layer normalization over the features of each row.
template <typename Scalar>
class LayerNorm final : public Layer<Scalar> {
 public:
  LayerNorm(std::string name, int features)
      : gamma_(name + ".weight", Matrix<Scalar>::Ones(1, features)),
        beta_(name + ".bias", Matrix<Scalar>::Zero(1, features)) {}

  Activation<Scalar> forward(const Activation<Scalar>& x, Mode, Cache<Scalar>& cache) override {
    if (x.channels() != gamma_.value.cols()) throw ShapeError(gamma_.name + ": feature count mismatch");
    const auto f = static_cast<Scalar>(x.channels());
    const Vector<Scalar> mean = x.data.rowwise().mean();
    Matrix<Scalar> centered = x.data.colwise() - mean;
    const Vector<Scalar> var = centered.rowwise().squaredNorm() / f;
    cache.stat = (var.array() + static_cast<Scalar>(kNormEpsilon)).rsqrt();
    cache.aux = centered.array().colwise() * cache.stat.array();
    Activation<Scalar> y;
    y.n = x.n;
    y.h = x.h;
    y.w = x.w;
    y.data = (cache.aux.array().rowwise() * gamma_.value.row(0).array()).rowwise() + beta_.value.row(0).array();
    return y;
  }

  Activation<Scalar> backward(const Activation<Scalar>& dy, const Cache<Scalar>& cache) override {
    const auto f = static_cast<Scalar>(dy.channels());
    const Matrix<Scalar>& xhat = cache.aux;
    gamma_.grad.row(0) += (dy.data.array() * xhat.array()).colwise().sum().matrix();
    beta_.grad.row(0) += dy.data.colwise().sum();
    const Matrix<Scalar> dxhat = dy.data.array().rowwise() * gamma_.value.row(0).array();
    const Vector<Scalar> sum_d = dxhat.rowwise().sum();
    const Vector<Scalar> sum_dx = (dxhat.array() * xhat.array()).rowwise().sum();
    Activation<Scalar> dx;
    dx.n = dy.n;
    dx.h = dy.h;
    dx.w = dy.w;
    dx.data = (((f * dxhat.array()).colwise() - sum_d.array()) - xhat.array().colwise() * sum_dx.array())
                  .colwise() *
              (cache.stat.array() / f);
    return dx;
  }

  void parameters(std::vector<Param<Scalar>*>& out) override {
    out.push_back(&gamma_);
    out.push_back(&beta_);
  }

 private:
  Param<Scalar> gamma_, beta_;
};

template <typename Scalar>
class ReLU final : public Layer<Scalar> {
 public:
  Activation<Scalar> forward(const Activation<Scalar>& x, Mode, Cache<Scalar>& cache) override {
    Activation<Scalar> y = x;
    y.data = x.data.cwiseMax(Scalar(0));
    cache.aux = (x.data.array() > Scalar(0)).template cast<Scalar>();
    return y;
  }
  Activation<Scalar> backward(const Activation<Scalar>& dy, const Cache<Scalar>& cache) override {
    Activation<Scalar> dx = dy;
    dx.data.array() *= cache.aux.array();
    return dx;
  }
};

/// 2×2 average pooling, stride 2; spatial sizes must be even.
template <typename Scalar>
class AvgPool2 final : public Layer<Scalar> {
 public:
  Activation<Scalar> forward(const Activation<Scalar>& x, Mode, Cache<Scalar>& cache) override {
    if (x.h % 2 != 0 || x.w % 2 != 0) throw ShapeError("AvgPool2: spatial size must be even");
    cache.n = x.n;
    cache.h = x.h;
    cache.w = x.w;
    Activation<Scalar> y;
    y.n = x.n;
    y.h = x.h / 2;
    y.w = x.w / 2;
    y.data.resize(Eigen::Index{y.n} * y.h * y.w, x.channels());
    for (Eigen::Index c = 0; c < x.channels(); ++c) {
      const Scalar* src = x.data.col(c).data();
      Scalar* dst = y.data.col(c).data();
      for (int n = 0; n < x.n; ++n) {
        const Scalar* img = src + Eigen::Index{n} * x.h * x.w;
        for (int oy = 0; oy < y.h; ++oy) {
          const Scalar* r0 = img + Eigen::Index{2 * oy} * x.w;
          const Scalar* r1 = r0 + x.w;
          for (int ox = 0; ox < y.w; ++ox)
            *dst++ = Scalar(0.25) * (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]);
        }
      }
    }
    return y;
  }

  Activation<Scalar> backward(const Activation<Scalar>& dy, const Cache<Scalar>& cache) override {
    Activation<Scalar> dx;
    dx.n = cache.n;
    dx.h = cache.h;
    dx.w = cache.w;
    dx.data.resize(Eigen::Index{dx.n} * dx.h * dx.w, dy.channels());
    for (Eigen::Index c = 0; c < dy.channels(); ++c) {
      const Scalar* src = dy.data.col(c).data();
      Scalar* dst = dx.data.col(c).data();
      for (int n = 0; n < dx.n; ++n) {
        Scalar* img = dst + Eigen::Index{n} * dx.h * dx.w;
        for (int oy = 0; oy < dx.h / 2; ++oy) {
          Scalar* r0 = img + Eigen::Index{2 * oy} * dx.w;
          Scalar* r1 = r0 + dx.w;
          for (int ox = 0; ox < dx.w / 2; ++ox) {
            const Scalar g = Scalar(0.25) * *src++;
            r0[2 * ox] = r0[2 * ox + 1] = r1[2 * ox] = r1[2 * ox + 1] = g;
          }
        }
      }
    }
    return dx;
  }
};

/// Mean over all positions of each image: (N·H·W)×C -> N×C.
template <typename Scalar>
class GlobalAvgPool final : public Layer<Scalar> {
 public:
  Activation<Scalar> forward(const Activation<Scalar>& x, Mode, Cache<Scalar>& cache) override {
    cache.n = x.n;
    cache.h = x.h;
    cache.w = x.w;
    const Eigen::Index hw = Eigen::Index{x.h} * x.w;
    Activation<Scalar> y;
    y.n = x.n;
    y.data.resize(x.n, x.channels());
    for (int n = 0; n < x.n; ++n) y.data.row(n) = x.data.middleRows(n * hw, hw).colwise().mean();
    return y;
  }
  Activation<Scalar> backward(const Activation<Scalar>& dy, const Cache<Scalar>& cache) override {
    const Eigen::Index hw = Eigen::Index{cache.h} * cache.w;
    Activation<Scalar> dx;
    dx.n = cache.n;
    dx.h = cache.h;
    dx.w = cache.w;
    dx.data.resize(cache.n * hw, dy.channels());
    const Scalar inv = Scalar(1) / static_cast<Scalar>(hw);
    for (int n = 0; n < cache.n; ++n) dx.data.middleRows(n * hw, hw).rowwise() = dy.data.row(n) * inv;
    return dx;
  }
};

template <typename Scalar>
class Sequential final : public Layer<Scalar> {
 public:
  Sequential() = default;

  Sequential& add(LayerPtr<Scalar> layer) {
    layers_.push_back(std::move(layer));
    return *this;
  }
  template <typename L, typename... Args>
  L& emplace(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  size_t size() const { return layers_.size(); }
  Layer<Scalar>& operator[](size_t i) { return *layers_[i]; }
  Layer<Scalar>& back() { return *layers_.back(); }

  Activation<Scalar> forward(const Activation<Scalar>& x, Mode mode, Cache<Scalar>& cache) override {
    cache.children.resize(layers_.size());
    if (layers_.empty()) return x;
    Activation<Scalar> a = layers_[0]->forward(x, mode, cache.children[0]);
    for (size_t i = 1; i < layers_.size(); ++i) a = layers_[i]->forward(a, mode, cache.children[i]);
    return a;
  }

  Activation<Scalar> backward(const Activation<Scalar>& dy, const Cache<Scalar>& cache) override {
    if (layers_.empty()) return dy;
    Activation<Scalar> g = layers_.back()->backward(dy, cache.children.back());
    for (size_t i = layers_.size() - 1; i-- > 0;) g = layers_[i]->backward(g, cache.children[i]);
    return g;
  }

  void parameters(std::vector<Param<Scalar>*>& out) override {
    for (auto& l : layers_) l->parameters(out);
  }
  void buffers(std::vector<Buffer<Scalar>>& out) override {
    for (auto& l : layers_) l->buffers(out);
  }

 private:
  std::vector<LayerPtr<Scalar>> layers_;
};

/// ResNet basic block: relu(bn(conv(relu(bn(conv x)))) + shortcut(x)).
template <typename Scalar>
class BasicBlock final : public Layer<Scalar> {
 public:
  BasicBlock(const std::string& name, int cin, int cout, int stride, Rng& rng) {
    main_.template emplace<Conv2d<Scalar>>(name + ".conv1", cin, cout, 3, stride, 1, rng);
    main_.template emplace<BatchNorm<Scalar>>(name + ".bn1", cout);
    main_.template emplace<ReLU<Scalar>>();
    main_.template emplace<Conv2d<Scalar>>(name + ".conv2", cout, cout, 3, 1, 1, rng);
    main_.template emplace<BatchNorm<Scalar>>(name + ".bn2", cout);
    if (stride != 1 || cin != cout) {
      shortcut_.template emplace<Conv2d<Scalar>>(name + ".shortcut.conv", cin, cout, 1, stride, 0, rng);
      shortcut_.template emplace<BatchNorm<Scalar>>(name + ".shortcut.bn", cout);
    }
  }

  Activation<Scalar> forward(const Activation<Scalar>& x, Mode mode, Cache<Scalar>& cache) override {
    cache.children.resize(2);
    Activation<Scalar> y = main_.forward(x, mode, cache.children[0]);
    const Activation<Scalar> s = shortcut_.forward(x, mode, cache.children[1]);
    y.data += s.data;
    cache.aux = (y.data.array() > Scalar(0)).template cast<Scalar>();
    y.data = y.data.cwiseMax(Scalar(0));
    return y;
  }

  Activation<Scalar> backward(const Activation<Scalar>& dy, const Cache<Scalar>& cache) override {
    Activation<Scalar> g = dy;
    g.data.array() *= cache.aux.array();
    Activation<Scalar> dx = main_.backward(g, cache.children[0]);
    dx.data += shortcut_.backward(g, cache.children[1]).data;
    return dx;
  }

  void parameters(std::vector<Param<Scalar>*>& out) override {
    main_.parameters(out);
    shortcut_.parameters(out);
  }
  void buffers(std::vector<Buffer<Scalar>>& out) override {
    main_.buffers(out);
    shortcut_.buffers(out);
  }

 private:
  Sequential<Scalar> main_;
  Sequential<Scalar> shortcut_;
};

template <typename Scalar>
std::vector<Param<Scalar>*> parameters_of(Layer<Scalar>& layer) {
  std::vector<Param<Scalar>*> out;
  layer.parameters(out);
  return out;
}

template <typename Scalar>
void zero_grad(Layer<Scalar>& layer) {
  for (auto* p : parameters_of(layer)) p->grad.setZero();
}

template <typename Scalar>
Eigen::Index parameter_count(Layer<Scalar>& layer) {
  Eigen::Index total = 0;
  for (auto* p : parameters_of(layer)) total += p->value.size();
  return total;
}

}  // namespace ciper::nn
