// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "mfir/nn/tape.hpp"

namespace mfir::nn {

// Owns parameters and non-trainable buffers. Serialization is positional
// and strict: loading requires the same names, shapes, and flags.
class ParamStore {
 public:
  Parameter& add(const std::string& name, Eigen::Index rows,
                 Eigen::Index cols, bool trainable = true) {
    for (const auto& p : params_)
      require(p->name != name, "duplicate parameter name '", name, "'");
    params_.push_back(
        std::make_unique<Parameter>(name, Mat::Zero(rows, cols), trainable));
    return *params_.back();
  }

  std::vector<Parameter*> all() {
    std::vector<Parameter*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }

  std::vector<Parameter*> trainable() {
    std::vector<Parameter*> out;
    for (auto& p : params_)
      if (p->trainable) out.push_back(p.get());
    return out;
  }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  long total_values() const {
    long n = 0;
    for (const auto& p : params_) n += static_cast<long>(p->value.size());
    return n;
  }

  std::vector<Mat> snapshot() const {
    std::vector<Mat> vals;
    vals.reserve(params_.size());
    for (const auto& p : params_) vals.push_back(p->value);
    return vals;
  }

  void restore(const std::vector<Mat>& vals) {
    require(vals.size() == params_.size(), "snapshot size mismatch");
    for (std::size_t i = 0; i < vals.size(); ++i) {
      require(vals[i].rows() == params_[i]->value.rows() &&
                  vals[i].cols() == params_[i]->value.cols(),
              "snapshot shape mismatch for '", params_[i]->name, "'");
      params_[i]->value = vals[i];
    }
  }

  std::vector<std::uint8_t> serialize() const {
    std::vector<std::uint8_t> out;
    auto put = [&](const void* p, std::size_t n) {
      const auto* b = static_cast<const std::uint8_t*>(p);
      out.insert(out.end(), b, b + n);
    };
    static const char magic[8] = {'M', 'F', 'I', 'R', 'P', '0', '0', '1'};
    put(magic, 8);
    const std::uint64_t count = params_.size();
    put(&count, 8);
    for (const auto& p : params_) {
      const std::uint32_t len = static_cast<std::uint32_t>(p->name.size());
      put(&len, 4);
      put(p->name.data(), len);
      const std::uint8_t tr = p->trainable ? 1 : 0;
      put(&tr, 1);
      const std::uint64_t rows = p->value.rows(), cols = p->value.cols();
      put(&rows, 8);
      put(&cols, 8);
      put(p->value.data(), sizeof(double) * p->value.size());
    }
    return out;
  }

  void deserialize(const std::vector<std::uint8_t>& bytes) {
    std::size_t pos = 0;
    auto get = [&](void* p, std::size_t n) {
      require(pos + n <= bytes.size(), "parameter blob truncated");
      std::memcpy(p, bytes.data() + pos, n);
      pos += n;
    };
    char magic[8];
    get(magic, 8);
    require(std::memcmp(magic, "MFIRP001", 8) == 0,
            "parameter blob has wrong magic");
    std::uint64_t count = 0;
    get(&count, 8);
    require(count == params_.size(), "parameter blob holds ", count,
            " tensors, model expects ", params_.size());
    for (auto& p : params_) {
      std::uint32_t len = 0;
      get(&len, 4);
      std::string name(len, '\0');
      get(name.data(), len);
      require(name == p->name, "parameter name mismatch: blob '", name,
              "' vs model '", p->name, "'");
      std::uint8_t tr = 0;
      get(&tr, 1);
      require((tr != 0) == p->trainable, "trainable flag mismatch for '",
              name, "'");
      std::uint64_t rows = 0, cols = 0;
      get(&rows, 8);
      get(&cols, 8);
      require(rows == static_cast<std::uint64_t>(p->value.rows()) &&
                  cols == static_cast<std::uint64_t>(p->value.cols()),
              "shape mismatch for '", name, "'");
      get(p->value.data(), sizeof(double) * p->value.size());
    }
    require(pos == bytes.size(), "trailing bytes in parameter blob");
  }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

inline void xavier_init(Parameter& p, Rng& rng) {
  const double a =
      std::sqrt(6.0 / static_cast<double>(p.value.rows() + p.value.cols()));
  for (Eigen::Index i = 0; i < p.value.size(); ++i)
    p.value.data()[i] = rng.uniform(-a, a);
}

inline void he_init(Parameter& p, Rng& rng, double fan_in) {
  const double s = std::sqrt(2.0 / fan_in);
  for (Eigen::Index i = 0; i < p.value.size(); ++i)
    p.value.data()[i] = rng.normal(0.0, s);
}

// Affine map on column vectors (or column-stacked batches): W x + b.
struct Linear {
  Parameter* W = nullptr;  // out x in
  Parameter* b = nullptr;  // out x 1

  void init(ParamStore& ps, const std::string& name, Eigen::Index in,
            Eigen::Index out, Rng& rng) {
    W = &ps.add(name + ".W", out, in);
    b = &ps.add(name + ".b", out, 1);
    xavier_init(*W, rng);
  }

  Var operator()(Tape& t, Var x) const {
    return add_col_broadcast(matmul(t.leaf(*W), x), t.leaf(*b));
  }
};

// Affine map applied to each row of a (tokens x in) matrix: X W + b.
struct RowLinear {
  Parameter* W = nullptr;  // in x out
  Parameter* b = nullptr;  // 1 x out

  void init(ParamStore& ps, const std::string& name, Eigen::Index in,
            Eigen::Index out, Rng& rng) {
    W = &ps.add(name + ".W", in, out);
    b = &ps.add(name + ".b", 1, out);
    xavier_init(*W, rng);
  }

  Var operator()(Tape& t, Var x) const {
    return add_row_broadcast(matmul(x, t.leaf(*W)), t.leaf(*b));
  }
};

// Gated recurrent cell over column vectors.
// h' = (1 - z) .* n + z .* h with the usual update/reset/candidate gates.
struct GRUCell {
  Linear update, reset, cand;
  Eigen::Index hidden = 0;

  void init(ParamStore& ps, const std::string& name, Eigen::Index in,
            Eigen::Index out, Rng& rng) {
    hidden = out;
    update.init(ps, name + ".z", in + out, out, rng);
    reset.init(ps, name + ".r", in + out, out, rng);
    cand.init(ps, name + ".n", in + out, out, rng);
  }

  Var initial_state(Tape& t) const { return t.constant(Mat::Zero(hidden, 1)); }

  Var step(Tape& t, Var x, Var h) const {
    Var xh = concat_rows({x, h});
    Var z = sigmoid(update(t, xh));
    Var r = sigmoid(reset(t, xh));
    Var n = tanh_v(cand(t, concat_rows({x, mul(r, h)})));
    Var ones = t.constant(Mat::Ones(hidden, 1));
    return add(mul(sub(ones, z), n), mul(z, h));
  }

  // All hidden states, in input order.
  std::vector<Var> run(Tape& t, const std::vector<Var>& inputs) const {
    require(!inputs.empty(), "GRU: empty input sequence");
    std::vector<Var> states;
    states.reserve(inputs.size());
    Var h = initial_state(t);
    for (const auto& x : inputs) {
      h = step(t, x, h);
      states.push_back(h);
    }
    return states;
  }
};

inline Var mean_of(Tape& t, const std::vector<Var>& vars) {
  require(!vars.empty(), "mean_of: empty");
  return mean_cols(concat_cols(vars));
}

// ---------------------------------------------------------------------------
// Convolution (im2col) and batch normalization over (channels x pixels)

inline int conv_out_size(int n, int k, int stride, int pad) {
  return (n + 2 * pad - k) / stride + 1;
}

// x holds a batch as channels x (B*H*W); returns patches
// (C*k*k) x (B*Ho*Wo) ready for a weight matmul.
inline Var im2col(Var x, int batch, int height, int width, int k, int stride,
                  int pad) {
  Tape* t = x.tape;
  const int channels = static_cast<int>(x.val().rows());
  require(x.val().cols() == static_cast<Eigen::Index>(batch) * height * width,
          "im2col: pixel count mismatch");
  const int ho = conv_out_size(height, k, stride, pad);
  const int wo = conv_out_size(width, k, stride, pad);
  require(ho > 0 && wo > 0, "im2col: kernel larger than padded input");

  Mat v = Mat::Zero(static_cast<Eigen::Index>(channels) * k * k,
                    static_cast<Eigen::Index>(batch) * ho * wo);
  const Mat& xv = x.val();
  for (int b = 0; b < batch; ++b) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        const Eigen::Index out_col =
            static_cast<Eigen::Index>(b) * ho * wo + oy * wo + ox;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= height) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= width) continue;
            const Eigen::Index in_col =
                static_cast<Eigen::Index>(b) * height * width + iy * width + ix;
            for (int c = 0; c < channels; ++c)
              v(static_cast<Eigen::Index>(c) * k * k + ky * k + kx, out_col) =
                  xv(c, in_col);
          }
        }
      }
    }
  }
  return t->make(std::move(v), [t, x, batch, height, width, k, stride, pad,
                                channels, ho, wo,
                                out = static_cast<int>(t->size())]() {
    const Mat& g = t->grad(out);
    Mat& gx = t->grad(x.id);
    for (int b = 0; b < batch; ++b) {
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          const Eigen::Index out_col =
              static_cast<Eigen::Index>(b) * ho * wo + oy * wo + ox;
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= height) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= width) continue;
              const Eigen::Index in_col =
                  static_cast<Eigen::Index>(b) * height * width + iy * width +
                  ix;
              for (int c = 0; c < channels; ++c)
                gx(c, in_col) +=
                    g(static_cast<Eigen::Index>(c) * k * k + ky * k + kx,
                      out_col);
            }
          }
        }
      }
    }
  });
}

struct Conv2d {
  Parameter* W = nullptr;  // out_ch x (in_ch*k*k)
  Parameter* b = nullptr;  // out_ch x 1
  int in_ch = 0, out_ch = 0, k = 3, stride = 1, pad = 1;

  void init(ParamStore& ps, const std::string& name, int in_channels,
            int out_channels, int kernel, int stride_, int pad_, Rng& rng) {
    in_ch = in_channels;
    out_ch = out_channels;
    k = kernel;
    stride = stride_;
    pad = pad_;
    W = &ps.add(name + ".W", out_ch, static_cast<Eigen::Index>(in_ch) * k * k);
    b = &ps.add(name + ".b", out_ch, 1);
    he_init(*W, rng, static_cast<double>(in_ch) * k * k);
  }

  Var operator()(Tape& t, Var x, int batch, int height, int width) const {
    require(static_cast<int>(x.val().rows()) == in_ch,
            "conv: expected ", in_ch, " input channels, got ", x.val().rows());
    Var patches = im2col(x, batch, height, width, k, stride, pad);
    return add_col_broadcast(matmul(t.leaf(*W), patches), t.leaf(*b));
  }
};

// Per-channel batch normalization over all columns (batch and spatial
// positions together). Running statistics live in non-trainable buffer
// parameters so checkpoints capture them.
struct BatchNorm {
  Parameter* gamma = nullptr;
  Parameter* beta = nullptr;
  Parameter* running_mean = nullptr;  // buffer
  Parameter* running_var = nullptr;   // buffer
  double momentum = 0.1;
  double eps = 1e-5;

  void init(ParamStore& ps, const std::string& name, Eigen::Index channels) {
    gamma = &ps.add(name + ".gamma", channels, 1);
    beta = &ps.add(name + ".beta", channels, 1);
    running_mean = &ps.add(name + ".running_mean", channels, 1, false);
    running_var = &ps.add(name + ".running_var", channels, 1, false);
    gamma->value.setOnes();
    running_var->value.setOnes();
  }

  Var operator()(Tape& t, Var x, bool train) const {
    const Mat& xv = x.val();
    const Eigen::Index C = xv.rows();
    require(C == gamma->value.rows(), "batchnorm: channel mismatch");

    Vec mean(C), var(C);
    if (train) {
      mean = xv.rowwise().mean();
      Mat centered = xv;
      centered.colwise() -= mean;
      var = centered.array().square().matrix().rowwise().mean();
      running_mean->value =
          (1.0 - momentum) * running_mean->value + momentum * mean;
      running_var->value =
          (1.0 - momentum) * running_var->value + momentum * var;
    } else {
      mean = running_mean->value.col(0);
      var = running_var->value.col(0);
    }
    Vec inv_std = (var.array() + eps).rsqrt().matrix();
    Mat xhat = xv;
    xhat.colwise() -= mean;
    xhat = (xhat.array().colwise() * inv_std.array()).matrix();
    Mat y = (xhat.array().colwise() * gamma->value.col(0).array()).matrix();
    y.colwise() += Vec(beta->value.col(0));

    Parameter* g_ = gamma;
    Parameter* b_ = beta;
    Tape* tp = &t;
    return t.make(std::move(y), [tp, x, g_, b_, xhat = std::move(xhat),
                                 inv_std = std::move(inv_std), train,
                                 out = static_cast<int>(t.size())]() {
      const Mat& g = tp->grad(out);
      b_->grad += g.rowwise().sum();
      g_->grad += g.cwiseProduct(xhat).rowwise().sum();
      Mat dxhat = (g.array().colwise() * g_->value.col(0).array()).matrix();
      Mat& gx = tp->grad(x.id);
      if (train) {
        Vec mean_dxhat = dxhat.rowwise().mean();
        Vec mean_dxhat_xhat = dxhat.cwiseProduct(xhat).rowwise().mean();
        Mat tmp = dxhat;
        tmp.colwise() -= mean_dxhat;
        tmp -= (xhat.array().colwise() * mean_dxhat_xhat.array()).matrix();
        gx += (tmp.array().colwise() * inv_std.array()).matrix();
      } else {
        gx += (dxhat.array().colwise() * inv_std.array()).matrix();
      }
    });
  }
};

// ---------------------------------------------------------------------------
// Optimizer

class Adam {
 public:
  Adam(ParamStore& store, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : params_(store.trainable()), lr_(lr), beta1_(beta1), beta2_(beta2),
        eps_(eps) {
    for (auto* p : params_) {
      m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Parameter& p = *params_[i];
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
      const Mat mhat = m_[i] / bc1;
      const Mat vhat = v_[i] / bc2;
      p.value.array() -=
          lr_ * mhat.array() / (vhat.array().sqrt() + eps_);
    }
  }

  void set_lr(double lr) { lr_ = lr; }

 private:
  std::vector<Parameter*> params_;
  double lr_, beta1_, beta2_, eps_;
  int t_ = 0;
  std::vector<Mat> m_, v_;
};

}  // namespace mfir::nn
