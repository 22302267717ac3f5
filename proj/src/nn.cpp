// SPDX-License-Identifier: Apache-2.0
#include "dskd/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "dskd/error.hpp"

namespace dskd::nn {

Param::Param(std::string n, std::vector<int> s) : name(std::move(n)), shape(std::move(s)) {
  std::size_t count = 1;
  for (int d : shape) count *= static_cast<std::size_t>(d);
  value.assign(count, 0.0);
  grad.assign(count, 0.0);
}

void zero_grad(const ParamList& params) {
  for (Param* p : params) std::fill(p->grad.begin(), p->grad.end(), 0.0);
}

std::size_t parameter_count(const ConstParamList& params) {
  std::size_t n = 0;
  for (const Param* p : params) n += p->size();
  return n;
}

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(const std::string& name, int in_channels, int out_channels, int kernel,
               int stride, int padding)
    : weight(name + ".weight", {kernel * kernel * in_channels, out_channels}),
      bias(name + ".bias", {out_channels}),
      in_(in_channels),
      out_(out_channels),
      k_(kernel),
      stride_(stride),
      pad_(padding) {
  if (in_channels <= 0 || out_channels <= 0 || kernel <= 0 || stride <= 0 || padding < 0) {
    throw ConfigError("conv " + name + ": invalid geometry");
  }
}

void Conv2d::init(std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (k_ * k_ * in_)));
  for (double& v : weight.value) v = dist(rng);
  std::fill(bias.value.begin(), bias.value.end(), 0.0);
}

Shape Conv2d::output_shape(const Shape& in) const {
  return {(in.h + 2 * pad_ - k_) / stride_ + 1, (in.w + 2 * pad_ - k_) / stride_ + 1, out_};
}

namespace {

void im2col(const Tensor& in, int k, int stride, int pad, const Shape& out, RowMatrix& cols) {
  const int cin = in.c();
  cols.setZero(out.positions(), k * k * cin);
  for (int oy = 0; oy < out.h; ++oy) {
    for (int ox = 0; ox < out.w; ++ox) {
      double* row = cols.data() + static_cast<std::size_t>(oy * out.w + ox) * cols.cols();
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * stride - pad + ky;
        if (iy < 0 || iy >= in.h()) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * stride - pad + kx;
          if (ix < 0 || ix >= in.w()) continue;
          std::memcpy(row + (ky * k + kx) * cin, in.pixel(iy * in.w() + ix).data(),
                      sizeof(double) * cin);
        }
      }
    }
  }
}

void col2im(const RowMatrix& cols, int k, int stride, int pad, const Shape& out, Tensor& in) {
  const int cin = in.c();
  for (int oy = 0; oy < out.h; ++oy) {
    for (int ox = 0; ox < out.w; ++ox) {
      const double* row = cols.data() + static_cast<std::size_t>(oy * out.w + ox) * cols.cols();
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * stride - pad + ky;
        if (iy < 0 || iy >= in.h()) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * stride - pad + kx;
          if (ix < 0 || ix >= in.w()) continue;
          auto dst = in.pixel(iy * in.w() + ix);
          const double* src = row + (ky * k + kx) * cin;
          for (int c = 0; c < cin; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

}  // namespace

Tensor Conv2d::forward(const Tensor& in, ConvCache* cache) const {
  if (in.c() != in_) {
    throw InputError("conv " + weight.name + ": expected " + std::to_string(in_) +
                     " input channels, got " + std::to_string(in.c()));
  }
  const Shape out_shape = output_shape(in.shape());
  if (out_shape.h <= 0 || out_shape.w <= 0) {
    throw InputError("conv " + weight.name + ": input " + to_string(in.shape()) + " too small");
  }
  RowMatrix local;
  RowMatrix& cols = cache ? cache->cols : local;
  im2col(in, k_, stride_, pad_, out_shape, cols);
  if (cache) cache->in_shape = in.shape();

  Tensor out(out_shape);
  ConstMatrixMap w(weight.value.data(), k_ * k_ * in_, out_);
  Eigen::Map<const Eigen::RowVectorXd> b(bias.value.data(), out_);
  out.matrix().noalias() = cols * w;
  out.matrix().rowwise() += b;
  return out;
}

Tensor Conv2d::backward(const Tensor& grad_out, const ConvCache& cache, bool want_input_grad) {
  const Shape out_shape = output_shape(cache.in_shape);
  require_shape(grad_out, out_shape, "conv backward");
  MatrixMap dw(weight.grad.data(), k_ * k_ * in_, out_);
  Eigen::Map<Eigen::RowVectorXd> db(bias.grad.data(), out_);
  dw.noalias() += cache.cols.transpose() * grad_out.matrix();
  db += grad_out.matrix().colwise().sum();
  if (!want_input_grad) return {};

  ConstMatrixMap w(weight.value.data(), k_ * k_ * in_, out_);
  RowMatrix dcols = grad_out.matrix() * w.transpose();
  Tensor grad_in(cache.in_shape);
  col2im(dcols, k_, stride_, pad_, out_shape, grad_in);
  return grad_in;
}

// ---------------------------------------------------------------------------
// Elementwise / reshaping ops

Tensor relu(const Tensor& in) {
  Tensor out = in;
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& grad_out, const Tensor& out) {
  require_shape(grad_out, out.shape(), "relu backward");
  Tensor grad_in = grad_out;
  auto& g = grad_in.values();
  const auto& o = out.values();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (o[i] <= 0.0) g[i] = 0.0;
  }
  return grad_in;
}

Tensor upsample_nearest2x(const Tensor& in) {
  Tensor out(in.h() * 2, in.w() * 2, in.c());
  for (int y = 0; y < out.h(); ++y) {
    for (int x = 0; x < out.w(); ++x) {
      auto src = in.pixel((y / 2) * in.w() + x / 2);
      std::copy(src.begin(), src.end(), out.pixel(y * out.w() + x).begin());
    }
  }
  return out;
}

Tensor upsample_nearest2x_backward(const Tensor& grad_out) {
  if (grad_out.h() % 2 != 0 || grad_out.w() % 2 != 0) {
    throw InputError("upsample backward: odd gradient shape " + to_string(grad_out.shape()));
  }
  Tensor grad_in(grad_out.h() / 2, grad_out.w() / 2, grad_out.c());
  for (int y = 0; y < grad_out.h(); ++y) {
    for (int x = 0; x < grad_out.w(); ++x) {
      auto src = grad_out.pixel(y * grad_out.w() + x);
      auto dst = grad_in.pixel((y / 2) * grad_in.w() + x / 2);
      for (int c = 0; c < grad_out.c(); ++c) dst[c] += src[c];
    }
  }
  return grad_in;
}

Tensor max_pool3x3s2(const Tensor& in) {
  const int oh = (in.h() + 2 - 3) / 2 + 1;
  const int ow = (in.w() + 2 - 3) / 2 + 1;
  Tensor out(oh, ow, in.c(), -std::numeric_limits<double>::infinity());
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      auto dst = out.pixel(oy * ow + ox);
      for (int ky = 0; ky < 3; ++ky) {
        const int iy = oy * 2 - 1 + ky;
        if (iy < 0 || iy >= in.h()) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int ix = ox * 2 - 1 + kx;
          if (ix < 0 || ix >= in.w()) continue;
          auto src = in.pixel(iy * in.w() + ix);
          for (int c = 0; c < in.c(); ++c) dst[c] = std::max(dst[c], src[c]);
        }
      }
    }
  }
  return out;
}

Tensor concat_channels(const std::vector<const Tensor*>& parts) {
  if (parts.empty()) throw InputError("concat: no inputs");
  const int h = parts.front()->h();
  const int w = parts.front()->w();
  int c = 0;
  for (const Tensor* p : parts) {
    if (p->h() != h || p->w() != w) throw InputError("concat: spatial size mismatch");
    c += p->c();
  }
  Tensor out(h, w, c);
  for (int pos = 0; pos < h * w; ++pos) {
    auto dst = out.pixel(pos).begin();
    for (const Tensor* p : parts) {
      auto src = p->pixel(pos);
      dst = std::copy(src.begin(), src.end(), dst);
    }
  }
  return out;
}

std::vector<Tensor> split_channels(const Tensor& joined, const std::vector<int>& channels) {
  std::vector<Tensor> parts;
  parts.reserve(channels.size());
  for (int c : channels) parts.emplace_back(joined.h(), joined.w(), c);
  for (int pos = 0; pos < joined.h() * joined.w(); ++pos) {
    auto src = joined.pixel(pos).begin();
    for (Tensor& p : parts) {
      auto dst = p.pixel(pos);
      std::copy(src, src + p.c(), dst.begin());
      src += p.c();
    }
  }
  return parts;
}

Tensor global_avg_pool(const Tensor& in) {
  Tensor out(1, 1, in.c());
  Eigen::Map<Eigen::RowVectorXd> v(out.data(), in.c());
  v = in.matrix().colwise().mean();
  return out;
}

Tensor global_avg_pool_backward(const Tensor& grad_out, const Shape& in_shape) {
  Tensor grad_in(in_shape);
  const double inv = 1.0 / in_shape.positions();
  for (int pos = 0; pos < in_shape.positions(); ++pos) {
    auto dst = grad_in.pixel(pos);
    for (int c = 0; c < in_shape.c; ++c) dst[c] = grad_out.values()[c] * inv;
  }
  return grad_in;
}

Tensor broadcast(const Tensor& vec, int h, int w) {
  if (vec.h() != 1 || vec.w() != 1) throw InputError("broadcast: expected a 1x1 input");
  Tensor out(h, w, vec.c());
  for (int pos = 0; pos < h * w; ++pos) {
    std::copy(vec.values().begin(), vec.values().end(), out.pixel(pos).begin());
  }
  return out;
}

Tensor broadcast_backward(const Tensor& grad_out) {
  Tensor grad_in(1, 1, grad_out.c());
  Eigen::Map<Eigen::RowVectorXd> v(grad_in.data(), grad_out.c());
  v = grad_out.matrix().colwise().sum();
  return grad_in;
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(ParamList params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const Param* p : params_) {
    m_.emplace_back(p->size(), 0.0);
    v_.emplace_back(p->size(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Param& p = *params_[k];
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = p.grad[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      p.value[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
    }
  }
}

}  // namespace dskd::nn
