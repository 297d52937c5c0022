#include "hbmcn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace hbmcn {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

struct ConvDims {
  int64_t n, cin, h, w;
  int64_t cout, kh, kw;
  int64_t oh, ow;
  int stride, pad;
  int64_t patch() const { return cin * kh * kw; }
  int64_t spatial() const { return oh * ow; }
};

ConvDims conv_dims(const Shape& xs, const Shape& ws, int stride, int pad) {
  require(xs.size() == 4, "conv2d: input must be N x C x H x W, got " + shape_to_string(xs));
  require(ws.size() == 4, "conv2d: weight must be Cout x Cin x kh x kw, got " + shape_to_string(ws));
  require(stride >= 1, "conv2d: stride must be positive");
  require(pad >= 0, "conv2d: pad must be non-negative");
  ConvDims d;
  d.n = xs[0];
  d.cin = xs[1];
  d.h = xs[2];
  d.w = xs[3];
  d.cout = ws[0];
  d.kh = ws[2];
  d.kw = ws[3];
  d.stride = stride;
  d.pad = pad;
  require(ws[1] == d.cin, "conv2d: weight expects " + std::to_string(ws[1]) +
                              " input channels, input has " + std::to_string(d.cin));
  require(d.h + 2 * pad >= d.kh && d.w + 2 * pad >= d.kw,
          "conv2d: kernel larger than padded input");
  d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
  d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
  return d;
}

// col layout: [cin*kh*kw][oh*ow], row-contiguous per patch element.
template <class S>
void im2col(const S* x, const ConvDims& d, S* col) {
  const int64_t sp = d.spatial();
  int64_t k = 0;
  for (int64_t ci = 0; ci < d.cin; ++ci) {
    const S* plane = x + ci * d.h * d.w;
    for (int64_t ky = 0; ky < d.kh; ++ky) {
      for (int64_t kx = 0; kx < d.kw; ++kx, ++k) {
        S* dst = col + k * sp;
        for (int64_t oy = 0; oy < d.oh; ++oy) {
          const int64_t iy = oy * d.stride - d.pad + ky;
          S* row = dst + oy * d.ow;
          if (iy < 0 || iy >= d.h) {
            std::fill(row, row + d.ow, S(0));
            continue;
          }
          const S* src = plane + iy * d.w;
          for (int64_t ox = 0; ox < d.ow; ++ox) {
            const int64_t ix = ox * d.stride - d.pad + kx;
            row[ox] = (ix >= 0 && ix < d.w) ? src[ix] : S(0);
          }
        }
      }
    }
  }
}

template <class S>
void col2im_add(const S* col, const ConvDims& d, S* dx) {
  const int64_t sp = d.spatial();
  int64_t k = 0;
  for (int64_t ci = 0; ci < d.cin; ++ci) {
    S* plane = dx + ci * d.h * d.w;
    for (int64_t ky = 0; ky < d.kh; ++ky) {
      for (int64_t kx = 0; kx < d.kw; ++kx, ++k) {
        const S* src = col + k * sp;
        for (int64_t oy = 0; oy < d.oh; ++oy) {
          const int64_t iy = oy * d.stride - d.pad + ky;
          if (iy < 0 || iy >= d.h) continue;
          S* row = plane + iy * d.w;
          const S* srow = src + oy * d.ow;
          for (int64_t ox = 0; ox < d.ow; ++ox) {
            const int64_t ix = ox * d.stride - d.pad + kx;
            if (ix >= 0 && ix < d.w) row[ix] += srow[ox];
          }
        }
      }
    }
  }
}

// out[m][:] += a[m][k] * b[k][:], the saxpy form the compiler vectorizes.
template <class S>
void gemm_acc(const S* a, const S* b, S* out, int64_t m_dim, int64_t k_dim, int64_t n_dim) {
  for (int64_t m = 0; m < m_dim; ++m) {
    const S* arow = a + m * k_dim;
    S* orow = out + m * n_dim;
    for (int64_t k = 0; k < k_dim; ++k) {
      const S v = arow[k];
      const S* brow = b + k * n_dim;
      for (int64_t n = 0; n < n_dim; ++n) orow[n] += v * brow[n];
    }
  }
}

// dA[m][k] += sum_n dOut[m][n] * b[k][n]
template <class S>
void gemm_grad_a(const S* dout, const S* b, S* da, int64_t m_dim, int64_t k_dim, int64_t n_dim) {
  for (int64_t m = 0; m < m_dim; ++m) {
    const S* drow = dout + m * n_dim;
    S* darow = da + m * k_dim;
    for (int64_t k = 0; k < k_dim; ++k) {
      const S* brow = b + k * n_dim;
      S acc = 0;
      for (int64_t n = 0; n < n_dim; ++n) acc += drow[n] * brow[n];
      darow[k] += acc;
    }
  }
}

// dB[k][:] += sum_m a[m][k] * dOut[m][:]
template <class S>
void gemm_grad_b(const S* a, const S* dout, S* db, int64_t m_dim, int64_t k_dim, int64_t n_dim) {
  for (int64_t m = 0; m < m_dim; ++m) {
    const S* arow = a + m * k_dim;
    const S* drow = dout + m * n_dim;
    for (int64_t k = 0; k < k_dim; ++k) {
      const S v = arow[k];
      S* dbrow = db + k * n_dim;
      for (int64_t n = 0; n < n_dim; ++n) dbrow[n] += v * drow[n];
    }
  }
}

template <class S>
bool wants_grad(Tape<S>* tape, std::initializer_list<const Tensor<S>*> inputs) {
  if (!tape) return false;
  for (const Tensor<S>* t : inputs) {
    if (t && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

}  // namespace

template <class S>
Tensor<S> conv2d(Tape<S>* tape, const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>* bias,
                 int stride, int pad) {
  const ConvDims d = conv_dims(x.shape(), w.shape(), stride, pad);
  if (bias && bias->defined()) {
    require(bias->rank() == 1 && bias->extent(0) == d.cout,
            "conv2d: bias must be a Cout vector");
  }
  const bool has_bias = bias && bias->defined();
  const bool plain_1x1 = d.kh == 1 && d.kw == 1 && stride == 1 && pad == 0;

  Tensor<S> out(Shape{d.n, d.cout, d.oh, d.ow});
  const int64_t sp = d.spatial();
  const int64_t patch = d.patch();
  std::vector<S> col_buf;
  if (!plain_1x1) col_buf.resize(static_cast<size_t>(patch * sp));

  for (int64_t n = 0; n < d.n; ++n) {
    const S* xn = x.data() + n * d.cin * d.h * d.w;
    const S* col = xn;
    if (!plain_1x1) {
      im2col(xn, d, col_buf.data());
      col = col_buf.data();
    }
    S* on = out.data() + n * d.cout * sp;
    if (has_bias) {
      for (int64_t co = 0; co < d.cout; ++co) {
        std::fill(on + co * sp, on + (co + 1) * sp, bias->data()[co]);
      }
    }
    gemm_acc(w.data(), col, on, d.cout, patch, sp);
  }

  if (wants_grad(tape, {&x, &w, has_bias ? bias : nullptr})) {
    out.set_requires_grad(true);
    Tensor<S> xc = x, wc = w, oc = out;
    Tensor<S> bc = has_bias ? *bias : Tensor<S>{};
    tape->record([xc, wc, bc, oc, d, plain_1x1]() mutable {
      const int64_t sp = d.spatial();
      const int64_t patch = d.patch();
      std::vector<S> col_buf, dcol_buf;
      if (!plain_1x1) col_buf.resize(static_cast<size_t>(patch * sp));
      if (!plain_1x1 && xc.requires_grad()) dcol_buf.resize(static_cast<size_t>(patch * sp));
      for (int64_t n = 0; n < d.n; ++n) {
        const S* dout = oc.grad() + n * d.cout * sp;
        const S* xn = xc.data() + n * d.cin * d.h * d.w;
        const S* col = xn;
        if (!plain_1x1) {
          im2col(xn, d, col_buf.data());
          col = col_buf.data();
        }
        if (wc.requires_grad()) {
          gemm_grad_a(dout, col, wc.grad(), d.cout, patch, sp);
        }
        if (xc.requires_grad()) {
          S* dxn = xc.grad() + n * d.cin * d.h * d.w;
          if (plain_1x1) {
            gemm_grad_b(wc.data(), dout, dxn, d.cout, patch, sp);
          } else {
            std::fill(dcol_buf.begin(), dcol_buf.end(), S(0));
            gemm_grad_b(wc.data(), dout, dcol_buf.data(), d.cout, patch, sp);
            col2im_add(dcol_buf.data(), d, dxn);
          }
        }
        if (bc.defined() && bc.requires_grad()) {
          for (int64_t co = 0; co < d.cout; ++co) {
            const S* drow = dout + co * sp;
            S acc = 0;
            for (int64_t i = 0; i < sp; ++i) acc += drow[i];
            bc.grad()[co] += acc;
          }
        }
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> max_pool(Tape<S>* tape, const Tensor<S>& x, int k, int stride, int pad) {
  require(x.rank() == 4, "max_pool: input must be N x C x H x W");
  require(k >= 1 && stride >= 1 && pad >= 0, "max_pool: bad window parameters");
  require(pad < k, "max_pool: pad must be smaller than the window");
  const int64_t n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
  require(h + 2 * pad >= k && w + 2 * pad >= k, "max_pool: window larger than padded input");
  const int64_t oh = (h + 2 * pad - k) / stride + 1;
  const int64_t ow = (w + 2 * pad - k) / stride + 1;

  Tensor<S> out(Shape{n, c, oh, ow});
  const bool record = wants_grad<S>(tape, {&x});
  std::vector<int64_t> argmax;
  if (record) argmax.resize(static_cast<size_t>(n * c * oh * ow));

  for (int64_t i = 0; i < n * c; ++i) {
    const S* plane = x.data() + i * h * w;
    S* oplane = out.data() + i * oh * ow;
    for (int64_t oy = 0; oy < oh; ++oy) {
      for (int64_t ox = 0; ox < ow; ++ox) {
        S best = -std::numeric_limits<S>::infinity();
        int64_t best_at = -1;
        for (int64_t ky = 0; ky < k; ++ky) {
          const int64_t iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int64_t kx = 0; kx < k; ++kx) {
            const int64_t ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= w) continue;
            const S v = plane[iy * w + ix];
            if (v > best) {
              best = v;
              best_at = iy * w + ix;
            }
          }
        }
        oplane[oy * ow + ox] = best;
        if (record) argmax[static_cast<size_t>(i * oh * ow + oy * ow + ox)] = best_at;
      }
    }
  }

  if (record) {
    out.set_requires_grad(true);
    Tensor<S> xc = x, oc = out;
    tape->record([xc, oc, argmax = std::move(argmax), h, w, oh, ow, n, c]() mutable {
      for (int64_t i = 0; i < n * c; ++i) {
        S* dplane = xc.grad() + i * h * w;
        const S* dout = oc.grad() + i * oh * ow;
        const int64_t* am = argmax.data() + i * oh * ow;
        for (int64_t j = 0; j < oh * ow; ++j) dplane[am[j]] += dout[j];
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> gap(Tape<S>* tape, const Tensor<S>& x) {
  require(x.rank() == 4, "gap: input must be N x C x H x W");
  const int64_t n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
  require(h >= 1 && w >= 1, "gap: empty spatial extent");
  Tensor<S> out(Shape{n, c});
  const S inv = S(1) / static_cast<S>(h * w);
  for (int64_t i = 0; i < n * c; ++i) {
    const S* plane = x.data() + i * h * w;
    S acc = 0;
    for (int64_t j = 0; j < h * w; ++j) acc += plane[j];
    out.data()[i] = acc * inv;
  }
  if (wants_grad<S>(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor<S> xc = x, oc = out;
    tape->record([xc, oc, n, c, h, w, inv]() mutable {
      for (int64_t i = 0; i < n * c; ++i) {
        const S g = oc.grad()[i] * inv;
        S* dplane = xc.grad() + i * h * w;
        for (int64_t j = 0; j < h * w; ++j) dplane[j] += g;
      }
    });
  }
  return out;
}

namespace {

template <class S>
S stable_sigmoid(S t) {
  if (t >= 0) return S(1) / (S(1) + std::exp(-t));
  const S e = std::exp(t);
  return e / (S(1) + e);
}

}  // namespace

template <class S>
Tensor<S> pointwise(Tape<S>* tape, Pointwise kind, const Tensor<S>& x) {
  Tensor<S> out(x.shape());
  const int64_t n = x.numel();
  const S slope = static_cast<S>(kLeakyReluSlope);
  switch (kind) {
    case Pointwise::kRelu:
      for (int64_t i = 0; i < n; ++i) out.data()[i] = std::max(S(0), x.data()[i]);
      break;
    case Pointwise::kSigmoid:
      for (int64_t i = 0; i < n; ++i) out.data()[i] = stable_sigmoid(x.data()[i]);
      break;
    case Pointwise::kLeakyRelu:
      for (int64_t i = 0; i < n; ++i) {
        const S v = x.data()[i];
        out.data()[i] = v >= 0 ? v : slope * v;
      }
      break;
  }
  if (wants_grad<S>(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor<S> xc = x, oc = out;
    tape->record([xc, oc, kind, n, slope]() mutable {
      switch (kind) {
        case Pointwise::kRelu:
          for (int64_t i = 0; i < n; ++i) {
            if (xc.data()[i] > 0) xc.grad()[i] += oc.grad()[i];
          }
          break;
        case Pointwise::kSigmoid:
          for (int64_t i = 0; i < n; ++i) {
            const S o = oc.data()[i];
            xc.grad()[i] += oc.grad()[i] * o * (S(1) - o);
          }
          break;
        case Pointwise::kLeakyRelu:
          for (int64_t i = 0; i < n; ++i) {
            xc.grad()[i] += oc.grad()[i] * (xc.data()[i] >= 0 ? S(1) : slope);
          }
          break;
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> batch_norm(Tape<S>* tape, const Tensor<S>& x, const Tensor<S>& gamma,
                     const Tensor<S>& beta, Tensor<S>& running_mean, Tensor<S>& running_var,
                     BnMode mode, S eps, S momentum) {
  require(x.rank() == 4, "batch_norm: input must be N x C x H x W");
  const int64_t n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
  for (const Tensor<S>* t :
       std::initializer_list<const Tensor<S>*>{&gamma, &beta, &running_mean, &running_var}) {
    require(t->rank() == 1 && t->extent(0) == c,
            "batch_norm: per-channel vectors must have C elements");
  }
  const int64_t m = n * h * w;
  const int64_t hw = h * w;
  Tensor<S> out(x.shape());

  std::vector<S> inv_std(static_cast<size_t>(c));
  std::vector<S> mean(static_cast<size_t>(c));

  if (mode == BnMode::kTrain) {
    if (m < 2) {
      throw std::invalid_argument("batch_norm: degenerate batch (N*H*W = " + std::to_string(m) +
                                  ") in train mode");
    }
    for (int64_t ch = 0; ch < c; ++ch) {
      S sum = 0;
      for (int64_t b = 0; b < n; ++b) {
        const S* plane = x.data() + (b * c + ch) * hw;
        for (int64_t j = 0; j < hw; ++j) sum += plane[j];
      }
      const S mu = sum / static_cast<S>(m);
      S sq = 0;
      for (int64_t b = 0; b < n; ++b) {
        const S* plane = x.data() + (b * c + ch) * hw;
        for (int64_t j = 0; j < hw; ++j) {
          const S dv = plane[j] - mu;
          sq += dv * dv;
        }
      }
      const S var = sq / static_cast<S>(m);
      mean[ch] = mu;
      inv_std[ch] = S(1) / std::sqrt(var + eps);
      running_mean.data()[ch] = (S(1) - momentum) * running_mean.data()[ch] + momentum * mu;
      running_var.data()[ch] = (S(1) - momentum) * running_var.data()[ch] + momentum * var;
    }
  } else {
    for (int64_t ch = 0; ch < c; ++ch) {
      mean[ch] = running_mean.data()[ch];
      inv_std[ch] = S(1) / std::sqrt(running_var.data()[ch] + eps);
    }
  }

  const bool record = wants_grad<S>(tape, {&x, &gamma, &beta});
  std::vector<S> xhat;
  if (record) xhat.resize(static_cast<size_t>(x.numel()));

  for (int64_t b = 0; b < n; ++b) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const S* plane = x.data() + (b * c + ch) * hw;
      S* oplane = out.data() + (b * c + ch) * hw;
      const S mu = mean[ch], is = inv_std[ch];
      const S g = gamma.data()[ch], bt = beta.data()[ch];
      S* xh = record ? xhat.data() + (b * c + ch) * hw : nullptr;
      for (int64_t j = 0; j < hw; ++j) {
        const S nv = (plane[j] - mu) * is;
        if (record) xh[j] = nv;
        oplane[j] = g * nv + bt;
      }
    }
  }

  if (record) {
    out.set_requires_grad(true);
    Tensor<S> xc = x, gc = gamma, bc = beta, oc = out;
    const bool train = mode == BnMode::kTrain;
    tape->record([xc, gc, bc, oc, xhat = std::move(xhat), inv_std = std::move(inv_std), n, c, hw,
                  m, train]() mutable {
      for (int64_t ch = 0; ch < c; ++ch) {
        S sum_dy = 0, sum_dy_xhat = 0;
        for (int64_t b = 0; b < n; ++b) {
          const int64_t base = (b * c + ch) * hw;
          const S* dy = oc.grad() + base;
          const S* xh = xhat.data() + base;
          for (int64_t j = 0; j < hw; ++j) {
            sum_dy += dy[j];
            sum_dy_xhat += dy[j] * xh[j];
          }
        }
        if (gc.requires_grad()) gc.grad()[ch] += sum_dy_xhat;
        if (bc.requires_grad()) bc.grad()[ch] += sum_dy;
        if (xc.requires_grad()) {
          const S g_is = gc.data()[ch] * inv_std[ch];
          const S inv_m = S(1) / static_cast<S>(m);
          for (int64_t b = 0; b < n; ++b) {
            const int64_t base = (b * c + ch) * hw;
            const S* dy = oc.grad() + base;
            const S* xh = xhat.data() + base;
            S* dx = xc.grad() + base;
            if (train) {
              for (int64_t j = 0; j < hw; ++j) {
                dx[j] += g_is * (dy[j] - inv_m * sum_dy - xh[j] * inv_m * sum_dy_xhat);
              }
            } else {
              for (int64_t j = 0; j < hw; ++j) dx[j] += g_is * dy[j];
            }
          }
        }
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> linear(Tape<S>* tape, const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>* bias) {
  require(x.rank() == 2, "linear: input must be N x D");
  require(w.rank() == 2, "linear: weight must be Dout x D");
  const int64_t n = x.extent(0), d = x.extent(1);
  const int64_t dout = w.extent(0);
  require(w.extent(1) == d, "linear: weight expects " + std::to_string(w.extent(1)) +
                                " inputs, got " + std::to_string(d));
  const bool has_bias = bias && bias->defined();
  if (has_bias) require(bias->rank() == 1 && bias->extent(0) == dout, "linear: bias must be Dout");

  Tensor<S> out(Shape{n, dout});
  for (int64_t i = 0; i < n; ++i) {
    const S* xr = x.data() + i * d;
    S* orow = out.data() + i * dout;
    for (int64_t o = 0; o < dout; ++o) {
      const S* wr = w.data() + o * d;
      S acc = has_bias ? bias->data()[o] : S(0);
      for (int64_t j = 0; j < d; ++j) acc += xr[j] * wr[j];
      orow[o] = acc;
    }
  }

  if (wants_grad(tape, {&x, &w, has_bias ? bias : nullptr})) {
    out.set_requires_grad(true);
    Tensor<S> xc = x, wc = w, oc = out;
    Tensor<S> bc = has_bias ? *bias : Tensor<S>{};
    tape->record([xc, wc, bc, oc, n, d, dout]() mutable {
      for (int64_t i = 0; i < n; ++i) {
        const S* dy = oc.grad() + i * dout;
        const S* xr = xc.data() + i * d;
        for (int64_t o = 0; o < dout; ++o) {
          const S g = dy[o];
          if (g == S(0)) continue;
          if (wc.requires_grad()) {
            S* dwr = wc.grad() + o * d;
            for (int64_t j = 0; j < d; ++j) dwr[j] += g * xr[j];
          }
          if (xc.requires_grad()) {
            const S* wr = wc.data() + o * d;
            S* dxr = xc.grad() + i * d;
            for (int64_t j = 0; j < d; ++j) dxr[j] += g * wr[j];
          }
          if (bc.defined() && bc.requires_grad()) bc.grad()[o] += g;
        }
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> softmax_log_loss(Tape<S>* tape, const Tensor<S>& logits, const std::vector<int>& labels,
                           bool mean_reduce) {
  require(logits.rank() == 2, "softmax_log_loss: logits must be B x C");
  const int64_t b = logits.extent(0), c = logits.extent(1);
  require(static_cast<int64_t>(labels.size()) == b, "softmax_log_loss: one label per row");
  for (int label : labels) {
    if (label < 0 || label >= c) {
      throw std::out_of_range("softmax_log_loss: label " + std::to_string(label) +
                              " outside [0, " + std::to_string(c) + ")");
    }
  }

  const bool record = wants_grad<S>(tape, {&logits});
  std::vector<S> probs;
  if (record) probs.resize(static_cast<size_t>(b * c));

  S loss = 0;
  for (int64_t i = 0; i < b; ++i) {
    const S* row = logits.data() + i * c;
    S mx = row[0];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    S se = 0;
    for (int64_t j = 0; j < c; ++j) se += std::exp(row[j] - mx);
    const S log_z = mx + std::log(se);
    loss += log_z - row[labels[static_cast<size_t>(i)]];
    if (record) {
      S* prow = probs.data() + i * c;
      for (int64_t j = 0; j < c; ++j) prow[j] = std::exp(row[j] - mx) / se;
    }
  }
  const S scale = mean_reduce ? S(1) / static_cast<S>(b) : S(1);
  Tensor<S> out = Tensor<S>::from_values(Shape{1}, {loss * scale});

  if (record) {
    out.set_requires_grad(true);
    Tensor<S> lc = logits, oc = out;
    tape->record([lc, oc, probs = std::move(probs), labels, b, c, scale]() mutable {
      const S g = oc.grad()[0] * scale;
      for (int64_t i = 0; i < b; ++i) {
        const S* prow = probs.data() + i * c;
        S* drow = lc.grad() + i * c;
        const int y = labels[static_cast<size_t>(i)];
        for (int64_t j = 0; j < c; ++j) {
          drow[j] += g * (prow[j] - (j == y ? S(1) : S(0)));
        }
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> add(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& b) {
  require(a.shape() == b.shape(), "add: shape mismatch " + shape_to_string(a.shape()) + " vs " +
                                      shape_to_string(b.shape()));
  Tensor<S> out(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (wants_grad<S>(tape, {&a, &b})) {
    out.set_requires_grad(true);
    Tensor<S> ac = a, bc = b, oc = out;
    tape->record([ac, bc, oc, n]() mutable {
      if (ac.requires_grad()) {
        for (int64_t i = 0; i < n; ++i) ac.grad()[i] += oc.grad()[i];
      }
      if (bc.requires_grad()) {
        for (int64_t i = 0; i < n; ++i) bc.grad()[i] += oc.grad()[i];
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> scale_channels(Tape<S>* tape, const Tensor<S>& x, const Tensor<S>& s) {
  require(x.rank() == 4, "scale_channels: input must be N x C x H x W");
  require(s.rank() == 2 && s.extent(0) == x.extent(0) && s.extent(1) == x.extent(1),
          "scale_channels: scale must be N x C");
  const int64_t nc = x.extent(0) * x.extent(1);
  const int64_t hw = x.extent(2) * x.extent(3);
  Tensor<S> out(x.shape());
  for (int64_t i = 0; i < nc; ++i) {
    const S v = s.data()[i];
    const S* plane = x.data() + i * hw;
    S* oplane = out.data() + i * hw;
    for (int64_t j = 0; j < hw; ++j) oplane[j] = plane[j] * v;
  }
  if (wants_grad<S>(tape, {&x, &s})) {
    out.set_requires_grad(true);
    Tensor<S> xc = x, sc = s, oc = out;
    tape->record([xc, sc, oc, nc, hw]() mutable {
      for (int64_t i = 0; i < nc; ++i) {
        const S* dout = oc.grad() + i * hw;
        if (xc.requires_grad()) {
          const S v = sc.data()[i];
          S* dx = xc.grad() + i * hw;
          for (int64_t j = 0; j < hw; ++j) dx[j] += dout[j] * v;
        }
        if (sc.requires_grad()) {
          const S* plane = xc.data() + i * hw;
          S acc = 0;
          for (int64_t j = 0; j < hw; ++j) acc += dout[j] * plane[j];
          sc.grad()[i] += acc;
        }
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> reshape(Tape<S>* tape, const Tensor<S>& x, Shape new_shape) {
  require(shape_numel(new_shape) == x.numel(),
          "reshape: cannot view " + shape_to_string(x.shape()) + " as " +
              shape_to_string(new_shape));
  Tensor<S> out = Tensor<S>::from_values(std::move(new_shape), x.values());
  if (wants_grad<S>(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor<S> xc = x, oc = out;
    const int64_t n = x.numel();
    tape->record([xc, oc, n]() mutable {
      for (int64_t i = 0; i < n; ++i) xc.grad()[i] += oc.grad()[i];
    });
  }
  return out;
}

template <class S>
Tensor<S> weighted_sum(Tape<S>* tape, const Tensor<S>& x, const std::vector<S>& coeffs) {
  require(static_cast<int64_t>(coeffs.size()) == x.numel(),
          "weighted_sum: coefficient count must match element count");
  S acc = 0;
  for (int64_t i = 0; i < x.numel(); ++i) acc += x.data()[i] * coeffs[static_cast<size_t>(i)];
  Tensor<S> out = Tensor<S>::from_values(Shape{1}, {acc});
  if (wants_grad<S>(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor<S> xc = x, oc = out;
    tape->record([xc, oc, coeffs]() mutable {
      const S g = oc.grad()[0];
      for (size_t i = 0; i < coeffs.size(); ++i) xc.grad()[i] += g * coeffs[i];
    });
  }
  return out;
}

#define HBMCN_INSTANTIATE_OPS(S)                                                                  \
  template Tensor<S> conv2d<S>(Tape<S>*, const Tensor<S>&, const Tensor<S>&, const Tensor<S>*,   \
                               int, int);                                                         \
  template Tensor<S> max_pool<S>(Tape<S>*, const Tensor<S>&, int, int, int);                     \
  template Tensor<S> gap<S>(Tape<S>*, const Tensor<S>&);                                         \
  template Tensor<S> pointwise<S>(Tape<S>*, Pointwise, const Tensor<S>&);                        \
  template Tensor<S> batch_norm<S>(Tape<S>*, const Tensor<S>&, const Tensor<S>&,                 \
                                   const Tensor<S>&, Tensor<S>&, Tensor<S>&, BnMode, S, S);      \
  template Tensor<S> linear<S>(Tape<S>*, const Tensor<S>&, const Tensor<S>&, const Tensor<S>*);  \
  template Tensor<S> softmax_log_loss<S>(Tape<S>*, const Tensor<S>&, const std::vector<int>&,    \
                                         bool);                                                  \
  template Tensor<S> add<S>(Tape<S>*, const Tensor<S>&, const Tensor<S>&);                       \
  template Tensor<S> scale_channels<S>(Tape<S>*, const Tensor<S>&, const Tensor<S>&);            \
  template Tensor<S> reshape<S>(Tape<S>*, const Tensor<S>&, Shape);                              \
  template Tensor<S> weighted_sum<S>(Tape<S>*, const Tensor<S>&, const std::vector<S>&);

HBMCN_INSTANTIATE_OPS(float)
HBMCN_INSTANTIATE_OPS(double)

#undef HBMCN_INSTANTIATE_OPS

}  // namespace hbmcn
