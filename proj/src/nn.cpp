#include "mtcl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mtcl/errors.hpp"

namespace mtcl {

namespace {

// ceil(a / b) for b > 0 and any sign of a.
inline long ceil_div(long a, long b) { return a > 0 ? (a + b - 1) / b : a / b; }

inline long conv_out_dim(long in, long k, long s, long p, const char* what) {
  const long out = (in + 2 * p - k) / s + 1;
  if (in + 2 * p < k || out < 1)
    throw ConfigError(std::string(what) + ": input extent " + std::to_string(in) +
                      " too small for kernel " + std::to_string(k) + " (pad " + std::to_string(p) +
                      ")");
  return out;
}

void require_ndim(const Var& x, int ndim, const char* where) {
  if (x.v.ndim() != ndim)
    throw ConfigError(std::string(where) + ": expected " + std::to_string(ndim) +
                      "-d input, got " + shape_str(x.v.shape()));
}

}  // namespace

void init_he_normal(Tensor& w, long fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(std::max<long>(fan_in, 1)));
  double* p = w.data();
  for (long i = 0; i < w.numel(); ++i) p[i] = rng.normal(0.0, stddev);
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

Linear::Linear(long in_features, long out_features, Rng& rng) : in_(in_features), out_(out_features) {
  if (in_ <= 0 || out_ <= 0) throw ConfigError("Linear: non-positive feature count");
  weight.value = Tensor::zeros({out_, in_});
  bias.value = Tensor::zeros({out_});
  init_he_normal(weight.value, in_, rng);
}

Var Linear::forward(Tape* tape, const Var& x) {
  require_ndim(x, 2, "Linear");
  if (x.v.dim(1) != in_)
    throw ConfigError("Linear: input width " + std::to_string(x.v.dim(1)) + " != " +
                      std::to_string(in_));
  const long n = x.v.dim(0);
  Tensor y({n, out_});
  const double* xp = x.v.data();
  const double* wp = weight.value.data();
  const double* bp = bias.value.data();
  double* yp = y.data();
  for (long r = 0; r < n; ++r) {
    const double* xr = xp + r * in_;
    double* yr = yp + r * out_;
    for (long o = 0; o < out_; ++o) {
      const double* wr = wp + o * in_;
      double acc = bp[o];
      for (long i = 0; i < in_; ++i) acc += xr[i] * wr[i];
      yr[o] = acc;
    }
  }
  Var out = make_output(tape, std::move(y));
  if (tape) {
    const Tensor xin = x.v;
    const int xid = x.id, oid = out.id;
    Linear* self = this;
    tape->record([self, xin, xid, oid](Tape& tp) {
      const Tensor* gy = tp.grad_ptr(oid);
      if (!gy) return;
      const long n = xin.dim(0), in = self->in_, outw = self->out_;
      const double* gyp = gy->data();
      const double* xp = xin.data();
      double* gw = self->weight.grad_buffer().data();
      double* gb = self->bias.grad_buffer().data();
      for (long r = 0; r < n; ++r) {
        const double* gyr = gyp + r * outw;
        const double* xr = xp + r * in;
        for (long o = 0; o < outw; ++o) {
          const double g = gyr[o];
          gb[o] += g;
          double* gwr = gw + o * in;
          for (long i = 0; i < in; ++i) gwr[i] += g * xr[i];
        }
      }
      if (xid >= 0) {
        Tensor gx({n, in});
        double* gxp = gx.data();
        const double* wp = self->weight.value.data();
        for (long r = 0; r < n; ++r) {
          const double* gyr = gyp + r * outw;
          double* gxr = gxp + r * in;
          for (long o = 0; o < outw; ++o) {
            const double g = gyr[o];
            const double* wr = wp + o * in;
            for (long i = 0; i < in; ++i) gxr[i] += g * wr[i];
          }
        }
        tp.add_grad(xid, std::move(gx));
      }
    });
  }
  return out;
}

void Linear::collect(const std::string& prefix, NamedTensors& out) {
  out.add_param(prefix + ".weight", weight);
  out.add_param(prefix + ".bias", bias);
}

// ---------------------------------------------------------------------------
// Conv3d
// ---------------------------------------------------------------------------

Conv3d::Conv3d(long in_channels, long out_channels, Dims3 kernel, Dims3 stride, Dims3 pad, Rng& rng)
    : in_ch_(in_channels), out_ch_(out_channels), kernel_(kernel), stride_(stride), pad_(pad) {
  if (in_ch_ <= 0 || out_ch_ <= 0) throw ConfigError("Conv3d: non-positive channel count");
  if (kernel.h <= 0 || kernel.w <= 0 || kernel.d <= 0 || stride.h <= 0 || stride.w <= 0 ||
      stride.d <= 0 || pad.h < 0 || pad.w < 0 || pad.d < 0)
    throw ConfigError("Conv3d: invalid kernel/stride/pad");
  weight.value = Tensor::zeros({out_ch_, in_ch_, kernel.h, kernel.w, kernel.d});
  bias.value = Tensor::zeros({out_ch_});
  init_he_normal(weight.value, in_ch_ * kernel.h * kernel.w * kernel.d, rng);
}

std::array<long, 4> Conv3d::output_shape(long ih, long iw, long id) const {
  return {out_ch_, conv_out_dim(ih, kernel_.h, stride_.h, pad_.h, "Conv3d(h)"),
          conv_out_dim(iw, kernel_.w, stride_.w, pad_.w, "Conv3d(w)"),
          conv_out_dim(id, kernel_.d, stride_.d, pad_.d, "Conv3d(d)")};
}

Var Conv3d::forward(Tape* tape, const Var& x) {
  require_ndim(x, 5, "Conv3d");
  if (x.v.dim(1) != in_ch_)
    throw ConfigError("Conv3d: input has " + std::to_string(x.v.dim(1)) + " channels, expected " +
                      std::to_string(in_ch_));
  const long n = x.v.dim(0), ih = x.v.dim(2), iw = x.v.dim(3), id = x.v.dim(4);
  const auto os = output_shape(ih, iw, id);
  const long oh = os[1], ow = os[2], od = os[3];
  const long kh = kernel_.h, kw = kernel_.w, kd = kernel_.d;
  const long sh = stride_.h, sw = stride_.w, sd = stride_.d;
  const long ph = pad_.h, pw = pad_.w, pd = pad_.d;
  const long x_ch = ih * iw * id, x_row = iw * id;
  const long y_ch = oh * ow * od, y_row = ow * od;

  Tensor y({n, out_ch_, oh, ow, od});
  const double* xp = x.v.data();
  const double* wp = weight.value.data();
  const double* bp = bias.value.data();
  double* yp = y.data();

  for (long b = 0; b < n; ++b) {
    const double* xb = xp + b * in_ch_ * x_ch;
    double* yb = yp + b * out_ch_ * y_ch;
    for (long oc = 0; oc < out_ch_; ++oc) {
      double* yc = yb + oc * y_ch;
      const double bias_v = bp[oc];
      for (long i = 0; i < y_ch; ++i) yc[i] = bias_v;
      for (long ic = 0; ic < in_ch_; ++ic) {
        const double* xc = xb + ic * x_ch;
        const double* wk = wp + (oc * in_ch_ + ic) * kh * kw * kd;
        for (long a = 0; a < kh; ++a)
          for (long c = 0; c < kw; ++c)
            for (long e = 0; e < kd; ++e) {
              const double wv = wk[(a * kw + c) * kd + e];
              const long oh0 = std::max<long>(0, ceil_div(ph - a, sh));
              const long oh1 = std::min(oh, ceil_div(ih + ph - a, sh));
              const long ow0 = std::max<long>(0, ceil_div(pw - c, sw));
              const long ow1 = std::min(ow, ceil_div(iw + pw - c, sw));
              const long od0 = std::max<long>(0, ceil_div(pd - e, sd));
              const long od1 = std::min(od, ceil_div(id + pd - e, sd));
              const long span = od1 - od0;
              if (span <= 0) continue;
              for (long r = oh0; r < oh1; ++r) {
                const double* xrow_h = xc + (r * sh - ph + a) * x_row;
                double* yrow_h = yc + r * y_row;
                for (long q = ow0; q < ow1; ++q) {
                  const double* xr = xrow_h + (q * sw - pw + c) * id + (od0 * sd - pd + e);
                  double* yr = yrow_h + q * od + od0;
                  if (sd == 1) {
                    for (long v = 0; v < span; ++v) yr[v] += wv * xr[v];
                  } else {
                    for (long v = 0; v < span; ++v) yr[v] += wv * xr[v * sd];
                  }
                }
              }
            }
      }
    }
  }

  Var out = make_output(tape, std::move(y));
  if (tape) {
    const Tensor xin = x.v;
    const int xid = x.id, oid = out.id;
    Conv3d* self = this;
    tape->record([self, xin, xid, oid, n, ih, iw, id, oh, ow, od](Tape& tp) {
      const Tensor* gy = tp.grad_ptr(oid);
      if (!gy) return;
      const long kh = self->kernel_.h, kw = self->kernel_.w, kd = self->kernel_.d;
      const long sh = self->stride_.h, sw = self->stride_.w, sd = self->stride_.d;
      const long ph = self->pad_.h, pw = self->pad_.w, pd = self->pad_.d;
      const long in_ch = self->in_ch_, out_ch = self->out_ch_;
      const long x_ch = ih * iw * id, x_row = iw * id;
      const long y_ch = oh * ow * od, y_row = ow * od;
      const double* gyp = gy->data();
      const double* xp = xin.data();
      const double* wp = self->weight.value.data();
      double* gw = self->weight.grad_buffer().data();
      double* gb = self->bias.grad_buffer().data();

      // Bias gradient.
      for (long b = 0; b < n; ++b)
        for (long oc = 0; oc < out_ch; ++oc) {
          const double* gyc = gyp + (b * out_ch + oc) * y_ch;
          double acc = 0.0;
          for (long i = 0; i < y_ch; ++i) acc += gyc[i];
          gb[oc] += acc;
        }

      const bool need_gx = xid >= 0;
      Tensor gx;
      double* gxp = nullptr;
      if (need_gx) {
        gx = Tensor::zeros(xin.shape());
        gxp = gx.data();
      }

      // Weight gradient (and input gradient, sharing the loop structure).
      for (long oc = 0; oc < out_ch; ++oc)
        for (long ic = 0; ic < in_ch; ++ic) {
          const long wofs = (oc * in_ch + ic) * kh * kw * kd;
          for (long a = 0; a < kh; ++a)
            for (long c = 0; c < kw; ++c)
              for (long e = 0; e < kd; ++e) {
                const double wv = wp[wofs + (a * kw + c) * kd + e];
                double wacc = 0.0;
                const long oh0 = std::max<long>(0, ceil_div(ph - a, sh));
                const long oh1 = std::min(oh, ceil_div(ih + ph - a, sh));
                const long ow0 = std::max<long>(0, ceil_div(pw - c, sw));
                const long ow1 = std::min(ow, ceil_div(iw + pw - c, sw));
                const long od0 = std::max<long>(0, ceil_div(pd - e, sd));
                const long od1 = std::min(od, ceil_div(id + pd - e, sd));
                const long span = od1 - od0;
                if (span <= 0) continue;
                for (long b = 0; b < n; ++b) {
                  const double* xc = xp + (b * in_ch + ic) * x_ch;
                  const double* gyc = gyp + (b * out_ch + oc) * y_ch;
                  double* gxc = need_gx ? gxp + (b * in_ch + ic) * x_ch : nullptr;
                  for (long r = oh0; r < oh1; ++r) {
                    const long xo = (r * sh - ph + a) * x_row;
                    const double* gyrow_h = gyc + r * y_row;
                    for (long q = ow0; q < ow1; ++q) {
                      const long xbase = xo + (q * sw - pw + c) * id + (od0 * sd - pd + e);
                      const double* xr = xc + xbase;
                      const double* gyr = gyrow_h + q * od + od0;
                      if (need_gx) {
                        double* gxr = gxc + xbase;
                        for (long v = 0; v < span; ++v) {
                          const double g = gyr[v];
                          wacc += g * xr[v * sd];
                          gxr[v * sd] += wv * g;
                        }
                      } else {
                        for (long v = 0; v < span; ++v) wacc += gyr[v] * xr[v * sd];
                      }
                    }
                  }
                }
                gw[wofs + (a * kw + c) * kd + e] += wacc;
              }
        }
      if (need_gx) tp.add_grad(xid, std::move(gx));
    });
  }
  return out;
}

void Conv3d::collect(const std::string& prefix, NamedTensors& out) {
  out.add_param(prefix + ".weight", weight);
  out.add_param(prefix + ".bias", bias);
}

// ---------------------------------------------------------------------------
// BatchNorm3d
// ---------------------------------------------------------------------------

BatchNorm3d::BatchNorm3d(long channels) : channels_(channels) {
  if (channels <= 0) throw ConfigError("BatchNorm3d: non-positive channel count");
  gamma.value = Tensor({channels}, 1.0);
  beta.value = Tensor::zeros({channels});
  running_mean = Tensor::zeros({channels});
  running_var = Tensor({channels}, 1.0);
}

Var BatchNorm3d::forward(Tape* tape, const Var& x, bool training, bool update_stats) {
  require_ndim(x, 5, "BatchNorm3d");
  if (x.v.dim(1) != channels_)
    throw ConfigError("BatchNorm3d: channel mismatch " + std::to_string(x.v.dim(1)) + " vs " +
                      std::to_string(channels_));
  const long n = x.v.dim(0);
  const long spatial = x.v.dim(2) * x.v.dim(3) * x.v.dim(4);
  const long m = n * spatial;
  const double* xp = x.v.data();
  const double* gp = gamma.value.data();
  const double* bp = beta.value.data();
  Tensor y(x.v.shape());
  double* yp = y.data();

  Tensor mean({channels_}), invstd({channels_});
  if (training) {
    for (long c = 0; c < channels_; ++c) {
      double mu = 0.0;
      for (long b = 0; b < n; ++b) {
        const double* xc = xp + (b * channels_ + c) * spatial;
        for (long s = 0; s < spatial; ++s) mu += xc[s];
      }
      mu /= static_cast<double>(m);
      double var = 0.0;
      for (long b = 0; b < n; ++b) {
        const double* xc = xp + (b * channels_ + c) * spatial;
        for (long s = 0; s < spatial; ++s) {
          const double d = xc[s] - mu;
          var += d * d;
        }
      }
      var /= static_cast<double>(m);
      // ReLU and max-pool downstream would mask a poisoned batch (NaN
      // comparisons are false), so detect it here.
      if (!std::isfinite(mu) || !std::isfinite(var))
        throw NumericError("BatchNorm3d: non-finite batch statistics in channel " +
                           std::to_string(c));
      mean[c] = mu;
      invstd[c] = 1.0 / std::sqrt(var + eps);
      if (update_stats) {
        running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mu;
        const double unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
        running_var[c] = (1.0 - momentum) * running_var[c] + momentum * unbiased;
      }
    }
  } else {
    for (long c = 0; c < channels_; ++c) {
      if (!std::isfinite(running_mean[c]) || !std::isfinite(running_var[c]))
        throw NumericError("BatchNorm3d: non-finite running statistics in channel " +
                           std::to_string(c));
      mean[c] = running_mean[c];
      invstd[c] = 1.0 / std::sqrt(running_var[c] + eps);
    }
  }

  // Normalized activations are kept for the backward pass only when taping.
  Tensor xhat;
  double* xhp = nullptr;
  if (tape) {
    xhat = Tensor(x.v.shape());
    xhp = xhat.data();
  }
  for (long b = 0; b < n; ++b)
    for (long c = 0; c < channels_; ++c) {
      const double mu = mean[c], is = invstd[c], ga = gp[c], be = bp[c];
      const double* xc = xp + (b * channels_ + c) * spatial;
      double* yc = yp + (b * channels_ + c) * spatial;
      if (xhp) {
        double* hc = xhp + (b * channels_ + c) * spatial;
        for (long s = 0; s < spatial; ++s) {
          const double h = (xc[s] - mu) * is;
          hc[s] = h;
          yc[s] = ga * h + be;
        }
      } else {
        for (long s = 0; s < spatial; ++s) yc[s] = ga * (xc[s] - mu) * is + be;
      }
    }

  Var out = make_output(tape, std::move(y));
  if (tape) {
    const int xid = x.id, oid = out.id;
    BatchNorm3d* self = this;
    const Tensor saved_xhat = xhat, saved_invstd = invstd;
    tape->record([self, saved_xhat, saved_invstd, xid, oid, n, spatial, training](Tape& tp) {
      const Tensor* gy = tp.grad_ptr(oid);
      if (!gy) return;
      const long ch = self->channels_;
      const long m = n * spatial;
      const double* gyp = gy->data();
      const double* xhp = saved_xhat.data();
      const double* gp = self->gamma.value.data();
      double* ggamma = self->gamma.grad_buffer().data();
      double* gbeta = self->beta.grad_buffer().data();

      Tensor sum_gy({ch}), sum_gy_xhat({ch});
      for (long c = 0; c < ch; ++c) {
        double sg = 0.0, sgx = 0.0;
        for (long b = 0; b < n; ++b) {
          const double* gyc = gyp + (b * ch + c) * spatial;
          const double* hc = xhp + (b * ch + c) * spatial;
          for (long s = 0; s < spatial; ++s) {
            sg += gyc[s];
            sgx += gyc[s] * hc[s];
          }
        }
        sum_gy[c] = sg;
        sum_gy_xhat[c] = sgx;
        ggamma[c] += sgx;
        gbeta[c] += sg;
      }
      if (xid >= 0) {
        Tensor gx(saved_xhat.shape());
        double* gxp = gx.data();
        for (long b = 0; b < n; ++b)
          for (long c = 0; c < ch; ++c) {
            const double scale = gp[c] * saved_invstd[c];
            const double mean_gy = sum_gy[c] / static_cast<double>(m);
            const double mean_gyx = sum_gy_xhat[c] / static_cast<double>(m);
            const double* gyc = gyp + (b * ch + c) * spatial;
            const double* hc = xhp + (b * ch + c) * spatial;
            double* gxc = gxp + (b * ch + c) * spatial;
            if (training) {
              for (long s = 0; s < spatial; ++s)
                gxc[s] = scale * (gyc[s] - mean_gy - hc[s] * mean_gyx);
            } else {
              for (long s = 0; s < spatial; ++s) gxc[s] = scale * gyc[s];
            }
          }
        tp.add_grad(xid, std::move(gx));
      }
    });
  }
  return out;
}

void BatchNorm3d::collect(const std::string& prefix, NamedTensors& out) {
  out.add_param(prefix + ".gamma", gamma);
  out.add_param(prefix + ".beta", beta);
  out.add_buffer(prefix + ".running_mean", running_mean);
  out.add_buffer(prefix + ".running_var", running_var);
}

// ---------------------------------------------------------------------------
// MaxPool3d
// ---------------------------------------------------------------------------

std::array<long, 3> MaxPool3d::output_shape(long ih, long iw, long id) const {
  return {conv_out_dim(ih, kernel_.h, stride_.h, pad_.h, "MaxPool3d(h)"),
          conv_out_dim(iw, kernel_.w, stride_.w, pad_.w, "MaxPool3d(w)"),
          conv_out_dim(id, kernel_.d, stride_.d, pad_.d, "MaxPool3d(d)")};
}

Var MaxPool3d::forward(Tape* tape, const Var& x) {
  require_ndim(x, 5, "MaxPool3d");
  const long n = x.v.dim(0), ch = x.v.dim(1), ih = x.v.dim(2), iw = x.v.dim(3), id = x.v.dim(4);
  const auto os = output_shape(ih, iw, id);
  const long oh = os[0], ow = os[1], od = os[2];
  const long x_ch = ih * iw * id, x_row = iw * id;

  Tensor y({n, ch, oh, ow, od});
  std::vector<long> argmax;
  const bool track = tape != nullptr;
  if (track) argmax.assign(static_cast<size_t>(y.numel()), -1);
  const double* xp = x.v.data();
  double* yp = y.data();
  long oidx = 0;
  for (long b = 0; b < n; ++b)
    for (long c = 0; c < ch; ++c) {
      const double* xc = xp + (b * ch + c) * x_ch;
      const long base = (b * ch + c) * x_ch;
      for (long r = 0; r < oh; ++r)
        for (long q = 0; q < ow; ++q)
          for (long e = 0; e < od; ++e, ++oidx) {
            const long h0 = std::max<long>(0, r * stride_.h - pad_.h);
            const long h1 = std::min(ih, r * stride_.h - pad_.h + kernel_.h);
            const long w0 = std::max<long>(0, q * stride_.w - pad_.w);
            const long w1 = std::min(iw, q * stride_.w - pad_.w + kernel_.w);
            const long d0 = std::max<long>(0, e * stride_.d - pad_.d);
            const long d1 = std::min(id, e * stride_.d - pad_.d + kernel_.d);
            double best = -std::numeric_limits<double>::infinity();
            long best_idx = -1;
            for (long hh = h0; hh < h1; ++hh)
              for (long ww = w0; ww < w1; ++ww)
                for (long dd = d0; dd < d1; ++dd) {
                  const long xi = hh * x_row + ww * id + dd;
                  if (xc[xi] > best) {
                    best = xc[xi];
                    best_idx = base + xi;
                  }
                }
            yp[oidx] = best_idx >= 0 ? best : 0.0;
            if (track) argmax[static_cast<size_t>(oidx)] = best_idx;
          }
    }

  Var out = make_output(tape, std::move(y));
  if (tape && x.id >= 0) {
    const int xid = x.id, oid = out.id;
    const std::vector<long> saved_shape = x.v.shape();
    auto saved_argmax = std::make_shared<std::vector<long>>(std::move(argmax));
    tape->record([saved_argmax, saved_shape, xid, oid](Tape& tp) {
      const Tensor* gy = tp.grad_ptr(oid);
      if (!gy) return;
      Tensor gx = Tensor::zeros(saved_shape);
      const double* gyp = gy->data();
      double* gxp = gx.data();
      const auto& am = *saved_argmax;
      for (long i = 0; i < gy->numel(); ++i)
        if (am[static_cast<size_t>(i)] >= 0) gxp[am[static_cast<size_t>(i)]] += gyp[i];
      tp.add_grad(xid, std::move(gx));
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

Var Dropout::forward(Tape* tape, const Var& x, bool training, Rng& rng) {
  if (!training || rate_ <= 0.0) return x;
  if (rate_ >= 1.0) throw ConfigError("Dropout: rate must be < 1");
  const double keep = 1.0 - rate_;
  const double scale = 1.0 / keep;
  Tensor mask(x.v.shape());
  Tensor y(x.v.shape());
  const double* xp = x.v.data();
  double* mp = mask.data();
  double* yp = y.data();
  for (long i = 0; i < x.v.numel(); ++i) {
    const double m = rng.bernoulli(keep) ? scale : 0.0;
    mp[i] = m;
    yp[i] = xp[i] * m;
  }
  Var out = make_output(tape, std::move(y));
  if (tape && x.id >= 0) {
    const int xid = x.id, oid = out.id;
    const Tensor saved_mask = mask;
    tape->record([saved_mask, xid, oid](Tape& tp) {
      const Tensor* gy = tp.grad_ptr(oid);
      if (!gy) return;
      Tensor gx(saved_mask.shape());
      const double* gyp = gy->data();
      const double* mp = saved_mask.data();
      double* gxp = gx.data();
      for (long i = 0; i < gx.numel(); ++i) gxp[i] = gyp[i] * mp[i];
      tp.add_grad(xid, std::move(gx));
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mlp
// ---------------------------------------------------------------------------

Mlp::Mlp(long in_features, const std::vector<long>& hidden, long out_features, double dropout_rate,
         Rng& rng)
    : in_(in_features), dropout_(dropout_rate) {
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw ConfigError("Mlp: dropout rate must lie in [0, 1)");
  layers_.reserve(hidden.size() + 1);
  long prev = in_features;
  for (long hdim : hidden) {
    layers_.emplace_back(prev, hdim, rng);
    prev = hdim;
  }
  layers_.emplace_back(prev, out_features, rng);
}

Var Mlp::forward(Tape* tape, const Var& x, bool training, Rng& dropout_rng) {
  Var h = x;
  for (size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i].forward(tape, h);
    if (i + 1 < layers_.size()) {
      h = relu(tape, h);
      h = dropout_.forward(tape, h, training, dropout_rng);
    }
  }
  return h;
}

void Mlp::collect(const std::string& prefix, NamedTensors& out) {
  for (size_t i = 0; i < layers_.size(); ++i)
    layers_[i].collect(prefix + ".fc" + std::to_string(i), out);
}

// ---------------------------------------------------------------------------
// Free operations
// ---------------------------------------------------------------------------

Var relu(Tape* tape, const Var& x) {
  Tensor y(x.v.shape());
  const double* xp = x.v.data();
  double* yp = y.data();
  for (long i = 0; i < x.v.numel(); ++i) yp[i] = xp[i] > 0.0 ? xp[i] : 0.0;
  Var out = make_output(tape, std::move(y));
  if (tape && x.id >= 0) {
    const Tensor xin = x.v;
    const int xid = x.id, oid = out.id;
    tape->record([xin, xid, oid](Tape& tp) {
      const Tensor* gy = tp.grad_ptr(oid);
      if (!gy) return;
      Tensor gx(xin.shape());
      const double* gyp = gy->data();
      const double* xp = xin.data();
      double* gxp = gx.data();
      for (long i = 0; i < gx.numel(); ++i) gxp[i] = xp[i] > 0.0 ? gyp[i] : 0.0;
      tp.add_grad(xid, std::move(gx));
    });
  }
  return out;
}

Var add(Tape* tape, const Var& a, const Var& b) {
  if (!a.v.same_shape(b.v))
    throw ConfigError("add: shape mismatch " + shape_str(a.v.shape()) + " vs " +
                      shape_str(b.v.shape()));
  Tensor y(a.v.shape());
  const double* ap = a.v.data();
  const double* bp = b.v.data();
  double* yp = y.data();
  for (long i = 0; i < y.numel(); ++i) yp[i] = ap[i] + bp[i];
  Var out = make_output(tape, std::move(y));
  if (tape && (a.id >= 0 || b.id >= 0)) {
    const int aid = a.id, bid = b.id, oid = out.id;
    tape->record([aid, bid, oid](Tape& tp) {
      const Tensor* gy = tp.grad_ptr(oid);
      if (!gy) return;
      if (aid >= 0) tp.add_grad(aid, *gy);
      if (bid >= 0) tp.add_grad(bid, *gy);
    });
  }
  return out;
}

Var concat_dim1(Tape* tape, const std::vector<Var>& xs) {
  if (xs.empty()) throw ConfigError("concat_dim1: empty input list");
  const int nd = xs[0].v.ndim();
  const long n = xs[0].v.dim(0);
  long total_c = 0;
  long inner = 1;
  for (int i = 2; i < nd; ++i) inner *= xs[0].v.dim(i);
  for (const Var& x : xs) {
    if (x.v.ndim() != nd || x.v.dim(0) != n)
      throw ConfigError("concat_dim1: incompatible shapes");
    long xin = 1;
    for (int i = 2; i < nd; ++i) xin *= x.v.dim(i);
    if (xin != inner)
      throw ConfigError("concat_dim1: trailing extents differ: " + shape_str(x.v.shape()) +
                        " vs " + shape_str(xs[0].v.shape()));
    total_c += x.v.dim(1);
  }
  std::vector<long> out_shape = xs[0].v.shape();
  out_shape[1] = total_c;
  Tensor y(out_shape);
  double* yp = y.data();
  const long out_block = total_c * inner;
  long ofs = 0;
  for (const Var& x : xs) {
    const long block = x.v.dim(1) * inner;
    const double* xp = x.v.data();
    for (long b = 0; b < n; ++b)
      std::copy(xp + b * block, xp + (b + 1) * block, yp + b * out_block + ofs);
    ofs += block;
  }
  Var out = make_output(tape, std::move(y));
  if (tape) {
    struct Piece {
      int id;
      long block;
      std::vector<long> shape;
    };
    std::vector<Piece> pieces;
    bool any = false;
    for (const Var& x : xs) {
      pieces.push_back({x.id, x.v.dim(1) * inner, x.v.shape()});
      any = any || x.id >= 0;
    }
    if (any) {
      const int oid = out.id;
      tape->record([pieces, oid, n, out_block](Tape& tp) {
        const Tensor* gy = tp.grad_ptr(oid);
        if (!gy) return;
        const double* gyp = gy->data();
        long ofs = 0;
        for (const auto& piece : pieces) {
          if (piece.id >= 0) {
            Tensor gx(piece.shape);
            double* gxp = gx.data();
            for (long b = 0; b < n; ++b)
              std::copy(gyp + b * out_block + ofs, gyp + b * out_block + ofs + piece.block,
                        gxp + b * piece.block);
            tp.add_grad(piece.id, std::move(gx));
          }
          ofs += piece.block;
        }
      });
    }
  }
  return out;
}

Var global_avg_pool(Tape* tape, const Var& x) {
  require_ndim(x, 5, "global_avg_pool");
  const long n = x.v.dim(0), ch = x.v.dim(1);
  const long spatial = x.v.dim(2) * x.v.dim(3) * x.v.dim(4);
  Tensor y({n, ch});
  const double* xp = x.v.data();
  double* yp = y.data();
  for (long b = 0; b < n; ++b)
    for (long c = 0; c < ch; ++c) {
      const double* xc = xp + (b * ch + c) * spatial;
      double acc = 0.0;
      for (long s = 0; s < spatial; ++s) acc += xc[s];
      yp[b * ch + c] = acc / static_cast<double>(spatial);
    }
  Var out = make_output(tape, std::move(y));
  if (tape && x.id >= 0) {
    const int xid = x.id, oid = out.id;
    const std::vector<long> xshape = x.v.shape();
    tape->record([xshape, xid, oid, n, ch, spatial](Tape& tp) {
      const Tensor* gy = tp.grad_ptr(oid);
      if (!gy) return;
      Tensor gx(xshape);
      const double* gyp = gy->data();
      double* gxp = gx.data();
      const double inv = 1.0 / static_cast<double>(spatial);
      for (long b = 0; b < n; ++b)
        for (long c = 0; c < ch; ++c) {
          const double g = gyp[b * ch + c] * inv;
          double* gxc = gxp + (b * ch + c) * spatial;
          for (long s = 0; s < spatial; ++s) gxc[s] = g;
        }
      tp.add_grad(xid, std::move(gx));
    });
  }
  return out;
}

Var affine_combination(Tape* tape, const std::vector<std::pair<Var, double>>& terms) {
  double total = 0.0;
  for (const auto& [term, w] : terms) total += w * term.v.item();
  Var out = make_output(tape, Tensor::scalar(total));
  if (tape) {
    std::vector<std::pair<int, double>> links;
    for (const auto& [term, w] : terms)
      if (term.id >= 0) links.emplace_back(term.id, w);
    if (!links.empty()) {
      const int oid = out.id;
      tape->record([links, oid](Tape& tp) {
        const Tensor* gy = tp.grad_ptr(oid);
        if (!gy) return;
        const double g = (*gy)[0];
        for (const auto& [id, w] : links) tp.add_grad(id, Tensor::scalar(g * w));
      });
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

Adam::Adam(std::vector<Parameter*> params, double lr_, double weight_decay_)
    : lr(lr_), weight_decay(weight_decay_), params_(std::move(params)) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (Parameter* p : params_) {
    m_.emplace_back(Tensor::zeros(p->value.shape()));
    v_.emplace_back(Tensor::zeros(p->value.shape()));
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k];
    double* w = p.value.data();
    double* g = p.grad_buffer().data();
    double* m = m_[k].data();
    double* v = v_[k].data();
    const long numel = p.value.numel();
    for (long i = 0; i < numel; ++i) {
      const double gi = g[i] + weight_decay * w[i];
      m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
      v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

void Adam::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

double l2_penalty(const std::vector<Parameter*>& params) {
  double acc = 0.0;
  for (const Parameter* p : params) {
    const double* w = p->value.data();
    for (long i = 0; i < p->value.numel(); ++i) acc += w[i] * w[i];
  }
  return 0.5 * acc;
}

}  // namespace mtcl
