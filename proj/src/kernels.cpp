#include "kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tta/error.hpp"

namespace tta::kernels {
namespace {

struct Dims5 {
  std::size_t n, c, d, h, w;
  std::size_t plane() const { return h * w; }
  std::size_t volume() const { return d * h * w; }
};

Dims5 dims_of(const Shape& s) {
  if (s.size() != 5) throw ShapeError("expected a 5-D shape, got " + shape_to_string(s));
  return {s[0], s[1], s[2], s[3], s[4]};
}

// Zero-padded copy of a 5-D tensor with `pad` voxels on each spatial side.
// Trailing slack keeps plane-wide shifted reads of the last plane in bounds.
struct Padded {
  std::vector<float> data;
  std::size_t dp = 0, hp = 0, wp = 0;
  std::size_t plane() const { return hp * wp; }
  std::size_t volume() const { return dp * hp * wp; }
};

Padded pad_spatial(const float* x, const Dims5& s, std::size_t pad) {
  Padded p;
  p.dp = s.d + 2 * pad;
  p.hp = s.h + 2 * pad;
  p.wp = s.w + 2 * pad;
  p.data.assign(s.n * s.c * p.volume() + 2 * pad * p.wp + 2 * pad + 16, 0.0f);
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    for (std::size_t d = 0; d < s.d; ++d) {
      for (std::size_t h = 0; h < s.h; ++h) {
        const float* src = x + ((nc * s.d + d) * s.h + h) * s.w;
        float* dst = p.data.data() + nc * p.volume() + ((d + pad) * p.hp + h + pad) * p.wp + pad;
        std::copy_n(src, s.w, dst);
      }
    }
  }
  return p;
}

// acc[j] += sum over the k*k in-plane taps of w[t] * src[j + kh*wp + kw], j < len,
// taps added in (kh, kw) order.
template <std::size_t K>
void accumulate_taps(float* __restrict acc, const float* __restrict src, const float* w, std::size_t wp,
                     std::size_t len) {
  if constexpr (K == 3) {
    const float* r0 = src;
    const float* r1 = src + wp;
    const float* r2 = src + 2 * wp;
    const float w0 = w[0], w1 = w[1], w2 = w[2], w3 = w[3], w4 = w[4], w5 = w[5], w6 = w[6], w7 = w[7], w8 = w[8];
    for (std::size_t j = 0; j < len; ++j) {
      float a = acc[j];
      a += w0 * r0[j];
      a += w1 * r0[j + 1];
      a += w2 * r0[j + 2];
      a += w3 * r1[j];
      a += w4 * r1[j + 1];
      a += w5 * r1[j + 2];
      a += w6 * r2[j];
      a += w7 * r2[j + 1];
      a += w8 * r2[j + 2];
      acc[j] = a;
    }
  } else {
    const float w0 = w[0];
    for (std::size_t j = 0; j < len; ++j) acc[j] += w0 * src[j];
  }
}

void accumulate_taps_generic(float* acc, const float* src, const float* w, std::size_t k, std::size_t wp,
                             std::size_t len) {
  for (std::size_t kh = 0; kh < k; ++kh) {
    for (std::size_t kw = 0; kw < k; ++kw) {
      const float wv = w[kh * k + kw];
      const float* s = src + kh * wp + kw;
      for (std::size_t j = 0; j < len; ++j) acc[j] += wv * s[j];
    }
  }
}

// out[t] = sum_j g[j] * src[j + off_t] for the k*k in-plane offsets, 16 fixed lanes each.
void dot_taps(const float* __restrict g, const float* __restrict src, std::size_t k, std::size_t wp, std::size_t len,
              float* out) {
  constexpr std::size_t kLanes = 16;
  for (std::size_t kh = 0; kh < k; ++kh) {
    for (std::size_t kw = 0; kw < k; ++kw) {
      const float* s = src + kh * wp + kw;
      float lanes[kLanes] = {};
      std::size_t j = 0;
      for (; j + kLanes <= len; j += kLanes) {
        for (std::size_t l = 0; l < kLanes; ++l) lanes[l] += g[j + l] * s[j + l];
      }
      float tail = 0.0f;
      for (; j < len; ++j) tail += g[j] * s[j];
      for (std::size_t width = kLanes / 2; width > 0; width /= 2) {
        for (std::size_t l = 0; l < width; ++l) lanes[l] += lanes[l + width];
      }
      out[kh * k + kw] = lanes[0] + tail;
    }
  }
}

}  // namespace

Tensor conv3d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  const Dims5 in = dims_of(input.shape());
  if (weight.rank() != 5 || weight.extent(1) != in.c) {
    throw ShapeError("conv3d: input has " + std::to_string(in.c) + " channels but weight shape is " +
                     shape_to_string(weight.shape()));
  }
  const std::size_t co_n = weight.extent(0);
  const std::size_t k = weight.extent(2);
  if (k % 2 == 0 || weight.extent(3) != k || weight.extent(4) != k) throw ShapeError("conv3d: kernel must be odd and cubic");
  if (bias.size() != co_n) throw ShapeError("conv3d: bias length does not match output channels");
  const std::size_t pad = k / 2;
  const std::size_t k3 = k * k * k;

  const Padded xp = pad_spatial(input.data(), in, pad);
  // Output rows are computed with the padded row stride; columns >= w are discarded.
  const std::size_t len = in.h * xp.wp;
  std::vector<float> acc(len);

  Tensor out({in.n, co_n, in.d, in.h, in.w});
  const float* wt = weight.data();
  float* y = out.data();
  for (std::size_t n = 0; n < in.n; ++n) {
    for (std::size_t co = 0; co < co_n; ++co) {
      for (std::size_t d = 0; d < in.d; ++d) {
        std::fill(acc.begin(), acc.end(), bias[co]);
        for (std::size_t ci = 0; ci < in.c; ++ci) {
          const float* w_ci = wt + (co * in.c + ci) * k3;
          for (std::size_t kd = 0; kd < k; ++kd) {
            const float* src = xp.data.data() + (n * in.c + ci) * xp.volume() + (d + kd) * xp.plane();
            const float* w_tap = w_ci + kd * k * k;
            if (k == 3) {
              accumulate_taps<3>(acc.data(), src, w_tap, xp.wp, len);
            } else if (k == 1) {
              accumulate_taps<1>(acc.data(), src, w_tap, xp.wp, len);
            } else {
              accumulate_taps_generic(acc.data(), src, w_tap, k, xp.wp, len);
            }
          }
        }
        float* out_slice = y + ((n * co_n + co) * in.d + d) * in.plane();
        for (std::size_t h = 0; h < in.h; ++h) std::copy_n(acc.data() + h * xp.wp, in.w, out_slice + h * in.w);
      }
    }
  }
  return out;
}

Tensor conv3d_backward_input(const Tensor& grad_out, const Tensor& weight, const Shape& input_shape) {
  const Dims5 in = dims_of(input_shape);
  const Dims5 go = dims_of(grad_out.shape());
  const std::size_t co_n = weight.extent(0);
  const std::size_t k = weight.extent(2);
  const std::size_t k3 = k * k * k;
  if (go.c != co_n || go.n != in.n || go.d != in.d || go.h != in.h || go.w != in.w || weight.extent(1) != in.c) {
    throw ShapeError("conv3d backward: gradient shape " + shape_to_string(grad_out.shape()) +
                     " inconsistent with input " + shape_to_string(input_shape));
  }
  // The input gradient is a same-padded correlation of grad_out with the
  // channel-transposed, spatially flipped kernel.
  Tensor flipped({in.c, co_n, k, k, k});
  for (std::size_t co = 0; co < co_n; ++co) {
    for (std::size_t ci = 0; ci < in.c; ++ci) {
      const float* src = weight.data() + (co * in.c + ci) * k3;
      float* dst = flipped.data() + (ci * co_n + co) * k3;
      for (std::size_t t = 0; t < k3; ++t) dst[t] = src[k3 - 1 - t];
    }
  }
  return conv3d_forward(grad_out, flipped, Tensor({in.c}));
}

void conv3d_backward_params(const Tensor& grad_out, const Tensor& input, Tensor& grad_weight, Tensor& grad_bias) {
  const Dims5 in = dims_of(input.shape());
  const Dims5 go = dims_of(grad_out.shape());
  const std::size_t co_n = go.c;
  const std::size_t k = grad_weight.extent(2);
  const std::size_t pad = k / 2;
  const std::size_t k2 = k * k;
  const std::size_t k3 = k2 * k;

  const Padded xp = pad_spatial(input.data(), in, pad);
  const std::size_t len = in.h * xp.wp;
  std::vector<double> acc_w(co_n * in.c * k3, 0.0);
  std::vector<double> acc_b(co_n, 0.0);
  std::vector<float> g_rows(len, 0.0f);
  std::vector<float> taps(k2);
  const float* g = grad_out.data();

  for (std::size_t n = 0; n < in.n; ++n) {
    for (std::size_t co = 0; co < co_n; ++co) {
      for (std::size_t d = 0; d < in.d; ++d) {
        const float* g_slice = g + ((n * co_n + co) * in.d + d) * in.plane();
        for (std::size_t i = 0; i < in.plane(); ++i) acc_b[co] += g_slice[i];
        // Gradient plane re-laid with the padded row stride, zeros in the extra columns.
        for (std::size_t h = 0; h < in.h; ++h) std::copy_n(g_slice + h * in.w, in.w, g_rows.data() + h * xp.wp);
        for (std::size_t ci = 0; ci < in.c; ++ci) {
          double* acc = acc_w.data() + (co * in.c + ci) * k3;
          for (std::size_t kd = 0; kd < k; ++kd) {
            const float* src = xp.data.data() + (n * in.c + ci) * xp.volume() + (d + kd) * xp.plane();
            dot_taps(g_rows.data(), src, k, xp.wp, len, taps.data());
            for (std::size_t t = 0; t < k2; ++t) acc[kd * k2 + t] += taps[t];
          }
        }
      }
    }
  }
  for (std::size_t i = 0; i < acc_w.size(); ++i) grad_weight[i] = static_cast<float>(acc_w[i]);
  for (std::size_t i = 0; i < co_n; ++i) grad_bias[i] = static_cast<float>(acc_b[i]);
}

Tensor max_pool2_forward(const Tensor& input, std::vector<std::uint8_t>& argmax) {
  const Dims5 in = dims_of(input.shape());
  if (in.d % 2 || in.h % 2 || in.w % 2) {
    throw ShapeError("max pool: spatial extents " + shape_to_string(input.shape()) + " are not divisible by 2");
  }
  const std::size_t od = in.d / 2, oh = in.h / 2, ow = in.w / 2;
  Tensor out({in.n, in.c, od, oh, ow});
  argmax.assign(out.size(), 0);
  const float* x = input.data();
  float* y = out.data();
  std::size_t o = 0;
  for (std::size_t nc = 0; nc < in.n * in.c; ++nc) {
    const float* src = x + nc * in.volume();
    for (std::size_t d = 0; d < od; ++d) {
      for (std::size_t h = 0; h < oh; ++h) {
        for (std::size_t w = 0; w < ow; ++w, ++o) {
          float best = -std::numeric_limits<float>::infinity();
          std::uint8_t best_i = 0;
          for (std::uint8_t j = 0; j < 8; ++j) {
            const std::size_t dd = 2 * d + (j >> 2), hh = 2 * h + ((j >> 1) & 1), ww = 2 * w + (j & 1);
            const float v = src[(dd * in.h + hh) * in.w + ww];
            if (v > best) {
              best = v;
              best_i = j;
            }
          }
          y[o] = best;
          argmax[o] = best_i;
        }
      }
    }
  }
  return out;
}

Tensor max_pool2_backward(const Tensor& grad_out, const std::vector<std::uint8_t>& argmax, const Shape& input_shape) {
  const Dims5 in = dims_of(input_shape);
  Tensor grad_in(input_shape);
  const std::size_t od = in.d / 2, oh = in.h / 2, ow = in.w / 2;
  const float* g = grad_out.data();
  float* gi = grad_in.data();
  std::size_t o = 0;
  for (std::size_t nc = 0; nc < in.n * in.c; ++nc) {
    float* dst = gi + nc * in.volume();
    for (std::size_t d = 0; d < od; ++d) {
      for (std::size_t h = 0; h < oh; ++h) {
        for (std::size_t w = 0; w < ow; ++w, ++o) {
          const std::uint8_t j = argmax[o];
          const std::size_t dd = 2 * d + (j >> 2), hh = 2 * h + ((j >> 1) & 1), ww = 2 * w + (j & 1);
          dst[(dd * in.h + hh) * in.w + ww] += g[o];
        }
      }
    }
  }
  return grad_in;
}

Tensor upsample2_forward(const Tensor& input) {
  const Dims5 in = dims_of(input.shape());
  const std::size_t od = in.d * 2, oh = in.h * 2, ow = in.w * 2;
  Tensor out({in.n, in.c, od, oh, ow});
  const float* x = input.data();
  float* y = out.data();
  for (std::size_t nc = 0; nc < in.n * in.c; ++nc) {
    const float* src = x + nc * in.volume();
    float* dst = y + nc * od * oh * ow;
    for (std::size_t d = 0; d < od; ++d) {
      for (std::size_t h = 0; h < oh; ++h) {
        const float* row = src + ((d / 2) * in.h + h / 2) * in.w;
        float* out_row = dst + (d * oh + h) * ow;
        for (std::size_t w = 0; w < ow; ++w) out_row[w] = row[w / 2];
      }
    }
  }
  return out;
}

Tensor upsample2_backward(const Tensor& grad_out) {
  const Dims5 go = dims_of(grad_out.shape());
  const std::size_t id = go.d / 2, ih = go.h / 2, iw = go.w / 2;
  Tensor grad_in({go.n, go.c, id, ih, iw});
  const float* g = grad_out.data();
  float* gi = grad_in.data();
  for (std::size_t nc = 0; nc < go.n * go.c; ++nc) {
    const float* src = g + nc * go.volume();
    float* dst = gi + nc * id * ih * iw;
    for (std::size_t d = 0; d < go.d; ++d) {
      for (std::size_t h = 0; h < go.h; ++h) {
        const float* row = src + (d * go.h + h) * go.w;
        float* out_row = dst + ((d / 2) * ih + h / 2) * iw;
        for (std::size_t w = 0; w < go.w; ++w) out_row[w / 2] += row[w];
      }
    }
  }
  return grad_in;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const Dims5 da = dims_of(a.shape());
  const Dims5 db = dims_of(b.shape());
  if (da.n != db.n || da.d != db.d || da.h != db.h || da.w != db.w) {
    throw ShapeError("concat: shapes " + shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()) +
                     " differ outside the channel axis");
  }
  Tensor out({da.n, da.c + db.c, da.d, da.h, da.w});
  const std::size_t va = da.c * da.volume();
  const std::size_t vb = db.c * db.volume();
  float* y = out.data();
  for (std::size_t n = 0; n < da.n; ++n) {
    std::copy_n(a.data() + n * va, va, y + n * (va + vb));
    std::copy_n(b.data() + n * vb, vb, y + n * (va + vb) + va);
  }
  return out;
}

void split_channels(const Tensor& grad, std::size_t channels_a, Tensor& grad_a, Tensor& grad_b) {
  const Dims5 g = dims_of(grad.shape());
  const std::size_t vol = g.volume();
  grad_a = Tensor({g.n, channels_a, g.d, g.h, g.w});
  grad_b = Tensor({g.n, g.c - channels_a, g.d, g.h, g.w});
  const std::size_t va = channels_a * vol;
  const std::size_t vb = (g.c - channels_a) * vol;
  for (std::size_t n = 0; n < g.n; ++n) {
    std::copy_n(grad.data() + n * (va + vb), va, grad_a.data() + n * va);
    std::copy_n(grad.data() + n * (va + vb) + va, vb, grad_b.data() + n * vb);
  }
}

Tensor softmax_channels(const Tensor& logits) {
  const Dims5 s = dims_of(logits.shape());
  const std::size_t vol = s.volume();
  Tensor out(logits.shape());
  for (std::size_t n = 0; n < s.n; ++n) {
    const float* z = logits.data() + n * s.c * vol;
    float* p = out.data() + n * s.c * vol;
    for (std::size_t v = 0; v < vol; ++v) {
      float m = z[v];
      for (std::size_t c = 1; c < s.c; ++c) m = std::max(m, z[c * vol + v]);
      float sum = 0.0f;
      for (std::size_t c = 0; c < s.c; ++c) {
        const float e = std::exp(z[c * vol + v] - m);
        p[c * vol + v] = e;
        sum += e;
      }
      const float inv = 1.0f / sum;
      for (std::size_t c = 0; c < s.c; ++c) p[c * vol + v] *= inv;
    }
  }
  return out;
}

Tensor softmax_backward(const Tensor& probabilities, const Tensor& grad_out) {
  const Dims5 s = dims_of(probabilities.shape());
  const std::size_t vol = s.volume();
  Tensor grad_in(probabilities.shape());
  for (std::size_t n = 0; n < s.n; ++n) {
    const float* p = probabilities.data() + n * s.c * vol;
    const float* g = grad_out.data() + n * s.c * vol;
    float* gi = grad_in.data() + n * s.c * vol;
    for (std::size_t v = 0; v < vol; ++v) {
      float dot = 0.0f;
      for (std::size_t c = 0; c < s.c; ++c) dot += p[c * vol + v] * g[c * vol + v];
      for (std::size_t c = 0; c < s.c; ++c) gi[c * vol + v] = p[c * vol + v] * (g[c * vol + v] - dot);
    }
  }
  return grad_in;
}

void channel_moments(const Tensor& x, std::vector<double>& mean, std::vector<double>& var) {
  const Dims5 s = dims_of(x.shape());
  const std::size_t vol = s.volume();
  const double count = static_cast<double>(s.n * vol);
  mean.assign(s.c, 0.0);
  var.assign(s.c, 0.0);
  for (std::size_t c = 0; c < s.c; ++c) {
    double sum = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const float* p = x.data() + (n * s.c + c) * vol;
      for (std::size_t i = 0; i < vol; ++i) sum += p[i];
    }
    const double mu = sum / count;
    double sq = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const float* p = x.data() + (n * s.c + c) * vol;
      for (std::size_t i = 0; i < vol; ++i) {
        const double dv = p[i] - mu;
        sq += dv * dv;
      }
    }
    mean[c] = mu;
    var[c] = sq / count;
  }
}

}  // namespace tta::kernels
