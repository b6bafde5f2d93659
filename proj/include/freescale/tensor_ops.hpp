#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "freescale/parallel.hpp"
#include "freescale/tensor.hpp"

namespace freescale {

/// Convolution weights [out_channels, in_channels, k_h, k_w] plus one bias per output channel.
struct Kernel2D {
  Tensor weights;
  std::vector<float> bias;

  std::size_t out_channels() const { return weights.dim(0); }
  std::size_t in_channels() const { return weights.dim(1); }
  std::size_t kernel_h() const { return weights.dim(2); }
  std::size_t kernel_w() const { return weights.dim(3); }

  void validate() const {
    require_rank(weights, 4, "Kernel2D");
    if (kernel_h() % 2 == 0 || kernel_w() % 2 == 0) {
      throw std::invalid_argument("Kernel2D: kernel size must be odd, got " + to_string(weights.shape()));
    }
    if (bias.size() != out_channels()) {
      throw std::invalid_argument("Kernel2D: bias length " + std::to_string(bias.size()) +
                                  " != out_channels " + std::to_string(out_channels()));
    }
  }
};

/// Stride-1 "same" convolution with dilation. Taps sit at offsets
/// dilation * (q - center); reads outside the map are zero.
inline Tensor conv2d(const Tensor& input, const Kernel2D& kernel, int dilation = 1) {
  require_rank(input, 4, "conv2d");
  kernel.validate();
  if (dilation < 1) throw std::invalid_argument("conv2d: dilation must be >= 1, got " + std::to_string(dilation));
  const std::size_t batch = input.dim(0), channels = input.dim(1), height = input.dim(2), width = input.dim(3);
  if (channels != kernel.in_channels()) {
    throw std::invalid_argument("conv2d: input has " + std::to_string(channels) + " channels, kernel expects " +
                                std::to_string(kernel.in_channels()));
  }
  const std::size_t out_channels = kernel.out_channels();
  const long kh = static_cast<long>(kernel.kernel_h()), kw = static_cast<long>(kernel.kernel_w());
  const long h = static_cast<long>(height), w = static_cast<long>(width);
  const std::size_t plane = height * width;

  Tensor out({batch, out_channels, height, width});
  const float* in = input.data().data();
  const float* wt = kernel.weights.data().data();
  float* dst = out.data().data();

  parallel::parallel_for(batch * out_channels, [&](std::size_t job) {
    const std::size_t n = job / out_channels, o = job % out_channels;
    std::vector<double> acc(plane, static_cast<double>(kernel.bias[o]));
    for (std::size_t c = 0; c < channels; ++c) {
      const float* src_plane = in + (n * channels + c) * plane;
      const float* taps = wt + (o * channels + c) * static_cast<std::size_t>(kh * kw);
      for (long ky = 0; ky < kh; ++ky) {
        const long dy = dilation * (ky - kh / 2);
        const long y0 = std::max(0L, -dy), y1 = std::min(h, h - dy);
        for (long kx = 0; kx < kw; ++kx) {
          const long dx = dilation * (kx - kw / 2);
          const long x0 = std::max(0L, -dx), x1 = std::min(w, w - dx);
          if (x0 >= x1) continue;
          const double tap = taps[ky * kw + kx];
          for (long y = y0; y < y1; ++y) {
            double* a = acc.data() + y * w;
            const float* s = src_plane + (y + dy) * w + dx;
            for (long x = x0; x < x1; ++x) a[x] += tap * static_cast<double>(s[x]);
          }
        }
      }
    }
    float* o_plane = dst + (n * out_channels + o) * plane;
    for (std::size_t i = 0; i < plane; ++i) o_plane[i] = static_cast<float>(acc[i]);
  });
  return out;
}

enum class UpsampleMode { nearest, bilinear };

inline Tensor upsample(const Tensor& input, int factor, UpsampleMode mode) {
  require_rank(input, 4, "upsample");
  if (factor < 1) throw std::invalid_argument("upsample: factor must be >= 1, got " + std::to_string(factor));
  if (factor == 1) return input;
  const std::size_t f = static_cast<std::size_t>(factor);
  const std::size_t planes = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t oh = h * f, ow = w * f;
  Tensor out({input.dim(0), input.dim(1), oh, ow});
  const float* src = input.data().data();
  float* dst = out.data().data();

  if (mode == UpsampleMode::nearest) {
    for (std::size_t p = 0; p < planes; ++p) {
      for (std::size_t y = 0; y < oh; ++y) {
        const float* row = src + p * h * w + (y / f) * w;
        float* o = dst + p * oh * ow + y * ow;
        for (std::size_t x = 0; x < ow; ++x) o[x] = row[x / f];
      }
    }
    return out;
  }

  // Half-pixel centers: source coordinate (i + 0.5) / f - 0.5, clamped at the border.
  struct Sample {
    std::size_t lo, hi;
    double frac;
  };
  auto samples = [f](std::size_t in_size, std::size_t out_size) {
    std::vector<Sample> s(out_size);
    for (std::size_t i = 0; i < out_size; ++i) {
      double pos = (static_cast<double>(i) + 0.5) / static_cast<double>(f) - 0.5;
      pos = std::clamp(pos, 0.0, static_cast<double>(in_size - 1));
      const auto lo = static_cast<std::size_t>(std::floor(pos));
      s[i] = {lo, std::min(lo + 1, in_size - 1), pos - static_cast<double>(lo)};
    }
    return s;
  };
  const auto sy = samples(h, oh), sx = samples(w, ow);
  for (std::size_t p = 0; p < planes; ++p) {
    const float* plane = src + p * h * w;
    float* o = dst + p * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      const float* r0 = plane + sy[y].lo * w;
      const float* r1 = plane + sy[y].hi * w;
      const double fy = sy[y].frac;
      for (std::size_t x = 0; x < ow; ++x) {
        const double fx = sx[x].frac;
        const double top = (1.0 - fx) * r0[sx[x].lo] + fx * r0[sx[x].hi];
        const double bottom = (1.0 - fx) * r1[sx[x].lo] + fx * r1[sx[x].hi];
        o[y * ow + x] = static_cast<float>((1.0 - fy) * top + fy * bottom);
      }
    }
  }
  return out;
}

/// Nearest resize to an arbitrary target size (index floor(i * in / out)).
inline Tensor resize_nearest(const Tensor& input, std::size_t out_h, std::size_t out_w) {
  require_rank(input, 4, "resize_nearest");
  const std::size_t planes = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
  Tensor out({input.dim(0), input.dim(1), out_h, out_w});
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < out_h; ++y) {
      const std::size_t iy = y * h / out_h;
      for (std::size_t x = 0; x < out_w; ++x) {
        out[(p * out_h + y) * out_w + x] = input[(p * h + iy) * w + x * w / out_w];
      }
    }
  }
  return out;
}

enum class BlurMode { gaussian, ideal_lowpass };

struct BlurSpec {
  BlurMode mode = BlurMode::gaussian;
  double sigma = 1.0;    // pixels, gaussian only
  double cutoff = 0.25;  // normalized frequency, ideal_lowpass only

  int radius() const { return static_cast<int>(std::ceil(3.0 * sigma)); }

  void validate() const {
    if (mode == BlurMode::gaussian && !(sigma > 0.0)) {
      throw std::invalid_argument("BlurSpec: sigma must be > 0");
    }
    if (mode == BlurMode::ideal_lowpass && !(cutoff > 0.0 && cutoff <= 0.5)) {
      throw std::invalid_argument("BlurSpec: cutoff must lie in (0, 0.5]");
    }
  }
};

/// Sampled Gaussian on [-radius, radius], renormalized to sum to 1.
inline std::vector<double> gaussian_taps(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> taps(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    taps[i + radius] = std::exp(-double(i) * i / (2.0 * sigma * sigma));
    sum += taps[i + radius];
  }
  for (auto& t : taps) t /= sum;
  return taps;
}

/// Mirror index without repeating the edge sample (…, 2, 1, 0, 1, 2, …).
inline std::size_t reflect_index(long i, long n) {
  if (n == 1) return 0;
  const long period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < n ? i : period - i);
}

namespace detail {

// 1-D ideal low-pass by explicit DFT -> mask -> inverse DFT, real part kept.
class IdealLine {
public:
  IdealLine(std::size_t n, double cutoff) : n_(n), twiddle_(n), keep_(n) {
    for (std::size_t k = 0; k < n; ++k) {
      const double angle = -2.0 * std::numbers::pi * double(k) / double(n);
      twiddle_[k] = {std::cos(angle), std::sin(angle)};
      const long signed_k = k <= n / 2 ? static_cast<long>(k) : static_cast<long>(k) - static_cast<long>(n);
      keep_[k] = std::abs(double(signed_k)) / double(n) <= cutoff + 1e-12;
    }
  }

  void apply(std::vector<double>& line) const {
    std::vector<std::complex<double>> spectrum(n_);
    for (std::size_t k = 0; k < n_; ++k) {
      if (!keep_[k]) continue;
      std::complex<double> acc = 0.0;
      for (std::size_t x = 0; x < n_; ++x) acc += line[x] * twiddle_[(k * x) % n_];
      spectrum[k] = acc;
    }
    for (std::size_t x = 0; x < n_; ++x) {
      std::complex<double> acc = 0.0;
      for (std::size_t k = 0; k < n_; ++k) {
        if (keep_[k]) acc += spectrum[k] * std::conj(twiddle_[(k * x) % n_]);
      }
      line[x] = acc.real() / double(n_);
    }
  }

private:
  std::size_t n_;
  std::vector<std::complex<double>> twiddle_;
  std::vector<bool> keep_;
};

}  // namespace detail

/// Per-channel low-pass filter over the two spatial axes of an NCHW tensor.
///
/// gaussian: separable sampled Gaussian, reflect padding.
/// ideal_lowpass: zero every 2-D DFT coefficient with max(|f_x|, |f_y|) > cutoff.
/// That mask factors into a row mask times a column mask, so the transform is
/// applied one axis at a time.
inline Tensor lowpass(const Tensor& input, const BlurSpec& spec) {
  if (input.rank() != 4) throw std::invalid_argument("lowpass: expected a 4-D NCHW tensor, got " + to_string(input.shape()));
  spec.validate();
  const std::size_t planes = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
  Tensor out(input.shape());

  if (spec.mode == BlurMode::gaussian) {
    const auto taps = gaussian_taps(spec.sigma);
    const long radius = static_cast<long>(taps.size() / 2);
    std::vector<double> tmp(h * w);
    for (std::size_t p = 0; p < planes; ++p) {
      const float* src = input.data().data() + p * h * w;
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          double acc = 0.0;
          for (long k = -radius; k <= radius; ++k) {
            acc += taps[k + radius] * src[y * w + reflect_index(static_cast<long>(x) + k, static_cast<long>(w))];
          }
          tmp[y * w + x] = acc;
        }
      }
      float* dst = out.data().data() + p * h * w;
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          double acc = 0.0;
          for (long k = -radius; k <= radius; ++k) {
            acc += taps[k + radius] * tmp[reflect_index(static_cast<long>(y) + k, static_cast<long>(h)) * w + x];
          }
          dst[y * w + x] = static_cast<float>(acc);
        }
      }
    }
    return out;
  }

  const detail::IdealLine rows(w, spec.cutoff), cols(h, spec.cutoff);
  std::vector<double> plane(h * w), line;
  for (std::size_t p = 0; p < planes; ++p) {
    const float* src = input.data().data() + p * h * w;
    for (std::size_t i = 0; i < h * w; ++i) plane[i] = src[i];
    line.resize(w);
    for (std::size_t y = 0; y < h; ++y) {
      std::copy_n(plane.begin() + y * w, w, line.begin());
      rows.apply(line);
      std::copy_n(line.begin(), w, plane.begin() + y * w);
    }
    line.resize(h);
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t y = 0; y < h; ++y) line[y] = plane[y * w + x];
      cols.apply(line);
      for (std::size_t y = 0; y < h; ++y) plane[y * w + x] = line[y];
    }
    float* dst = out.data().data() + p * h * w;
    for (std::size_t i = 0; i < h * w; ++i) dst[i] = static_cast<float>(plane[i]);
  }
  return out;
}

/// Row-wise softmax with per-row max subtraction.
inline Tensor softmax_rows(const Tensor& m) {
  require_rank(m, 2, "softmax_rows");
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  Tensor out(m.shape());
  std::vector<double> e(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    float peak = m.at(r, 0);
    for (std::size_t c = 1; c < cols; ++c) peak = std::max(peak, m.at(r, c));
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      e[c] = std::exp(double(m.at(r, c)) - double(peak));
      sum += e[c];
    }
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = static_cast<float>(e[c] / sum);
  }
  return out;
}

/// input[tokens, in] * weight[in, out] + bias[out]. An empty bias means zero.
inline Tensor linear(const Tensor& input, const Tensor& weight, const std::vector<float>& bias = {}) {
  require_rank(input, 2, "linear");
  require_rank(weight, 2, "linear");
  const std::size_t tokens = input.dim(0), in_dim = input.dim(1), out_dim = weight.dim(1);
  if (weight.dim(0) != in_dim) {
    throw std::invalid_argument("linear: input dim " + std::to_string(in_dim) + " != weight rows " +
                                std::to_string(weight.dim(0)));
  }
  if (!bias.empty() && bias.size() != out_dim) {
    throw std::invalid_argument("linear: bias length " + std::to_string(bias.size()) + " != out dim " +
                                std::to_string(out_dim));
  }
  Tensor out({tokens, out_dim});
  std::vector<double> acc(out_dim);
  for (std::size_t t = 0; t < tokens; ++t) {
    for (std::size_t j = 0; j < out_dim; ++j) acc[j] = bias.empty() ? 0.0 : bias[j];
    for (std::size_t i = 0; i < in_dim; ++i) {
      const double x = input.at(t, i);
      const float* row = weight.data().data() + i * out_dim;
      for (std::size_t j = 0; j < out_dim; ++j) acc[j] += x * row[j];
    }
    for (std::size_t j = 0; j < out_dim; ++j) out.at(t, j) = static_cast<float>(acc[j]);
  }
  return out;
}

// UNet building blocks.

inline Tensor silu(const Tensor& x) {
  return map(x, [](float v) { return static_cast<float>(v / (1.0 + std::exp(-double(v)))); });
}

/// 2x2 average pooling with stride 2.
inline Tensor avg_pool2(const Tensor& x) {
  require_rank(x, 4, "avg_pool2");
  const std::size_t h = x.dim(2), w = x.dim(3);
  if (h % 2 || w % 2) throw std::invalid_argument("avg_pool2: spatial dims must be even, got " + to_string(x.shape()));
  const std::size_t planes = x.dim(0) * x.dim(1), oh = h / 2, ow = w / 2;
  Tensor out({x.dim(0), x.dim(1), oh, ow});
  for (std::size_t p = 0; p < planes; ++p) {
    const float* s = x.data().data() + p * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const double sum = double(s[2 * y * w + 2 * xx]) + s[2 * y * w + 2 * xx + 1] +
                           s[(2 * y + 1) * w + 2 * xx] + s[(2 * y + 1) * w + 2 * xx + 1];
        out[(p * oh + y) * ow + xx] = static_cast<float>(0.25 * sum);
      }
    }
  }
  return out;
}

/// Group normalization without affine parameters.
inline Tensor group_norm(const Tensor& x, std::size_t groups, double eps = 1e-5) {
  require_rank(x, 4, "group_norm");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (groups == 0 || c % groups) throw std::invalid_argument("group_norm: channels not divisible by groups");
  const std::size_t span = (c / groups) * plane;
  Tensor out(x.shape());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t offset = (b * c + g * (c / groups)) * plane;
      double sum = 0.0;
      for (std::size_t i = 0; i < span; ++i) sum += x[offset + i];
      const double mean = sum / double(span);
      double sq = 0.0;
      for (std::size_t i = 0; i < span; ++i) sq += (x[offset + i] - mean) * (x[offset + i] - mean);
      const double inv = 1.0 / std::sqrt(sq / double(span) + eps);
      for (std::size_t i = 0; i < span; ++i) out[offset + i] = static_cast<float>((x[offset + i] - mean) * inv);
    }
  }
  return out;
}

/// Concatenates two NCHW tensors along channels.
inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank(a, 4, "concat_channels");
  require_rank(b, 4, "concat_channels");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw std::invalid_argument("concat_channels: incompatible shapes " + to_string(a.shape()) + " and " +
                                to_string(b.shape()));
  }
  const std::size_t n = a.dim(0), plane = a.dim(2) * a.dim(3), ca = a.dim(1), cb = b.dim(1);
  Tensor out({n, ca + cb, a.dim(2), a.dim(3)});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.data().begin() + i * ca * plane, ca * plane, out.data().begin() + i * (ca + cb) * plane);
    std::copy_n(b.data().begin() + i * cb * plane, cb * plane, out.data().begin() + (i * (ca + cb) + ca) * plane);
  }
  return out;
}

/// Adds bias[c] to every pixel of channel c.
inline Tensor add_channel_bias(const Tensor& x, std::span<const float> bias) {
  require_rank(x, 4, "add_channel_bias");
  if (bias.size() != x.dim(1)) throw std::invalid_argument("add_channel_bias: bias length mismatch");
  Tensor out = x;
  const std::size_t plane = x.dim(2) * x.dim(3);
  for (std::size_t n = 0; n < x.dim(0); ++n) {
    for (std::size_t c = 0; c < x.dim(1); ++c) {
      float* p = out.data().data() + (n * x.dim(1) + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] += bias[c];
    }
  }
  return out;
}

}  // namespace freescale
