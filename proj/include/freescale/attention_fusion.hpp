#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "freescale/tensor.hpp"
#include "freescale/tensor_ops.hpp"

namespace freescale {

/// Single-head self-attention projections, all [dim, dim], applied as x * W.
struct AttentionWeights {
  Tensor w_q, w_k, w_v, w_o;

  std::size_t dim() const { return w_q.dim(0); }

  void validate() const {
    const std::size_t d = w_q.rank() == 2 ? w_q.dim(0) : 0;
    for (const Tensor* w : {&w_q, &w_k, &w_v, &w_o}) {
      if (w->rank() != 2 || w->dim(0) != d || w->dim(1) != d) {
        throw std::invalid_argument("AttentionWeights: projections must be square and of equal size");
      }
    }
  }

  static AttentionWeights identity(std::size_t dim) {
    Tensor eye({dim, dim});
    for (std::size_t i = 0; i < dim; ++i) eye.at(i, i) = 1.0f;
    return {eye, eye, eye, eye};
  }
};

namespace detail {

inline Tensor to_tokens(const Tensor& h) {
  const std::size_t c = h.dim(1), plane = h.dim(2) * h.dim(3);
  Tensor tokens({plane, c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t p = 0; p < plane; ++p) tokens.at(p, ch) = h[ch * plane + p];
  }
  return tokens;
}

inline Tensor from_tokens(const Tensor& tokens, std::size_t height, std::size_t width) {
  const std::size_t c = tokens.dim(1), plane = height * width;
  Tensor h({1, c, height, width});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t p = 0; p < plane; ++p) h[ch * plane + p] = tokens.at(p, ch);
  }
  return h;
}

}  // namespace detail

/// softmax(Q K^T / sqrt(dim)) V followed by the output projection, over the
/// H*W spatial tokens of a [1, C, H, W] map.
inline Tensor self_attention(const Tensor& h_in, const AttentionWeights& weights) {
  require_rank(h_in, 4, "self_attention");
  weights.validate();
  if (h_in.dim(0) != 1) throw std::invalid_argument("self_attention: batch size must be 1");
  if (h_in.dim(1) != weights.dim()) {
    throw std::invalid_argument("self_attention: channels " + std::to_string(h_in.dim(1)) +
                                " != attention dim " + std::to_string(weights.dim()));
  }
  const std::size_t n = h_in.dim(2) * h_in.dim(3), d = weights.dim();
  const Tensor tokens = detail::to_tokens(h_in);
  const Tensor q = linear(tokens, weights.w_q);
  const Tensor k = linear(tokens, weights.w_k);
  const Tensor v = linear(tokens, weights.w_v);

  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor scores({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    const float* qi = q.data().data() + i * d;
    for (std::size_t j = 0; j < n; ++j) {
      const float* kj = k.data().data() + j * d;
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) acc += double(qi[c]) * kj[c];
      scores.at(i, j) = static_cast<float>(acc * scale);
    }
  }
  const Tensor attn = softmax_rows(scores);
  const Tensor mixed = linear(attn, v);
  return detail::from_tokens(linear(mixed, weights.w_o), h_in.dim(2), h_in.dim(3));
}

/// Strided window layout over an H x W map. Exact tiling is required.
class PatchGrid {
public:
  struct Position {
    std::size_t top, left;
  };

  PatchGrid(std::size_t height, std::size_t width, std::size_t window_h, std::size_t window_w,
            std::size_t stride_h, std::size_t stride_w)
      : height_(height), width_(width), window_h_(window_h), window_w_(window_w), stride_h_(stride_h),
        stride_w_(stride_w) {
    if (window_h == 0 || window_w == 0 || stride_h == 0 || stride_w == 0) {
      throw std::invalid_argument("PatchGrid: window and stride must be positive");
    }
    if (window_h > height || window_w > width) {
      throw std::invalid_argument("PatchGrid: window " + std::to_string(window_h) + "x" + std::to_string(window_w) +
                                  " exceeds map " + std::to_string(height) + "x" + std::to_string(width));
    }
    if ((height - window_h) % stride_h || (width - window_w) % stride_w) {
      throw std::invalid_argument("PatchGrid: (H-h) and (W-w) must be divisible by the strides (H=" +
                                  std::to_string(height) + " h=" + std::to_string(window_h) +
                                  " d_h=" + std::to_string(stride_h) + ", W=" + std::to_string(width) +
                                  " w=" + std::to_string(window_w) + " d_w=" + std::to_string(stride_w) + ")");
    }
    for (std::size_t top = 0; top + window_h <= height; top += stride_h) {
      for (std::size_t left = 0; left + window_w <= width; left += stride_w) positions_.push_back({top, left});
    }
  }

  /// Window and half-window stride, the default layout.
  static PatchGrid half_overlap(std::size_t height, std::size_t width, std::size_t window_h, std::size_t window_w) {
    return PatchGrid(height, width, window_h, window_w, std::max<std::size_t>(1, window_h / 2),
                     std::max<std::size_t>(1, window_w / 2));
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t window_h() const { return window_h_; }
  std::size_t window_w() const { return window_w_; }
  std::size_t stride_h() const { return stride_h_; }
  std::size_t stride_w() const { return stride_w_; }
  std::size_t rows() const { return (height_ - window_h_) / stride_h_ + 1; }
  std::size_t cols() const { return (width_ - window_w_) / stride_w_ + 1; }
  std::size_t patch_count() const { return positions_.size(); }
  const std::vector<Position>& positions() const { return positions_; }

private:
  std::size_t height_, width_, window_h_, window_w_, stride_h_, stride_w_;
  std::vector<Position> positions_;
};

namespace detail {
inline void check_grid(const Tensor& h, const PatchGrid& grid, const char* what) {
  require_rank(h, 4, what);
  if (h.dim(0) != 1 || h.dim(2) != grid.height() || h.dim(3) != grid.width()) {
    throw std::invalid_argument(std::string(what) + ": feature map " + to_string(h.shape()) +
                                " does not match grid " + std::to_string(grid.height()) + "x" +
                                std::to_string(grid.width()));
  }
}
}  // namespace detail

/// Crops every grid window, top-to-bottom then left-to-right.
inline std::vector<Tensor> shifted_crop_sampling(const Tensor& h_in, const PatchGrid& grid) {
  detail::check_grid(h_in, grid, "shifted_crop_sampling");
  const std::size_t c = h_in.dim(1), w = h_in.dim(3), ph = grid.window_h(), pw = grid.window_w();
  std::vector<Tensor> patches;
  patches.reserve(grid.patch_count());
  for (const auto& pos : grid.positions()) {
    Tensor patch({1, c, ph, pw});
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < ph; ++y) {
        const float* src = h_in.data().data() + (ch * grid.height() + pos.top + y) * w + pos.left;
        std::copy_n(src, pw, patch.data().data() + (ch * ph + y) * pw);
      }
    }
    patches.push_back(std::move(patch));
  }
  return patches;
}

/// Places patches back at their grid positions and averages overlaps.
inline Tensor reconstruct_average(const std::vector<Tensor>& patches, const PatchGrid& grid) {
  if (patches.size() != grid.patch_count()) {
    throw std::invalid_argument("reconstruct_average: expected " + std::to_string(grid.patch_count()) +
                                " patches, got " + std::to_string(patches.size()));
  }
  const std::size_t ph = grid.window_h(), pw = grid.window_w();
  const std::size_t c = patches.front().rank() == 4 ? patches.front().dim(1) : 0;
  for (const auto& p : patches) {
    if (p.shape() != Shape{1, c, ph, pw}) {
      throw std::invalid_argument("reconstruct_average: patch shape " + to_string(p.shape()) + " != " +
                                  to_string(Shape{1, c, ph, pw}));
    }
  }
  const std::size_t height = grid.height(), width = grid.width();
  std::vector<double> sum(c * height * width, 0.0);
  std::vector<unsigned> count(height * width, 0);
  for (std::size_t n = 0; n < patches.size(); ++n) {
    const auto& pos = grid.positions()[n];
    for (std::size_t y = 0; y < ph; ++y) {
      for (std::size_t x = 0; x < pw; ++x) ++count[(pos.top + y) * width + pos.left + x];
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < ph; ++y) {
        for (std::size_t x = 0; x < pw; ++x) {
          sum[(ch * height + pos.top + y) * width + pos.left + x] += patches[n][(ch * ph + y) * pw + x];
        }
      }
    }
  }
  Tensor out({1, c, height, width});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t p = 0; p < height * width; ++p) {
      out[ch * height * width + p] = static_cast<float>(sum[ch * height * width + p] / count[p]);
    }
  }
  return out;
}

/// High band of the global branch plus low band of the local branch:
/// (global - G(global)) + G(local).
inline Tensor scale_fusion(const Tensor& h_global, const Tensor& h_local, const BlurSpec& blur) {
  require_same_shape(h_global, h_local, "scale_fusion");
  const Tensor low_global = lowpass(h_global, blur);
  const Tensor low_local = lowpass(h_local, blur);
  Tensor out(h_global.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
#ifdef FREESCALE_MUTATION_FUSION_SIGN
    out[i] = static_cast<float>((double(h_global[i]) + low_global[i]) + low_local[i]);
#else
    out[i] = static_cast<float>((double(h_global[i]) - low_global[i]) + low_local[i]);
#endif
  }
  return out;
}

/// Drop-in replacement for self_attention that mixes global and windowed attention.
inline Tensor fused_attention(const Tensor& h_in, const AttentionWeights& weights, const PatchGrid& grid,
                              const BlurSpec& blur) {
  detail::check_grid(h_in, grid, "fused_attention");
  const Tensor h_global = self_attention(h_in, weights);
  auto patches = shifted_crop_sampling(h_in, grid);
  for (auto& p : patches) p = self_attention(p, weights);
  const Tensor h_local = reconstruct_average(patches, grid);
  return scale_fusion(h_global, h_local, blur);
}

}  // namespace freescale
