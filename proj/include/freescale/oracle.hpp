#pragma once

// Brute-force and DFT reference checks. Every reference here is written
// independently of the production code path it verifies: explicit loops,
// full 2-D DFTs and closed-form evaluations only.

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "freescale/attention_fusion.hpp"
#include "freescale/denoiser.hpp"
#include "freescale/rng.hpp"
#include "freescale/scheduler.hpp"
#include "freescale/tensor.hpp"
#include "freescale/tensor_ops.hpp"

namespace freescale::oracle {

struct CheckResult {
  std::string name;
  double max_deviation = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

inline CheckResult make_result(std::string name, double deviation, double tolerance) {
  return {std::move(name), deviation, tolerance, std::isfinite(deviation) && deviation <= tolerance};
}

// ---------------------------------------------------------------------------
// References

/// Direct summation over every tap with explicit bounds checks.
inline Tensor reference_conv2d(const Tensor& input, const Kernel2D& kernel, int dilation) {
  const long n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const long o_ch = kernel.weights.dim(0), kh = kernel.weights.dim(2), kw = kernel.weights.dim(3);
  Tensor out({input.dim(0), kernel.weights.dim(0), input.dim(2), input.dim(3)});
  for (long b = 0; b < n; ++b)
    for (long o = 0; o < o_ch; ++o)
      for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x) {
          double acc = kernel.bias[o];
          for (long i = 0; i < c; ++i)
            for (long ky = 0; ky < kh; ++ky)
              for (long kx = 0; kx < kw; ++kx) {
                const long iy = y + dilation * (ky - (kh - 1) / 2);
                const long ix = x + dilation * (kx - (kw - 1) / 2);
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                acc += double(kernel.weights[((o * c + i) * kh + ky) * kw + kx]) *
                       input[((b * c + i) * h + iy) * w + ix];
              }
          out[((b * o_ch + o) * h + y) * w + x] = static_cast<float>(acc);
        }
  return out;
}

using Spectrum = std::vector<std::complex<double>>;

/// Full 2-D DFT of one h x w plane (sign -1), computed as a double sum per coefficient.
inline Spectrum dft2(const float* plane, std::size_t h, std::size_t w) {
  // Separate the double sum into per-row partial sums; still an exact DFT.
  Spectrum rows(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t v = 0; v < w; ++v) {
      std::complex<double> acc = 0.0;
      for (std::size_t x = 0; x < w; ++x) acc += double(plane[y * w + x]) * std::polar(1.0, -2.0 * std::numbers::pi * double(v * x % w) / double(w));
      rows[y * w + v] = acc;
    }
  Spectrum out(h * w);
  for (std::size_t u = 0; u < h; ++u)
    for (std::size_t v = 0; v < w; ++v) {
      std::complex<double> acc = 0.0;
      for (std::size_t y = 0; y < h; ++y) acc += rows[y * w + v] * std::polar(1.0, -2.0 * std::numbers::pi * double(u * y % h) / double(h));
      out[u * w + v] = acc;
    }
  return out;
}

/// Whether coefficient (u, v) survives the ideal low-pass: max(|f_y|, |f_x|) <= cutoff.
inline bool in_low_band(std::size_t u, std::size_t v, std::size_t h, std::size_t w, double cutoff) {
  auto freq = [](std::size_t k, std::size_t n) {
    const double signed_k = k <= n / 2 ? double(k) : double(k) - double(n);
    return std::abs(signed_k) / double(n);
  };
  return std::max(freq(u, h), freq(v, w)) <= cutoff + 1e-12;
}

/// Explicit 2-D Gaussian blur (outer-product kernel) with mirror boundaries.
inline Tensor reference_gaussian_blur(const Tensor& input, double sigma) {
  const long radius = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> k1(2 * radius + 1);
  double total = 0.0;
  for (long i = -radius; i <= radius; ++i) total += (k1[i + radius] = std::exp(-0.5 * double(i * i) / (sigma * sigma)));
  for (auto& v : k1) v /= total;
  auto mirror = [](long i, long n) {
    if (n == 1) return 0L;
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return i;
  };
  const long planes = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
  Tensor out(input.shape());
  for (long p = 0; p < planes; ++p)
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x) {
        double acc = 0.0;
        for (long dy = -radius; dy <= radius; ++dy)
          for (long dx = -radius; dx <= radius; ++dx)
            acc += k1[dy + radius] * k1[dx + radius] * input[(p * h + mirror(y + dy, h)) * w + mirror(x + dx, w)];
        out[(p * h + y) * w + x] = static_cast<float>(acc);
      }
  return out;
}

/// Per-pixel sum / coverage count of patches placed at their grid positions.
inline Tensor reference_reconstruct(const std::vector<Tensor>& patches, const PatchGrid& grid) {
  const std::size_t c = patches.front().dim(1), H = grid.height(), W = grid.width();
  Tensor out({1, c, H, W});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        double sum = 0.0;
        int count = 0;
        for (std::size_t n = 0; n < patches.size(); ++n) {
          const auto [top, left] = grid.positions()[n];
          if (y < top || y >= top + grid.window_h() || x < left || x >= left + grid.window_w()) continue;
          sum += patches[n].at(0, ch, y - top, x - left);
          ++count;
        }
        out.at(0, ch, y, x) = static_cast<float>(sum / count);
      }
  return out;
}

inline double reference_cosine_decay(int t, int T, double alpha) {
  return std::pow((1.0 + std::cos(double(T - t) / double(T) * std::numbers::pi)) / 2.0, alpha);
}

// ---------------------------------------------------------------------------
// Checks

/// Ideal low-pass fusion: low band of the result must equal the local input's,
/// high band the global input's, coefficient by coefficient. Gaussian fusion is
/// compared against an explicit 2-D blur.
inline std::vector<CheckResult> check_fusion(std::size_t pairs = 20, std::uint64_t seed = 11) {
  Rng rng(seed);
  const BlurSpec ideal{BlurMode::ideal_lowpass, 1.0, 0.25};
  double spectral_dev = 0.0, projection_dev = 0.0, gaussian_dev = 0.0;
  for (std::size_t i = 0; i < pairs; ++i) {
    const Tensor g = rng.normal_tensor({1, 4, 32, 32});
    const Tensor l = rng.normal_tensor({1, 4, 32, 32});
    const Tensor fused = scale_fusion(g, l, ideal);
    const std::size_t h = 32, w = 32, plane = h * w;
    for (std::size_t c = 0; c < 4; ++c) {
      const auto sf = dft2(fused.data().data() + c * plane, h, w);
      const auto sg = dft2(g.data().data() + c * plane, h, w);
      const auto sl = dft2(l.data().data() + c * plane, h, w);
      for (std::size_t u = 0; u < h; ++u)
        for (std::size_t v = 0; v < w; ++v) {
          const auto& target = in_low_band(u, v, h, w, ideal.cutoff) ? sl[u * w + v] : sg[u * w + v];
          spectral_dev = std::max(spectral_dev, std::abs(sf[u * w + v] - target) / double(plane));
        }
    }
    const Tensor low_f = lowpass(fused, ideal);
    projection_dev = std::max(projection_dev, max_abs_diff(low_f, lowpass(l, ideal)));
    projection_dev = std::max(projection_dev, max_abs_diff(fused - low_f, g - lowpass(g, ideal)));

    const Tensor gs = rng.normal_tensor({1, 2, 12, 12});
    const Tensor ls = rng.normal_tensor({1, 2, 12, 12});
    const Tensor ref = (gs - reference_gaussian_blur(gs, 1.0)) + reference_gaussian_blur(ls, 1.0);
    gaussian_dev = std::max(gaussian_dev, max_abs_diff(scale_fusion(gs, ls, BlurSpec{}), ref));
  }
  return {make_result("fusion.spectral_bands", spectral_dev, 1e-5),
          make_result("fusion.band_projection", projection_dev, 1e-5),
          make_result("fusion.gaussian_reference", gaussian_dev, 1e-5)};
}

inline std::vector<CheckResult> check_ddim(std::uint64_t seed = 13) {
  const NoiseSchedule sched = make_schedule(1000, 50);
  // Independent cumulative product of the scaled-linear betas.
  double product_dev = 0.0;
  {
    long double running = 1.0L;
    for (int t = 1; t <= 1000; ++t) {
      const long double root = std::sqrt(0.00085L) + (std::sqrt(0.012L) - std::sqrt(0.00085L)) * (t - 1) / 999.0L;
      running *= 1.0L - root * root;
      product_dev = std::max(product_dev, double(std::abs(running - static_cast<long double>(sched.alpha_bar(t)))));
    }
  }
  Rng rng(seed);
  double inversion_dev = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor z0 = rng.normal_tensor({1, 4, 16, 16});
    const Tensor eps = rng.normal_tensor({1, 4, 16, 16});
    for (int t : {1, 20, 100, 250, 400, 500, 700, 850, 980, 1000}) {
      const double ab = sched.alpha_bar(t);
      Tensor z_t(z0.shape());
      for (std::size_t i = 0; i < z0.size(); ++i) z_t[i] = static_cast<float>(std::sqrt(ab) * z0[i] + std::sqrt(1.0 - ab) * eps[i]);
      inversion_dev = std::max(inversion_dev, max_abs_diff(ddim_step(z_t, eps, t, 0, sched), z0));
    }
  }
  return {make_result("ddim.alpha_bar_product", product_dev, 1e-6),
          make_result("ddim.inversion", inversion_dev, 1e-4)};
}

inline Kernel2D random_kernel(Rng& rng, std::size_t out, std::size_t in, std::size_t k) {
  Kernel2D kernel{rng.normal_tensor({out, in, k, k}, 0.5), {}};
  for (std::size_t i = 0; i < out; ++i) kernel.bias.push_back(static_cast<float>(rng.normal() * 0.1));
  return kernel;
}

/// Brute-force convolution, the dilation/upsampling commutation, and the
/// restrained dilation policy (down/mid dilated, up never, late steps plain).
inline std::vector<CheckResult> check_conv(std::uint64_t seed = 17) {
  Rng rng(seed);
  double brute_dev = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor x = rng.normal_tensor({1, 2, 9, 9});
    for (std::size_t k : {3, 5}) {
      const Kernel2D kernel = random_kernel(rng, 3, 2, k);
      for (int d : {1, 2, 3}) brute_dev = std::max(brute_dev, max_abs_diff(conv2d(x, kernel, d), reference_conv2d(x, kernel, d)));
    }
  }

  double commute_dev = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor h = rng.normal_tensor({1, 2, 12, 12});
    const Kernel2D kernel = random_kernel(rng, 2, 2, 3);
    const Tensor plain = reference_conv2d(h, kernel, 1);
    const Tensor dilated = conv2d(upsample(h, 2, UpsampleMode::nearest), kernel, 2);
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t y = 1; y + 1 < 12; ++y)
        for (std::size_t x = 1; x + 1 < 12; ++x)
          commute_dev = std::max(commute_dev, double(std::abs(dilated.at(0, c, 2 * y, 2 * x) - plain.at(0, c, y, x))));
  }

  UNetConfig cfg;
  cfg.latent_channels = 4;
  cfg.base_width = 8;
  cfg.time_embedding_dim = 16;
  cfg.cond_dim = 8;
  const WeightSet ws = init_weights(cfg, 5);
  const Tensor z = rng.normal_tensor({1, 4, 16, 16});
  const std::vector<float> cond(cfg.cond_dim, 0.3f);
  const DilationPolicy policy{2, true, true, false, 0.3};
  double policy_dev = 0.0;
  const GroupDilation expected{2, 2, 1};
  policy_dev = std::max(policy_dev, policy.resolve(0, 10) == expected ? 0.0 : 1.0);
  policy_dev = std::max(policy_dev, policy.resolve(7, 10) == GroupDilation{} ? 0.0 : 1.0);
  policy_dev = std::max(policy_dev, max_abs_diff(predict_noise(z, 600, cond, ws, policy, std::nullopt, 0, 10),
                                                 unet_forward(z, 600, cond, ws, expected, nullptr)));
  policy_dev = std::max(policy_dev, max_abs_diff(predict_noise(z, 100, cond, ws, policy, std::nullopt, 9, 10),
                                                 unet_forward(z, 100, cond, ws, GroupDilation{}, nullptr)));
  return {make_result("conv.brute_force", brute_dev, 1e-5), make_result("conv.dilation_commutation", commute_dev, 1e-5),
          make_result("conv.restrained_policy", policy_dev, 0.0)};
}

inline std::vector<CheckResult> check_patch(std::uint64_t seed = 19) {
  Rng rng(seed);
  struct G {
    std::size_t H, W, h, w, dh, dw;
  };
  const std::vector<G> grids = {{128, 128, 64, 64, 32, 32}, {16, 16, 8, 8, 4, 4}, {12, 20, 4, 8, 2, 4},
                                {9, 9, 9, 9, 1, 1},          {10, 6, 4, 6, 3, 5}};
  double roundtrip_dev = 0.0, average_dev = 0.0, count_dev = 0.0;
  for (const auto& g : grids) {
    const PatchGrid grid(g.H, g.W, g.h, g.w, g.dh, g.dw);
    const std::size_t expected_n = ((g.H - g.h) / g.dh + 1) * ((g.W - g.w) / g.dw + 1);
    count_dev = std::max(count_dev, std::abs(double(grid.patch_count()) - double(expected_n)));
    const Tensor x = rng.normal_tensor({1, 3, g.H, g.W});
    roundtrip_dev = std::max(roundtrip_dev, max_abs_diff(reconstruct_average(shifted_crop_sampling(x, grid), grid), x));
    std::vector<Tensor> patches;
    for (std::size_t i = 0; i < grid.patch_count(); ++i) patches.push_back(rng.normal_tensor({1, 3, g.h, g.w}));
    average_dev = std::max(average_dev, max_abs_diff(reconstruct_average(patches, grid), reference_reconstruct(patches, grid)));
  }
  return {make_result("patch.count_formula", count_dev, 0.0), make_result("patch.roundtrip", roundtrip_dev, 1e-6),
          make_result("patch.overlap_average", average_dev, 1e-6)};
}

inline std::vector<CheckResult> check_blend(std::uint64_t seed = 23) {
  const int T = 1000;
  const double half = std::abs(cosine_decay(T / 2, T, 2.0) - 0.25);
  double boundary = 0.0, monotone_violation = 0.0;
  for (double alpha : {0.5, 1.0, 2.0, 3.0}) {
    boundary = std::max({boundary, std::abs(cosine_decay(0, T, alpha)), std::abs(cosine_decay(T, T, alpha) - 1.0)});
    double prev = -1.0;
    for (int i = 0; i < 1000; ++i) {
      const int t = static_cast<int>(std::lround(double(i) * T / 999.0));
      const double c = cosine_decay(t, T, alpha);
      monotone_violation = std::max(monotone_violation, prev - c);
      prev = c;
    }
  }
  Rng rng(seed);
  const NoiseSchedule sched = make_schedule(T, 50);
  const Tensor a = rng.normal_tensor({1, 2, 4, 4}), b = rng.normal_tensor({1, 2, 4, 4});
  const Tensor alpha_map = rng.uniform_tensor({4, 4}, 0.5, 3.0);
  const Tensor blended = detail_blend(a, b, 350, DetailControl{alpha_map}, sched);
  double formula_dev = 0.0;
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 4; ++x) {
        const double k = reference_cosine_decay(350, T, alpha_map.at(y, x));
        formula_dev = std::max(formula_dev, std::abs(blended.at(0, c, y, x) - (k * a.at(0, c, y, x) + (1 - k) * b.at(0, c, y, x))));
      }
  return {make_result("blend.half_T_alpha2", half, 1e-6), make_result("blend.boundaries", boundary, 0.0),
          make_result("blend.monotone_in_t", std::max(0.0, monotone_violation), 0.0),
          make_result("blend.spatial_formula", formula_dev, 1e-6)};
}

inline const std::vector<std::string>& check_names() {
  static const std::vector<std::string> names = {"fusion", "ddim", "conv", "patch", "blend"};
  return names;
}

/// Runs one named check, or every check for "all". Unknown names throw.
inline std::vector<CheckResult> run_checks(const std::string& which) {
  std::vector<CheckResult> out;
  auto append = [&out](std::vector<CheckResult> r) { out.insert(out.end(), r.begin(), r.end()); };
  const bool all = which == "all";
  if (all || which == "fusion") append(check_fusion());
  if (all || which == "ddim") append(check_ddim());
  if (all || which == "conv") append(check_conv());
  if (all || which == "patch") append(check_patch());
  if (all || which == "blend") append(check_blend());
  if (out.empty()) throw std::invalid_argument("unknown oracle check '" + which + "'");
  return out;
}

}  // namespace freescale::oracle
