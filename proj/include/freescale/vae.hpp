#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "freescale/rng.hpp"
#include "freescale/tensor.hpp"
#include "freescale/tensor_ops.hpp"

namespace freescale {

/// Orthonormal patch transform standing in for a pretrained VAE.
///
/// Each non-overlapping p x p RGB patch is flattened in (channel, row, col)
/// order to a 3p^2 vector v and mapped to coefficients basis^T v. Latent
/// channel k holds coefficient k. With latent_channels == 3p^2 the transform
/// is lossless.
struct AutoencoderSpec {
  std::size_t patch = 4;
  std::size_t latent_channels = 48;
  Tensor basis;  // [3p^2, 3p^2], orthonormal columns

  std::size_t patch_dim() const { return 3 * patch * patch; }
};

/// Seeded orthonormal basis from the Householder QR of a gaussian matrix.
/// latent_channels == 0 selects the lossless width 3p^2.
inline AutoencoderSpec make_autoencoder(std::size_t patch, std::uint64_t seed, std::size_t latent_channels = 0) {
  if (patch == 0) throw ConfigError("autoencoder patch size must be positive");
  const std::size_t n = 3 * patch * patch;
  if (latent_channels == 0) latent_channels = n;
  if (latent_channels > n) {
    throw ConfigError("autoencoder latent_channels " + std::to_string(latent_channels) + " exceeds 3p^2 = " +
                      std::to_string(n));
  }
  Rng rng(derive_seed(seed, "autoencoder-basis"));
  Eigen::MatrixXd random(n, n);
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t r = 0; r < n; ++r) random(r, c) = rng.normal();
  }
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(random).householderQ();
  AutoencoderSpec spec;
  spec.patch = patch;
  spec.latent_channels = latent_channels;
  spec.basis = Tensor({n, n});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) spec.basis.at(r, c) = static_cast<float>(q(r, c));
  }
  return spec;
}

/// Patchify, then project every patch onto the basis.
inline Tensor encode(const Tensor& rgb, const AutoencoderSpec& spec) {
  require_rank(rgb, 4, "encode");
  const std::size_t p = spec.patch, n = spec.patch_dim();
  if (rgb.dim(0) != 1 || rgb.dim(1) != 3) throw std::invalid_argument("encode: expected [1,3,H,W], got " + to_string(rgb.shape()));
  if (rgb.dim(2) % p || rgb.dim(3) % p) {
    throw std::invalid_argument("encode: image " + to_string(rgb.shape()) + " not divisible by patch " + std::to_string(p));
  }
  const std::size_t h = rgb.dim(2), w = rgb.dim(3), lh = h / p, lw = w / p, lat = spec.latent_channels;
  Tensor z({1, lat, lh, lw});
  std::vector<double> v(n);
  for (std::size_t py = 0; py < lh; ++py) {
    for (std::size_t px = 0; px < lw; ++px) {
      for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t y = 0; y < p; ++y) {
          for (std::size_t x = 0; x < p; ++x) v[(c * p + y) * p + x] = rgb.at(0, c, py * p + y, px * p + x);
        }
      }
      for (std::size_t k = 0; k < lat; ++k) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += spec.basis.at(i, k) * v[i];
        z.at(0, k, py, px) = static_cast<float>(acc);
      }
    }
  }
  return z;
}

/// basis * coefficients per patch, then un-patchify.
inline Tensor decode(const Tensor& z, const AutoencoderSpec& spec) {
  require_rank(z, 4, "decode");
  if (z.dim(0) != 1 || z.dim(1) != spec.latent_channels) {
    throw std::invalid_argument("decode: latent " + to_string(z.shape()) + " does not have " +
                                std::to_string(spec.latent_channels) + " channels");
  }
  const std::size_t p = spec.patch, n = spec.patch_dim(), lat = spec.latent_channels;
  const std::size_t lh = z.dim(2), lw = z.dim(3);
  Tensor rgb({1, 3, lh * p, lw * p});
  std::vector<double> v(n);
  for (std::size_t py = 0; py < lh; ++py) {
    for (std::size_t px = 0; px < lw; ++px) {
      std::fill(v.begin(), v.end(), 0.0);
      for (std::size_t k = 0; k < lat; ++k) {
        const double coeff = z.at(0, k, py, px);
        for (std::size_t i = 0; i < n; ++i) v[i] += spec.basis.at(i, k) * coeff;
      }
      for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t y = 0; y < p; ++y) {
          for (std::size_t x = 0; x < p; ++x) rgb.at(0, c, py * p + y, px * p + x) = static_cast<float>(v[(c * p + y) * p + x]);
        }
      }
    }
  }
  return rgb;
}

enum class UpsampleSpace { rgb, latent };

/// Cascade upsampling operator: UP(z) in latent space, or E(UP(D(z))) with
/// bilinear UP in RGB space.
inline Tensor phi_upsample(const Tensor& z, int factor, UpsampleSpace space, UpsampleMode latent_mode,
                           const AutoencoderSpec& spec) {
  if (space == UpsampleSpace::latent) return upsample(z, factor, latent_mode);
  return encode(upsample(decode(z, spec), factor, UpsampleMode::bilinear), spec);
}

}  // namespace freescale
