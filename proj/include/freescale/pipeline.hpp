#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "freescale/denoiser.hpp"
#include "freescale/rng.hpp"
#include "freescale/scheduler.hpp"
#include "freescale/tensor.hpp"
#include "freescale/tensor_ops.hpp"
#include "freescale/vae.hpp"

namespace freescale {

/// Per-region detail exponents at image resolution. Resampled (nearest) to
/// each level's latent grid.
struct RegionMask {
  Tensor alpha;  // [H, W], entries > 0

  DetailControl at_latent(std::size_t height, std::size_t width) const {
    require_rank(alpha, 2, "RegionMask");
    const Tensor resized = resize_nearest(alpha.reshaped({1, 1, alpha.dim(0), alpha.dim(1)}), height, width);
    DetailControl ctrl{resized.reshaped({height, width})};
    ctrl.validate();
    return ctrl;
  }
};

struct CascadeConfig {
  std::string prompt = "a toy landscape";
  std::vector<int> levels = {1, 2};
  int K = 700;
  int T = 1000;
  int steps = 50;
  double eta = 0.0;
  double beta_start = 0.00085;
  double beta_end = 0.012;
  double guidance_scale = 7.5;
  UpsampleSpace upsample_space = UpsampleSpace::rgb;
  UpsampleMode latent_upsample_mode = UpsampleMode::nearest;

  double alpha_default = 2.0;
  std::map<int, double> alpha_per_level;       // scalar overrides
  std::map<int, Tensor> alpha_map_per_level;   // spatial [h, w] overrides at latent resolution
  std::optional<RegionMask> mask;

  BlurSpec blur;
  std::size_t grid_window = 0;  // attention-feature units; 0 = training size
  std::size_t grid_stride = 0;  // 0 = half window
  bool fusion_enabled = true;

  bool dilation_enabled = true;
  bool dilation_up_blocks = false;
  double dilation_stop_fraction = 0.3;

  std::uint64_t seed = 0;

  // Toy model.
  std::size_t base_latent_size = 16;
  UNetConfig unet;
  std::uint64_t weight_seed = 1234;
  std::size_t vae_patch = 4;
  std::size_t vae_latent_channels = 0;  // 0 = lossless 3p^2
  std::uint64_t vae_seed = 99;
};

/// Weights plus autoencoder, both derived deterministically from the config.
struct Model {
  WeightSet weights;
  AutoencoderSpec autoencoder;

  static Model from_config(const CascadeConfig& config) {
    AutoencoderSpec ae = make_autoencoder(config.vae_patch, config.vae_seed, config.vae_latent_channels);
    UNetConfig unet = config.unet;
    unet.latent_channels = ae.latent_channels;
    return {init_weights(unet, config.weight_seed), std::move(ae)};
  }
};

/// Resolution levels actually visited: the configured levels with every
/// doubling in between, e.g. [1, 4] -> [1, 2, 4].
inline std::vector<int> cascade_path(const std::vector<int>& levels) {
  std::vector<int> path;
  for (int r : levels) {
    if (path.empty()) {
      path.push_back(r);
      continue;
    }
    while (path.back() < r) path.push_back(path.back() * 2);
  }
  return path;
}

inline std::size_t attention_feature_size(const CascadeConfig& config, int level) {
  return config.base_latent_size * static_cast<std::size_t>(level) / config.unet.spatial_divisor();
}

/// Window and stride are the same at every level; only the feature map grows.
inline FusionConfig fusion_config(const CascadeConfig& config) {
  const std::size_t train = attention_feature_size(config, 1);
  const std::size_t window = config.grid_window ? config.grid_window : train;
  const std::size_t stride = config.grid_stride ? config.grid_stride : std::max<std::size_t>(1, window / 2);
  return {window, window, stride, stride, config.blur};
}

inline void validate(const CascadeConfig& config) {
  const auto& lv = config.levels;
  if (lv.empty()) throw ConfigError("levels must not be empty");
  for (std::size_t i = 1; i < lv.size(); ++i) {
    if (lv[i] <= lv[i - 1]) throw ConfigError("levels must be ascending");
  }
  if (lv.front() != 1) throw ConfigError("levels must start at 1");
  for (std::size_t i = 1; i < lv.size(); ++i) {
    const int ratio = lv[i] / lv[i - 1];
    if (lv[i] % lv[i - 1] || (ratio & (ratio - 1))) {
      throw ConfigError("each level must be a power-of-two multiple of the previous one");
    }
  }
  if (config.T < 1 || config.steps < 1 || config.steps > config.T) throw ConfigError("need T >= steps >= 1");
  if (config.K < 1 || config.K > config.T) throw ConfigError("K must lie in [1, T]");
  if (config.eta != 0.0) throw ConfigError("only eta = 0 (deterministic DDIM) is supported");
  if (!(config.beta_start > 0.0 && config.beta_start <= config.beta_end && config.beta_end < 1.0)) {
    throw ConfigError("need 0 < beta_start <= beta_end < 1");
  }
  if (!std::isfinite(config.guidance_scale)) throw ConfigError("guidance_scale must be finite");
  if (!(config.alpha_default >= kMinDetailAlpha)) throw ConfigError("alpha_default must be >= 1e-3");
  for (const auto& [level, a] : config.alpha_per_level) {
    if (!(a >= kMinDetailAlpha)) throw ConfigError("alpha_per_level entries must be >= 1e-3");
  }
  if (!(config.dilation_stop_fraction >= 0.0 && config.dilation_stop_fraction <= 1.0)) {
    throw ConfigError("dilation_stop_fraction must lie in [0, 1]");
  }
  try {
    config.blur.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  config.unet.validate();
  if (config.base_latent_size == 0 || config.base_latent_size % config.unet.spatial_divisor()) {
    throw ConfigError("base_latent_size must be divisible by 2^down_blocks");
  }
  if (config.fusion_enabled) {
    for (int level : cascade_path(lv)) {
      if (level == 1) continue;
      const std::size_t size = attention_feature_size(config, level);
      try {
        (void)fusion_config(config).grid_for(size, size);
      } catch (const std::invalid_argument& e) {
        throw ConfigError("patch grid invalid at level " + std::to_string(level) + ": " + e.what());
      }
    }
  }
}

inline NoiseSchedule schedule_for(const CascadeConfig& config) {
  NoiseSchedule s = make_schedule(config.T, config.steps, config.beta_start, config.beta_end);
  s.eta = config.eta;
  return s;
}

/// Deterministic pseudo text embedding keyed by the prompt string.
inline std::vector<float> prompt_embedding(const std::string& prompt, std::size_t dim) {
  Rng rng(derive_seed(fnv1a64(prompt), "prompt-embedding"));
  std::vector<float> e(dim);
  for (auto& v : e) v = static_cast<float>(rng.normal());
  return e;
}

inline std::vector<float> null_embedding(std::size_t dim) { return std::vector<float>(dim, 0.0f); }

/// Detail exponents for one cascade level.
inline DetailControl detail_control_for(const CascadeConfig& config, int level, std::size_t height,
                                        std::size_t width) {
  if (auto it = config.alpha_map_per_level.find(level); it != config.alpha_map_per_level.end()) {
    DetailControl ctrl{it->second};
    ctrl.validate();
    return ctrl;
  }
  if (config.mask) return config.mask->at_latent(height, width);
  if (auto it = config.alpha_per_level.find(level); it != config.alpha_per_level.end()) {
    return DetailControl::scalar(it->second);
  }
  return DetailControl::scalar(config.alpha_default);
}

/// Shared noise draw for one cascade level, used both for injection at K and
/// for the blend anchor at later timesteps.
inline Tensor level_noise(const CascadeConfig& config, int level, const Shape& shape) {
  Rng rng(derive_seed(config.seed, "level-noise-" + std::to_string(level)));
  return rng.normal_tensor(shape);
}

inline Tensor base_noise(const CascadeConfig& config, const Shape& shape) {
  Rng rng(derive_seed(config.seed, "base-noise"));
  return rng.normal_tensor(shape);
}

/// DDIM timesteps visited by a cascade level: K followed by every subsequence entry below K.
inline std::vector<int> cascade_timesteps(const NoiseSchedule& sched, int K) {
  std::vector<int> ts{K};
  for (int t : sched.ddim_timesteps) {
    if (t < K) ts.push_back(t);
  }
  return ts;
}

namespace detail {

inline void require_finite(const Tensor& t, const std::string& where) {
  if (!t.all_finite()) throw NumericError("non-finite latent values at " + where);
}

inline Tensor guided_noise(const Tensor& z, int t, const CascadeConfig& config, const Model& model,
                           std::span<const float> cond, std::span<const float> uncond,
                           const std::optional<DilationPolicy>& policy, const std::optional<FusionConfig>& fusion,
                           std::size_t step, std::size_t total) {
  const Tensor eps_u = predict_noise(z, t, uncond, model.weights, policy, fusion, step, total);
  const Tensor eps_c = predict_noise(z, t, cond, model.weights, policy, fusion, step, total);
  return cfg_combine(eps_u, eps_c, config.guidance_scale);
}

}  // namespace detail

/// Full DDIM trajectory from the given start noise with no dilation or fusion.
inline Tensor sample_plain(Tensor z, const CascadeConfig& config, const Model& model) {
  const NoiseSchedule sched = schedule_for(config);
  const auto cond = prompt_embedding(config.prompt, model.weights.config().cond_dim);
  const auto uncond = null_embedding(model.weights.config().cond_dim);
  const auto& ts = sched.ddim_timesteps;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int t = ts[i], t_prev = i + 1 < ts.size() ? ts[i + 1] : 0;
    const Tensor eps = detail::guided_noise(z, t, config, model, cond, uncond, std::nullopt, std::nullopt, i, ts.size());
    z = ddim_step(z, eps, t, t_prev, sched);
    detail::require_finite(z, "base step t=" + std::to_string(t));
  }
  return z;
}

/// Clean latent at the training resolution.
inline Tensor generate_base(const CascadeConfig& config, const Model& model) {
  validate(config);
  const std::size_t s = config.base_latent_size;
  return sample_plain(base_noise(config, {1, model.autoencoder.latent_channels, s, s}), config, model);
}

/// Direct inference at the given level's resolution, for timing comparisons.
inline Tensor generate_direct(const CascadeConfig& config, const Model& model, int level) {
  validate(config);
  const std::size_t s = config.base_latent_size * static_cast<std::size_t>(level);
  Rng rng(derive_seed(config.seed, "direct-noise-" + std::to_string(level)));
  return sample_plain(rng.normal_tensor({1, model.autoencoder.latent_channels, s, s}), config, model);
}

/// One doubling step of the self-cascade: upsample the clean latent, re-noise
/// it to K, then denoise with restrained dilation, fused attention and
/// cosine-decay blending toward the re-noised anchor.
inline Tensor cascade_level(const Tensor& z0_prev, int r_from, int r_to, const CascadeConfig& config,
                            const Model& model) {
  if (r_from < 1 || r_to != 2 * r_from) {
    throw std::invalid_argument("cascade_level: need r_to == 2 * r_from, got " + std::to_string(r_from) + " -> " +
                                std::to_string(r_to));
  }
  const NoiseSchedule sched = schedule_for(config);
  const Tensor upsampled =
      phi_upsample(z0_prev, 2, config.upsample_space, config.latent_upsample_mode, model.autoencoder);
  const Tensor noise = level_noise(config, r_to, upsampled.shape());
  const DetailControl ctrl = detail_control_for(config, r_to, upsampled.dim(2), upsampled.dim(3));
  ctrl.check_broadcast(upsampled.shape());

  std::optional<DilationPolicy> policy;
  if (config.dilation_enabled) {
    policy = DilationPolicy{r_to, true, true, config.dilation_up_blocks, config.dilation_stop_fraction};
  }
  std::optional<FusionConfig> fusion;
  if (config.fusion_enabled) fusion = fusion_config(config);

  const auto cond = prompt_embedding(config.prompt, model.weights.config().cond_dim);
  const auto uncond = null_embedding(model.weights.config().cond_dim);
  const auto ts = cascade_timesteps(sched, config.K);

  Tensor z = cascade_inject(upsampled, config.K, noise, sched);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int t = ts[i], t_prev = i + 1 < ts.size() ? ts[i + 1] : 0;
    const Tensor anchor = forward_noise(upsampled, t, noise, sched);
    const Tensor blended = detail_blend(anchor, z, t, ctrl, sched);
    const Tensor eps = detail::guided_noise(blended, t, config, model, cond, uncond, policy, fusion, i, ts.size());
    z = ddim_step(blended, eps, t, t_prev, sched);
    detail::require_finite(z, "level " + std::to_string(r_to) + " step t=" + std::to_string(t));
  }
  return z;
}

struct LevelReport {
  int level = 1;
  double milliseconds = 0.0;
  Moments latent;
};

struct RunResult {
  Tensor image;   // [1, 3, H, W]
  Tensor latent;  // final clean latent
  std::vector<LevelReport> levels;
};

inline RunResult run(const CascadeConfig& config, const Model& model) {
  validate(config);
  using clock = std::chrono::steady_clock;
  RunResult result;
  auto start = clock::now();
  Tensor z = generate_base(config, model);
  auto elapsed = [&] { return std::chrono::duration<double, std::milli>(clock::now() - start).count(); };
  result.levels.push_back({1, elapsed(), moments(z)});
  const auto path = cascade_path(config.levels);
  for (std::size_t i = 1; i < path.size(); ++i) {
    start = clock::now();
    z = cascade_level(z, path[i - 1], path[i], config, model);
    result.levels.push_back({path[i], elapsed(), moments(z)});
  }
  result.image = decode(z, model.autoencoder);
  detail::require_finite(result.image, "decoded image");
  result.latent = std::move(z);
  return result;
}

inline RunResult run(const CascadeConfig& config) { return run(config, Model::from_config(config)); }

}  // namespace freescale
