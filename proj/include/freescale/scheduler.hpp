#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "freescale/tensor.hpp"

namespace freescale {

/// Variance schedule tables plus the DDIM timestep subsequence.
///
/// Timesteps are 1-based: betas[t - 1] is beta_t. alpha_bar(0) is defined as 1 so
/// a DDIM step can land on the clean sample.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;
  std::vector<int> ddim_timesteps;  // strictly decreasing, length S
  double eta = 0.0;

  double alpha_bar(int t) const {
    if (t == 0) return 1.0;
    check_timestep(t, "alpha_bar");
    return alpha_bars[static_cast<std::size_t>(t - 1)];
  }

  void check_timestep(int t, const char* what) const {
    if (t < 1 || t > T) {
      throw std::invalid_argument(std::string(what) + ": timestep " + std::to_string(t) + " outside [1, " +
                                  std::to_string(T) + "]");
    }
  }

  std::size_t steps() const { return ddim_timesteps.size(); }
};

/// Scaled-linear schedule (sqrt(beta) evenly spaced, then squared) with S evenly
/// spaced DDIM timesteps descending from T: t_i = T - floor(i * T / S).
inline NoiseSchedule make_schedule(int T, int steps, double beta_start = 0.00085, double beta_end = 0.012) {
  if (T < 1 || steps < 1 || steps > T) {
    throw std::invalid_argument("make_schedule: need T >= S >= 1, got T=" + std::to_string(T) +
                                " S=" + std::to_string(steps));
  }
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw std::invalid_argument("make_schedule: need 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.T = T;
  s.betas.resize(T);
  s.alphas.resize(T);
  s.alpha_bars.resize(T);
  const double lo = std::sqrt(beta_start), hi = std::sqrt(beta_end);
  double running = 1.0;
  for (int i = 0; i < T; ++i) {
    const double frac = T == 1 ? 0.0 : double(i) / double(T - 1);
    const double root = lo + (hi - lo) * frac;
    s.betas[i] = root * root;
    s.alphas[i] = 1.0 - s.betas[i];
    running *= s.alphas[i];
    s.alpha_bars[i] = running;
  }
  s.ddim_timesteps.resize(steps);
  for (int i = 0; i < steps; ++i) {
    s.ddim_timesteps[i] = T - static_cast<int>((static_cast<long long>(i) * T) / steps);
  }
  return s;
}

/// sqrt(alpha_bar_t) * z0 + sqrt(1 - alpha_bar_t) * noise.
inline Tensor forward_noise(const Tensor& z0, int t, const Tensor& noise, const NoiseSchedule& sched) {
  sched.check_timestep(t, "forward_noise");
  require_same_shape(z0, noise, "forward_noise");
  const double ab = sched.alpha_bar(t);
  return axpby(std::sqrt(ab), z0, std::sqrt(1.0 - ab), noise);
}

/// Deterministic (eta = 0) DDIM update from t to t_prev. t_prev == t is a no-op.
inline Tensor ddim_step(const Tensor& z_t, const Tensor& eps, int t, int t_prev, const NoiseSchedule& sched) {
  if (sched.eta != 0.0) throw std::invalid_argument("ddim_step: only eta == 0 is supported");
  require_same_shape(z_t, eps, "ddim_step");
  sched.check_timestep(t, "ddim_step");
  if (t_prev == t) return z_t;
  if (t_prev > t || t_prev < 0) {
    throw std::invalid_argument("ddim_step: need t > t_prev >= 0, got t=" + std::to_string(t) +
                                " t_prev=" + std::to_string(t_prev));
  }
  const double ab = sched.alpha_bar(t), ab_prev = sched.alpha_bar(t_prev);
  const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
  const double sa_prev = std::sqrt(ab_prev), sb_prev = std::sqrt(1.0 - ab_prev);
  Tensor out(z_t.shape());
  for (std::size_t i = 0; i < z_t.size(); ++i) {
    const double x0 = (double(z_t[i]) - sb * eps[i]) / sa;
    out[i] = static_cast<float>(sa_prev * x0 + sb_prev * eps[i]);
  }
  return out;
}

/// Re-noises an upsampled clean latent to timestep K to seed the next cascade level.
inline Tensor cascade_inject(const Tensor& upsampled_z0, int K, const Tensor& noise, const NoiseSchedule& sched) {
  sched.check_timestep(K, "cascade_inject");
  return forward_noise(upsampled_z0, K, noise, sched);
}

inline constexpr double kMinDetailAlpha = 1e-3;

/// Exponent map for the cosine-decay blend. Scalar, [H, W], [1, 1, H, W] or a
/// full-shape map are accepted and broadcast over the latent.
struct DetailControl {
  Tensor alpha_map = Tensor({1}, 2.0f);

  static DetailControl scalar(double alpha) { return {Tensor({1}, static_cast<float>(alpha))}; }

  void validate() const {
    for (float a : alpha_map.data()) {
      if (!(a >= kMinDetailAlpha) || !std::isfinite(a)) {
        throw std::invalid_argument("DetailControl: alpha entries must be finite and >= " +
                                    std::to_string(kMinDetailAlpha) + ", got " + std::to_string(a));
      }
    }
  }

  /// Alpha for flat element index i of a latent with the given NCHW shape.
  float alpha_at(const Shape& latent, std::size_t i) const {
    const std::size_t plane = latent[2] * latent[3];
    if (alpha_map.size() == 1) return alpha_map[0];
    if (alpha_map.size() == plane) return alpha_map[i % plane];
    return alpha_map[i];
  }

  void check_broadcast(const Shape& latent) const {
    const std::size_t n = alpha_map.size();
    const auto& s = alpha_map.shape();
    const bool spatial = (s.size() == 2 && s[0] == latent[2] && s[1] == latent[3]) ||
                         (s.size() == 4 && s[0] == 1 && s[1] == 1 && s[2] == latent[2] && s[3] == latent[3]);
    if (n == 1 || spatial || s == latent) return;
    throw std::invalid_argument("DetailControl: alpha map " + to_string(s) + " does not broadcast to " +
                                to_string(latent));
  }
};

/// c = ((1 + cos((T - t) / T * pi)) / 2)^alpha.
inline double cosine_decay(int t, int T, double alpha) {
  const double base = (1.0 + std::cos(double(T - t) / double(T) * std::numbers::pi)) / 2.0;
  return std::pow(std::max(0.0, base), alpha);
}

/// c * anchor + (1 - c) * z_t with c evaluated per element from the alpha map.
inline Tensor detail_blend(const Tensor& anchor, const Tensor& z_t, int t, const DetailControl& ctrl,
                           const NoiseSchedule& sched) {
  require_same_shape(anchor, z_t, "detail_blend");
  require_rank(z_t, 4, "detail_blend");
  if (t < 0 || t > sched.T) throw std::invalid_argument("detail_blend: timestep outside [0, T]");
  ctrl.validate();
  ctrl.check_broadcast(z_t.shape());
  Tensor out(z_t.shape());
  if (ctrl.alpha_map.size() == 1) {
    const double c = cosine_decay(t, sched.T, ctrl.alpha_map[0]);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(c * anchor[i] + (1.0 - c) * z_t[i]);
    return out;
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double c = cosine_decay(t, sched.T, ctrl.alpha_at(z_t.shape(), i));
    out[i] = static_cast<float>(c * anchor[i] + (1.0 - c) * z_t[i]);
  }
  return out;
}

}  // namespace freescale
