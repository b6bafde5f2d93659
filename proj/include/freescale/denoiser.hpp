#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "freescale/attention_fusion.hpp"
#include "freescale/hash.hpp"
#include "freescale/rng.hpp"
#include "freescale/tensor.hpp"
#include "freescale/tensor_ops.hpp"

namespace freescale {

/// Shape of the toy noise-prediction UNet.
///
/// Encoder level i has base_width << i channels and ends with 2x2 average
/// pooling; the decoder mirrors it with nearest upsampling and skip
/// concatenation. The mid block is one residual block followed by one
/// self-attention layer.
struct UNetConfig {
  std::size_t latent_channels = 4;
  std::size_t base_width = 32;
  std::size_t down_blocks = 2;
  std::size_t time_embedding_dim = 64;
  std::size_t cond_dim = 32;
  std::size_t norm_groups = 8;

  std::size_t level_channels(std::size_t level) const { return base_width << level; }
  std::size_t mid_channels() const { return level_channels(down_blocks - 1); }
  std::size_t spatial_divisor() const { return std::size_t{1} << down_blocks; }

  void validate() const {
    if (latent_channels == 0 || base_width == 0 || down_blocks == 0 || time_embedding_dim < 2 || cond_dim == 0 ||
        time_embedding_dim % 2) {
      throw ConfigError("UNetConfig: sizes must be positive and time_embedding_dim even");
    }
    if (norm_groups == 0 || base_width % norm_groups) {
      throw ConfigError("UNetConfig: base_width must be divisible by norm_groups");
    }
  }
};

/// Named parameter tensors. Insertion order is the serialization order.
class WeightSet {
public:
  WeightSet() = default;
  explicit WeightSet(UNetConfig config) : config_(config) {}

  const UNetConfig& config() const { return config_; }

  void add(std::string name, Tensor value) {
    if (index_.count(name)) throw std::invalid_argument("WeightSet: duplicate layer " + name);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(value));
  }

  const Tensor& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("WeightSet: no layer named " + name);
    return entries_[it->second].second;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_) n += t.size();
    return n;
  }

  std::string checksum() const {
    Fnv1a64 h;
    for (const auto& [name, t] : entries_) {
      h.update(name);
      h.update(t.data());
    }
    return h.hex();
  }

  Kernel2D kernel(const std::string& name) const {
    const Tensor& w = get(name + ".weight");
    const Tensor& b = get(name + ".bias");
    return {w, b.storage()};
  }

private:
  UNetConfig config_;
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t> index_;
};

namespace detail {

inline void add_kaiming(WeightSet& ws, Rng& rng, const std::string& name, Shape shape, std::size_t fan_in) {
  ws.add(name + ".weight", rng.normal_tensor(shape, std::sqrt(2.0 / double(fan_in))));
}

inline void add_conv(WeightSet& ws, Rng& rng, const std::string& name, std::size_t in, std::size_t out,
                     std::size_t k) {
  add_kaiming(ws, rng, name, {out, in, k, k}, in * k * k);
  ws.add(name + ".bias", Tensor({out}));
}

inline void add_linear(WeightSet& ws, Rng& rng, const std::string& name, std::size_t in, std::size_t out) {
  add_kaiming(ws, rng, name, {in, out}, in);
  ws.add(name + ".bias", Tensor({out}));
}

inline void add_resblock(WeightSet& ws, Rng& rng, const std::string& name, std::size_t in, std::size_t out,
                         std::size_t temb) {
  add_conv(ws, rng, name + ".conv1", in, out, 3);
  add_linear(ws, rng, name + ".temb", temb, out);
  add_conv(ws, rng, name + ".conv2", out, out, 3);
  if (in != out) add_conv(ws, rng, name + ".skip", in, out, 1);
}

}  // namespace detail

/// Seeded Kaiming-normal weights (std sqrt(2 / fan_in)), zero biases.
inline WeightSet init_weights(const UNetConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(derive_seed(seed, "unet-weights"));
  WeightSet ws(config);
  const std::size_t temb = config.time_embedding_dim;
  detail::add_linear(ws, rng, "time.fc1", temb, temb);
  detail::add_linear(ws, rng, "time.fc2", temb, temb);
  detail::add_linear(ws, rng, "cond.proj", config.cond_dim, temb);
  detail::add_conv(ws, rng, "conv_in", config.latent_channels, config.level_channels(0), 3);
  std::size_t prev = config.level_channels(0);
  for (std::size_t i = 0; i < config.down_blocks; ++i) {
    detail::add_resblock(ws, rng, "down" + std::to_string(i), prev, config.level_channels(i), temb);
    prev = config.level_channels(i);
  }
  const std::size_t mid = config.mid_channels();
  detail::add_resblock(ws, rng, "mid.res", mid, mid, temb);
  for (const char* proj : {"q", "k", "v", "o"}) {
    detail::add_kaiming(ws, rng, std::string("mid.attn.") + proj, {mid, mid}, mid);
  }
  for (std::size_t i = config.down_blocks; i-- > 0;) {
    detail::add_resblock(ws, rng, "up" + std::to_string(i), prev + config.level_channels(i),
                         config.level_channels(i), temb);
    prev = config.level_channels(i);
  }
  detail::add_conv(ws, rng, "conv_out", prev, config.latent_channels, 3);
  return ws;
}

/// Per-group dilation factors actually used by one forward pass.
struct GroupDilation {
  int down = 1;
  int mid = 1;
  int up = 1;

  friend bool operator==(const GroupDilation&, const GroupDilation&) = default;
};

/// Dilated convolution restricted to selected block groups and to the early
/// part of the sampling trajectory.
struct DilationPolicy {
  int dilation_factor = 1;
  bool apply_down = true;
  bool apply_mid = true;
  bool apply_up = false;
  double stop_fraction = 0.3;

  void validate() const {
    if (dilation_factor < 1) throw ConfigError("DilationPolicy: dilation factor must be >= 1");
    if (!(stop_fraction >= 0.0 && stop_fraction <= 1.0)) {
      throw ConfigError("DilationPolicy: stop_fraction must lie in [0, 1]");
    }
  }

  bool active(std::size_t step_index, std::size_t total_steps) const {
    return double(step_index) < (1.0 - stop_fraction) * double(total_steps);
  }

  GroupDilation resolve(std::size_t step_index, std::size_t total_steps) const {
    if (!active(step_index, total_steps)) return {};
    GroupDilation g;
    if (apply_down) g.down = dilation_factor;
    if (apply_mid) g.mid = dilation_factor;
#ifdef FREESCALE_MUTATION_DILATE_UP
    g.up = dilation_factor;
#else
    if (apply_up) g.up = dilation_factor;
#endif
    return g;
  }
};

/// Windowed-attention layout for the mid-block attention layer, in units of
/// that layer's feature map.
struct FusionConfig {
  std::size_t window_h = 0;
  std::size_t window_w = 0;
  std::size_t stride_h = 0;
  std::size_t stride_w = 0;
  BlurSpec blur;

  PatchGrid grid_for(std::size_t height, std::size_t width) const {
    return PatchGrid(height, width, window_h, window_w, stride_h, stride_w);
  }
};

namespace detail {

inline std::vector<float> timestep_features(int t, std::size_t dim) {
  const std::size_t half = dim / 2;
  std::vector<float> out(dim);
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
    out[i] = static_cast<float>(std::sin(t * freq));
    out[half + i] = static_cast<float>(std::cos(t * freq));
  }
  return out;
}

inline Tensor row(std::span<const float> values) {
  return Tensor({1, values.size()}, std::vector<float>(values.begin(), values.end()));
}

inline Tensor linear_layer(const WeightSet& ws, const std::string& name, const Tensor& x) {
  return linear(x, ws.get(name + ".weight"), ws.get(name + ".bias").storage());
}

inline Tensor resblock(const WeightSet& ws, const std::string& name, const Tensor& x, const Tensor& temb_act,
                       int dilation) {
  const std::size_t groups = ws.config().norm_groups;
  Tensor h = conv2d(silu(group_norm(x, groups)), ws.kernel(name + ".conv1"), dilation);
  const Tensor shift = linear_layer(ws, name + ".temb", temb_act);
  h = add_channel_bias(h, shift.data());
  h = conv2d(silu(group_norm(h, groups)), ws.kernel(name + ".conv2"), dilation);
  const Tensor skip = ws.contains(name + ".skip.weight") ? conv2d(x, ws.kernel(name + ".skip"), 1) : x;
  return skip + h;
}

}  // namespace detail

inline AttentionWeights mid_attention_weights(const WeightSet& ws) {
  return {ws.get("mid.attn.q.weight"), ws.get("mid.attn.k.weight"), ws.get("mid.attn.v.weight"),
          ws.get("mid.attn.o.weight")};
}

/// One UNet evaluation with explicit per-group dilation. conv_in belongs to the
/// down group and conv_out to the up group.
inline Tensor unet_forward(const Tensor& z_t, int t, std::span<const float> cond, const WeightSet& ws,
                           const GroupDilation& dilation, const FusionConfig* fusion) {
  const UNetConfig& cfg = ws.config();
  require_rank(z_t, 4, "predict_noise");
  if (z_t.dim(0) != 1 || z_t.dim(1) != cfg.latent_channels) {
    throw std::invalid_argument("predict_noise: latent shape " + to_string(z_t.shape()) + " incompatible with " +
                                std::to_string(cfg.latent_channels) + " latent channels");
  }
  if (z_t.dim(2) % cfg.spatial_divisor() || z_t.dim(3) % cfg.spatial_divisor()) {
    throw std::invalid_argument("predict_noise: spatial dims " + to_string(z_t.shape()) + " not divisible by " +
                                std::to_string(cfg.spatial_divisor()));
  }
  if (cond.size() != cfg.cond_dim) {
    throw std::invalid_argument("predict_noise: cond length " + std::to_string(cond.size()) + " != cond_dim " +
                                std::to_string(cfg.cond_dim));
  }

  const auto tfeat = detail::timestep_features(t, cfg.time_embedding_dim);
  Tensor temb = detail::linear_layer(ws, "time.fc2", silu(detail::linear_layer(ws, "time.fc1", detail::row(tfeat))));
  temb = temb + detail::linear_layer(ws, "cond.proj", detail::row(cond));
  const Tensor temb_act = silu(temb);

  Tensor h = conv2d(z_t, ws.kernel("conv_in"), dilation.down);
  std::vector<Tensor> skips;
  for (std::size_t i = 0; i < cfg.down_blocks; ++i) {
    h = detail::resblock(ws, "down" + std::to_string(i), h, temb_act, dilation.down);
    skips.push_back(h);
    h = avg_pool2(h);
  }

  h = detail::resblock(ws, "mid.res", h, temb_act, dilation.mid);
  const Tensor normed = group_norm(h, cfg.norm_groups);
  const AttentionWeights attn = mid_attention_weights(ws);
  const Tensor attended = fusion ? fused_attention(normed, attn, fusion->grid_for(h.dim(2), h.dim(3)), fusion->blur)
                                 : self_attention(normed, attn);
  h = h + attended;

  for (std::size_t i = cfg.down_blocks; i-- > 0;) {
    h = concat_channels(upsample(h, 2, UpsampleMode::nearest), skips[i]);
    h = detail::resblock(ws, "up" + std::to_string(i), h, temb_act, dilation.up);
  }
  return conv2d(silu(group_norm(h, cfg.norm_groups)), ws.kernel("conv_out"), dilation.up);
}

/// Noise prediction eps(z_t, t, cond) with optional restrained dilation and
/// scale-fused attention.
inline Tensor predict_noise(const Tensor& z_t, int t, std::span<const float> cond, const WeightSet& ws,
                            const std::optional<DilationPolicy>& policy, const std::optional<FusionConfig>& fusion,
                            std::size_t step_index, std::size_t total_steps) {
  GroupDilation dilation;
  if (policy) {
    policy->validate();
    dilation = policy->resolve(step_index, total_steps);
  }
  return unet_forward(z_t, t, cond, ws, dilation, fusion ? &*fusion : nullptr);
}

/// eps_uncond + scale * (eps_cond - eps_uncond).
inline Tensor cfg_combine(const Tensor& eps_uncond, const Tensor& eps_cond, double scale) {
  require_same_shape(eps_uncond, eps_cond, "cfg_combine");
  Tensor out(eps_cond.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(double(eps_uncond[i]) + scale * (double(eps_cond[i]) - double(eps_uncond[i])));
  }
  return out;
}

// Checkpoint format: "FSW1", then per layer: u32 name length, name bytes,
// u32 rank, rank x u32 dims, float32 data. All integers and floats little-endian.

namespace detail {
inline void write_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline bool read_u32(std::istream& is, std::uint32_t& v) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
  v = std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
  return true;
}
}  // namespace detail

inline void save_weights(std::ostream& os, const WeightSet& ws) {
  os.write("FSW1", 4);
  for (const auto& [name, t] : ws.entries()) {
    detail::write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) detail::write_u32(os, static_cast<std::uint32_t>(d));
    for (float v : t.data()) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      detail::write_u32(os, bits);
    }
  }
  if (!os) throw Error("save_weights: write failed");
}

inline WeightSet load_weights(std::istream& is, const UNetConfig& config) {
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "FSW1") throw Error("load_weights: bad magic, expected FSW1");
  WeightSet ws(config);
  std::uint32_t name_len;
  while (detail::read_u32(is, name_len)) {
    std::string name(name_len, '\0');
    std::uint32_t rank;
    if (!is.read(name.data(), name_len) || !detail::read_u32(is, rank)) throw Error("load_weights: truncated record");
    Shape shape(rank);
    for (auto& d : shape) {
      std::uint32_t v;
      if (!detail::read_u32(is, v)) throw Error("load_weights: truncated shape");
      d = v;
    }
    Tensor t(shape);
    for (auto& v : t.data()) {
      std::uint32_t bits;
      if (!detail::read_u32(is, bits)) throw Error("load_weights: truncated data for " + name);
      std::memcpy(&v, &bits, 4);
    }
    ws.add(std::move(name), std::move(t));
  }
  return ws;
}

}  // namespace freescale
