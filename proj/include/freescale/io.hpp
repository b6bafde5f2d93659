#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "freescale/hash.hpp"
#include "freescale/pipeline.hpp"
#include "freescale/tensor.hpp"

namespace freescale::io {

using nlohmann::json;

inline constexpr const char* kToolVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Images

/// Model-space RGB in [-1, 1] to display range [0, 1].
inline Tensor to_display(const Tensor& rgb) {
  return map(rgb, [](float v) { return 0.5f * (v + 1.0f); });
}

/// Binary PPM (P6, maxval 255) of a [1, 3, H, W] image with values in [0, 1].
/// Values are clamped and rounded to nearest.
inline std::string encode_ppm(const Tensor& rgb01) {
  require_rank(rgb01, 4, "encode_ppm");
  if (rgb01.dim(0) != 1 || rgb01.dim(1) != 3) throw std::invalid_argument("encode_ppm: expected [1,3,H,W]");
  const std::size_t h = rgb01.dim(2), w = rgb01.dim(3);
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.reserve(out.size() + 3 * h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(static_cast<double>(rgb01.at(0, c, y, x)), 0.0, 1.0);
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
      }
    }
  }
  return out;
}

namespace detail {
// Reads the next whitespace-separated header token, skipping '#' comments.
inline std::string header_token(std::istream& is) {
  std::string token;
  char ch;
  while (is.get(ch)) {
    if (ch == '#') {
      std::string ignored;
      std::getline(is, ignored);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!token.empty()) return token;
      continue;
    }
    token.push_back(ch);
  }
  return token;
}
}  // namespace detail

/// Binary PGM (P5, maxval <= 255) as an [H, W] tensor of raw pixel values.
inline Tensor decode_pgm(const std::string& bytes) {
  std::istringstream is(bytes);
  if (detail::header_token(is) != "P5") throw ConfigError("mask: expected a binary PGM (P5) file");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(detail::header_token(is));
    h = std::stoul(detail::header_token(is));
    maxval = std::stoul(detail::header_token(is));
  } catch (const std::exception&) {
    throw ConfigError("mask: malformed PGM header");
  }
  if (w == 0 || h == 0 || maxval == 0 || maxval > 255) throw ConfigError("mask: unsupported PGM dimensions or maxval");
  std::string pixels(w * h, '\0');
  if (!is.read(pixels.data(), static_cast<std::streamsize>(pixels.size()))) throw ConfigError("mask: truncated PGM data");
  Tensor out({h, w});
  for (std::size_t i = 0; i < w * h; ++i) out[i] = static_cast<unsigned char>(pixels[i]);
  return out;
}

inline std::string encode_pgm(const Tensor& gray) {
  require_rank(gray, 2, "encode_pgm");
  std::string out = "P5\n" + std::to_string(gray.dim(1)) + " " + std::to_string(gray.dim(0)) + "\n255\n";
  for (float v : gray.data()) out.push_back(static_cast<char>(static_cast<unsigned char>(std::clamp(v, 0.0f, 255.0f))));
  return out;
}

/// Grey value v becomes alpha_lo + (v / 255) * (alpha_hi - alpha_lo).
inline RegionMask mask_from_pgm(const Tensor& gray, double alpha_lo, double alpha_hi) {
  RegionMask mask{map(gray, [=](float v) { return static_cast<float>(alpha_lo + (v / 255.0) * (alpha_hi - alpha_lo)); })};
  for (float a : mask.alpha.data()) {
    if (!(a >= kMinDetailAlpha)) throw ConfigError("mask: mapped alpha values must be >= 1e-3");
  }
  return mask;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path);
}

// ---------------------------------------------------------------------------
// Config

/// Config file plus the CLI-only mask mapping bounds.
struct ConfigFile {
  CascadeConfig cascade;
  double mask_alpha_lo = 0.5;
  double mask_alpha_hi = 3.0;
};

namespace detail {

inline void reject_unknown(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  const std::set<std::string> keys(allowed.begin(), allowed.end());
  for (const auto& [key, value] : obj.items()) {
    if (!keys.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const json& obj, const char* key, T& target) {
  if (!obj.contains(key)) return;
  try {
    target = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid value for '") + key + "': " + e.what());
  }
}

inline UpsampleSpace parse_space(const std::string& s) {
  if (s == "rgb") return UpsampleSpace::rgb;
  if (s == "latent") return UpsampleSpace::latent;
  throw ConfigError("upsample_space must be 'rgb' or 'latent'");
}

inline UpsampleMode parse_mode(const std::string& s) {
  if (s == "nearest") return UpsampleMode::nearest;
  if (s == "bilinear") return UpsampleMode::bilinear;
  throw ConfigError("latent_upsample_mode must be 'nearest' or 'bilinear'");
}

inline BlurMode parse_blur(const std::string& s) {
  if (s == "gaussian") return BlurMode::gaussian;
  if (s == "ideal_lowpass") return BlurMode::ideal_lowpass;
  throw ConfigError("blur.mode must be 'gaussian' or 'ideal_lowpass'");
}

}  // namespace detail

inline ConfigFile config_from_json(const json& j) {
  using detail::read;
  detail::reject_unknown(j,
                         {"prompt", "levels", "K", "T", "steps", "eta", "beta_start", "beta_end", "guidance_scale",
                          "upsample_space", "latent_upsample_mode", "alpha_default", "alpha_per_level",
                          "mask_alpha_lo", "mask_alpha_hi", "blur", "grid_policy", "fusion_enabled",
                          "dilation_enabled", "dilation_up_blocks", "dilation_stop_fraction", "seed",
                          "base_latent_size", "unet", "weight_seed", "autoencoder"},
                         "config");
  ConfigFile file;
  CascadeConfig& c = file.cascade;
  read(j, "prompt", c.prompt);
  read(j, "levels", c.levels);
  read(j, "K", c.K);
  read(j, "T", c.T);
  read(j, "steps", c.steps);
  read(j, "eta", c.eta);
  read(j, "beta_start", c.beta_start);
  read(j, "beta_end", c.beta_end);
  read(j, "guidance_scale", c.guidance_scale);
  std::string text;
  if (j.contains("upsample_space")) {
    read(j, "upsample_space", text);
    c.upsample_space = detail::parse_space(text);
  }
  if (j.contains("latent_upsample_mode")) {
    read(j, "latent_upsample_mode", text);
    c.latent_upsample_mode = detail::parse_mode(text);
  }
  read(j, "alpha_default", c.alpha_default);
  if (j.contains("alpha_per_level")) {
    const json& per = j.at("alpha_per_level");
    if (!per.is_object()) throw ConfigError("alpha_per_level must map level numbers to alphas");
    for (const auto& [key, value] : per.items()) {
      try {
        c.alpha_per_level[std::stoi(key)] = value.get<double>();
      } catch (const std::exception&) {
        throw ConfigError("alpha_per_level: invalid entry '" + key + "'");
      }
    }
  }
  read(j, "mask_alpha_lo", file.mask_alpha_lo);
  read(j, "mask_alpha_hi", file.mask_alpha_hi);
  if (j.contains("blur")) {
    const json& b = j.at("blur");
    detail::reject_unknown(b, {"mode", "sigma", "cutoff"}, "blur");
    if (b.contains("mode")) {
      read(b, "mode", text);
      c.blur.mode = detail::parse_blur(text);
    }
    read(b, "sigma", c.blur.sigma);
    read(b, "cutoff", c.blur.cutoff);
  }
  if (j.contains("grid_policy")) {
    const json& g = j.at("grid_policy");
    detail::reject_unknown(g, {"window", "stride"}, "grid_policy");
    read(g, "window", c.grid_window);
    read(g, "stride", c.grid_stride);
  }
  read(j, "fusion_enabled", c.fusion_enabled);
  read(j, "dilation_enabled", c.dilation_enabled);
  read(j, "dilation_up_blocks", c.dilation_up_blocks);
  read(j, "dilation_stop_fraction", c.dilation_stop_fraction);
  read(j, "seed", c.seed);
  read(j, "base_latent_size", c.base_latent_size);
  if (j.contains("unet")) {
    const json& u = j.at("unet");
    detail::reject_unknown(u, {"base_width", "down_blocks", "time_embedding_dim", "cond_dim", "norm_groups"}, "unet");
    read(u, "base_width", c.unet.base_width);
    read(u, "down_blocks", c.unet.down_blocks);
    read(u, "time_embedding_dim", c.unet.time_embedding_dim);
    read(u, "cond_dim", c.unet.cond_dim);
    read(u, "norm_groups", c.unet.norm_groups);
  }
  read(j, "weight_seed", c.weight_seed);
  if (j.contains("autoencoder")) {
    const json& a = j.at("autoencoder");
    detail::reject_unknown(a, {"patch", "latent_channels", "seed"}, "autoencoder");
    read(a, "patch", c.vae_patch);
    read(a, "latent_channels", c.vae_latent_channels);
    read(a, "seed", c.vae_seed);
  }
  if (!(file.mask_alpha_lo >= kMinDetailAlpha && file.mask_alpha_hi >= kMinDetailAlpha)) {
    throw ConfigError("mask_alpha_lo and mask_alpha_hi must be >= 1e-3");
  }
  validate(c);
  return file;
}

inline ConfigFile load_config(const std::string& path) {
  const std::string text = read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

/// Effective configuration, with defaults filled in. Keys sort alphabetically,
/// so dump() is canonical and suitable for hashing.
inline json config_to_json(const ConfigFile& file) {
  const CascadeConfig& c = file.cascade;
  json per = json::object();
  for (const auto& [level, alpha] : c.alpha_per_level) per[std::to_string(level)] = alpha;
  return {
      {"prompt", c.prompt},
      {"levels", c.levels},
      {"K", c.K},
      {"T", c.T},
      {"steps", c.steps},
      {"eta", c.eta},
      {"beta_start", c.beta_start},
      {"beta_end", c.beta_end},
      {"guidance_scale", c.guidance_scale},
      {"upsample_space", c.upsample_space == UpsampleSpace::rgb ? "rgb" : "latent"},
      {"latent_upsample_mode", c.latent_upsample_mode == UpsampleMode::nearest ? "nearest" : "bilinear"},
      {"alpha_default", c.alpha_default},
      {"alpha_per_level", per},
      {"mask_alpha_lo", file.mask_alpha_lo},
      {"mask_alpha_hi", file.mask_alpha_hi},
      {"blur",
       {{"mode", c.blur.mode == BlurMode::gaussian ? "gaussian" : "ideal_lowpass"},
        {"sigma", c.blur.sigma},
        {"cutoff", c.blur.cutoff}}},
      {"grid_policy", {{"window", c.grid_window}, {"stride", c.grid_stride}}},
      {"fusion_enabled", c.fusion_enabled},
      {"dilation_enabled", c.dilation_enabled},
      {"dilation_up_blocks", c.dilation_up_blocks},
      {"dilation_stop_fraction", c.dilation_stop_fraction},
      {"seed", c.seed},
      {"base_latent_size", c.base_latent_size},
      {"unet",
       {{"base_width", c.unet.base_width},
        {"down_blocks", c.unet.down_blocks},
        {"time_embedding_dim", c.unet.time_embedding_dim},
        {"cond_dim", c.unet.cond_dim},
        {"norm_groups", c.unet.norm_groups}}},
      {"weight_seed", c.weight_seed},
      {"autoencoder", {{"patch", c.vae_patch}, {"latent_channels", c.vae_latent_channels}, {"seed", c.vae_seed}}},
  };
}

inline std::string config_hash(const ConfigFile& file) { return checksum_hex(config_to_json(file).dump()); }

// ---------------------------------------------------------------------------
// Manifest

inline json make_manifest(const ConfigFile& file, const RunResult& result, const std::string& output_name,
                          const std::string& image_bytes) {
  json levels = json::array();
  for (const auto& l : result.levels) {
    levels.push_back({{"level", l.level},
                      {"wall_ms", l.milliseconds},
                      {"latent_mean", l.latent.mean},
                      {"latent_std", l.latent.stddev}});
  }
  return {
      {"tool_version", kToolVersion},
      {"config_hash", config_hash(file)},
      {"seed", file.cascade.seed},
      {"levels", levels},
      {"output", output_name},
      {"output_checksum", checksum_hex(image_bytes)},
      {"image_height", result.image.dim(2)},
      {"image_width", result.image.dim(3)},
      {"config", config_to_json(file)},
  };
}

}  // namespace freescale::io
