#include <gtest/gtest.h>

#include <filesystem>

#include "freescale/io.hpp"
#include "test_support.hpp"

using namespace freescale;
using nlohmann::json;

TEST(Ppm, HeaderAndPixelOrder) {
  Tensor rgb({1, 3, 1, 2}, {0.0f, 1.0f, 0.5f, 2.0f, 1.0f, -1.0f});  // R plane, G plane, B plane
  const std::string bytes = io::encode_ppm(rgb);
  const std::string header = "P6\n2 1\n255\n";
  ASSERT_EQ(bytes.substr(0, header.size()), header);
  const std::string px = bytes.substr(header.size());
  ASSERT_EQ(px.size(), 6u);
  EXPECT_EQ(static_cast<unsigned char>(px[0]), 0);    // (0,0) R
  EXPECT_EQ(static_cast<unsigned char>(px[1]), 128);  // (0,0) G = round(127.5)
  EXPECT_EQ(static_cast<unsigned char>(px[2]), 255);  // (0,0) B
  EXPECT_EQ(static_cast<unsigned char>(px[3]), 255);  // (0,1) R
  EXPECT_EQ(static_cast<unsigned char>(px[4]), 255);  // (0,1) G clamped
  EXPECT_EQ(static_cast<unsigned char>(px[5]), 0);    // (0,1) B clamped
  EXPECT_THROW(io::encode_ppm(Tensor({1, 1, 2, 2})), std::invalid_argument);
}

TEST(Ppm, DisplayMapping) {
  const Tensor d = io::to_display(Tensor({3}, {-1.0f, 0.0f, 1.0f}));
  EXPECT_FLOAT_EQ(d[0], 0.0f);
  EXPECT_FLOAT_EQ(d[1], 0.5f);
  EXPECT_FLOAT_EQ(d[2], 1.0f);
}

TEST(Pgm, RoundTripAndComments) {
  Tensor gray({2, 3}, {0, 10, 20, 30, 200, 255});
  EXPECT_EQ(io::decode_pgm(io::encode_pgm(gray)), gray);
  const std::string commented = std::string("P5\n# a comment\n3 2\n255\n") + std::string("\x00\x0a\x14\x1e\xc8\xff", 6);
  EXPECT_EQ(io::decode_pgm(commented), gray);
}

TEST(Pgm, RejectsMalformedFiles) {
  EXPECT_THROW(io::decode_pgm("P6\n1 1\n255\nabc"), ConfigError);
  EXPECT_THROW(io::decode_pgm("P5\nx 1\n255\n"), ConfigError);
  EXPECT_THROW(io::decode_pgm("P5\n2 2\n255\nab"), ConfigError);
  EXPECT_THROW(io::decode_pgm("P5\n1 1\n65535\nab"), ConfigError);
}

TEST(Mask, LinearGreyToAlphaMapping) {
  const RegionMask m = io::mask_from_pgm(Tensor({1, 3}, {0, 255, 51}), 0.5, 3.0);
  EXPECT_FLOAT_EQ(m.alpha[0], 0.5f);
  EXPECT_FLOAT_EQ(m.alpha[1], 3.0f);
  EXPECT_NEAR(m.alpha[2], 1.0, 1e-6);
  EXPECT_THROW(io::mask_from_pgm(Tensor({1, 1}, 0.0f), 0.0, 1.0), ConfigError);
}

TEST(Config, ParsesShippedConfigs) {
  const io::ConfigFile toy = io::load_config(FREESCALE_CONFIG_DIR "/toy.json");
  EXPECT_EQ(toy.cascade.levels, (std::vector<int>{1, 2, 4}));
  EXPECT_EQ(toy.cascade.K, 700);
  EXPECT_EQ(toy.cascade.steps, 50);
  EXPECT_EQ(toy.cascade.base_latent_size, 16u);
  const io::ConfigFile small = io::load_config(FREESCALE_CONFIG_DIR "/toy_small.json");
  EXPECT_EQ(small.cascade.unet.base_width, 8u);
  EXPECT_EQ(small.cascade.vae_patch, 2u);
}

TEST(Config, DefaultsAndOverrides) {
  const io::ConfigFile f = io::config_from_json(json::parse(R"({
    "levels": [1, 2], "K": 600, "alpha_per_level": {"2": 1.5},
    "blur": {"mode": "ideal_lowpass", "cutoff": 0.2},
    "upsample_space": "latent", "latent_upsample_mode": "bilinear",
    "grid_policy": {"window": 4, "stride": 2}, "mask_alpha_lo": 1.0
  })"));
  EXPECT_EQ(f.cascade.K, 600);
  EXPECT_EQ(f.cascade.T, 1000);
  EXPECT_DOUBLE_EQ(f.cascade.alpha_per_level.at(2), 1.5);
  EXPECT_EQ(f.cascade.blur.mode, BlurMode::ideal_lowpass);
  EXPECT_DOUBLE_EQ(f.cascade.blur.cutoff, 0.2);
  EXPECT_EQ(f.cascade.upsample_space, UpsampleSpace::latent);
  EXPECT_EQ(f.cascade.latent_upsample_mode, UpsampleMode::bilinear);
  EXPECT_EQ(f.cascade.grid_window, 4u);
  EXPECT_DOUBLE_EQ(f.mask_alpha_lo, 1.0);
}

TEST(Config, UnknownKeysAreErrors) {
  for (const char* text : {R"({"levles": [1, 2]})", R"({"blur": {"sigma": 1, "radius": 3}})",
                           R"({"unet": {"width": 8}})", R"({"grid_policy": {"size": 4}})",
                           R"({"autoencoder": {"p": 2}})"}) {
    EXPECT_THROW(io::config_from_json(json::parse(text)), ConfigError) << text;
  }
}

TEST(Config, InvalidValuesAreErrors) {
  for (const char* text : {R"({"levels": [2, 1]})", R"({"levels": "1,2"})", R"({"K": "high"})",
                           R"({"upsample_space": "hsv"})", R"({"blur": {"mode": "box"}})",
                           R"({"alpha_per_level": {"two": 1.0}})", R"({"mask_alpha_lo": 0})", R"([1, 2])"}) {
    EXPECT_THROW(io::config_from_json(json::parse(text)), ConfigError) << text;
  }
  EXPECT_THROW(io::load_config("/nonexistent/config.json"), ConfigError);
  const auto bad = std::filesystem::temp_directory_path() / "freescale_bad_config.json";
  io::write_file(bad.string(), "{not json");
  EXPECT_THROW(io::load_config(bad.string()), ConfigError);
  std::filesystem::remove(bad);
}

TEST(Config, CanonicalJsonRoundTripsAndHashes) {
  const io::ConfigFile f = io::load_config(FREESCALE_CONFIG_DIR "/toy_small.json");
  const json canonical = io::config_to_json(f);
  const io::ConfigFile back = io::config_from_json(canonical);
  EXPECT_EQ(io::config_to_json(back), canonical);
  EXPECT_EQ(io::config_hash(back), io::config_hash(f));
  EXPECT_EQ(io::config_hash(f).size(), 16u);
  io::ConfigFile other = f;
  other.cascade.seed += 1;
  EXPECT_NE(io::config_hash(other), io::config_hash(f));
}

TEST(Manifest, RecordsRunMetadata) {
  io::ConfigFile f;
  f.cascade = freescale::testing::tiny_cascade();
  const RunResult r = run(f.cascade);
  const std::string bytes = io::encode_ppm(io::to_display(r.image));
  const json m = io::make_manifest(f, r, "out.ppm", bytes);
  EXPECT_EQ(m["tool_version"], io::kToolVersion);
  EXPECT_EQ(m["config_hash"], io::config_hash(f));
  EXPECT_EQ(m["seed"], 3);
  EXPECT_EQ(m["output"], "out.ppm");
  EXPECT_EQ(m["output_checksum"], checksum_hex(bytes));
  EXPECT_EQ(m["image_height"], 32);
  EXPECT_EQ(m["image_width"], 32);
  ASSERT_EQ(m["levels"].size(), 2u);
  EXPECT_EQ(m["levels"][1]["level"], 2);
  EXPECT_TRUE(m["levels"][1]["latent_std"].get<double>() > 0.0);
}
