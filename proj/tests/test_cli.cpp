#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <string>

#include "freescale/io.hpp"

namespace {

struct Outcome {
  int exit_code = -1;
  std::string out;
};

Outcome run_cli(const std::string& args) {
  const std::string cmd = std::string(FREESCALE_CLI) + " " + args + " 2>/dev/null";
  Outcome o;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return o;
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) o.out.append(buf.data(), n);
  const int status = pclose(pipe);
  o.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return o;
}

std::string config(const char* name) { return std::string(FREESCALE_CONFIG_DIR) + "/" + name; }

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("freescale_cli_" + name)).string();
}

}  // namespace

TEST(Cli, GenerateWritesImageAndManifest) {
  const std::string out = temp_path("gen.ppm");
  const Outcome o = run_cli("generate --config " + config("toy_small.json") + " --out " + out);
  ASSERT_EQ(o.exit_code, 0) << o.out;
  EXPECT_NE(o.out.find("status=ok"), std::string::npos);
  EXPECT_NE(o.out.find("width=32"), std::string::npos);
  const std::string bytes = freescale::io::read_file(out);
  EXPECT_EQ(bytes.rfind("P6\n32 32\n255\n", 0), 0u);
  const auto manifest = nlohmann::json::parse(freescale::io::read_file(out + ".manifest.json"));
  EXPECT_EQ(manifest["output_checksum"], freescale::checksum_hex(bytes));
  EXPECT_EQ(manifest["seed"], 7);
  EXPECT_NE(o.out.find("checksum=" + manifest["output_checksum"].get<std::string>()), std::string::npos);

  // Same config, same bytes; a different seed changes them.
  const std::string again = temp_path("gen2.ppm");
  ASSERT_EQ(run_cli("generate --config " + config("toy_small.json") + " --out " + again).exit_code, 0);
  EXPECT_EQ(freescale::io::read_file(again), bytes);
  ASSERT_EQ(run_cli("generate --config " + config("toy_small.json") + " --seed 8 --out " + again).exit_code, 0);
  EXPECT_NE(freescale::io::read_file(again), bytes);
  for (const auto& p : {out, out + ".manifest.json", again, again + ".manifest.json"}) std::filesystem::remove(p);
}

TEST(Cli, GenerateWithMask) {
  const std::string mask = temp_path("mask.pgm");
  freescale::Tensor gray({32, 32}, 255.0f);
  for (std::size_t i = 0; i < 16 * 32; ++i) gray[i] = 0.0f;
  freescale::io::write_file(mask, freescale::io::encode_pgm(gray));
  const std::string out = temp_path("masked.ppm");
  const Outcome o = run_cli("generate --config " + config("toy_small.json") + " --mask " + mask + " --out " + out);
  EXPECT_EQ(o.exit_code, 0) << o.out;
  EXPECT_EQ(run_cli("generate --config " + config("toy_small.json") + " --mask /nonexistent.pgm --out " + out).exit_code,
            2);
  for (const auto& p : {mask, out, out + ".manifest.json"}) std::filesystem::remove(p);
}

TEST(Cli, ConfigErrorsExitTwo) {
  const std::string bad = temp_path("bad.json");
  freescale::io::write_file(bad, R"({"levels": [2, 1]})");
  EXPECT_EQ(run_cli("generate --config " + bad).exit_code, 2);
  freescale::io::write_file(bad, R"({"unknown_key": 1})");
  EXPECT_EQ(run_cli("generate --config " + bad).exit_code, 2);
  EXPECT_EQ(run_cli("generate --config /nonexistent.json").exit_code, 2);
  EXPECT_EQ(run_cli("generate").exit_code, 2);
  EXPECT_EQ(run_cli("frobnicate").exit_code, 2);
  EXPECT_EQ(run_cli("oracle --check nothing").exit_code, 2);
  EXPECT_EQ(run_cli("bench --config " + config("toy_small.json") + " --repeat 0").exit_code, 2);
  std::filesystem::remove(bad);
}

TEST(Cli, NonFiniteLatentsExitThree) {
  // A finite but absurd guidance scale overflows float32 on the first step.
  const std::string cfg = temp_path("overflow.json");
  freescale::io::write_file(cfg, R"({"levels": [1, 2], "steps": 10, "base_latent_size": 8,
    "unet": {"base_width": 8, "time_embedding_dim": 16, "cond_dim": 8},
    "autoencoder": {"patch": 2}, "guidance_scale": 1e38})");
  const std::string out = temp_path("overflow.ppm");
  EXPECT_EQ(run_cli("generate --config " + cfg + " --out " + out).exit_code, 3);
  EXPECT_FALSE(std::filesystem::exists(out));
  std::filesystem::remove(cfg);
}

TEST(Cli, OracleAllPasses) {
  const Outcome o = run_cli("oracle --check all");
  EXPECT_EQ(o.exit_code, 0) << o.out;
  EXPECT_NE(o.out.find("result=pass"), std::string::npos);
  EXPECT_EQ(o.out.find("status=fail"), std::string::npos);
  for (const char* family : {"fusion", "ddim", "conv", "patch", "blend"}) {
    EXPECT_NE(o.out.find(std::string("check=") + family + "."), std::string::npos) << family;
  }
}

TEST(Cli, BenchReportsMedians) {
  const Outcome o = run_cli("bench --config " + config("toy_small.json") + " --repeat 1");
  ASSERT_EQ(o.exit_code, 0) << o.out;
  EXPECT_NE(o.out.find("direct.median_ms="), std::string::npos);
  EXPECT_NE(o.out.find("cascade.median_ms="), std::string::npos);
  EXPECT_NE(o.out.find("median_ratio="), std::string::npos);
  const Outcome c = run_cli("bench --config " + config("toy_small.json") + " --repeat 1 --arm cascade");
  ASSERT_EQ(c.exit_code, 0);
  EXPECT_EQ(c.out.find("direct."), std::string::npos);
}
