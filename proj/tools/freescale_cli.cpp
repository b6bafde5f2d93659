// Command-line front end: generate, bench, oracle.
//
// Exit codes: 0 ok, 1 oracle failure, 2 config error, 3 numeric failure.
// Standard output is line-oriented key=value; diagnostics go to stderr.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "freescale/io.hpp"
#include "freescale/oracle.hpp"
#include "freescale/parallel.hpp"
#include "freescale/pipeline.hpp"

namespace {

using namespace freescale;

constexpr int kExitOk = 0;
constexpr int kExitOracle = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct GenerateArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "freescale_out.ppm";
  std::string mask;
};

struct BenchArgs {
  std::string config;
  int repeat = 3;
  std::string arm = "both";
};

io::ConfigFile load(const std::string& path, const std::optional<std::uint64_t>& seed, const std::string& mask) {
  io::ConfigFile file = io::load_config(path);
  if (seed) file.cascade.seed = *seed;
  if (!mask.empty()) {
    file.cascade.mask = io::mask_from_pgm(io::decode_pgm(io::read_file(mask)), file.mask_alpha_lo, file.mask_alpha_hi);
  }
  return file;
}

int cmd_generate(const GenerateArgs& args) {
  const io::ConfigFile file = load(args.config, args.seed, args.mask);
  const RunResult result = run(file.cascade);
  const std::string bytes = io::encode_ppm(io::to_display(result.image));
  io::write_file(args.out, bytes);
  const std::string manifest_path = args.out + ".manifest.json";
  const auto manifest = io::make_manifest(file, result, std::filesystem::path(args.out).filename().string(), bytes);
  io::write_file(manifest_path, manifest.dump(2) + "\n");

  std::cout << "status=ok\n"
            << "output=" << args.out << "\n"
            << "manifest=" << manifest_path << "\n"
            << "config_hash=" << manifest["config_hash"].get<std::string>() << "\n"
            << "checksum=" << manifest["output_checksum"].get<std::string>() << "\n"
            << "width=" << result.image.dim(3) << "\n"
            << "height=" << result.image.dim(2) << "\n";
  for (const auto& l : result.levels) {
    std::cout << "level." << l.level << ".ms=" << l.milliseconds << "\n"
              << "level." << l.level << ".latent_mean=" << l.latent.mean << "\n"
              << "level." << l.level << ".latent_std=" << l.latent.stddev << "\n";
  }
  return kExitOk;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int cmd_bench(const BenchArgs& args) {
  if (args.repeat < 1) throw ConfigError("--repeat must be >= 1");
  const io::ConfigFile file = load(args.config, std::nullopt, "");
  const CascadeConfig& config = file.cascade;
  const Model model = Model::from_config(config);
  const int final_level = config.levels.back();
  const bool do_direct = args.arm != "cascade", do_cascade = args.arm != "direct";

  using clock = std::chrono::steady_clock;
  auto time_ms = [](auto&& fn) {
    const auto start = clock::now();
    fn();
    return std::chrono::duration<double, std::milli>(clock::now() - start).count();
  };
  std::vector<double> direct, cascade;
  for (int i = 0; i < args.repeat; ++i) {
    if (do_direct) {
      direct.push_back(time_ms([&] { (void)decode(generate_direct(config, model, final_level), model.autoencoder); }));
      std::cout << "direct.run." << i << ".ms=" << direct.back() << "\n";
    }
    if (do_cascade) {
      cascade.push_back(time_ms([&] { (void)run(config, model); }));
      std::cout << "cascade.run." << i << ".ms=" << cascade.back() << "\n";
    }
  }
  std::cout << "final_level=" << final_level << "\n" << "repeat=" << args.repeat << "\n";
  if (do_direct) std::cout << "direct.samples=" << direct.size() << "\n" << "direct.median_ms=" << median(direct) << "\n";
  if (do_cascade) std::cout << "cascade.samples=" << cascade.size() << "\n" << "cascade.median_ms=" << median(cascade) << "\n";
  if (do_direct && do_cascade) {
    std::vector<double> ratios;
    for (std::size_t i = 0; i < direct.size(); ++i) ratios.push_back(cascade[i] / direct[i]);
    std::cout << "median_ratio=" << median(ratios) << "\n";
  }
  return kExitOk;
}

int cmd_oracle(const std::string& check) {
  bool all_passed = true;
  for (const auto& r : oracle::run_checks(check)) {
    std::cout << "check=" << r.name << " max_deviation=" << r.max_deviation << " tolerance=" << r.tolerance
              << " status=" << (r.passed ? "pass" : "fail") << "\n";
    all_passed = all_passed && r.passed;
  }
  std::cout << "result=" << (all_passed ? "pass" : "fail") << "\n";
  return all_passed ? kExitOk : kExitOracle;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FreeScale toy inference pipeline"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Run the cascade and write an image plus manifest");
  generate->add_option("--config", gen.config, "JSON config file")->required();
  generate->add_option("--seed", gen.seed, "Override the config seed");
  generate->add_option("--out", gen.out, "Output PPM path");
  generate->add_option("--mask", gen.mask, "Grayscale PGM detail mask");

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "Time direct inference against the cascade");
  bench_cmd->add_option("--config", bench.config, "JSON config file")->required();
  bench_cmd->add_option("--repeat", bench.repeat, "Runs per arm");
  bench_cmd->add_option("--arm", bench.arm, "Which arms to time")->check(CLI::IsMember({"both", "direct", "cascade"}));

  std::string check = "all";
  auto* oracle_cmd = app.add_subcommand("oracle", "Run reference checks");
  oracle_cmd->add_option("--check", check, "Check to run")
      ->check(CLI::IsMember({"fusion", "ddim", "conv", "patch", "blend", "all"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*generate) return cmd_generate(gen);
    if (*bench_cmd) return cmd_bench(bench);
    if (*oracle_cmd) return cmd_oracle(check);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitOk;
}
