// geovoxel command line: one subcommand per pipeline stage.

#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "geovoxel/config.hpp"
#include "geovoxel/error.hpp"
#include "geovoxel/pipeline.hpp"

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> threads;
};

// --threads wins, then GEOVOXEL_THREADS, then the config file.
geovoxel::RunConfig resolve(const Flags& flags) {
  geovoxel::RunConfig cfg;
  try {
    cfg = flags.config.empty() ? geovoxel::RunConfig{} : geovoxel::load_config(flags.config);
    if (flags.seed) cfg.seed = *flags.seed;
    if (!flags.out.empty()) cfg.out_dir = flags.out;
    if (flags.threads) {
      cfg.threads = *flags.threads;
    } else if (const char* env = std::getenv("GEOVOXEL_THREADS"); env && *env) {
      std::size_t used = 0;
      int value = 0;
      try {
        value = std::stoi(env, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || env[used] != '\0') {
        throw geovoxel::InputError(std::string("GEOVOXEL_THREADS is not an integer: '") + env + "'");
      }
      cfg.threads = value;
    }
    cfg.Validate();
  } catch (const std::exception& e) {
    throw geovoxel::StageError("config", e.what());
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"geovoxel: 3D view-contrastive features and voxelwise encoding models"};
  app.require_subcommand(1);

  Flags flags;
  for (std::string_view name : geovoxel::kStageNames) {
    const std::string stage(name);
    CLI::App* sub = app.add_subcommand(stage, stage == "run" ? "run every stage in order"
                                                              : "run the " + stage + " stage");
    sub->add_option("--config", flags.config, "JSON configuration file")->check(CLI::ExistingFile);
    sub->add_option("--seed", flags.seed, "master seed (overrides the config)");
    sub->add_option("--out", flags.out, "output directory (overrides the config)");
    sub->add_option("--threads", flags.threads, "worker threads (falls back to GEOVOXEL_THREADS)")
        ->check(CLI::PositiveNumber);
  }

  CLI11_PARSE(app, argc, argv);

  const std::string stage = app.get_subcommands().front()->get_name();
  geovoxel::RunConfig cfg;
  try {
    cfg = resolve(flags);
    geovoxel::run_stage(stage, cfg);
  } catch (const geovoxel::StageError& e) {
    std::cerr << "geovoxel: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "geovoxel: [" << stage << "] " << e.what() << "\n";
    return 1;
  }
  std::cout << stage << ": ok, outputs in " << cfg.out_dir.string() << "\n";
  return 0;
}
