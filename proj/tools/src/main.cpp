#include <CLI11.hpp>

#include <align_teleop/error.hpp>

#include <cstdlib>
#include <functional>
#include <iostream>

#include "commands.hpp"

namespace {

using namespace align_teleop;
using namespace align_teleop::cli;

constexpr int kExitError = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIncompatible = 3;

struct CommonFlags {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
};

std::filesystem::path output_dir(const CommonFlags& f, const std::string& command) {
  if (!f.out.empty()) return f.out;
  if (const char* root = std::getenv("ALIGN_TELEOP_OUT"); root && *root) return std::filesystem::path(root) / command;
  return std::filesystem::path("runs") / command;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learn and evaluate human-preferred input alignments for latent-action teleoperation"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::function<void(const RunContext&)> run;
  std::string chosen;

  auto add = [&](const std::string& name, const std::string& help, void (*fn)(const RunContext&)) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", flags.config, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--set", flags.overrides, "Override a field, dotted key: --set align.epochs=500")
        ->allow_extra_args(false);
    sub->add_option("--out", flags.out, "Output directory (default $ALIGN_TELEOP_OUT/<command> or runs/<command>)");
    sub->add_option("--seed", flags.seed, "Run seed");
    sub->add_option("--jobs", flags.jobs, "Worker threads for grid cells");
    sub->callback([&, name, fn] {
      chosen = name;
      run = fn;
    });
  };
  add("demo", "Generate scripted demonstrations", cmd_demo);
  add("train-cae", "Train the conditional autoencoder controller", cmd_train_cae);
  add("collect", "Collect an unlabeled pool and label a few queries with the simulated human", cmd_collect);
  add("train-align", "Train an alignment network under one condition", cmd_train_align);
  add("eval", "Evaluate an alignment checkpoint or a baseline condition", cmd_eval);
  add("grid", "Run the condition x noise x seed experiment grid", cmd_grid);
  add("serve", "Run the teleoperation session service", cmd_serve);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    RunContext ctx;
    ctx.config = resolve_config(flags.config, flags.overrides);
    if (flags.seed) ctx.config["seed"] = *flags.seed;
    if (flags.jobs) ctx.config["grid"]["jobs"] = *flags.jobs;
    ctx.out = output_dir(flags, chosen);
    run(ctx);
    std::cerr << "artifacts in " << ctx.out.string() << std::endl;
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << std::endl;
    return kExitUsage;
  } catch (const IncompatibleFile& e) {
    std::cerr << "incompatible file: " << e.what() << std::endl;
    return kExitIncompatible;
  } catch (const InvalidInput& e) {
    std::cerr << "usage error: " << e.what() << std::endl;
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kExitError;
  }
}
