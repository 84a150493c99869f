#pragma once

#include <filesystem>

#include "run_config.hpp"

namespace align_teleop::cli {

/// Resolved config plus the directory every artifact goes under.
struct RunContext {
  json config;
  std::filesystem::path out;
};

// Each command writes config.json into ctx.out before doing anything else.
void cmd_demo(const RunContext& ctx);
void cmd_train_cae(const RunContext& ctx);
void cmd_collect(const RunContext& ctx);
void cmd_train_align(const RunContext& ctx);
void cmd_eval(const RunContext& ctx);
void cmd_grid(const RunContext& ctx);
void cmd_serve(const RunContext& ctx);

}  // namespace align_teleop::cli
