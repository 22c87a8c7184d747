#pragma once
// Subcommand implementations behind the CLI. Each returns a process exit
// code: 0 success, 1 validation error, 2 runtime or numerical error.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>

#include "xedit/harness/config.hpp"

namespace xedit::harness {

enum ExitCode : int { kExitOk = 0, kExitValidation = 1, kExitRuntime = 2 };

struct CommandOptions {
  std::filesystem::path config;
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> split;
  std::optional<double> alpha;
  std::optional<std::size_t> steps;
  std::optional<double> guidance;
  // sample
  std::optional<std::size_t> instance;
  std::optional<std::filesystem::path> prompt, reference, source;
  std::optional<std::size_t> instruction;
  // gradcheck
  bool inject_fault = false;
  std::size_t gradcheck_seeds = 10;
};

/// Runs `body`, mapping exceptions to exit codes and printing them to `err`.
int run_guarded(const std::function<int()>& body, std::ostream& err);

int cmd_datagen(const CommandOptions& o, std::ostream& out, std::ostream& err);
int cmd_train(const CommandOptions& o, std::ostream& out, std::ostream& err);
int cmd_sample(const CommandOptions& o, std::ostream& out, std::ostream& err);
int cmd_eval(const CommandOptions& o, std::ostream& out, std::ostream& err);
int cmd_ablate(const CommandOptions& o, std::ostream& out, std::ostream& err);
int cmd_gradcheck(const CommandOptions& o, std::ostream& out, std::ostream& err);

}  // namespace xedit::harness
