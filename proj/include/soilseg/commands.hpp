// Copyright 2026 The soilseg Authors
// SPDX-License-Identifier: Apache-2.0

// Subcommand implementations behind the C API and the `soilseg` tool. Each
// takes a JSON options object and returns a JSON result; expected failures
// are reported through the status, never thrown.

#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "soilseg/error.hpp"

namespace soilseg::cmd {

/// Process exit codes shared by every subcommand.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,  // processing failure (validation violations, divergence, nothing detected)
  kExitEnvironment = 2,  // layout, IO, checkpoint or weights problems
  kExitUsage = 64,
};

int exit_code_for(ErrorCode status);

struct CommandOutcome {
  ErrorCode status = ErrorCode::kOk;
  /// Always has "stdout" and "stderr" arrays of lines; on failure also "error".
  nlohmann::json result = nlohmann::json::object();
};

/// Names accepted by run_command.
const std::vector<std::string>& command_names();

/// Receives each stdout line as it is produced (e.g. per-epoch training progress).
using ProgressFn = std::function<void(const std::string&)>;

/// Dispatches to validate, split, synth, train, eval, segment, bench or plot.
CommandOutcome run_command(const std::string& name, const nlohmann::json& options,
                           const ProgressFn& progress = {});

/// Writes `dir`/run_manifest.json (replacing any earlier one).
void write_manifest(const std::filesystem::path& dir, const std::string& subcommand, const nlohmann::json& config,
                    const nlohmann::json& extra = nlohmann::json::object());

inline constexpr const char* kManifestName = "run_manifest.json";
inline constexpr double kPaperLatencySeconds = 0.06;

const char* version();

}  // namespace soilseg::cmd
