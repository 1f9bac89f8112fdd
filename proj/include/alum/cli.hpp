// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Lives in the library so tests and the Python module
// can drive it in-process.
#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace alum {

/// Environment variable naming the default run root when --out is absent.
inline constexpr const char* kRunRootEnv = "ALUM_RUN_ROOT";

/// Runs one subcommand. Returns the process exit code; failures print a
/// single "error: <class>: <message>" line to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// FNV-1a 64 of a file's bytes, as 16 hex digits.
std::string file_hash(const std::filesystem::path& path);

} // namespace alum
