#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace crel::cli {

// Entry point shared by the binary and the integration tests. Returns the
// process exit code.
int run_cli(int argc, const char* const* argv);

// FNV-1a 64-bit digest of a file's bytes, hex-encoded. Used in run manifests.
std::string file_digest_hex(const std::string& path);

} // namespace crel::cli
