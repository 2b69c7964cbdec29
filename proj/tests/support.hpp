#pragma once

#include "gradcheck.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <string>

namespace irtvi::testing {

// Fresh directory under the build tree (or the system temp dir).
inline std::string scratch_dir(const std::string& name) {
  const char* root = std::getenv("IRTVI_TEST_TMP");
  std::filesystem::path dir =
      root ? std::filesystem::path(root) : std::filesystem::temp_directory_path() / "irtvi-tests";
  dir /= name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

}  // namespace irtvi::testing
