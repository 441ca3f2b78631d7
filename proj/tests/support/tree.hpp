#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "notellm/common.hpp"

namespace notellm::testing {

// Relative path -> file bytes for every regular file under `root`.
inline std::map<std::string, std::string> tree_contents(const std::filesystem::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[std::filesystem::relative(e.path(), root).string()] = read_file(e.path().string());
  return out;
}

}  // namespace notellm::testing
