#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

#include <nlohmann/json.hpp>

namespace copatch::test {

inline std::filesystem::path golden_dir() { return COPATCH_GOLDEN_DIR; }
inline std::filesystem::path golden_fixture() { return golden_dir() / "fixture"; }

inline nlohmann::json golden_expected() {
  std::ifstream in(golden_dir() / "expected.json");
  return nlohmann::json::parse(in);
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Fresh writable copy of the golden fixture.
inline std::filesystem::path copy_golden(const std::string& tag) {
  namespace fs = std::filesystem;
  const auto dst = fs::temp_directory_path() / ("copatch_" + tag + "_" + std::to_string(std::random_device{}()));
  fs::remove_all(dst);
  fs::copy(golden_fixture(), dst, fs::copy_options::recursive);
  return dst;
}

inline nlohmann::json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

inline void write_json(const std::filesystem::path& p, const nlohmann::json& j) {
  std::ofstream(p) << j.dump(2);
}

}  // namespace copatch::test
