#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "kgmd/graph_data.hpp"
#include "kgmd/synthgen.hpp"

namespace kgmd::test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() / ("kgmd_" + tag + "_" + std::to_string(rng()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

/// A scaled-down generator config that keeps every test fast.
inline SynthConfig small_synth(std::uint64_t seed = 3) {
  SynthConfig c;
  c.seed = seed;
  c.num_users = 120;
  c.items_per_domain = {40, 50, 20};
  c.genres_per_domain = {4, 4, 3};
  c.interactions_per_user = {4.0, 3.0, 2.0};
  return c;
}

}  // namespace kgmd::test
