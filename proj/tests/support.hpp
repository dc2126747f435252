#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <unistd.h>
#include <string>
#include <vector>

#include <json.hpp>

#include "voxelenc/voxelenc.hpp"

namespace testing_support {

namespace fs = std::filesystem;

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("voxelenc_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline voxelenc::Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  voxelenc::CounterRng rng(seed);
  return voxelenc::normal_matrix(rows, cols, rng);
}

/// Single-subject manifest over matrices written into `dir`.
struct Fixture {
  nlohmann::json subject;
  fs::path dir;

  Fixture(const fs::path& d, const std::string& name, const voxelenc::Matrix& y) : dir(d) {
    voxelenc::write_matrix(y, dir / (name + "_Y.vemf"));
    subject["name"] = name;
    subject["n_stimuli"] = y.rows();
    subject["response_path"] = name + "_Y.vemf";
    subject["rois"] = nlohmann::json::array();
    subject["features"] = nlohmann::json::array();
  }

  Fixture& roi(const std::string& n, std::size_t start, std::size_t count) {
    subject["rois"].push_back({{"name", n}, {"start", start}, {"count", count}});
    return *this;
  }

  Fixture& feature(const std::string& model, const std::string& layer,
                   const voxelenc::Matrix& x) {
    const std::string file = subject["name"].get<std::string>() + "_" + model + "_" + layer + ".vemf";
    voxelenc::write_matrix(x, dir / file);
    subject["features"].push_back({{"model", model}, {"layer", layer}, {"path", file}});
    return *this;
  }

  Fixture& sub_dataset(const std::string& n, std::size_t start, std::size_t count) {
    subject["sub_datasets"].push_back({{"name", n}, {"start", start}, {"count", count}});
    return *this;
  }
};

inline fs::path write_manifest(const fs::path& dir, const std::vector<Fixture>& subjects,
                               const std::string& file = "manifest.json") {
  nlohmann::json m;
  m["subjects"] = nlohmann::json::array();
  for (const auto& s : subjects) m["subjects"].push_back(s.subject);
  write_file(dir / file, m.dump(2));
  return dir / file;
}

/// Noiseless or noisy linear responses Y = X W + sigma E for a fixture.
inline voxelenc::SynthData linear_data(std::size_t n, std::size_t d, std::size_t v,
                                       double sigma, std::uint64_t seed) {
  return voxelenc::generate({n, d, v, sigma, seed});
}

}  // namespace testing_support
