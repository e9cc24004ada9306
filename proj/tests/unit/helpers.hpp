#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "sfbd/nn.hpp"
#include "sfbd/tensor.hpp"

namespace testing {

inline sfbd::Tensor gaussian(sfbd::Shape shape, sfbd::Rng& rng, double stddev = 1.0) {
  sfbd::Tensor t(std::move(shape));
  std::normal_distribution<double> n(0.0, stddev);
  for (auto& v : t.data()) v = n(rng);
  return t;
}

inline sfbd::Tensor unit_rows(sfbd::Shape shape, sfbd::Rng& rng) {
  sfbd::Tensor t = gaussian(std::move(shape), rng);
  for (std::size_t r = 0; r < t.rows(); ++r) {
    double n = 0.0;
    for (double v : t.row(r)) n += v * v;
    for (double& v : t.row(r)) v /= std::sqrt(n);
  }
  return t;
}

// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("sfbd_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
