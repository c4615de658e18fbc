#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

#include "agerank/tensor.hpp"

namespace testing_support {

inline agerank::Tensor<double> random_tensor(agerank::Shape shape, std::mt19937_64& rng, double lo = -1.0,
                                             double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  agerank::Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = u(rng);
  return t;
}

/// Values bounded away from zero, for kinked primitives.
inline agerank::Tensor<double> random_away_from_zero(agerank::Shape shape, std::mt19937_64& rng, double margin = 0.05) {
  std::uniform_real_distribution<double> u(margin, 1.0);
  std::bernoulli_distribution sign(0.5);
  agerank::Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = sign(rng) ? u(rng) : -u(rng);
  return t;
}

inline std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("agerank_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
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
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing_support
