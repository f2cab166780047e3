#pragma once

#include <doctest.h>

#include <filesystem>
#include <random>
#include <string>

#include "usnav/error.hpp"
#include "usnav/geometry.hpp"

namespace testing {

inline usnav::Pose random_pose(std::mt19937_64& rng, double t = 0.0, double trans = 200.0) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(-trans, trans);
  usnav::Quat q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return usnav::Pose(q, usnav::Vec3(u(rng), u(rng), u(rng)), t);
}

inline usnav::Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  usnav::Vec3 v(n(rng), n(rng), n(rng));
  return v.normalized();
}

// Fresh scratch directory under the build tree, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name) {
    path_ = std::filesystem::temp_directory_path() /
            ("usnav_test_" + name + "_" + std::to_string(std::random_device{}()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::string str() const { return path_.string(); }
  std::string operator/(const std::string& leaf) const { return (path_ / leaf).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace testing

#define CHECK_ERRC(expr, errc)                              \
  do {                                                      \
    bool thrown_ = false;                                   \
    try {                                                   \
      (void)(expr);                                         \
    } catch (const usnav::Error& e_) {                      \
      thrown_ = true;                                       \
      CHECK_MESSAGE(e_.code() == (errc), e_.what());        \
    }                                                       \
    CHECK_MESSAGE(thrown_, "expected usnav::Error: " #expr); \
  } while (0)
