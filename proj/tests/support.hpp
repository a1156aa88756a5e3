#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>

#include "mvx/image.hpp"
#include "mvx/rng.hpp"

namespace mvx::testing {

// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    auto pattern =
        (std::filesystem::temp_directory_path() / "mvx_test_XXXXXX").string();
    if (!mkdtemp(pattern.data())) throw std::runtime_error("mkdtemp failed");
    path_ = pattern;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string str() const { return path_.string(); }
  std::string sub(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline Image uniform_image(int h, int w, double value, int channels = 1) {
  return Image(h, w, channels, value);
}

inline Image random_image(int h, int w, Rng& rng, int channels = 1) {
  Image img(h, w, channels);
  for (double& p : img.pix) p = rng.uniform();
  return img;
}

}  // namespace mvx::testing
