#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "emrank/model.hpp"

namespace emrank::testing {

namespace fs = std::filesystem;

inline fs::path data_path(const std::string& name) {
  return fs::path(EMRANK_DATA_DIR) / name;
}

/// Scratch directory removed on scope exit.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    const auto stamp =
        std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = fs::temp_directory_path() /
            ("emrank-test-" + std::to_string(stamp) + "-" +
             std::to_string(counter++));
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

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

/// Items with recognisable, distinct texts.
inline std::vector<EvalItem> make_items(std::size_t n,
                                        const std::string& prefix = "item-") {
  std::vector<EvalItem> items;
  for (std::size_t i = 0; i < n; ++i) {
    const auto id = prefix + std::to_string(i);
    items.push_back(EvalItem::make(
        id, "Question number " + std::to_string(i) + " about recovery?",
        "Short reply " + std::to_string(i) + ".",
        "A longer and warmer reply number " + std::to_string(i) +
            " that acknowledges the worry."));
  }
  return items;
}

}  // namespace emrank::testing
