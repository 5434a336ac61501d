#pragma once

#include <gtest/gtest.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dradvisor/dradvisor.hpp"

namespace dra::test {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("dradvisor-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

inline Timestamp ts(const std::string& text) {
  auto t = parse_timestamp(text);
  if (!t) throw std::runtime_error("bad test timestamp " + text);
  return *t;
}

/// Expects `fn` to throw dra::Error with `code`.
template <class Fn>
void expect_error(ErrorCode code, Fn&& fn) {
  try {
    fn();
    ADD_FAILURE() << "expected " << to_string(code) << ", nothing thrown";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

/// Regular 5-minute timestamps from `start`.
inline std::vector<Timestamp> timeline(const std::string& start, std::size_t n, int minutes = 5) {
  std::vector<Timestamp> out;
  const auto t0 = ts(start);
  for (std::size_t i = 0; i < n; ++i) out.push_back(t0 + std::chrono::minutes{minutes * static_cast<long>(i)});
  return out;
}

inline Column col(std::string name, Role role, std::vector<double> v, ColumnKind kind = ColumnKind::Continuous) {
  return Column(ColumnSpec{std::move(name), kind, role, "", {}}, std::move(v));
}

}  // namespace dra::test
