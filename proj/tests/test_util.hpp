#pragma once

#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <functional>
#include <string>
#include <unistd.h>

#include "selfreward/errors.hpp"
#include "selfreward/model.hpp"

namespace testutil {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("selfreward-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
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
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Generation backend driven by a callback; counts calls.
class ScriptedModel final : public selfreward::GenerationModel {
 public:
  using Fn = std::function<std::string(std::string_view prompt, const selfreward::DecodingParams&, int call)>;
  explicit ScriptedModel(Fn fn) : fn_(std::move(fn)) {}

  std::string generate(std::string_view prompt, const selfreward::DecodingParams& d) const override {
    return fn_(prompt, d, calls_++);
  }
  int calls() const { return calls_; }

 private:
  Fn fn_;
  mutable int calls_ = 0;
};

template <class F>
selfreward::ErrorCode error_code_of(F&& f) {
  try {
    f();
  } catch (const selfreward::Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an exception";
  return selfreward::ErrorCode::io_error;
}

}  // namespace testutil
