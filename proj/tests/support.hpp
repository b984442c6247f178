#pragma once

#include "inpl/data_io.hpp"
#include "inpl/graph.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <string>
#include <vector>

namespace inpl::testing {

inline Graph path_graph(Index n) {
  std::vector<Edge> e;
  for (Index i = 0; i + 1 < n; ++i) e.emplace_back(NodeId(i), NodeId(i + 1));
  return build_graph(e, n);
}

/// Fresh directory under the system temp path, removed on destruction.
class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    std::string name = "inpl_";
    if (info) name += std::string(info->test_suite_name()) + "_" + info->name();
    path_ = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline Dataset small_synth(Index n = 60, std::uint64_t seed = 1) {
  SynthSpec spec;
  spec.n = n;
  spec.p_intra = 0.05;
  spec.p_inter = 0.25;
  spec.feature_dim = 4;
  spec.seed = seed;
  return gen_synth(spec);
}

}  // namespace inpl::testing
